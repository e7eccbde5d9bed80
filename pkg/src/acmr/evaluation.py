"""GZSL metrics (per-class accuracy on seen/unseen test splits, harmonic
mean) and latent embedding export."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import vae
from .ndcore import DenseLayer


@dataclass
class GzslMetrics:
    aca_u: float
    aca_s: float
    h: float
    per_class_accuracy: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"aca_u": self.aca_u, "aca_s": self.aca_s, "h": self.h,
                "per_class": {str(k): v for k, v in sorted(self.per_class_accuracy.items())}}


def per_class_accuracy(predictions, labels, class_set=None):
    """Macro accuracy: mean over classes present in ``labels`` of the class hit rate.

    Returns ``(macro, {class_id: accuracy})``.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")
    if labels.size == 0:
        raise ValueError("empty evaluation set")
    if class_set is not None:
        stray = set(np.unique(labels).tolist()) - set(int(c) for c in class_set)
        if stray:
            raise ValueError(f"labels outside the class set: {sorted(stray)[:10]}")
    per_class = {}
    for c in np.unique(labels):
        mask = labels == c
        per_class[int(c)] = float(np.mean(predictions[mask] == c))
    return float(np.mean(list(per_class.values()))), per_class


def harmonic_mean(u: float, s: float) -> float:
    if u + s == 0:
        return 0.0
    return 2.0 * u * s / (u + s)


def predict(classifier: DenseLayer, features: np.ndarray) -> np.ndarray:
    return np.argmax(classifier(features), axis=1)


def evaluate_gzsl(model, classifier: DenseLayer | None, ds) -> GzslMetrics:
    """Classify test latents (posterior means) over all classes and score them.

    ``classifier`` defaults to ``model.classifier``.  Only the two test
    splits are read.
    """
    classifier = classifier if classifier is not None else model.classifier
    if classifier is None:
        raise ValueError("model has no final classifier")
    if len(ds.test_seen_idx) == 0 or len(ds.test_unseen_idx) == 0:
        raise ValueError("both test splits must be non-empty")
    results = {}
    per_class = {}
    for key, idx, classes in (("u", ds.test_unseen_idx, ds.unseen_classes),
                              ("s", ds.test_seen_idx, ds.seen_classes)):
        mu = vae.encode(ds.visual_rows(idx), model.vae_x).mu
        acc, pc = per_class_accuracy(predict(classifier, mu), ds.labels[idx], classes)
        results[key] = acc
        per_class.update(pc)
    return GzslMetrics(results["u"], results["s"], harmonic_mean(results["u"], results["s"]), per_class)


def _fmt(v: float) -> str:
    return repr(float(v))


def export_embeddings(model, ds, out_path) -> int:
    """Write latent means for every test image and every class attribute.

    Columns: modality, split, class_id, then one column per latent dim.
    Returns the number of data rows.
    """
    d = model.latent_dim
    unseen = set(int(c) for c in ds.unseen_classes)
    rows = []
    for split, idx in (("seen", ds.test_seen_idx), ("unseen", ds.test_unseen_idx)):
        mu = vae.encode(ds.visual_rows(idx), model.vae_x).mu
        for label, vec in zip(ds.labels[idx], mu):
            rows.append(("visual", split, int(label), vec))
    classes = np.arange(ds.attributes.shape[0])
    mu = vae.encode(ds.attributes, model.vae_a).mu
    for c, vec in zip(classes, mu):
        rows.append(("semantic", "unseen" if int(c) in unseen else "seen", int(c), vec))
    header = ["modality", "split", "class_id"] + [f"z{i}" for i in range(d)]
    with open(out_path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for modality, split, c, vec in rows:
            fh.write(",".join([modality, split, str(c)] + [_fmt(v) for v in vec]) + "\n")
    return len(rows)
