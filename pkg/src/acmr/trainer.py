"""Composite loss, annealing, and the two-phase training protocol.

Phase one trains both VAE branches, the IEM discriminators and the VSA heads
on seen-class training pairs.  Phase two fits a softmax classifier over all
classes on aligned latents: visual means for seen classes and samples from
the semantic posterior for unseen classes.

All randomness is derived from ``config.seed`` through keyed generators
(``default_rng([seed, stream, ...])``) so a run is reproducible bit for bit.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import alignment, iem, vae, vsa
from .data import PairedBatch, SyntheticSpec, generate_synthetic, make_paired_batches
from .ndcore import (AdamState, DenseLayer, GradCheckResult, NonFiniteError, TrainingError, adam_step,
                     gradient_check)
from .vae import GaussianLatent, VaeBranch

log = logging.getLogger(__name__)

TERMS = ("rec", "ma", "rep", "iem")

# RNG stream ids
_INIT, _EPOCH, _BATCH, _CLS_INIT, _UNSEEN, _CLS_EPOCH = range(6)


@dataclass
class Schedule:
    start_epoch: int = 0
    end_epoch: int = 0
    max_value: float = 0.0

    def __post_init__(self):
        if not 0 <= self.start_epoch <= self.end_epoch:
            raise ValueError("schedule needs 0 <= start_epoch <= end_epoch")
        if self.max_value < 0:
            raise ValueError("schedule max_value must be >= 0")


def anneal(epoch: int, s: Schedule) -> float:
    """0 up to ``start_epoch``, ``max_value`` from ``end_epoch`` on, linear between."""
    if epoch <= s.start_epoch:
        return 0.0 if s.end_epoch > s.start_epoch else float(s.max_value)
    if epoch >= s.end_epoch:
        return float(s.max_value)
    return float(s.max_value) * (epoch - s.start_epoch) / (s.end_epoch - s.start_epoch)


@dataclass
class LossWeights:
    alpha: float = 2.0
    beta: float = 5.0
    lam: float = 295.0
    iem_weight: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be >= 0")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size_acmr: int = 50
    batch_size_classifier: int = 32
    classifier_epochs: int = 100
    lr_vae: float = 1.5e-4
    lr_iem: float = 3.3e-5
    lr_vsa: float = 7.4e-3
    lr_classifier: float = 0.5e-3
    latent_dim: int = 64
    seed: int = 0
    unseen_samples_per_class: int = 200
    alpha: float = 2.0
    iem_weight: float = 1.0
    use_iem: bool = True
    beta_schedule: Schedule = field(default_factory=lambda: Schedule(0, 20, 5.0))
    lambda_schedule: Schedule = field(default_factory=lambda: Schedule(20, 75, 295.0))
    recon: str = "l1"
    hidden_visual_enc: int = 1560
    hidden_visual_dec: int = 1680
    hidden_semantic_enc: int = 1450
    hidden_semantic_dec: int = 665
    hidden_iem: int = 99
    hidden_activation: str = "relu"
    collapse_threshold: float = 0.01
    checkpoint_every: int = 0

    def __post_init__(self):
        for name in ("beta_schedule", "lambda_schedule"):
            val = getattr(self, name)
            if isinstance(val, dict):
                setattr(self, name, Schedule(**val))
        for name in ("lr_vae", "lr_iem", "lr_vsa", "lr_classifier"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("epochs", "classifier_epochs", "unseen_samples_per_class", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("batch_size_acmr", "batch_size_classifier", "latent_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.recon not in ("l1", "l2"):
            raise ValueError("recon must be 'l1' or 'l2'")
        if self.alpha < 0 or self.iem_weight < 0:
            raise ValueError("loss weights must be >= 0")

    def weights_at(self, epoch: int) -> LossWeights:
        return LossWeights(self.alpha, anneal(epoch, self.beta_schedule),
                           anneal(epoch, self.lambda_schedule),
                           self.iem_weight if self.use_iem else 0.0)

    def to_dict(self) -> dict:
        return asdict(self)


class ACMRModel:
    """Every trainable block of the pipeline plus the seen-class index map."""

    def __init__(self, vae_x: VaeBranch, vae_a: VaeBranch, iem_x: iem.IemNet, iem_a: iem.IemNet,
                 heads: vsa.VsaHeads, seen_classes, num_classes: int,
                 classifier: DenseLayer | None = None):
        self.vae_x = vae_x
        self.vae_a = vae_a
        self.iem_x = iem_x
        self.iem_a = iem_a
        self.heads = heads
        self.seen_classes = np.asarray(seen_classes, dtype=np.int64)
        self.num_classes = int(num_classes)
        self.classifier = classifier
        if heads.num_classes != len(self.seen_classes):
            raise ValueError("VSA heads must have one output per seen class")

    @classmethod
    def init(cls, visual_dim: int, attr_dim: int, seen_classes, num_classes: int,
             config: TrainConfig) -> "ACMRModel":
        rng = np.random.default_rng([config.seed, _INIT])
        d, act = config.latent_dim, config.hidden_activation
        vae_x = VaeBranch.init(visual_dim, d, "visual", rng, config.hidden_visual_enc,
                               config.hidden_visual_dec, act)
        vae_a = VaeBranch.init(attr_dim, d, "semantic", rng, config.hidden_semantic_enc,
                               config.hidden_semantic_dec, act)
        iem_x = iem.IemNet.init(visual_dim, d, "visual", rng, config.hidden_iem)
        iem_a = iem.IemNet.init(attr_dim, d, "semantic", rng, config.hidden_iem)
        heads = vsa.VsaHeads.init(d, len(seen_classes), rng)
        return cls(vae_x, vae_a, iem_x, iem_a, heads, seen_classes, num_classes)

    @property
    def latent_dim(self) -> int:
        return self.vae_x.latent_dim

    def seen_index(self, class_ids) -> np.ndarray:
        class_ids = np.asarray(class_ids, dtype=np.int64)
        pos = np.searchsorted(self.seen_classes, class_ids)
        pos = np.clip(pos, 0, len(self.seen_classes) - 1)
        if not np.array_equal(self.seen_classes[pos], class_ids):
            raise ValueError("batch contains labels outside the seen classes")
        return pos

    def parameter_groups(self) -> dict[str, dict[str, np.ndarray]]:
        return {
            "vae": {**self.vae_x.named_parameters("vae_x"), **self.vae_a.named_parameters("vae_a")},
            "iem": {**self.iem_x.named_parameters("iem_x"), **self.iem_a.named_parameters("iem_a")},
            "vsa": self.heads.named_parameters("vsa"),
        }

    def gradient_groups(self) -> dict[str, dict[str, np.ndarray]]:
        return {
            "vae": {**self.vae_x.named_gradients("vae_x"), **self.vae_a.named_gradients("vae_a")},
            "iem": {**self.iem_x.named_gradients("iem_x"), **self.iem_a.named_gradients("iem_a")},
            "vsa": self.heads.named_gradients("vsa"),
        }

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for group in self.parameter_groups().values():
            out.update(group)
        if self.classifier is not None:
            out["classifier.W"] = self.classifier.W
            out["classifier.b"] = self.classifier.b
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for group in self.gradient_groups().values():
            out.update(group)
        return out

    def zero_grad(self) -> None:
        for block in (self.vae_x, self.vae_a, self.iem_x, self.iem_a, self.heads):
            block.zero_grad()


@dataclass
class LossBreakdown:
    total: float
    rec: float
    ma: float
    rep: float
    iem: float
    recon_x: float
    recon_a: float
    kl_x: float
    kl_a: float
    rep_x: float
    rep_a: float
    iem_x: float
    iem_a: float
    weights: LossWeights


def total_loss(batch: PairedBatch, model: ACMRModel, weights: LossWeights, noise, perm,
               recon_kind: str = "l1", backward: bool = False, terms=TERMS,
               grad_scale: dict[str, float] | None = None) -> LossBreakdown:
    """``L_rec + beta L_ma + lam L_rep + iem_weight L_iem`` on one paired batch.

    ``noise`` is a ``(noise_x, noise_a)`` pair of standard-normal draws and
    ``perm`` the row permutation for the IEM negatives.  ``terms`` restricts
    which terms enter the total (every component is still reported).
    With ``backward=True`` gradients are accumulated into ``model``.
    ``grad_scale`` multiplies a term's backward signal; it exists only to
    test that the gradient checker notices a broken backward pass.
    """
    scale = {t: 1.0 for t in TERMS}
    if grad_scale:
        scale.update(grad_scale)
    coef = {"rec": 1.0, "ma": weights.beta, "rep": weights.lam, "iem": weights.iem_weight}
    coef = {t: (coef[t] if t in terms else 0.0) for t in TERMS}
    alpha = weights.alpha
    y = model.seen_index(batch.y)
    perm = np.asarray(perm)

    bx = model.vae_x.forward(batch.x, noise[0])
    ba = model.vae_a.forward(batch.a, noise[1])
    recon_x = vae.reconstruction_loss(bx.inputs, bx.recon, recon_kind)
    recon_a = vae.reconstruction_loss(ba.inputs, ba.recon, recon_kind)
    kl_x, kl_a = vae.kl_diag_gaussian(bx.latent), vae.kl_diag_gaussian(ba.latent)
    l_rec = recon_x + recon_a + alpha * (kl_x + kl_a)

    l_ma = alignment.wasserstein_gaussian(bx.latent, ba.latent).value

    want_grad = backward and coef["rep"] != 0.0
    rep = vsa.rep_loss(bx.z, ba.z, y, model.heads, backward=want_grad)
    if want_grad:
        rep, (dzx_rep, dza_rep) = rep

    iem_parts = {}
    for key, net, bp in (("x", model.iem_x, bx), ("a", model.iem_a, ba)):
        pos, cache_pos = net.score_with_cache(bp.inputs, bp.z)
        neg, cache_neg = net.score_with_cache(bp.inputs, iem.shuffle_latents(bp.z, perm))
        iem_parts[key] = (iem.iem_loss(pos, neg), pos, neg, cache_pos, cache_neg)
    l_iem = iem_parts["x"][0] + iem_parts["a"][0]

    total = (coef["rec"] * l_rec + coef["ma"] * l_ma + coef["rep"] * rep.total
             + coef["iem"] * l_iem)
    result = LossBreakdown(total, l_rec, l_ma, rep.total, l_iem, recon_x, recon_a, kl_x, kl_a,
                           rep.visual, rep.semantic, iem_parts["x"][0], iem_parts["a"][0], weights)
    if not backward:
        return result

    grads = {}
    for key, bp in (("x", bx), ("a", ba)):
        zeros = np.zeros_like(bp.z)
        grads[key] = {"recon": None, "mu": zeros.copy(), "logvar": zeros.copy(), "z": zeros.copy()}
        c = coef["rec"] * scale["rec"]
        if c:
            grads[key]["recon"] = c * vae.reconstruction_backward(bp.inputs, bp.recon, recon_kind)
            dm, dlv = vae.kl_backward(bp.latent)
            grads[key]["mu"] += c * alpha * dm
            grads[key]["logvar"] += c * alpha * dlv

    c = coef["ma"] * scale["ma"]
    if c:
        dmx, dlvx, dma, dlva = alignment.wasserstein_backward(bx.latent, ba.latent)
        grads["x"]["mu"] += c * dmx
        grads["x"]["logvar"] += c * dlvx
        grads["a"]["mu"] += c * dma
        grads["a"]["logvar"] += c * dlva

    c = coef["rep"] * scale["rep"]
    if c:
        # head gradients were accumulated at unit weight; rescale them
        for layer in (model.heads.head_x, model.heads.head_a):
            layer.dW *= c
            layer.db *= c
        grads["x"]["z"] += c * dzx_rep
        grads["a"]["z"] += c * dza_rep

    c = coef["iem"] * scale["iem"]
    if c:
        for key, net in (("x", model.iem_x), ("a", model.iem_a)):
            _, pos, neg, cache_pos, cache_neg = iem_parts[key]
            dpos, dneg = iem.iem_loss_backward(pos, neg)
            grads[key]["z"] += net.score_backward(c * dpos, cache_pos)
            d_shuffled = net.score_backward(c * dneg, cache_neg)
            grads[key]["z"][perm] += d_shuffled

    for key, branch, bp in (("x", model.vae_x, bx), ("a", model.vae_a, ba)):
        g = grads[key]
        branch.backward(bp, g["recon"], g["mu"], g["logvar"], g["z"])
    return result


def batch_randomness(seed: int, epoch: int, batch_no: int, rows: int, latent_dim: int):
    rng = np.random.default_rng([seed, _BATCH, epoch, batch_no])
    noise_x = rng.standard_normal((rows, latent_dim))
    noise_a = rng.standard_normal((rows, latent_dim))
    return (noise_x, noise_a), iem.draw_permutation(rows, rng)


class Optimizers:
    """One Adam state per parameter group, each with its own learning rate."""

    def __init__(self, config: TrainConfig):
        self.states = {"vae": AdamState(lr=config.lr_vae), "iem": AdamState(lr=config.lr_iem),
                       "vsa": AdamState(lr=config.lr_vsa)}

    def step(self, model: ACMRModel) -> None:
        params, grads = model.parameter_groups(), model.gradient_groups()
        for name, state in self.states.items():
            adam_step(params[name], grads[name], state)


def _latent_diagnostics(model: ACMRModel, ds, threshold: float) -> dict:
    lat_x = vae.encode(ds.visual_rows(ds.train_idx), model.vae_x)
    lat_a = vae.encode(ds.attributes[ds.seen_classes], model.vae_a)
    rx = iem.collapse_diagnostics(lat_x, threshold)
    ra = iem.collapse_diagnostics(lat_a, threshold)
    return {"active_units": rx.active_units, "active_units_semantic": ra.active_units,
            "kl_per_dim_mean": float(rx.kl_per_dim.mean()), "kl_per_dim_max": float(rx.kl_per_dim.max()),
            "kl_per_dim_min": float(rx.kl_per_dim.min())}


def train_acmr(ds, config: TrainConfig, on_epoch=None):
    """Phase one.  Returns ``(model, history)``; history has one dict per epoch.

    Only ``ds.train_idx`` rows of the visual matrix are read.  ``on_epoch``
    is called as ``on_epoch(epoch, model, record)`` after each epoch.
    """
    model = ACMRModel.init(ds.visual_dim, ds.attr_dim, ds.seen_classes, ds.num_classes, config)
    opt = Optimizers(config)
    history = []
    for epoch in range(config.epochs):
        weights = config.weights_at(epoch)
        batches = make_paired_batches(ds, config.batch_size_acmr, [config.seed, _EPOCH, epoch])
        sums = dict.fromkeys(("total", "rec", "ma", "rep", "iem", "recon_x", "recon_a",
                              "kl_x", "kl_a"), 0.0)
        n_rows = 0
        for b, batch in enumerate(batches):
            noise, perm = batch_randomness(config.seed, epoch, b, len(batch.idx), config.latent_dim)
            model.zero_grad()
            try:
                res = total_loss(batch, model, weights, noise, perm, config.recon, backward=True)
                if not np.isfinite(res.total):
                    raise TrainingError("loss is not finite")
                opt.step(model)
            except (TrainingError, NonFiniteError, FloatingPointError) as exc:
                raise TrainingError(f"epoch {epoch} batch {b}: {exc}") from exc
            rows = len(batch.idx)
            n_rows += rows
            for k in sums:
                sums[k] += rows * getattr(res, k)
        record = {"epoch": epoch}
        record.update({k: v / n_rows for k, v in sums.items()})
        # recompute so the logged identity is exact up to roundoff
        record["total"] = (record["rec"] + weights.beta * record["ma"] + weights.lam * record["rep"]
                           + weights.iem_weight * record["iem"])
        record.update({"alpha": weights.alpha, "beta": weights.beta, "lambda": weights.lam,
                       "iem_weight": weights.iem_weight})
        record.update(_latent_diagnostics(model, ds, config.collapse_threshold))
        history.append(record)
        log.info("epoch %d total=%.4f rec=%.4f ma=%.4f rep=%.4f iem=%.4f active=%d", epoch,
                 record["total"], record["rec"], record["ma"], record["rep"], record["iem"],
                 record["active_units"])
        if on_epoch is not None:
            on_epoch(epoch, model, record)
    return model, history


@dataclass
class LatentDataset:
    features: np.ndarray
    labels: np.ndarray


def build_classifier_trainset(model: ACMRModel, ds, config: TrainConfig) -> LatentDataset:
    """Seen-class visual means plus sampled semantic latents for each unseen class."""
    lat = vae.encode(ds.visual_rows(ds.train_idx), model.vae_x)
    feats = [lat.mu]
    labels = [np.asarray(ds.labels[ds.train_idx], dtype=np.int64)]
    rng = np.random.default_rng([config.seed, _UNSEEN])
    n = config.unseen_samples_per_class
    for c in ds.unseen_classes:
        if c < 0 or c >= ds.attributes.shape[0]:
            raise ValueError(f"unseen class {c} has no attribute row")
        la = vae.encode(ds.attributes[c:c + 1], model.vae_a)
        rep = GaussianLatent(np.repeat(la.mu, n, axis=0), np.repeat(la.logvar, n, axis=0))
        feats.append(vae.reparameterize(rep, rng.standard_normal(rep.mu.shape)))
        labels.append(np.full(n, c, dtype=np.int64))
    return LatentDataset(np.vstack(feats), np.concatenate(labels))


def train_final_classifier(latents: LatentDataset, num_classes: int, config: TrainConfig) -> DenseLayer:
    """Linear layer + softmax over every class, trained with Adam on cross-entropy."""
    if len(latents.labels) == 0:
        raise ValueError("latent training set is empty")
    rng = np.random.default_rng([config.seed, _CLS_INIT])
    clf = DenseLayer.init(latents.features.shape[1], num_classes, "identity", rng)
    state = AdamState(lr=config.lr_classifier)
    params = {"W": clf.W, "b": clf.b}
    n = len(latents.labels)
    for epoch in range(config.classifier_epochs):
        order = np.random.default_rng([config.seed, _CLS_EPOCH, epoch]).permutation(n)
        for start in range(0, n, config.batch_size_classifier):
            idx = order[start:start + config.batch_size_classifier]
            clf.zero_grad()
            logits, cache = clf.forward(latents.features[idx])
            loss = vsa.cross_entropy(logits, latents.labels[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"classifier epoch {epoch}: loss is not finite")
            clf.backward(vsa.cross_entropy_backward(logits, latents.labels[idx]), cache)
            adam_step(params, {"W": clf.dW, "b": clf.db}, state)
    return clf


def train_pipeline(ds, config: TrainConfig, on_epoch=None):
    """Both phases; returns ``(model, history)`` with ``model.classifier`` set."""
    model, history = train_acmr(ds, config, on_epoch)
    latents = build_classifier_trainset(model, ds, config)
    model.classifier = train_final_classifier(latents, ds.num_classes, config)
    return model, history


# -- gradient-check harness ---------------------------------------------------

GRADCHECK_COMPONENTS = {
    "L_Rec": ("rec",),
    "L_MA": ("ma",),
    "L_Rep": ("rep",),
    "L_IEM": ("iem",),
    "composite": TERMS,
}


def tiny_setup(seed: int = 0):
    """A small model and a 4-sample synthetic batch for gradient checks."""
    spec = SyntheticSpec(num_seen=3, num_unseen=1, d_visual=6, d_attr=4, samples_per_class=5,
                         prototype_noise=0.5, seed=seed)
    ds = generate_synthetic(spec)
    config = TrainConfig(latent_dim=3, seed=seed, hidden_visual_enc=7, hidden_visual_dec=6,
                         hidden_semantic_enc=5, hidden_semantic_dec=6, hidden_iem=5)
    model = ACMRModel.init(ds.visual_dim, ds.attr_dim, ds.seen_classes, ds.num_classes, config)
    # one row per seen class plus one repeat
    idx = np.array([ds.train_idx[0], ds.train_idx[4], ds.train_idx[8], ds.train_idx[1]])
    y = ds.labels[idx]
    batch = PairedBatch(idx, ds.visual[idx], ds.attributes[y], y)
    noise, perm = batch_randomness(seed, 0, 0, 4, config.latent_dim)
    return model, batch, noise, perm


def gradcheck_components(seed: int = 0, eps: float = 1e-5, weights: LossWeights | None = None,
                         corrupt: str | None = None) -> dict[str, GradCheckResult]:
    """Worst relative gradient error for each loss term and the composite.

    ``corrupt`` names a term (``rec``, ``ma``, ``rep``, ``iem``) whose
    backward signal is deliberately scaled wrong.
    """
    weights = weights or LossWeights(alpha=2.0, beta=5.0, lam=295.0, iem_weight=1.0)
    model, batch, noise, perm = tiny_setup(seed)
    params = model.parameters()
    grad_scale = {corrupt: 1.5} if corrupt else None
    report = {}
    for name, terms in GRADCHECK_COMPONENTS.items():
        def loss_fn(terms=terms):
            model.zero_grad()
            res = total_loss(batch, model, weights, noise, perm, backward=True, terms=terms,
                             grad_scale=grad_scale)
            return res.total, model.gradients()
        report[name] = gradient_check(loss_fn, params, eps=eps, seed=seed)
    return report
