# Dataset files, validation, and checkpoints on disk.
import struct
import tempfile
from pathlib import Path

import numpy as np

from acmr.checkpoint import load_checkpoint, save_checkpoint
from acmr.data import SyntheticSpec, generate_synthetic, load_dataset, save_dataset, validate_split
from acmr.trainer import ACMRModel, TrainConfig

out = Path(tempfile.mkdtemp())
ds = generate_synthetic(SyntheticSpec(seed=3))
paths = save_dataset(ds, out)
for name, path in paths.items():
    print(f"{name:10s} {path.name:16s} {path.stat().st_size:7d} bytes")

# the matrix header: magic, version, rows, cols
print("features header:", struct.unpack("<4sIQQ", paths["features"].read_bytes()[:24]))

back = load_dataset(paths["features"], paths["attributes"], paths["labels"], paths["split"])
print("loaded equals generated:", back.equals(ds))
report = validate_split(back)
print(f"{len(report.checks)} checks, all pass: {report.ok}")

# break an invariant and look at the report
bad = type(ds)(ds.visual, ds.attributes, ds.labels, ds.seen_classes, ds.unseen_classes,
               np.append(ds.train_idx, ds.test_unseen_idx[0]), ds.test_seen_idx, ds.test_unseen_idx)
for check in validate_split(bad).failures():
    print("FAILED", check.name, "-", check.detail)

# checkpoints re-save byte for byte
cfg = TrainConfig(latent_dim=8, hidden_visual_enc=32, hidden_visual_dec=32, hidden_semantic_enc=16,
                  hidden_semantic_dec=16, hidden_iem=8)
model = ACMRModel.init(ds.visual_dim, ds.attr_dim, ds.seen_classes, ds.num_classes, cfg)
save_checkpoint(out / "a.acmr", model, {"train": cfg.to_dict()})
loaded, echo = load_checkpoint(out / "a.acmr")
save_checkpoint(out / "b.acmr", loaded, echo)
print("checkpoint round trip identical:", (out / "a.acmr").read_bytes() == (out / "b.acmr").read_bytes())
