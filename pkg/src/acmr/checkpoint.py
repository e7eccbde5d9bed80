"""Binary model checkpoints.

Layout (little endian)::

    b"ACMR"  u32 version  u32 n_segments
    n_segments x [u32 name_len, name (UTF-8), u64 rows, u64 cols, rows*cols f64]
    u64 config_len, config JSON (UTF-8)

Vectors are stored as ``1 x n`` segments.  Reading and re-writing a file
reproduces it byte for byte.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .iem import IemNet
from .ndcore import MLP, DenseLayer
from .trainer import ACMRModel
from .vae import VaeBranch
from .vsa import VsaHeads

MAGIC = b"ACMR"
VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointMissingError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def dump_config(config: dict) -> bytes:
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_segments(path, segments: dict[str, np.ndarray], config: dict, version: int = VERSION) -> None:
    out = bytearray(MAGIC)
    out += struct.pack("<II", version, len(segments))
    for name, arr in segments.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded)) + encoded
        out += struct.pack("<QQ", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    blob = dump_config(config)
    out += struct.pack("<Q", len(blob)) + blob
    Path(path).write_bytes(bytes(out))


def read_segments(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointMissingError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an ACMR checkpoint")
    try:
        version, count = struct.unpack_from("<II", raw, 4)
        if version != VERSION:
            raise CheckpointVersionError(f"{path}: checkpoint version {version}, expected {VERSION}")
        pos = 12
        segments = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos:pos + n].decode("utf-8")
            pos += n
            rows, cols = struct.unpack_from("<QQ", raw, pos)
            pos += 16
            size = rows * cols * 8
            if pos + size > len(raw):
                raise CheckpointError(f"{path}: segment {name!r} is truncated")
            segments[name] = np.frombuffer(raw[pos:pos + size], dtype="<f8").reshape(rows, cols).astype(np.float64)
            pos += size
        (n,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: config echo is truncated")
        config = json.loads(raw[pos:pos + n].decode("utf-8"))
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from None
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable config echo ({exc})") from None
    if pos + n != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after config")
    return segments, config


def model_segments(model: ACMRModel) -> dict[str, np.ndarray]:
    segs = {name: arr for name, arr in model.parameters().items()}
    segs["meta.seen_classes"] = model.seen_classes.astype(np.float64)
    segs["meta.num_classes"] = np.array([float(model.num_classes)])
    return segs


def save_checkpoint(path, model: ACMRModel, config: dict) -> None:
    write_segments(path, model_segments(model), config)


def _mlp(segs: dict, prefix: str, hidden_activation: str) -> MLP:
    layers = []
    i = 0
    while f"{prefix}.{i}.W" in segs:
        layers.append(DenseLayer(segs[f"{prefix}.{i}.W"], segs[f"{prefix}.{i}.b"][0], hidden_activation))
        i += 1
    if not layers:
        raise CheckpointError(f"checkpoint has no segments for {prefix!r}")
    layers[-1].activation = "identity"
    return MLP(layers)


def load_checkpoint(path) -> tuple[ACMRModel, dict]:
    """Rebuild the model; returns ``(model, config_echo)``."""
    segs, config = read_segments(path)
    act = config.get("train", {}).get("hidden_activation", "relu")
    try:
        vae_x = VaeBranch(_mlp(segs, "vae_x.enc", act), _mlp(segs, "vae_x.dec", act), "visual")
        vae_a = VaeBranch(_mlp(segs, "vae_a.enc", act), _mlp(segs, "vae_a.dec", act), "semantic")
        iem_x = IemNet(_mlp(segs, "iem_x", act), vae_x.input_dim, "visual")
        iem_a = IemNet(_mlp(segs, "iem_a", act), vae_a.input_dim, "semantic")
        heads = VsaHeads(DenseLayer(segs["vsa.x.W"], segs["vsa.x.b"][0]),
                         DenseLayer(segs["vsa.a.W"], segs["vsa.a.b"][0]))
        classifier = None
        if "classifier.W" in segs:
            classifier = DenseLayer(segs["classifier.W"], segs["classifier.b"][0])
        seen = segs["meta.seen_classes"][0].astype(np.int64)
        num_classes = int(segs["meta.num_classes"][0, 0])
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing segment {exc}") from None
    return ACMRModel(vae_x, vae_a, iem_x, iem_a, heads, seen, num_classes, classifier), config
