"""Binary descriptor files and JSON checkpoints.

Descriptor file layout, all integers little-endian:

    bytes 0..3    magic "LDPK"
    bytes 4..7    format version (uint32, currently 1)
    bytes 8..11   header length in bytes (uint32)
    bytes 12..    UTF-8 JSON header {"d", "m", "classes": [{"label", "image_count"}]}
    then          payload: float32 values, class-major, image-major,
                  descriptor-major, component-minor

Values are stored as 32-bit floats (what feature extractors emit) and
promoted to float64 in memory. Checkpoints are JSON with every float printed
at 17 significant digits so a load reproduces the parameters bit for bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import DegenerateDescriptorError, FewdescError, InvalidInputError
from ..query import ThresholdMlp
from ..train import EpisodePool, TrainConfig

__all__ = [
    "FormatError",
    "MAGIC",
    "FORMAT_VERSION",
    "save_descriptor_file",
    "load_descriptor_file",
    "merge_pools",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
]

MAGIC = b"LDPK"
FORMAT_VERSION = 1
CHECKPOINT_VERSION = 1


class FormatError(FewdescError):
    """A descriptor file or checkpoint that does not match its format."""


def save_descriptor_file(pool: EpisodePool, path) -> None:
    """Write a pool to the binary descriptor format (float32 payload)."""
    labels = pool.labels
    if len(set(labels)) != len(labels):
        raise InvalidInputError("class labels must be unique")
    header = {
        "d": pool.dim,
        "m": pool.per_image,
        "classes": [
            {"label": label, "image_count": int(pool.classes[label].shape[0])}
            for label in labels
        ],
    }
    header_bytes = json.dumps(header).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(header_bytes)), header_bytes]
    for label in labels:
        block = pool.classes[label].astype("<f4")
        if not np.all(np.isfinite(block)):
            raise InvalidInputError(f"class {label!r} does not fit in 32-bit floats")
        chunks.append(block.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_descriptor_file(path, split: str = "train") -> EpisodePool:
    """Read a descriptor file; validates structure, finiteness and norms."""
    blob = Path(path).read_bytes()
    if len(blob) < 12:
        raise FormatError(f"file too short for the 12-byte preamble ({len(blob)} bytes)")
    if blob[0:4] != MAGIC:
        raise FormatError(f"bad magic {blob[0:4]!r} at byte offset 0, expected {MAGIC!r}")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version} at byte offset 4")
    if 12 + header_len > len(blob):
        raise FormatError(
            f"header length {header_len} at byte offset 8 overruns the file ({len(blob)} bytes)"
        )
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise FormatError(f"unparseable header at byte offset 12: {err}") from err

    try:
        d = int(header["d"])
        m = int(header["m"])
        classes = [(str(c["label"]), int(c["image_count"])) for c in header["classes"]]
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError(f"header missing or mistyped field: {err}") from err
    if d < 1 or m < 1 or not classes or any(count < 1 for _, count in classes):
        raise FormatError("header requires d >= 1, m >= 1 and positive image counts")
    labels = [label for label, _ in classes]
    if len(set(labels)) != len(labels):
        raise FormatError("duplicate class labels in header")

    expected = 4 * d * m * sum(count for _, count in classes)
    actual = len(blob) - 12 - header_len
    if actual != expected:
        raise FormatError(f"payload size mismatch: expected {expected} bytes, found {actual}")

    flat = np.frombuffer(blob, dtype="<f4", offset=12 + header_len).astype(np.float64)
    pools: dict[str, np.ndarray] = {}
    cursor = 0
    for label, count in classes:
        size = count * m * d
        block = flat[cursor : cursor + size].reshape(count, m, d)
        cursor += size
        if not np.all(np.isfinite(block)):
            raise FormatError(f"non-finite descriptor value in class {label!r}")
        norms = np.linalg.norm(block, axis=2)
        if np.any(norms == 0.0):
            img, idx = np.argwhere(norms == 0.0)[0]
            raise DegenerateDescriptorError(
                f"zero-norm descriptor in class {label!r}, image {int(img)}, index {int(idx)}"
            )
        pools[label] = block
    return EpisodePool(pools, split=split)


def merge_pools(pools: list[EpisodePool], split: str = "train") -> EpisodePool:
    """Union of several pool fragments; a repeated label extends its images."""
    if not pools:
        raise InvalidInputError("no pools to merge")
    merged: dict[str, np.ndarray] = {}
    for pool in pools:
        for label, block in pool.classes.items():
            if label in merged:
                merged[label] = np.concatenate([merged[label], block], axis=0)
            else:
                merged[label] = block
    return EpisodePool(merged, split=split)


@dataclass(frozen=True)
class Checkpoint:
    """A trained threshold network plus the settings it was trained under."""

    mlp: ThresholdMlp
    k_fraction: float
    sharpness: float
    score_form: str
    mode: str
    seed: int

    @property
    def dim(self) -> int:
        return self.mlp.descriptor_dim

    @property
    def hidden_dim(self) -> int:
        return self.mlp.hidden_dim

    def eval_config(self, **overrides) -> TrainConfig:
        """TrainConfig carrying this checkpoint's pipeline settings."""
        base = dict(
            k_fraction=self.k_fraction,
            sharpness=self.sharpness,
            score_form=self.score_form,
            mode=self.mode,
            seed=self.seed,
            hidden_dim=self.hidden_dim,
        )
        base.update(overrides)
        return TrainConfig(**base)


def _emit_json(value, indent: int = 0) -> str:
    # json.dump cannot be told to print floats at full precision, so the
    # (small, known) checkpoint structure is rendered by hand: every float is
    # written with 17 significant digits, which round-trips float64 exactly.
    pad = "  " * indent
    if isinstance(value, dict):
        rows = [f'{pad}  {json.dumps(k)}: {_emit_json(v, indent + 1).lstrip()}' for k, v in value.items()]
        return pad + "{\n" + ",\n".join(rows) + "\n" + pad + "}"
    if isinstance(value, (list, tuple)):
        rows = [_emit_json(v, indent + 1) for v in value]
        return pad + "[\n" + ",\n".join(rows) + "\n" + pad + "]"
    if isinstance(value, bool):
        return pad + ("true" if value else "false")
    if isinstance(value, (int, np.integer)):
        return pad + str(int(value))
    if isinstance(value, (float, np.floating)):
        return pad + format(float(value), ".17g")
    if isinstance(value, str):
        return pad + json.dumps(value)
    raise InvalidInputError(f"cannot serialize {type(value).__name__}")


def save_checkpoint(path, mlp: ThresholdMlp, *, k_fraction: float, sharpness: float,
                    score_form: str, mode: str, seed: int) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "d": mlp.descriptor_dim,
        "hidden_dim": mlp.hidden_dim,
        "lambda": float(sharpness),
        "k_fraction": float(k_fraction),
        "score_form": score_form,
        "mode": mode,
        "seed": int(seed),
        "parameters": {
            "w1": mlp.w1.tolist(),
            "b1": mlp.b1.tolist(),
            "w2": mlp.w2.tolist(),
            "b2": float(mlp.b2),
        },
    }
    Path(path).write_text(_emit_json(doc) + "\n", encoding="utf-8")


def load_checkpoint(path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise FormatError(f"checkpoint is not valid JSON: {err}") from err
    try:
        if int(doc["format_version"]) != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {doc['format_version']}")
        params = doc["parameters"]
        mlp = ThresholdMlp(
            w1=np.asarray(params["w1"], dtype=np.float64),
            b1=np.asarray(params["b1"], dtype=np.float64),
            w2=np.asarray(params["w2"], dtype=np.float64),
            b2=np.float64(params["b2"]),
        )
        ckpt = Checkpoint(
            mlp=mlp,
            k_fraction=float(doc["k_fraction"]),
            sharpness=float(doc["lambda"]),
            score_form=str(doc["score_form"]),
            mode=str(doc["mode"]),
            seed=int(doc["seed"]),
        )
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError(f"checkpoint missing or mistyped field: {err}") from err
    if ckpt.dim != int(doc["d"]) or ckpt.hidden_dim != int(doc["hidden_dim"]):
        raise FormatError("checkpoint dimensions disagree with its parameter shapes")
    return ckpt
