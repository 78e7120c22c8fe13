"""Descriptor files and checkpoints.

Writes a pool to the binary descriptor format, inspects its header, reads it
back, and round-trips a trained network through a JSON checkpoint. Both
round trips are lossless: the file stores the exact float32 payload and the
checkpoint prints every parameter with enough digits to reproduce the float64
values bit for bit.
"""

import json
import struct
import tempfile
from pathlib import Path

import numpy as np

from fewdesc import (
    ThresholdMlp,
    generate_synthetic_pool,
    load_checkpoint,
    load_descriptor_file,
    save_checkpoint,
    save_descriptor_file,
)

workdir = Path(tempfile.mkdtemp())
pool = generate_synthetic_pool(
    classes=4, images_per_class=6, dim=8, per_image=5,
    background_ratio=0.2, noise=0.3, seed=11,
)

data_path = workdir / "demo.ldpk"
save_descriptor_file(pool, data_path)
blob = data_path.read_bytes()
version, header_len = struct.unpack("<II", blob[4:12])
header = json.loads(blob[12 : 12 + header_len])
print(f"wrote {data_path} ({len(blob)} bytes)")
print(f"  magic {blob[:4]!r}, version {version}, header {header_len} bytes")
print(f"  d={header['d']}, m={header['m']}, classes={[c['label'] for c in header['classes']]}")
print(f"  payload {len(blob) - 12 - header_len} bytes "
      f"(= 4 * d * m * total images = {4 * header['d'] * header['m'] * sum(c['image_count'] for c in header['classes'])})")

loaded = load_descriptor_file(data_path)
match = all(
    np.array_equal(loaded.classes[c].astype(np.float32), pool.classes[c].astype(np.float32))
    for c in pool.labels
)
print(f"payload round trip exact at storage precision: {match}\n")

mlp = ThresholdMlp.init(8, rng=np.random.default_rng(2))
ckpt_path = workdir / "demo-ckpt.json"
save_checkpoint(ckpt_path, mlp, k_fraction=0.1, sharpness=20.0,
                score_form="weighted-sim", mode="raw", seed=2)
restored = load_checkpoint(ckpt_path)
identical = all(
    np.array_equal(getattr(restored.mlp, name), getattr(mlp, name))
    for name in ("w1", "b1", "w2", "b2")
)
print(f"wrote {ckpt_path}")
print(f"  settings: K={restored.k_fraction}, sharpness={restored.sharpness}, "
      f"form={restored.score_form}, mode={restored.mode}")
print(f"checkpoint round trip bit-identical: {identical}")
print("\nfirst parameter row as stored:")
print(" ", json.loads(ckpt_path.read_text())["parameters"]["w1"][0][:2], "...")
