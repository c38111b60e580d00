"""Regenerate the committed test fixtures.

    python tests/fixtures/make_fixtures.py

Outputs (next to this script):
  pairs/input, pairs/gt   8 synthetic 64x64 underwater-style PNG pairs
  golden_4x4.ppm          hand-specified P6 image (values documented in tests)
  golden_tiny.lu2n        checkpoint bytes written with struct, not the library
  toy_extractor.lu2n      2-layer conv feature extractor weights
"""

import struct
import zlib
from pathlib import Path

import numpy as np
from PIL import Image

HERE = Path(__file__).parent


def smooth_field(rng, size, octaves=4):
    yy, xx = np.mgrid[0:size, 0:size] / size
    out = np.zeros((size, size))
    for _ in range(octaves):
        fx, fy = rng.uniform(0.5, 3.0, 2)
        phase = rng.uniform(0, 2 * np.pi, 2)
        out += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * fx * xx + phase[0]) * np.cos(2 * np.pi * fy * yy + phase[1])
    out -= out.min()
    return out / max(out.max(), 1e-9)


def make_pairs(n=8, size=64, seed=2024):
    rng = np.random.default_rng(seed)
    beta = np.array([1.4, 0.45, 0.3])
    backscatter = np.array([0.08, 0.42, 0.52])
    for sub in ("input", "gt"):
        (HERE / "pairs" / sub).mkdir(parents=True, exist_ok=True)
    for i in range(n):
        gt = np.stack([smooth_field(rng, size) for _ in range(3)], axis=-1)
        gt = 0.1 + 0.8 * gt
        depth = 0.6 + 0.8 * smooth_field(rng, size, octaves=2)[..., None]
        t = np.exp(-beta * depth)
        degraded = gt * t + backscatter * (1.0 - t)
        for sub, img in (("input", degraded), ("gt", gt)):
            byte = np.floor(np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8)
            Image.fromarray(byte, "RGB").save(HERE / "pairs" / sub / f"pair_{i:02d}.png")


def make_golden_ppm():
    # pixel (r, c) has bytes (16*r + 4*c, 255 - 16*r - 4*c, 17*r*c) for r, c in 0..3
    body = bytearray()
    for r in range(4):
        for c in range(4):
            body += bytes([16 * r + 4 * c, 255 - 16 * r - 4 * c, 17 * r * c])
    (HERE / "golden_4x4.ppm").write_bytes(b"P6\n4 4\n255\n" + bytes(body))


def _pack(tensors):
    parts = [b"LU2N", struct.pack("<II", 1, len(tensors))]
    for name, arr in tensors:
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode()
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<B", arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def make_golden_checkpoint():
    tensors = [("alpha", np.array([1.0, -2.5, 0.125])),
               ("beta.matrix", np.arange(6, dtype=np.float64).reshape(2, 3) / 4.0)]
    (HERE / "golden_tiny.lu2n").write_bytes(_pack(tensors))


def make_toy_extractor(seed=7):
    rng = np.random.default_rng(seed)
    tensors = [("layers.0.weight", rng.normal(0, 0.4, (4, 3, 3, 3))),
               ("layers.0.bias", rng.normal(0, 0.1, 4)),
               ("layers.1.weight", rng.normal(0, 0.3, (5, 4, 3, 3))),
               ("layers.1.bias", rng.normal(0, 0.1, 5))]
    (HERE / "toy_extractor.lu2n").write_bytes(_pack(tensors))


if __name__ == "__main__":
    make_pairs()
    make_golden_ppm()
    make_golden_checkpoint()
    make_toy_extractor()
