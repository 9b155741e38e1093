"""Synthetic 10-class image set and the raw TIMG image format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint

IMAGE_SIZE = 32
NUM_CLASSES = 10
# blob centres (row, col); class = position * 2 + gradient direction
BLOB_POSITIONS = ((8, 8), (8, 24), (24, 8), (24, 24), (16, 16))
TIMG_MAGIC = b"TIMG"


@dataclass
class ToyDataset:
    images: np.ndarray  # (N, 32, 32, 3) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64 in [0, 10)
    seed: int

    def __len__(self) -> int:
        return len(self.labels)

    def save(self, path) -> None:
        checkpoint.save(
            {
                "images": self.images.astype(np.float32),
                "labels": self.labels.astype(np.float32),
                "seed": np.array([self.seed], dtype=np.float64),
            },
            path,
        )

    @classmethod
    def load(cls, path) -> "ToyDataset":
        t = checkpoint.load(path)
        seed = int(t["seed"][0]) if "seed" in t else -1
        return cls(t["images"], t["labels"].astype(np.int64), seed)


def gen_dataset(seed: int = 0, n: int = 256) -> ToyDataset:
    """Bright blob at one of 5 positions over a background ramp in one of 2 directions."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % NUM_CLASSES
    rng.shuffle(labels)
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(np.float64)
    ramp = (xx / (IMAGE_SIZE - 1), yy / (IMAGE_SIZE - 1))
    images = np.empty((n, IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.float32)
    for i, label in enumerate(labels):
        cy, cx = BLOB_POSITIONS[label // 2]
        cy, cx = cy + rng.integers(-1, 2), cx + rng.integers(-1, 2)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 3.0**2))
        background = 0.1 + 0.4 * ramp[label % 2]
        tint = rng.uniform(0.6, 1.0, size=3)
        img = background[..., None] + 0.5 * blob[..., None] * tint
        img += rng.normal(0.0, 0.03, size=img.shape)
        images[i] = np.clip(img, 0.0, 1.0)
    return ToyDataset(images, labels.astype(np.int64), seed)


def load_or_generate(path, seed: int, n: int) -> ToyDataset:
    path = Path(path) if path else None
    if path is not None and path.exists():
        return ToyDataset.load(path)
    data = gen_dataset(seed, n)
    if path is not None:
        data.save(path)
    return data


def write_timg(path, image: np.ndarray) -> None:
    """``b"TIMG" | u32 H | u32 W | u32 C | f32 LE pixels`` (row-major HWC)."""
    image = np.asarray(image, dtype="<f4")
    if image.ndim != 3:
        raise ValueError(f"expected an (H, W, C) image, got {image.shape}")
    Path(path).write_bytes(TIMG_MAGIC + struct.pack("<III", *image.shape) + image.tobytes())


def read_timg(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < 16 or buf[:4] != TIMG_MAGIC:
        raise ValueError(f"{path}: not a TIMG file")
    h, w, c = struct.unpack_from("<III", buf, 4)
    n = h * w * c
    if len(buf) != 16 + 4 * n:
        raise ValueError(f"{path}: expected {n} pixels, file holds {(len(buf) - 16) // 4}")
    return np.frombuffer(buf, dtype="<f4", offset=16).reshape(h, w, c).astype(np.float32)
