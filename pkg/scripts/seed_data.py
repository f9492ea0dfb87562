"""Writes synthetic 8-bit grayscale PGM datasets for smoke runs.

Usage: python scripts/seed_data.py data --train 16 --holdout 4 --eval 4 --size 128
"""
import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from app.models.image import ImageGray  # noqa: E402
from app.services.image import save_image  # noqa: E402


def synthetic_image(rng: np.random.Generator, size: int) -> ImageGray:
    """Smooth background, a few blobs and a few hard-edged rectangles."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    gx, gy = rng.uniform(-60, 60, size=2)
    img = 128.0 + gx * (xx - 0.5) + gy * (yy - 0.5)
    for _ in range(rng.integers(3, 7)):
        cx, cy = rng.uniform(0, 1, size=2)
        width = rng.uniform(0.05, 0.25)
        amp = rng.uniform(-80, 80)
        img += amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * width ** 2))
    for _ in range(rng.integers(2, 5)):
        r0, c0 = rng.integers(0, size - size // 8, size=2)
        h, w = rng.integers(size // 8, size // 2, size=2)
        img[r0:r0 + h, c0:c0 + w] += rng.uniform(-70, 70)
    return ImageGray(np.clip(img, 0, 255))


def seed_split(directory: Path, count: int, size: int, rng: np.random.Generator):
    print(f"Writing {count} images to {directory}...")
    for i in range(count):
        save_image(synthetic_image(rng, size), directory / f"img_{i:03d}.pgm")


def seed_datasets(root: Path, train: int, holdout: int, evaluation: int, size: int, seed: int):
    rng = np.random.default_rng(seed)
    seed_split(root / "train", train, size, rng)
    seed_split(root / "holdout", holdout, size, rng)
    seed_split(root / "eval", evaluation, size, rng)
    print("Synthetic datasets seeded successfully!")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Generate synthetic grayscale datasets")
    parser.add_argument("root", type=Path)
    parser.add_argument("--train", type=int, default=16)
    parser.add_argument("--holdout", type=int, default=4)
    parser.add_argument("--eval", type=int, default=4)
    parser.add_argument("--size", type=int, default=128)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    seed_datasets(args.root, args.train, args.holdout, args.eval, args.size, args.seed)
