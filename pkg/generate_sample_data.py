#!/usr/bin/env python3
"""
Generate small synthetic chest X-ray fixtures.

The default fixture has 6 patients with 2 images each: one "No Finding"
image and one diseased image carrying a bright blob. Images are written as
PGM (8 or 16 bit) or NPY next to a metadata CSV in wide or long format.
The helper functions are also used by the tests.
"""
import argparse
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from PIL import Image

from dataset import (
    AGE_COL,
    IMAGE_COL,
    LABEL_COL,
    LABELS,
    NO_FINDING,
    PATIENT_COL,
    SEX_COL,
    VIEW_COL,
    ArrayDataset,
)


def parse_args(argv=None):
    """Parse command line arguments"""
    parser = argparse.ArgumentParser(description="Generate synthetic chest X-ray fixtures")

    parser.add_argument("--patients", type=int, default=6,
                        help="Number of patients, 2 images each (default: 6)")
    parser.add_argument("--size", type=int, default=32,
                        help="Image edge in pixels (default: 32)")
    parser.add_argument("--format", choices=["pgm", "npy"], default="pgm",
                        help="Image file format (default: pgm)")
    parser.add_argument("--bit-depth", type=int, choices=[8, 16], default=8,
                        help="PGM sample depth (default: 8)")
    parser.add_argument("--long-format", action="store_true",
                        help="One row per (image, label) instead of '|'-joined labels")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--output-dir", default="sample_data",
                        help="Output directory (default: sample_data)")

    return parser.parse_args(argv)


def synthetic_xray(rng: np.random.Generator, size: int, diseased: bool) -> np.ndarray:
    """H x W image in [0, 1]: a dark field with two lung lobes, plus a blob when diseased"""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    image = 0.2 + 0.05 * rng.standard_normal((size, size))
    for cx in (0.3, 0.7):
        lobe = ((xx - cx) / 0.18) ** 2 + ((yy - 0.5) / 0.35) ** 2 < 1.0
        image[lobe] += 0.35
    if diseased:
        cx, cy = rng.uniform(0.25, 0.75, size=2)
        image += 0.4 * np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / 0.01))
    return np.clip(image, 0.0, 1.0)


def write_pgm(image: np.ndarray, path: Path, bit_depth: int = 8) -> Path:
    """Binary P5 PGM with maxval 255 (8 bit) or 65535 (16 bit)"""
    maxval = 255 if bit_depth == 8 else 65535
    pixels = np.round(np.clip(image, 0.0, 1.0) * maxval)
    if bit_depth == 8:
        img = Image.fromarray(pixels.astype(np.uint8), mode="L")
    else:
        img = Image.fromarray(pixels.astype(np.int32), mode="I")
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PPM")
    return path


def fixture_rows(patients: int, rng: np.random.Generator) -> List[dict]:
    """Metadata rows: image 000 of each patient is clean, image 001 is diseased"""
    diseases = [label for label in LABELS]
    rows = []
    for p in range(patients):
        patient_id = f"{p + 1:05d}"
        age = int(rng.integers(20, 80))
        sex = "M" if p % 2 == 0 else "F"
        for i in range(2):
            if i == 0:
                labels = [NO_FINDING]
            else:
                labels = [diseases[p % len(diseases)]]
                if p % 3 == 2:
                    labels.append(diseases[(p + 5) % len(diseases)])
            rows.append({
                IMAGE_COL: f"{patient_id}_{i:03d}.png",
                LABEL_COL: labels,
                PATIENT_COL: patient_id,
                AGE_COL: f"{age:03d}Y" if p % 4 == 3 else str(age),
                SEX_COL: sex,
                VIEW_COL: "PA" if i == 0 else "AP",
            })
    return rows


def metadata_frame(rows: List[dict], long_format: bool = False) -> pd.DataFrame:
    records = []
    for row in rows:
        if long_format:
            records.extend({**row, LABEL_COL: label} for label in row[LABEL_COL])
        else:
            records.append({**row, LABEL_COL: "|".join(row[LABEL_COL])})
    return pd.DataFrame(records, columns=[IMAGE_COL, LABEL_COL, PATIENT_COL, AGE_COL, SEX_COL, VIEW_COL])


def write_fixture(
    output_dir,
    patients: int = 6,
    size: int = 32,
    image_format: str = "pgm",
    bit_depth: int = 8,
    long_format: bool = False,
    seed: int = 0,
) -> Tuple[Path, Path]:
    """Write metadata.csv and images/; returns (metadata path, image dir)"""
    output_dir = Path(output_dir)
    image_dir = output_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    rows = fixture_rows(patients, rng)
    for row in rows:
        diseased = row[LABEL_COL] != [NO_FINDING]
        image = synthetic_xray(rng, size, diseased)
        stem = Path(row[IMAGE_COL]).stem
        if image_format == "pgm":
            write_pgm(image, image_dir / f"{stem}.pgm", bit_depth)
        else:
            np.save(image_dir / f"{stem}.npy", image.astype(np.float32))

    metadata_path = output_dir / "metadata.csv"
    metadata_frame(rows, long_format).to_csv(metadata_path, index=False)
    return metadata_path, image_dir


def _dataset(images: np.ndarray, diseased: np.ndarray, rng: np.random.Generator) -> ArrayDataset:
    labels = np.zeros((len(diseased), len(LABELS)))
    picks = rng.integers(0, len(LABELS), size=len(diseased))
    labels[np.flatnonzero(diseased), picks[diseased]] = 1.0
    return ArrayDataset(images, labels, [f"synthetic_{i:04d}.png" for i in range(len(diseased))])


def separable_dataset(n: int = 32, size: int = 16, seed: int = 0) -> ArrayDataset:
    """Half diseased; diseased images are uniformly brighter than clean ones"""
    rng = np.random.default_rng(seed)
    diseased = np.arange(n) % 2 == 1
    images = 0.25 + 0.05 * rng.standard_normal((n, 1, size, size))
    images[diseased] += 0.5
    return _dataset(images, diseased, rng)


def imbalanced_dataset(
    n: int = 500, minority: float = 0.05, size: int = 8, signal: float = 0.3, seed: int = 0
) -> ArrayDataset:
    """`minority` share of diseased images, shifted by `signal` under unit noise"""
    rng = np.random.default_rng(seed)
    diseased = np.zeros(n, dtype=bool)
    diseased[rng.choice(n, size=max(1, int(round(n * minority))), replace=False)] = True
    images = rng.standard_normal((n, 1, size, size))
    images[diseased] += signal
    return _dataset(images, diseased, rng)


def rank_r_channel(height: int, width: int, rank: int, seed: int = 0,
                   scales: Optional[List[float]] = None) -> np.ndarray:
    """H x W matrix of exact rank `rank` (before the column mean is removed)"""
    rng = np.random.default_rng(seed)
    scales = scales or [float(rank - i) for i in range(rank)]
    left = rng.standard_normal((height, rank))
    right = rng.standard_normal((rank, width))
    return (left * np.asarray(scales)) @ right


def main(argv=None):
    args = parse_args(argv)
    metadata_path, image_dir = write_fixture(
        args.output_dir,
        patients=args.patients,
        size=args.size,
        image_format=args.format,
        bit_depth=args.bit_depth,
        long_format=args.long_format,
        seed=args.seed,
    )
    print(f"✓ Wrote {args.patients * 2} images to {image_dir}")
    print(f"✓ Wrote metadata to {metadata_path}")
    return 0


if __name__ == "__main__":
    main()
