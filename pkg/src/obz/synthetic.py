"""Seeded synthetic data generators for experiments, demos, and tests.

Inlier images are Gaussian-noise grids around a base intensity; outlier
images shift the intensity distribution far outside the reference spread,
which pushes their first-order features many reference-sigmas away.
"""

from __future__ import annotations

import numpy as np

from .features import ImageSample, extract_first_order


INLIER_MEAN = 100.0
INLIER_SIGMA = 20.0


def inlier_image(rng: np.random.Generator, size: int = 16) -> np.ndarray:
    return rng.normal(INLIER_MEAN, INLIER_SIGMA, size=(size, size))


def outlier_image(rng: np.random.Generator, size: int = 16, shift_sigmas: float = 6.0) -> np.ndarray:
    """Pixel distribution mean-shifted by `shift_sigmas` pixel-sigmas."""
    return rng.normal(INLIER_MEAN + shift_sigmas * INLIER_SIGMA, INLIER_SIGMA, size=(size, size))


def quantize_u8(pixels: np.ndarray) -> np.ndarray:
    """Round/clip to the 0..255 grid an 8-bit PGM round trip produces."""
    return np.clip(np.rint(pixels), 0, 255)


def feature_matrix(images: list[np.ndarray]) -> np.ndarray:
    rows = [
        extract_first_order(ImageSample(pixels=px, sample_id=f"ref{i}")).to_array()
        for i, px in enumerate(images)
    ]
    return np.vstack(rows)


def reference_matrix(seed: int, n: int = 500, size: int = 16) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return feature_matrix([inlier_image(rng, size) for _ in range(n)])


def gaussian_inliers(rng: np.random.Generator, n: int, d: int,
                     mean: float = 0.0, sigma: float = 1.0) -> np.ndarray:
    return rng.normal(mean, sigma, size=(n, d))


def write_demo_files(root, seed: int = 0, n_ref: int = 500,
                     n_inliers: int = 95, n_outliers: int = 5, size: int = 16) -> dict:
    """Materialize a demo dataset: ref.csv plus images/ of 8-bit PGM samples.

    Images are quantized to the 0..255 grid before feature extraction so the
    reference matrix describes exactly what a PGM round trip will deliver.
    Returns a manifest naming the injected outlier files.
    """
    import csv as _csv
    from pathlib import Path

    from .pgm import write_pgm

    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    ref = feature_matrix([quantize_u8(inlier_image(rng, size)) for _ in range(n_ref)])
    with open(root / "ref.csv", "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(extract_first_order(
            ImageSample(pixels=np.zeros((2, 2)) , sample_id="names-probe")).names)
        writer.writerows(ref.tolist())

    samples = [(quantize_u8(inlier_image(rng, size)), False) for _ in range(n_inliers)]
    samples += [(quantize_u8(outlier_image(rng, size)), True) for _ in range(n_outliers)]
    outlier_files = []
    for i, (px, is_outlier) in enumerate(samples):
        name = f"sample_{i:03d}.pgm"
        (root / "images" / name).write_bytes(write_pgm(px, maxval=255))
        if is_outlier:
            outlier_files.append(name)
    return {
        "ref_csv": str(root / "ref.csv"),
        "images_dir": str(root / "images"),
        "n_samples": n_inliers + n_outliers,
        "outlier_files": outlier_files,
    }


def shifted_outliers(rng: np.random.Generator, n: int, d: int,
                     mean: float = 0.0, sigma: float = 1.0, shift_sigmas: float = 6.0) -> np.ndarray:
    """Outlier population: mean shifted by `shift_sigmas` stds in every dimension."""
    return rng.normal(mean + shift_sigmas * sigma, sigma, size=(n, d))
