"""First-order feature extraction from single-channel images.

The 16 features are intensity-distribution statistics (order statistics,
moments, histogram measures) in a fixed canonical order; spatial arrangement
of pixels never matters. Percentiles use linear interpolation between closest
ranks, variance/std are population (ddof=0), and entropy/uniformity come from
a 256-bin histogram spanning [min, max] with natural-log entropy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput

CANONICAL_FEATURE_NAMES: tuple[str, ...] = (
    "min",
    "max",
    "range",
    "mean",
    "median",
    "p10",
    "p90",
    "iqr",
    "variance",
    "std",
    "skewness",
    "kurtosis",
    "energy",
    "rms",
    "entropy",
    "uniformity",
)

HISTOGRAM_BINS = 256


@dataclass(frozen=True)
class ImageSample:
    """One monitored image: row-major single-channel intensities plus identity.

    `pixels` is a (height, width) float64 array. Multi-channel inputs must be
    reduced before construction (see `from_array`).
    """

    pixels: np.ndarray
    sample_id: str
    captured_at_ms: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise InvalidInput(f"image must be a non-empty 2-D array, got shape {px.shape}")
        if not np.isfinite(px).all():
            raise InvalidInput("image contains non-finite intensities")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def from_array(cls, arr, sample_id: str, captured_at_ms: int = 0) -> "ImageSample":
        """Build a sample from a 2-D or 3-D (H, W, C) array.

        Multi-channel input is reduced to a single channel by the per-pixel
        channel mean, keeping the feature contract grayscale.
        """
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim == 3:
            a = a.mean(axis=2)
        return cls(pixels=a, sample_id=sample_id, captured_at_ms=captured_at_ms)


@dataclass(frozen=True)
class FeatureVector:
    """Ordered, named vector of the 16 first-order features."""

    names: tuple[str, ...] = field(default=CANONICAL_FEATURE_NAMES)
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.names) != len(self.values):
            raise InvalidInput("feature names/values length mismatch")
        if not all(np.isfinite(v) for v in self.values):
            raise InvalidInput("feature vector contains non-finite values")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values))

    def to_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def percentile(sorted_values: np.ndarray, q: float) -> float:
    """Empirical quantile by linear interpolation between closest ranks.

    `sorted_values` must already be ascending. q in [0, 1].
    """
    n = sorted_values.shape[0]
    if n == 1:
        return float(sorted_values[0])
    h = (n - 1) * q
    lo = int(np.floor(h))
    hi = min(lo + 1, n - 1)
    frac = h - lo
    return float(sorted_values[lo] + frac * (sorted_values[hi] - sorted_values[lo]))


def extract_first_order(image: ImageSample) -> FeatureVector:
    """Compute the 16 canonical first-order features of one image.

    Deterministic for identical input; raises InvalidInput on empty or
    non-finite pixel data.
    """
    flat = image.pixels.reshape(-1)
    if flat.size == 0:
        raise InvalidInput("empty image")
    if not np.isfinite(flat).all():
        raise InvalidInput("image contains non-finite intensities")

    n = flat.size
    srt = np.sort(flat)
    v_min = float(srt[0])
    v_max = float(srt[-1])
    v_range = v_max - v_min
    mean = float(np.mean(flat))
    median = percentile(srt, 0.5)
    p10 = percentile(srt, 0.10)
    p90 = percentile(srt, 0.90)
    iqr = percentile(srt, 0.75) - percentile(srt, 0.25)

    centered = flat - mean
    m2 = float(np.mean(centered**2))
    variance = m2
    std = float(np.sqrt(m2))
    # denominators can underflow for near-constant data; fall back to the
    # same degenerate convention as a constant image
    if std > 0.0 and std**3 > 0.0 and m2**2 > 0.0:
        m3 = float(np.mean(centered**3))
        m4 = float(np.mean(centered**4))
        skewness = m3 / std**3
        kurtosis = m4 / m2**2 - 3.0
    else:
        skewness = 0.0
        kurtosis = 0.0

    energy = float(np.sum(flat**2))
    rms = float(np.sqrt(energy / n))

    if v_range > 0.0:
        # explicit bin index (floor((v-min)/range*256), max clamped into the
        # top bin) so any implementation of this contract bins identically
        idx = np.floor((flat - v_min) / v_range * HISTOGRAM_BINS)
        idx = np.clip(idx, 0, HISTOGRAM_BINS - 1).astype(np.int64)
        counts = np.bincount(idx, minlength=HISTOGRAM_BINS)
        p = counts[counts > 0] / n
        entropy = float(-np.sum(p * np.log(p)))
        uniformity = float(np.sum(p**2))
    else:
        entropy = 0.0
        uniformity = 1.0

    values = (
        v_min,
        v_max,
        v_range,
        mean,
        median,
        p10,
        p90,
        iqr,
        variance,
        std,
        skewness,
        kurtosis,
        energy,
        rms,
        entropy,
        uniformity,
    )
    return FeatureVector(names=CANONICAL_FEATURE_NAMES, values=values)


def extract_batch(images: list[ImageSample]) -> list[FeatureVector]:
    """Extract features for each image, preserving order.

    The first invalid image aborts the batch with its index in the message.
    """
    out: list[FeatureVector] = []
    for i, img in enumerate(images):
        try:
            out.append(extract_first_order(img))
        except InvalidInput as exc:
            raise InvalidInput(f"image {i}: {exc}") from exc
    return out
