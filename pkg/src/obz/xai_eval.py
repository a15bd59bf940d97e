"""Evaluation of attribution maps: perturbation-curve fidelity and compactness.

Fidelity masks (deletion) or reveals (insertion) pixels in order of
attribution and tracks the model score through a pluggable oracle; the
score is summarized as normalized trapezoidal area under the curve.
Compactness is the Gini coefficient of absolute attribution scores.
The oracle is any deterministic (image, target_class) -> float callable,
so no deep-learning runtime is ever needed here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import InvalidInput, OracleError
from .features import ImageSample

DEFAULT_FRACTIONS: tuple[float, ...] = tuple(np.round(np.arange(0, 11) * 0.05, 2))  # 0 .. 0.5


@dataclass(frozen=True)
class AttributionMap:
    """Per-pixel signed importance scores at input resolution.

    Positive supports the target class, negative opposes it.
    """

    scores: np.ndarray
    method: str
    target_class: int | str
    source_sample: str = ""

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 2 or s.size == 0:
            raise InvalidInput(f"attribution map must be 2-D, got shape {s.shape}")
        if not np.isfinite(s).all():
            raise InvalidInput("attribution map contains non-finite scores")
        object.__setattr__(self, "scores", s)


@dataclass(frozen=True)
class PerturbationCurve:
    fractions: tuple[float, ...]
    scores: tuple[float, ...]
    mode: str  # "deletion" | "insertion"

    def __post_init__(self):
        f = self.fractions
        if len(f) == 0 or f[0] != 0.0:
            raise InvalidInput("fractions must start at 0")
        if any(b <= a for a, b in zip(f, f[1:])):
            raise InvalidInput("fractions must be strictly increasing")
        if any(v < 0.0 or v > 1.0 for v in f):
            raise InvalidInput("fractions must lie in [0, 1]")
        if len(self.scores) != len(f):
            raise InvalidInput("fractions/scores length mismatch")
        if not all(np.isfinite(v) for v in self.scores):
            raise InvalidInput("curve scores must be finite")
        if self.mode not in ("deletion", "insertion"):
            raise InvalidInput(f"unknown mode {self.mode!r}")


class ModelOracle(Protocol):
    """Deterministic scoring contract standing in for the deployed model."""

    def __call__(self, image: ImageSample, target_class) -> float: ...


def ranked_pixel_order(scores: np.ndarray) -> np.ndarray:
    """Flat pixel indices by descending attribution, ties broken row-major."""
    flat = scores.reshape(-1)
    return np.argsort(-flat, kind="stable")


def perturbation_curve(
    image: ImageSample,
    attribution: AttributionMap,
    oracle: ModelOracle,
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS,
    mode: str = "deletion",
) -> PerturbationCurve:
    """Query the oracle along the masking schedule induced by the attribution.

    Deletion replaces the top floor(f*N) pixels with the image mean;
    insertion starts from the all-mean image and restores them. The pixel
    order may be overridden by passing an AttributionMap built from any
    scores of the same shape.
    """
    if attribution.scores.shape != image.pixels.shape:
        raise InvalidInput(
            f"attribution shape {attribution.scores.shape} != image shape {image.pixels.shape}"
        )
    order = ranked_pixel_order(attribution.scores)
    n = image.pixels.size
    baseline = float(image.pixels.mean())
    flat = image.pixels.reshape(-1)

    scores: list[float] = []
    for f in fractions:
        m = int(np.floor(f * n))
        if mode == "deletion":
            perturbed = flat.copy()
            perturbed[order[:m]] = baseline
        else:
            perturbed = np.full(n, baseline)
            perturbed[order[:m]] = flat[order[:m]]
        probe = ImageSample(
            pixels=perturbed.reshape(image.pixels.shape),
            sample_id=image.sample_id,
            captured_at_ms=image.captured_at_ms,
        )
        value = float(oracle(probe, attribution.target_class))
        if not np.isfinite(value):
            raise OracleError(f"oracle returned non-finite score {value!r} at fraction {f}")
        scores.append(value)

    return PerturbationCurve(fractions=tuple(float(f) for f in fractions), scores=tuple(scores), mode=mode)


def fidelity_score(curve: PerturbationCurve) -> float:
    """Normalized trapezoidal area under the perturbation curve.

    Normalized by the curve's first score when it is not ~0. Deletion:
    lower is better; insertion: higher is better.
    """
    if len(curve.scores) < 2:
        raise InvalidInput("need at least 2 curve points")
    xs = np.asarray(curve.fractions)
    ys = np.asarray(curve.scores)
    area = float(np.trapezoid(ys, xs))
    s0 = curve.scores[0]
    if abs(s0) > 1e-12:
        return area / s0
    return area


def compactness(attribution: AttributionMap) -> float:
    """Gini coefficient of absolute attribution scores, in [0, 1 - 1/N].

    0 for a uniform map (including all-zero), (N-1)/N for a one-hot map.
    """
    a = np.sort(np.abs(attribution.scores.reshape(-1)))
    n = a.size
    if n < 2:
        raise InvalidInput("need at least 2 pixels")
    total = float(a.sum())
    if total == 0.0:
        return 0.0
    idx = np.arange(1, n + 1, dtype=np.float64)
    return float(2.0 * np.sum(idx * a) / (n * total) - (n + 1.0) / n)
