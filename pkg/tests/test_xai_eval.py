"""Perturbation-curve, fidelity, and compactness tests."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from obz.errors import InvalidInput, OracleError
from obz.features import ImageSample
from obz.xai_eval import (
    AttributionMap,
    PerturbationCurve,
    compactness,
    fidelity_score,
    perturbation_curve,
)

from reference_impls import (
    gini_pairwise_reference,
    linear_deletion_score_reference,
    piecewise_linear_area_reference,
)


def amap(scores, method="test", target=0, source="s"):
    return AttributionMap(
        scores=np.asarray(scores, dtype=np.float64),
        method=method,
        target_class=target,
        source_sample=source,
    )


class LinearOracle:
    """score(x) = sum(w * x); pure and deterministic."""

    def __init__(self, w):
        self.w = np.asarray(w, dtype=np.float64)

    def __call__(self, image: ImageSample, target_class) -> float:
        return float(self.w @ image.pixels.reshape(-1))


def zero_mean_image(rng, shape):
    """Image built from +/- value pairs so the pixel mean is exactly 0.0."""
    half = rng.uniform(0.5, 2.0, size=(shape[0] * shape[1]) // 2)
    vals = np.concatenate([half, -half])
    rng.shuffle(vals)
    return ImageSample(pixels=vals.reshape(shape), sample_id="zm")


def test_single_fraction_is_unperturbed_score():
    rng = np.random.default_rng(0)
    img = ImageSample(pixels=rng.uniform(size=(4, 4)), sample_id="x")
    w = rng.normal(size=16)
    oracle = LinearOracle(w)
    curve = perturbation_curve(img, amap(rng.normal(size=(4, 4))), oracle, fractions=(0.0,))
    assert curve.scores == (oracle(img, 0),)


def test_linear_oracle_closed_form_deletion():
    rng = np.random.default_rng(1)
    img = ImageSample(pixels=rng.uniform(0.0, 10.0, size=(6, 6)), sample_id="x")
    w = rng.normal(size=36)
    oracle = LinearOracle(w)
    attribution = amap((w * img.pixels.reshape(-1)).reshape(6, 6))
    fractions = tuple(np.round(np.arange(0, 11) * 0.05, 2))
    curve = perturbation_curve(img, attribution, oracle, fractions=fractions, mode="deletion")
    baseline = float(img.pixels.mean())
    for f, got in zip(curve.fractions, curve.scores):
        want = linear_deletion_score_reference(w, img.pixels.reshape(-1), baseline, int(np.floor(f * 36)))
        assert got == pytest.approx(want, abs=1e-9)


def test_exact_attribution_dominates_random_orders():
    rng = np.random.default_rng(2)
    img = zero_mean_image(rng, (8, 8))
    w = rng.normal(size=64)
    oracle = LinearOracle(w)
    fractions = tuple(np.round(np.arange(0, 11) * 0.05, 2))
    exact = perturbation_curve(
        img, amap((w * img.pixels.reshape(-1)).reshape(8, 8)), oracle, fractions=fractions
    )
    for _ in range(50):
        random_scores = rng.normal(size=(8, 8))
        randomized = perturbation_curve(img, amap(random_scores), oracle, fractions=fractions)
        for ex, rd in zip(exact.scores, randomized.scores):
            assert rd >= ex - 1e-9


def test_rank_ties_break_row_major():
    img = ImageSample(pixels=np.array([[5.0, 1.0], [1.0, 1.0]]), sample_id="t")
    tied = amap([[1.0, 1.0], [1.0, 1.0]])
    calls = []

    def spy(image, target):
        calls.append(image.pixels.copy())
        return 0.0

    perturbation_curve(img, tied, spy, fractions=(0.0, 0.25, 0.5), mode="deletion")
    # fraction 0.25 masks exactly pixel (0,0); row-major tie-break
    assert calls[1][0, 0] == pytest.approx(img.pixels.mean())
    assert calls[1][0, 1] == 1.0


def test_positive_rescaling_leaves_curve_unchanged():
    rng = np.random.default_rng(3)
    img = ImageSample(pixels=rng.uniform(size=(5, 5)), sample_id="x")
    oracle = LinearOracle(rng.normal(size=25))
    scores = rng.normal(size=(5, 5))
    c1 = perturbation_curve(img, amap(scores), oracle)
    c2 = perturbation_curve(img, amap(scores * 7.3), oracle)
    assert c1 == c2


def test_deletion_end_equals_insertion_start():
    rng = np.random.default_rng(4)
    img = ImageSample(pixels=rng.uniform(size=(4, 4)), sample_id="x")
    oracle = LinearOracle(rng.normal(size=16))
    scores = rng.normal(size=(4, 4))
    deletion = perturbation_curve(img, amap(scores), oracle, fractions=(0.0, 1.0), mode="deletion")
    insertion = perturbation_curve(img, amap(scores), oracle, fractions=(0.0, 1.0), mode="insertion")
    assert deletion.scores[-1] == pytest.approx(insertion.scores[0], abs=1e-12)


def test_curve_validation_and_oracle_error():
    rng = np.random.default_rng(5)
    img = ImageSample(pixels=rng.uniform(size=(3, 3)), sample_id="x")
    with pytest.raises(InvalidInput):
        perturbation_curve(img, amap(np.zeros((2, 2))), LinearOracle(np.ones(9)))
    with pytest.raises(OracleError):
        perturbation_curve(img, amap(np.zeros((3, 3))), lambda im, t: float("nan"))
    with pytest.raises(InvalidInput):
        PerturbationCurve(fractions=(0.1, 0.2), scores=(1.0, 1.0), mode="deletion")
    with pytest.raises(InvalidInput):
        PerturbationCurve(fractions=(0.0, 0.0), scores=(1.0, 1.0), mode="deletion")


def test_fidelity_flat_and_triangle():
    flat = PerturbationCurve(fractions=(0.0, 0.5, 1.0), scores=(3.7, 3.7, 3.7), mode="deletion")
    assert fidelity_score(flat) == pytest.approx(1.0, abs=1e-12)
    tri = PerturbationCurve(fractions=(0.0, 1.0), scores=(1.0, 0.0), mode="deletion")
    assert fidelity_score(tri) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(InvalidInput):
        fidelity_score(PerturbationCurve(fractions=(0.0,), scores=(1.0,), mode="deletion"))


def test_fidelity_matches_quadrature_oracle():
    rng = np.random.default_rng(6)
    for _ in range(20):
        n = int(rng.integers(2, 12))
        fr = np.sort(rng.uniform(0.01, 1.0, size=n - 1))
        fractions = (0.0, *np.unique(fr))
        scores = tuple(rng.normal(size=len(fractions)))
        curve = PerturbationCurve(fractions=fractions, scores=scores, mode="deletion")
        want = piecewise_linear_area_reference(fractions, scores)
        s0 = scores[0]
        if abs(s0) > 1e-12:
            want /= s0
        assert fidelity_score(curve) == pytest.approx(want, abs=1e-9)


def test_fidelity_unnormalized_when_first_score_zero():
    curve = PerturbationCurve(fractions=(0.0, 1.0), scores=(0.0, 2.0), mode="insertion")
    assert fidelity_score(curve) == pytest.approx(1.0, abs=1e-12)  # raw area


def test_fidelity_duplicate_interior_points_consistent():
    c1 = PerturbationCurve(fractions=(0.0, 0.4, 1.0), scores=(2.0, 1.0, 0.5), mode="deletion")
    # same polyline sampled with an extra interior point on the segment
    mid = 1.0 + (0.7 - 0.4) / (1.0 - 0.4) * (0.5 - 1.0)
    c2 = PerturbationCurve(fractions=(0.0, 0.4, 0.7, 1.0), scores=(2.0, 1.0, mid, 0.5), mode="deletion")
    assert fidelity_score(c1) == pytest.approx(fidelity_score(c2), abs=1e-12)


def test_compactness_bounds():
    assert compactness(amap(np.full((4, 4), 2.5))) == pytest.approx(0.0, abs=1e-12)
    one_hot = np.zeros((4, 4))
    one_hot[2, 1] = 9.0
    n = 16
    assert compactness(amap(one_hot)) == pytest.approx((n - 1) / n, abs=1e-12)
    assert compactness(amap(np.zeros((3, 3)))) == 0.0


def test_compactness_matches_pairwise_oracle():
    rng = np.random.default_rng(7)
    for _ in range(20):
        scores = rng.normal(size=(int(rng.integers(2, 9)), int(rng.integers(2, 9))))
        want = gini_pairwise_reference(scores.reshape(-1))
        assert compactness(amap(scores)) == pytest.approx(want, abs=1e-9)


@given(
    hnp.arrays(
        np.float64,
        hnp.array_shapes(min_dims=2, max_dims=2, min_side=2, max_side=8),
        elements=st.floats(min_value=-100, max_value=100, allow_nan=False),
    ),
    st.floats(min_value=0.1, max_value=50.0),
)
@settings(max_examples=60, deadline=None)
def test_compactness_scale_and_permutation_invariant(scores, factor):
    base = compactness(amap(scores))
    assert compactness(amap(scores * factor)) == pytest.approx(base, abs=1e-9)
    rng = np.random.default_rng(0)
    flat = scores.reshape(-1)
    perm = rng.permutation(flat.size)
    assert compactness(amap(flat[perm].reshape(scores.shape))) == pytest.approx(base, abs=1e-9)
    n = scores.size
    assert -1e-12 <= base <= (n - 1) / n + 1e-12
