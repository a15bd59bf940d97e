"""Independent brute-force reference implementations used as test oracles.

Everything here is deliberately written from the definitions, in the most
straightforward way possible, sharing no code with src/obz. Oracles stay
dumb so the fast paths can be checked against them.
"""

from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------------------
# first-order features (pure python + math)
# ---------------------------------------------------------------------------

def percentile_reference(values, q):
    """Linear interpolation between closest ranks on a plain Python list."""
    s = sorted(values)
    n = len(s)
    if n == 1:
        return float(s[0])
    h = (n - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, n - 1)
    return s[lo] + (h - lo) * (s[hi] - s[lo])


def fof_reference(pixels) -> dict[str, float]:
    """All 16 first-order features from their definitions, loop by loop."""
    xs = [float(v) for v in pixels]
    n = len(xs)
    assert n > 0
    s = sorted(xs)
    v_min, v_max = s[0], s[-1]
    rng = v_max - v_min
    mean = sum(xs) / n
    median = percentile_reference(xs, 0.5)
    p10 = percentile_reference(xs, 0.10)
    p90 = percentile_reference(xs, 0.90)
    iqr = percentile_reference(xs, 0.75) - percentile_reference(xs, 0.25)

    m2 = sum((v - mean) ** 2 for v in xs) / n
    std = math.sqrt(m2)
    if std > 0.0 and std**3 > 0.0 and m2**2 > 0.0:
        m3 = sum((v - mean) ** 3 for v in xs) / n
        m4 = sum((v - mean) ** 4 for v in xs) / n
        skewness = m3 / std**3
        kurtosis = m4 / m2**2 - 3.0
    else:
        skewness = 0.0
        kurtosis = 0.0

    energy = sum(v * v for v in xs)
    rms = math.sqrt(energy / n)

    if rng > 0.0:
        counts = [0] * 256
        for v in xs:
            idx = math.floor((v - v_min) / rng * 256)
            idx = min(max(idx, 0), 255)  # v == max lands in the last bin
            counts[idx] += 1
        entropy = -sum((c / n) * math.log(c / n) for c in counts if c > 0)
        uniformity = sum((c / n) ** 2 for c in counts)
    else:
        entropy = 0.0
        uniformity = 1.0

    return {
        "min": v_min,
        "max": v_max,
        "range": rng,
        "mean": mean,
        "median": median,
        "p10": p10,
        "p90": p90,
        "iqr": iqr,
        "variance": m2,
        "std": std,
        "skewness": skewness,
        "kurtosis": kurtosis,
        "energy": energy,
        "rms": rms,
        "entropy": entropy,
        "uniformity": uniformity,
    }


# ---------------------------------------------------------------------------
# GMM density (naive summation, no log-sum-exp)
# ---------------------------------------------------------------------------

def gmm_nll_reference(weights, means, variances, x) -> float:
    """-log sum_k w_k N(x; mu_k, diag sigma_k^2), evaluated term by term.

    Only valid when the density does not underflow (small d, x near the
    means) — exactly the regime the oracle tests use.
    """
    total = 0.0
    for w, mu, var in zip(weights, means, variances):
        dens = w
        for xi, mi, vi in zip(x, mu, var):
            dens *= math.exp(-0.5 * (xi - mi) ** 2 / vi) / math.sqrt(2 * math.pi * vi)
        total += dens
    return -math.log(total)


# ---------------------------------------------------------------------------
# PCA via an explicit covariance eigendecomposition
# ---------------------------------------------------------------------------

def pca_eigh_reference(X: np.ndarray):
    """Principal axes of standardized data from eigh of the covariance matrix.

    Returns (components ordered by decreasing eigenvalue, explained variance
    ratio). Column standardization mirrors the documented contract: population
    std with a 1e-12 floor treating the column as constant (scale 1).
    """
    X = np.asarray(X, dtype=np.float64)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    scale = np.where(sd < 1e-12, 1.0, sd)
    Z = (X - mu) / scale
    cov = (Z.T @ Z) / (X.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    components = eigvecs[:, order].T
    ratio = eigvals / eigvals.sum() if eigvals.sum() > 0 else np.zeros_like(eigvals)
    return components, ratio


# ---------------------------------------------------------------------------
# Gini coefficient via pairwise absolute differences
# ---------------------------------------------------------------------------

def gini_pairwise_reference(values) -> float:
    """G = sum_ij |a_i - a_j| / (2 n^2 mean(a)); 0 for an all-zero vector."""
    a = [abs(float(v)) for v in values]
    n = len(a)
    total = sum(a)
    if total == 0.0:
        return 0.0
    acc = 0.0
    for i in range(n):
        for j in range(n):
            acc += abs(a[i] - a[j])
    return acc / (2.0 * n * n * (total / n))


# ---------------------------------------------------------------------------
# area under a piecewise-linear curve (midpoint rule, exact per segment)
# ---------------------------------------------------------------------------

def piecewise_linear_area_reference(xs, ys, subdivisions: int = 64) -> float:
    """Integral of the piecewise-linear interpolant by midpoint Riemann sums.

    The midpoint rule is exact on linear pieces, so this agrees with the
    true area to float precision while using none of the trapezoid algebra.
    """
    area = 0.0
    for (x0, y0), (x1, y1) in zip(zip(xs, ys), zip(xs[1:], ys[1:])):
        h = (x1 - x0) / subdivisions
        for k in range(subdivisions):
            xm = x0 + (k + 0.5) * h
            t = 0.0 if x1 == x0 else (xm - x0) / (x1 - x0)
            area += (y0 + t * (y1 - y0)) * h
    return area


# ---------------------------------------------------------------------------
# closed-form deletion curve for a linear oracle
# ---------------------------------------------------------------------------

def linear_deletion_score_reference(w, x, baseline, n_masked: int) -> float:
    """Score after masking the top-n pixels of a linear model score(x)=w.x.

    Attribution w_i*x_i, ties broken by index; masked pixels take `baseline`.
    """
    w = [float(v) for v in w]
    x = [float(v) for v in x]
    attr = [wi * xi for wi, xi in zip(w, x)]
    order = sorted(range(len(x)), key=lambda i: (-attr[i], i))
    total = sum(wi * xi for wi, xi in zip(w, x))
    for i in order[:n_masked]:
        total -= w[i] * x[i] - w[i] * baseline
    return total
