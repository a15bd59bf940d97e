"""Reference models for outlier detection.

Two detectors share one lifecycle (fit on a reference matrix, calibrate a
score threshold, score new vectors):

* a diagonal-covariance Gaussian mixture fitted by EM over first-order
  features, scored by negative log-likelihood;
* a PCA model over embeddings, scored by mean squared reconstruction
  residual on the top-r principal axes.

Both standardize per dimension at fit time and store the standardizer, so
training and serving see identical coordinates. Fits are deterministic given
(data, seed, config), and serialization round-trips models to bit-identical
scores.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientData, InvalidInput, InvalidRank, NotCalibrated
from .features import percentile

VARIANCE_FLOOR = 1e-6
STD_FLOOR = 1e-12
EM_MAX_ITER = 200
EM_REL_TOL = 1e-6
AUTO_K_RANGE = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension (mean, scale) applied before fitting and scoring."""

    mean: np.ndarray
    scale: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        # constant dimensions keep scale 1 so they pass through unchanged
        scale = np.where(sd < STD_FLOOR, 1.0, sd)
        return cls(mean=mu, scale=scale)


@dataclass
class GmmModel:
    """Fitted diagonal-covariance Gaussian mixture over standardized features."""

    k: int
    weights: np.ndarray          # (k,)
    means: np.ndarray            # (k, d) standardized space
    variances: np.ndarray        # (k, d) diagonal, floored
    feature_names: tuple[str, ...]
    standardizer: Standardizer
    threshold: float | None = None
    log_likelihoods: list[float] = field(default_factory=list)  # per EM iteration
    bic: float = float("nan")
    n_iter: int = 0

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def means_original(self) -> np.ndarray:
        """Component means mapped back to the raw feature space."""
        return self.means * self.standardizer.scale + self.standardizer.mean

    def variances_original(self) -> np.ndarray:
        return self.variances * self.standardizer.scale**2


@dataclass
class PcaModel:
    """Principal axes of standardized embeddings with the retained rank."""

    mean: np.ndarray                      # (d,) raw space
    scales: np.ndarray                    # (d,) positive
    components: np.ndarray                # (r, d), orthonormal rows
    r: int
    explained_variance_ratio: np.ndarray  # (r,)
    threshold: float | None = None

    @property
    def d(self) -> int:
        return self.components.shape[1]


@dataclass(frozen=True)
class OutlierVerdict:
    score: float
    threshold: float
    is_outlier: bool
    detector_kind: str  # "gmm" | "pca"

    def as_dict(self) -> dict:
        return {
            "detector_kind": self.detector_kind,
            "score": self.score,
            "threshold": self.threshold,
            "is_outlier": self.is_outlier,
        }


# ---------------------------------------------------------------------------
# GMM fitting
# ---------------------------------------------------------------------------

def _log_gaussian_diag(Z: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """Componentwise log N(z; mu_k, diag sigma_k^2) for all rows. Returns (N, k)."""
    # (N, k, d) broadcast kept explicit; d and k are small
    diff = Z[:, None, :] - means[None, :, :]
    quad = np.sum(diff**2 / variances[None, :, :], axis=2)
    log_norm = np.sum(np.log(2.0 * np.pi * variances), axis=1)
    return -0.5 * (quad + log_norm[None, :])


def _log_prob_matrix(model_weights, Z, means, variances) -> np.ndarray:
    return _log_gaussian_diag(Z, means, variances) + np.log(model_weights)[None, :]


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    out = m.squeeze(axis) + np.log(np.sum(np.exp(a - m), axis=axis))
    return out


def _kmeanspp_centers(Z: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ style seeding: first center uniform, rest by squared-distance sampling."""
    n = Z.shape[0]
    centers = np.empty((k, Z.shape[1]))
    centers[0] = Z[rng.integers(n)]
    d2 = np.sum((Z - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[j] = Z[rng.integers(n)]  # all points coincide
        else:
            centers[j] = Z[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((Z - centers[j]) ** 2, axis=1))
    return centers


def _fit_gmm_fixed_k(
    Z: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iter: int,
    rel_tol: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[float], int]:
    n, d = Z.shape
    means = _kmeanspp_centers(Z, k, rng)
    variances = np.tile(np.maximum(Z.var(axis=0), VARIANCE_FLOOR), (k, 1))
    weights = np.full(k, 1.0 / k)

    lls: list[float] = []
    for it in range(1, max_iter + 1):
        # E-step
        log_prob = _log_prob_matrix(weights, Z, means, variances)
        log_norm = _logsumexp(log_prob, axis=1)
        ll = float(np.mean(log_norm))
        lls.append(ll)
        resp = np.exp(log_prob - log_norm[:, None])

        # M-step
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        weights = nk / n
        means = (resp.T @ Z) / nk[:, None]
        diff2 = (Z[:, None, :] - means[None, :, :]) ** 2
        variances = np.einsum("nk,nkd->kd", resp, diff2) / nk[:, None]
        variances = np.maximum(variances, VARIANCE_FLOOR)

        if it > 1 and abs(lls[-1] - lls[-2]) <= rel_tol * max(abs(lls[-2]), 1.0):
            break
    return weights, means, variances, lls, len(lls)


def _gmm_bic(Z: np.ndarray, weights, means, variances) -> float:
    n, d = Z.shape
    k = weights.shape[0]
    total_ll = float(np.sum(_logsumexp(_log_prob_matrix(weights, Z, means, variances), axis=1)))
    n_params = (k - 1) + 2 * k * d
    return -2.0 * total_ll + n_params * np.log(n)


def fit_gmm(
    data: np.ndarray,
    k: int | str = "auto",
    seed: int = 0,
    feature_names: tuple[str, ...] | None = None,
    max_iter: int = EM_MAX_ITER,
    rel_tol: float = EM_REL_TOL,
) -> GmmModel:
    """Fit a diagonal GMM on a reference matrix.

    k="auto" sweeps 1..5 and keeps the lowest BIC. Deterministic given
    (data, k, seed): each candidate k gets its own SeedSequence((seed, k)).
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise InvalidInput(f"expected a non-empty 2-D matrix, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise InvalidInput("reference matrix contains non-finite values")
    n, d = X.shape

    if feature_names is None:
        feature_names = tuple(f"x{i}" for i in range(d))
    if len(feature_names) != d:
        raise InvalidInput("feature_names length does not match matrix width")

    standardizer = Standardizer.fit(X)
    Z = standardizer.transform(X)

    if k == "auto":
        candidates = [kk for kk in AUTO_K_RANGE if n >= 2 * kk]
        if not candidates:
            raise InsufficientData(f"need at least 2 rows, got {n}")
    else:
        k = int(k)
        if k < 1:
            raise InvalidInput("k must be >= 1")
        if n < 2 * k:
            raise InsufficientData(f"need at least {2 * k} rows for k={k}, got {n}")
        candidates = [k]

    best: tuple[float, int, tuple] | None = None
    for kk in candidates:
        rng = np.random.default_rng(np.random.SeedSequence((seed, kk)))
        weights, means, variances, lls, n_iter = _fit_gmm_fixed_k(Z, kk, rng, max_iter, rel_tol)
        bic = _gmm_bic(Z, weights, means, variances)
        if best is None or bic < best[0]:
            best = (bic, kk, (weights, means, variances, lls, n_iter))

    bic, kk, (weights, means, variances, lls, n_iter) = best
    return GmmModel(
        k=kk,
        weights=weights,
        means=means,
        variances=variances,
        feature_names=tuple(feature_names),
        standardizer=standardizer,
        log_likelihoods=lls,
        bic=float(bic),
        n_iter=n_iter,
    )


def gmm_nll(model: GmmModel, x: np.ndarray) -> float:
    """Negative log-likelihood of one vector under the mixture (standardized space)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.d,):
        raise InvalidInput(f"expected vector of length {model.d}, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise InvalidInput("vector contains non-finite values")
    z = model.standardizer.transform(x[None, :])
    log_prob = _log_prob_matrix(model.weights, z, model.means, model.variances)
    return float(-_logsumexp(log_prob, axis=1)[0])


def gmm_nll_batch(model: GmmModel, X: np.ndarray) -> np.ndarray:
    """Vectorized gmm_nll over matrix rows."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise InvalidInput(f"expected (N, {model.d}) matrix, got shape {X.shape}")
    Z = model.standardizer.transform(X)
    return -_logsumexp(_log_prob_matrix(model.weights, Z, model.means, model.variances), axis=1)


# ---------------------------------------------------------------------------
# PCA fitting
# ---------------------------------------------------------------------------

def fit_pca(
    data: np.ndarray,
    r: int | None = None,
    variance_fraction: float = 0.90,
) -> PcaModel:
    """Fit principal axes of the standardized reference matrix.

    Rank policy: explicit `r`, or the smallest rank whose cumulative
    explained variance reaches `variance_fraction`. Component signs are
    normalized so each row's largest-magnitude entry is positive.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise InvalidInput(f"expected a 2-D matrix, got shape {X.shape}")
    if X.shape[0] < 2:
        raise InsufficientData(f"need at least 2 rows, got {X.shape[0]}")
    if not np.isfinite(X).all():
        raise InvalidInput("reference matrix contains non-finite values")
    n, d = X.shape

    standardizer = Standardizer.fit(X)
    Z = standardizer.transform(X)

    _, svals, vt = np.linalg.svd(Z, full_matrices=False)
    var = svals**2
    total = var.sum()
    ratio = var / total if total > 0 else np.zeros_like(var)

    max_rank = min(n, d)
    if r is not None:
        r = int(r)
        if r < 1 or r > max_rank:
            raise InvalidRank(f"rank {r} outside [1, {max_rank}]")
    else:
        cum = np.cumsum(ratio)
        r = int(np.searchsorted(cum, variance_fraction - 1e-15) + 1)
        r = min(r, vt.shape[0])

    components = vt[:r].copy()
    for row in components:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0

    return PcaModel(
        mean=standardizer.mean,
        scales=standardizer.scale,
        components=components,
        r=r,
        explained_variance_ratio=ratio[:r].copy(),
    )


def pca_loss(model: PcaModel, x: np.ndarray) -> float:
    """Mean squared reconstruction residual of one standardized vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.d,):
        raise InvalidInput(f"expected vector of length {model.d}, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise InvalidInput("vector contains non-finite values")
    z = (x - model.mean) / model.scales
    recon = model.components.T @ (model.components @ z)
    resid = z - recon
    return float(resid @ resid / model.d)


def pca_loss_batch(model: PcaModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise InvalidInput(f"expected (N, {model.d}) matrix, got shape {X.shape}")
    Z = (X - model.mean) / model.scales
    resid = Z - (Z @ model.components.T) @ model.components
    return np.sum(resid**2, axis=1) / model.d


# ---------------------------------------------------------------------------
# calibration and verdicts
# ---------------------------------------------------------------------------

def calibrate_threshold(scores, quantile: float = 0.99) -> float:
    """Empirical quantile of reference scores (linear rank interpolation)."""
    s = np.asarray(list(scores), dtype=np.float64)
    if s.size < 20:
        raise InsufficientData(f"need at least 20 scores, got {s.size}")
    if not np.isfinite(s).all():
        raise InvalidInput("scores contain non-finite values")
    if not 0.0 < quantile <= 1.0:
        raise InvalidInput("quantile must be in (0, 1]")
    return percentile(np.sort(s), quantile)


def detect(model: GmmModel | PcaModel, x: np.ndarray) -> OutlierVerdict:
    """Score one vector and compare against the calibrated threshold (strict >)."""
    if model.threshold is None or not np.isfinite(model.threshold):
        raise NotCalibrated("model has no calibrated threshold")
    if isinstance(model, GmmModel):
        score = gmm_nll(model, x)
        kind = "gmm"
    elif isinstance(model, PcaModel):
        score = pca_loss(model, x)
        kind = "pca"
    else:
        raise InvalidInput(f"unknown model type {type(model)!r}")
    return OutlierVerdict(
        score=score,
        threshold=float(model.threshold),
        is_outlier=score > model.threshold,
        detector_kind=kind,
    )


# ---------------------------------------------------------------------------
# serialization (canonical JSON; floats round-trip shortest-exactly)
# ---------------------------------------------------------------------------

def gmm_to_dict(model: GmmModel) -> dict:
    return {
        "kind": "gmm",
        "k": model.k,
        "weights": model.weights.tolist(),
        "means": model.means.tolist(),
        "variances": model.variances.tolist(),
        "feature_names": list(model.feature_names),
        "standardizer": {
            "mean": model.standardizer.mean.tolist(),
            "scale": model.standardizer.scale.tolist(),
        },
        "threshold": model.threshold,
        "log_likelihoods": list(model.log_likelihoods),
        "bic": model.bic,
        "n_iter": model.n_iter,
    }


def gmm_from_dict(doc: dict) -> GmmModel:
    return GmmModel(
        k=int(doc["k"]),
        weights=np.asarray(doc["weights"], dtype=np.float64),
        means=np.asarray(doc["means"], dtype=np.float64),
        variances=np.asarray(doc["variances"], dtype=np.float64),
        feature_names=tuple(doc["feature_names"]),
        standardizer=Standardizer(
            mean=np.asarray(doc["standardizer"]["mean"], dtype=np.float64),
            scale=np.asarray(doc["standardizer"]["scale"], dtype=np.float64),
        ),
        threshold=doc.get("threshold"),
        log_likelihoods=list(doc.get("log_likelihoods", [])),
        bic=float(doc.get("bic", float("nan"))),
        n_iter=int(doc.get("n_iter", 0)),
    )


def pca_to_dict(model: PcaModel) -> dict:
    return {
        "kind": "pca",
        "mean": model.mean.tolist(),
        "scales": model.scales.tolist(),
        "components": model.components.tolist(),
        "r": model.r,
        "explained_variance_ratio": model.explained_variance_ratio.tolist(),
        "threshold": model.threshold,
    }


def pca_from_dict(doc: dict) -> PcaModel:
    return PcaModel(
        mean=np.asarray(doc["mean"], dtype=np.float64),
        scales=np.asarray(doc["scales"], dtype=np.float64),
        components=np.asarray(doc["components"], dtype=np.float64),
        r=int(doc["r"]),
        explained_variance_ratio=np.asarray(doc["explained_variance_ratio"], dtype=np.float64),
        threshold=doc.get("threshold"),
    )


def serialize_model(model: GmmModel | PcaModel) -> str:
    if isinstance(model, GmmModel):
        return json.dumps(gmm_to_dict(model))
    if isinstance(model, PcaModel):
        return json.dumps(pca_to_dict(model))
    raise InvalidInput(f"unknown model type {type(model)!r}")


def deserialize_model(text: str) -> GmmModel | PcaModel:
    doc = json.loads(text)
    if doc.get("kind") == "gmm":
        return gmm_from_dict(doc)
    if doc.get("kind") == "pca":
        return pca_from_dict(doc)
    raise InvalidInput(f"unknown model kind {doc.get('kind')!r}")
