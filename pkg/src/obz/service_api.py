"""Authenticated HTTP service: ingestion, reference fitting, scoring, read APIs.

JSON bodies everywhere, with binary tensors embedded as base64 OBZT. Auth is
`Authorization: Bearer <token>`; every handler resolves the token to a user
and all storage access is ownership-checked. Configured via environment:
OBZ_DATA_ROOT (storage root), OBZ_DEFAULT_QUANTILE (threshold quantile for
new projects), OBZ_BIND (host:port, used by scripts/run_server.py).
"""

from __future__ import annotations

import base64
import csv
import io
import json
import os
import secrets
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import Depends, FastAPI, Header, Query, Request, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import detectors
from .errors import (
    AlreadyFitted,
    BadQuery,
    CorruptTensor,
    DuplicateName,
    Forbidden,
    InsufficientData,
    InvalidInput,
    InvalidRank,
    NotFitted,
    NotFound,
    ObzError,
)
from .features import CANONICAL_FEATURE_NAMES, ImageSample, extract_first_order, percentile
from .obzt import decode_tensor
from .storage import LogRecord, RefFeatureSet, Storage, now_ms

MAX_TIMESTAMP_MS = 2**62


@dataclass
class AppConfig:
    data_root: Path
    default_quantile: float = 0.99

    @classmethod
    def from_env(cls) -> "AppConfig":
        return cls(
            data_root=Path(os.environ.get("OBZ_DATA_ROOT", "./obz-data")),
            default_quantile=float(os.environ.get("OBZ_DEFAULT_QUANTILE", "0.99")),
        )


# ---------------------------------------------------------------------------
# request bodies (unknown fields are ignored on input, never emitted on output)
# ---------------------------------------------------------------------------

class ProjectCreateBody(BaseModel):
    name: str
    task_mode: str = "classification"
    quantile: float | None = None


class RefFeaturesBody(BaseModel):
    feature_names: list[str]
    matrix: list[list[float]]
    detectors: list[str] | None = None  # default: gmm for FOFs, pca otherwise
    gmm_k: int | str = "auto"
    seed: int = 0
    pca_rank: int | None = None
    pca_variance_fraction: float = 0.90
    quantile: float | None = None
    refit: bool = False


class PredictionEntry(BaseModel):
    label: str
    probability: float


class FeaturePayload(BaseModel):
    names: list[str]
    values: list[float]


class IngestBody(BaseModel):
    sample_id: str | None = None
    timestamp: int | None = None
    prediction: list[PredictionEntry] = Field(default_factory=list)
    image_obzt_b64: str | None = None
    features: FeaturePayload | None = None
    embedding: list[float] | None = None
    heatmaps: dict[str, str] = Field(default_factory=dict)  # method -> OBZT base64
    target_class: str | None = None
    score: bool = True


class RevokeResponseBody(BaseModel):
    token_hash: str
    revoked: bool


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _error_response(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": {"message": message}})

_ERROR_STATUS = [
    (BadQuery, 400),
    (NotFound, 404),
    (Forbidden, 403),
    (DuplicateName, 409),
    (AlreadyFitted, 409),
    (NotFitted, 409),
    (InsufficientData, 422),
    (InvalidRank, 422),
    (CorruptTensor, 422),
    (InvalidInput, 422),
]


def _decode_b64_obzt(b64: str, what: str) -> tuple[bytes, tuple[int, ...], np.ndarray]:
    try:
        raw = base64.b64decode(b64, validate=True)
    except Exception as exc:
        raise InvalidInput(f"{what}: invalid base64: {exc}") from exc
    dims, values = decode_tensor(raw)
    return raw, dims, values


def _fit_reference(body: RefFeaturesBody, quantile: float, project_id: str) -> RefFeatureSet:
    names = list(body.feature_names)
    try:
        matrix = np.asarray(body.matrix, dtype=np.float64)
    except ValueError as exc:
        raise InvalidInput(f"malformed matrix: {exc}") from exc
    if matrix.ndim != 2 or matrix.shape[0] < 1:
        raise InvalidInput("matrix must be a non-empty 2-D array")
    if matrix.shape[1] != len(names):
        raise InvalidInput(
            f"matrix has {matrix.shape[1]} columns but {len(names)} feature names"
        )
    if not np.isfinite(matrix).all():
        raise InvalidInput("matrix contains non-finite values")

    which = body.detectors
    if which is None:
        which = ["gmm"] if tuple(names) == CANONICAL_FEATURE_NAMES else ["pca"]
    unknown = set(which) - {"gmm", "pca"}
    if unknown:
        raise InvalidInput(f"unknown detectors {sorted(unknown)}; valid: gmm, pca")
    if matrix.shape[0] < 20:
        raise InsufficientData(
            f"need at least 20 reference rows to calibrate, got {matrix.shape[0]}"
        )

    gmm_json = pca_json = None
    if "gmm" in which:
        model = detectors.fit_gmm(matrix, k=body.gmm_k, seed=body.seed, feature_names=tuple(names))
        model.threshold = detectors.calibrate_threshold(
            detectors.gmm_nll_batch(model, matrix), quantile
        )
        gmm_json = detectors.serialize_model(model)
    if "pca" in which:
        model = detectors.fit_pca(
            matrix, r=body.pca_rank, variance_fraction=body.pca_variance_fraction
        )
        model.threshold = detectors.calibrate_threshold(
            detectors.pca_loss_batch(model, matrix), quantile
        )
        pca_json = detectors.serialize_model(model)

    summary = {}
    for j, name in enumerate(names):
        col = np.sort(matrix[:, j])
        summary[name] = {
            "min": float(col[0]),
            "p10": percentile(col, 0.10),
            "median": percentile(col, 0.50),
            "p90": percentile(col, 0.90),
            "max": float(col[-1]),
        }

    return RefFeatureSet(
        project_id=project_id,
        feature_names=names,
        matrix=matrix.tolist(),
        ref_summary=summary,
        gmm_model_json=gmm_json,
        pca_model_json=pca_json,
        quantile=quantile,
        created_at=now_ms(),
    )


def _loaded_models(ref: RefFeatureSet | None):
    models = []
    if ref is None:
        return models
    if ref.gmm_model_json:
        models.append(detectors.deserialize_model(ref.gmm_model_json))
    if ref.pca_model_json:
        models.append(detectors.deserialize_model(ref.pca_model_json))
    return models


def _score_vectors(models, features_vec, embedding_vec) -> list[detectors.OutlierVerdict]:
    """Score each fitted detector against the dimension-compatible vector.

    GMM prefers the feature vector, PCA the embedding; each falls back to
    the other when the preferred one is absent or has the wrong length.
    """
    verdicts = []
    for model in models:
        if isinstance(model, detectors.GmmModel):
            preference = (features_vec, embedding_vec)
        else:
            preference = (embedding_vec, features_vec)
        for vec in preference:
            if vec is not None and len(vec) == model.d:
                verdicts.append(detectors.detect(model, np.asarray(vec, dtype=np.float64)))
                break
    return verdicts


def _summary_payload(logs: list[LogRecord], metrics: list[str], from_ms: int, to_ms: int) -> dict:
    series: dict[str, list[list]] = {m: [] for m in metrics}
    for rec in logs:
        if rec.feature_names and rec.feature_values:
            lookup = dict(zip(rec.feature_names, rec.feature_values))
            for m in metrics:
                if m in lookup:
                    series[m].append([rec.timestamp_ms, lookup[m], rec.has_outlier])
    return {
        "window": {"from": from_ms, "to": to_ms},
        "total_samples": len(logs),
        "outlier_count": sum(1 for r in logs if r.has_outlier),
        "series": series,
    }


CSV_COLUMNS = (
    ["log_id", "timestamp", "pred_label", "pred_probability"]
    + list(CANONICAL_FEATURE_NAMES)
    + ["gmm_score", "gmm_is_outlier", "pca_score", "pca_is_outlier"]
)


def _csv_rows(logs: list[LogRecord]):
    yield CSV_COLUMNS
    for rec in logs:
        top = max(rec.prediction, key=lambda lp: lp[1]) if rec.prediction else ("", "")
        feature_map = {}
        if rec.feature_kind == "fof" and rec.feature_names and rec.feature_values:
            feature_map = dict(zip(rec.feature_names, rec.feature_values))
        verdict_map = {v.detector_kind: v for v in rec.verdicts}
        row = [rec.log_id, rec.timestamp_ms, top[0], top[1]]
        row += [feature_map.get(name, "") for name in CANONICAL_FEATURE_NAMES]
        for kind in ("gmm", "pca"):
            v = verdict_map.get(kind)
            row += [v.score if v else "", v.is_outlier if v else ""]
        yield row


# ---------------------------------------------------------------------------
# application factory
# ---------------------------------------------------------------------------

def create_app(config: AppConfig | None = None, store: Storage | None = None) -> FastAPI:
    config = config or AppConfig.from_env()
    store = store or Storage(config.data_root)

    app = FastAPI(title="obz", version="0.1.0")
    app.state.store = store
    app.state.config = config

    @app.exception_handler(ObzError)
    async def _obz_error_handler(request: Request, exc: ObzError):
        for klass, status in _ERROR_STATUS:
            if isinstance(exc, klass):
                return _error_response(status, str(exc))
        return _error_response(500, str(exc))

    def current_user(authorization: str = Header(default="")) -> str:
        if not authorization.startswith("Bearer "):
            raise _Unauthorized("missing bearer token")
        user_id = store.verify_token(authorization[len("Bearer "):].strip())
        if user_id is None:
            raise _Unauthorized("invalid or revoked token")
        return user_id

    class _Unauthorized(Exception):
        def __init__(self, message: str):
            self.message = message

    @app.exception_handler(_Unauthorized)
    async def _unauthorized_handler(request: Request, exc: _Unauthorized):
        return _error_response(401, exc.message)

    # -- identity ---------------------------------------------------------

    @app.get("/v1/me")
    def me(user_id: str = Depends(current_user)):
        user = store.get_user(user_id)
        return {"user_id": user.user_id, "display_name": user.display_name}

    @app.get("/v1/tokens")
    def tokens(user_id: str = Depends(current_user)):
        return {
            "tokens": [
                {
                    "token_hash": t.token_hash,
                    "created_at": t.created_at,
                    "revoked": t.revoked,
                }
                for t in store.list_tokens(user_id)
            ]
        }

    @app.post("/v1/tokens/{token_hash}/revoke")
    def revoke(token_hash: str, user_id: str = Depends(current_user)):
        store.revoke_token(user_id, token_hash)
        return {"token_hash": token_hash, "revoked": True}

    # -- projects -----------------------------------------------------------

    @app.post("/v1/projects", status_code=201)
    def create_project(body: ProjectCreateBody, user_id: str = Depends(current_user)):
        project = store.create_project(
            user_id,
            body.name,
            task_mode=body.task_mode,
            quantile=body.quantile if body.quantile is not None else config.default_quantile,
        )
        return project.as_dict()

    @app.get("/v1/projects")
    def list_projects(user_id: str = Depends(current_user)):
        return {"projects": [p.as_dict() for p in store.list_projects(user_id)]}

    @app.get("/v1/projects/{project_id}")
    def get_project(project_id: str, user_id: str = Depends(current_user)):
        project = store.require_project(user_id, project_id)
        ref = store.get_ref_features(user_id, project_id)
        payload = project.as_dict()
        payload["ref"] = None
        if ref is not None:
            payload["ref"] = {
                "n_rows": len(ref.matrix),
                "feature_names": ref.feature_names,
                "quantile": ref.quantile,
                "detectors": _model_summaries(ref),
            }
        return payload

    @app.delete("/v1/projects/{project_id}", status_code=204)
    def delete_project(project_id: str, user_id: str = Depends(current_user)):
        store.delete_project(user_id, project_id)
        return Response(status_code=204)

    # -- reference features ---------------------------------------------------

    def _model_summaries(ref: RefFeatureSet) -> dict:
        out = {}
        for model in _loaded_models(ref):
            if isinstance(model, detectors.GmmModel):
                out["gmm"] = {"k": model.k, "threshold": model.threshold, "bic": model.bic}
            else:
                out["pca"] = {
                    "r": model.r,
                    "threshold": model.threshold,
                    "explained_variance_ratio": model.explained_variance_ratio.tolist(),
                }
        return out

    @app.post("/v1/projects/{project_id}/ref_features", status_code=201)
    def upload_ref_features(
        project_id: str, body: RefFeaturesBody, user_id: str = Depends(current_user)
    ):
        project = store.require_project(user_id, project_id)
        quantile = body.quantile if body.quantile is not None else project.quantile
        if not 0.0 < quantile <= 1.0:
            raise InvalidInput("quantile must be in (0, 1]")
        with store.project_lock(project_id):
            ref = _fit_reference(body, quantile, project_id)
            store.put_ref_features(user_id, ref, refit=body.refit)
        return {
            "project_id": project_id,
            "n_rows": len(ref.matrix),
            "quantile": quantile,
            "detectors": _model_summaries(ref),
        }

    # -- log ingestion ----------------------------------------------------------

    @app.post("/v1/projects/{project_id}/logs", status_code=201)
    def ingest_log(project_id: str, body: IngestBody, user_id: str = Depends(current_user)):
        store.require_project(user_id, project_id)
        if body.image_obzt_b64 is None and body.features is None and body.embedding is None:
            raise InvalidInput("envelope needs at least one of image, features, embedding")

        log_id = "l_" + secrets.token_hex(8)
        timestamp = body.timestamp if body.timestamp is not None else now_ms()
        sample_id = body.sample_id or log_id

        image_bytes = None
        features_vec = None
        feature_names: list[str] | None = None
        feature_kind = None

        if body.features is not None:
            if len(body.features.names) != len(body.features.values):
                raise InvalidInput("feature names/values length mismatch")
            feature_names = list(body.features.names)
            features_vec = list(body.features.values)
            feature_kind = "fof" if tuple(feature_names) == CANONICAL_FEATURE_NAMES else "custom"

        if body.image_obzt_b64 is not None:
            image_bytes, dims, values = _decode_b64_obzt(body.image_obzt_b64, "image")
            if len(dims) != 2:
                raise InvalidInput(f"image tensor must be 2-D, got {len(dims)}-D")
            if features_vec is None:
                sample = ImageSample.from_array(
                    values.astype(np.float64), sample_id=sample_id, captured_at_ms=timestamp
                )
                fv = extract_first_order(sample)
                feature_names = list(fv.names)
                features_vec = list(fv.values)
                feature_kind = "fof"

        heatmap_bytes: dict[str, bytes] = {}
        for method, b64 in body.heatmaps.items():
            raw, dims, _ = _decode_b64_obzt(b64, f"heatmap {method!r}")
            if len(dims) != 2:
                raise InvalidInput(f"heatmap {method!r} must be 2-D, got {len(dims)}-D")
            heatmap_bytes[method] = raw

        verdicts = []
        if body.score:
            ref = store.get_ref_features(user_id, project_id)
            models = _loaded_models(ref)
            if not models:
                raise NotFitted("scoring requested before reference features were fitted")
            verdicts = _score_vectors(models, features_vec, body.embedding)
            if not verdicts:
                raise InvalidInput(
                    "no ingested vector matches the dimensionality of any fitted detector"
                )

        if features_vec is None and body.embedding is not None:
            feature_kind = "embedding"
            feature_names = None
            features_vec = list(body.embedding)

        image_key = None
        if image_bytes is not None:
            image_key = f"logs/{log_id}/image.obzt"
            store.put_blob(user_id, project_id, image_key, image_bytes)
        heatmap_keys = {}
        for method, raw in heatmap_bytes.items():
            key = f"logs/{log_id}/heatmap/{method}.obzt"
            store.put_blob(user_id, project_id, key, raw)
            heatmap_keys[method] = key

        record = LogRecord(
            log_id=log_id,
            project_id=project_id,
            sample_id=sample_id,
            timestamp_ms=timestamp,
            prediction=[(p.label, p.probability) for p in body.prediction],
            feature_kind=feature_kind,
            feature_names=feature_names,
            feature_values=features_vec,
            verdicts=verdicts,
            image_key=image_key,
            heatmap_keys=heatmap_keys,
            target_class=body.target_class,
        )
        store.insert_log(user_id, record)
        return {
            "log_id": log_id,
            "sample_id": sample_id,
            "timestamp": timestamp,
            "verdicts": [v.as_dict() for v in verdicts],
            "stored": {"image": image_key is not None, "heatmaps": sorted(heatmap_keys)},
        }

    # -- read APIs ---------------------------------------------------------------

    @app.get("/v1/projects/{project_id}/summary")
    def summary(
        project_id: str,
        user_id: str = Depends(current_user),
        from_ms: int = Query(default=0, alias="from"),
        to_ms: int = Query(default=MAX_TIMESTAMP_MS, alias="to"),
        metrics: str = "",
    ):
        if from_ms > to_ms:
            raise BadQuery("from must be <= to")
        wanted = [m for m in metrics.split(",") if m] if metrics else []
        unknown = [m for m in wanted if m not in CANONICAL_FEATURE_NAMES]
        if unknown:
            raise BadQuery(
                f"unknown metrics {unknown}; valid names: {', '.join(CANONICAL_FEATURE_NAMES)}"
            )
        logs = store.query_logs(user_id, project_id, from_ms=from_ms, to_ms=to_ms)
        return _summary_payload(logs, wanted, from_ms, to_ms)

    @app.get("/v1/projects/{project_id}/logs")
    def list_logs(
        project_id: str,
        user_id: str = Depends(current_user),
        from_ms: int = Query(default=0, alias="from"),
        to_ms: int = Query(default=MAX_TIMESTAMP_MS, alias="to"),
        outlier_only: bool = False,
        limit: int = Query(default=100, ge=1, le=1000),
        offset: int = Query(default=0, ge=0),
    ):
        if from_ms > to_ms:
            raise BadQuery("from must be <= to")
        logs = store.query_logs(
            user_id, project_id, from_ms=from_ms, to_ms=to_ms,
            outlier_only=outlier_only, limit=limit, offset=offset,
        )
        total = len(store.query_logs(
            user_id, project_id, from_ms=from_ms, to_ms=to_ms, outlier_only=outlier_only
        ))
        rows = []
        for rec in logs:
            top = max(rec.prediction, key=lambda lp: lp[1]) if rec.prediction else None
            rows.append({
                "log_id": rec.log_id,
                "sample_id": rec.sample_id,
                "timestamp": rec.timestamp_ms,
                "pred_label": top[0] if top else None,
                "pred_probability": top[1] if top else None,
                "has_outlier": rec.has_outlier,
                "verdicts": [v.as_dict() for v in rec.verdicts],
                "heatmap_methods": sorted(rec.heatmap_keys),
                "has_image": rec.image_key is not None,
            })
        return {"logs": rows, "total": total, "limit": limit, "offset": offset}

    @app.get("/v1/logs/{log_id}")
    def log_detail(log_id: str, user_id: str = Depends(current_user)):
        record = store.get_log(user_id, log_id)
        payload = record.as_dict()
        payload["feature_reference"] = None
        ref = store.get_ref_features(user_id, record.project_id)
        if ref is not None and record.feature_names and record.feature_values:
            comparison = {}
            for name, value in zip(record.feature_names, record.feature_values):
                if name in ref.ref_summary:
                    comparison[name] = {"sample": value, "ref": ref.ref_summary[name]}
            payload["feature_reference"] = comparison
        return payload

    @app.get("/v1/logs/{log_id}/heatmap/{method}")
    def log_heatmap(log_id: str, method: str, user_id: str = Depends(current_user)):
        record = store.get_log(user_id, log_id)
        key = record.heatmap_keys.get(method)
        if key is None:
            raise NotFound(f"log {log_id} has no heatmap for method {method!r}")
        data = store.get_blob(user_id, record.project_id, key)
        return Response(content=data, media_type="application/octet-stream")

    @app.delete("/v1/logs/{log_id}", status_code=204)
    def delete_log(log_id: str, user_id: str = Depends(current_user)):
        store.delete_log(user_id, log_id)
        return Response(status_code=204)

    @app.get("/v1/projects/{project_id}/export.csv")
    def export_csv(
        project_id: str,
        user_id: str = Depends(current_user),
        from_ms: int = Query(default=0, alias="from"),
        to_ms: int = Query(default=MAX_TIMESTAMP_MS, alias="to"),
        outlier_only: bool = False,
    ):
        if from_ms > to_ms:
            raise BadQuery("from must be <= to")
        logs = store.query_logs(
            user_id, project_id, from_ms=from_ms, to_ms=to_ms, outlier_only=outlier_only
        )
        buf = io.StringIO()
        writer = csv.writer(buf)  # RFC 4180: CRLF line endings, quoting as needed
        for row in _csv_rows(logs):
            writer.writerow(row)
        return Response(
            content=buf.getvalue().encode("utf-8"),
            media_type="text/csv; charset=utf-8",
            headers={"Content-Disposition": f'attachment; filename="{project_id}.csv"'},
        )

    return app


def main() -> None:
    """Entry point used by scripts/run_server.py."""
    import uvicorn

    bind = os.environ.get("OBZ_BIND", "127.0.0.1:8000")
    host, _, port = bind.rpartition(":")
    app = create_app(AppConfig.from_env())
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))


if __name__ == "__main__":
    main()
