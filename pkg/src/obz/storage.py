"""Persistence: relational records in embedded SQLite, artifacts in per-project
blob buckets on disk.

The `Storage` facade owns authorization (every accessor takes the acting
user), referential integrity, and per-project write serialization. Blob
buckets are directory trees `<root>/blobs/<project_id>/<key>`; a project can
only ever address keys inside its own bucket, so cross-project access is
impossible by construction. Timestamps are 64-bit milliseconds since the
Unix epoch, UTC.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import secrets
import sqlite3
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .detectors import OutlierVerdict
from .errors import (
    AlreadyFitted,
    DuplicateName,
    Forbidden,
    InvalidInput,
    NotFound,
)

TASK_MODES = ("classification",)

_KEY_SEGMENT = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")
_ID_CHARS = re.compile(r"^[A-Za-z0-9._-]+$")


def now_ms() -> int:
    return int(time.time() * 1000)


def token_digest(raw_token: str) -> str:
    return hashlib.sha256(raw_token.encode()).hexdigest()


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UserRecord:
    user_id: str
    display_name: str
    created_at: int


@dataclass(frozen=True)
class ApiToken:
    token_hash: str
    user_id: str
    created_at: int
    revoked: bool


@dataclass(frozen=True)
class ProjectRecord:
    project_id: str
    name: str
    task_mode: str
    created_at: int
    owner_user_id: str
    quantile: float

    def as_dict(self) -> dict:
        return {
            "project_id": self.project_id,
            "name": self.name,
            "task_mode": self.task_mode,
            "created_at": self.created_at,
            "owner_user_id": self.owner_user_id,
            "quantile": self.quantile,
        }


@dataclass
class LogRecord:
    """One inference event with features, verdicts, and blob keys."""

    log_id: str
    project_id: str
    sample_id: str
    timestamp_ms: int
    prediction: list[tuple[str, float]] = field(default_factory=list)
    feature_kind: str | None = None  # "fof" | "embedding"
    feature_names: list[str] | None = None
    feature_values: list[float] | None = None
    verdicts: list[OutlierVerdict] = field(default_factory=list)
    image_key: str | None = None
    heatmap_keys: dict[str, str] = field(default_factory=dict)
    target_class: str | None = None

    @property
    def has_outlier(self) -> bool:
        return any(v.is_outlier for v in self.verdicts)

    def as_dict(self) -> dict:
        return {
            "log_id": self.log_id,
            "project_id": self.project_id,
            "sample_id": self.sample_id,
            "timestamp": self.timestamp_ms,
            "prediction": [{"label": l, "probability": p} for l, p in self.prediction],
            "feature_kind": self.feature_kind,
            "feature_names": self.feature_names,
            "feature_values": self.feature_values,
            "verdicts": [v.as_dict() for v in self.verdicts],
            "image_key": self.image_key,
            "heatmap_keys": dict(self.heatmap_keys),
            "target_class": self.target_class,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LogRecord":
        return cls(
            log_id=doc["log_id"],
            project_id=doc["project_id"],
            sample_id=doc["sample_id"],
            timestamp_ms=int(doc["timestamp"]),
            prediction=[(p["label"], float(p["probability"])) for p in doc.get("prediction", [])],
            feature_kind=doc.get("feature_kind"),
            feature_names=doc.get("feature_names"),
            feature_values=doc.get("feature_values"),
            verdicts=[
                OutlierVerdict(
                    score=v["score"],
                    threshold=v["threshold"],
                    is_outlier=v["is_outlier"],
                    detector_kind=v["detector_kind"],
                )
                for v in doc.get("verdicts", [])
            ],
            image_key=doc.get("image_key"),
            heatmap_keys=dict(doc.get("heatmap_keys", {})),
            target_class=doc.get("target_class"),
        )


@dataclass
class RefFeatureSet:
    project_id: str
    feature_names: list[str]
    matrix: list[list[float]]
    ref_summary: dict[str, dict[str, float]]  # per feature: min/p10/median/p90/max
    gmm_model_json: str | None
    pca_model_json: str | None
    quantile: float
    created_at: int


def validate_blob_key(key: str) -> str:
    segments = key.split("/")
    if not segments or any(not _KEY_SEGMENT.match(s) for s in segments):
        raise InvalidInput(f"invalid blob key {key!r}")
    return key


def validate_log_record(record: LogRecord, task_mode: str) -> None:
    for label, prob in record.prediction:
        if not isinstance(label, str) or not 0.0 <= prob <= 1.0:
            raise InvalidInput(f"bad prediction entry ({label!r}, {prob!r})")
    if task_mode == "classification" and record.prediction:
        total = sum(p for _, p in record.prediction)
        if abs(total - 1.0) > 1e-6:
            raise InvalidInput(f"classification probabilities sum to {total}, not 1")
    if record.feature_values is not None:
        vals = record.feature_values
        if record.feature_names is not None and len(record.feature_names) != len(vals):
            raise InvalidInput("feature names/values length mismatch")
        if any(v != v or v in (float("inf"), float("-inf")) for v in vals):
            raise InvalidInput("non-finite feature value")
    if record.image_key is not None:
        validate_blob_key(record.image_key)
    for key in record.heatmap_keys.values():
        validate_blob_key(key)


# ---------------------------------------------------------------------------
# blob bucket tree
# ---------------------------------------------------------------------------

class BlobStore:
    """Directory-tree blob store, one private bucket per project."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, project_id: str, key: str) -> Path:
        if not _ID_CHARS.match(project_id):
            raise InvalidInput(f"invalid project id {project_id!r}")
        return self.root / project_id / validate_blob_key(key)

    def create_bucket(self, project_id: str) -> None:
        (self.root / project_id).mkdir(parents=True, exist_ok=True)

    def put(self, project_id: str, key: str, data: bytes) -> str:
        path = self._path(project_id, key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f".{path.name}.{os.getpid()}.{secrets.token_hex(4)}")
        tmp.write_bytes(data)
        os.replace(tmp, path)  # atomic: last write wins
        return key

    def get(self, project_id: str, key: str) -> bytes:
        path = self._path(project_id, key)
        try:
            return path.read_bytes()
        except FileNotFoundError:
            raise NotFound(f"blob {key!r} not found in project {project_id}") from None

    def delete(self, project_id: str, key: str) -> None:
        path = self._path(project_id, key)
        try:
            path.unlink()
        except FileNotFoundError:
            pass

    def delete_bucket(self, project_id: str) -> None:
        bucket = self.root / project_id
        if not bucket.exists():
            return
        for dirpath, _, filenames in os.walk(bucket, topdown=False):
            for name in filenames:
                os.unlink(os.path.join(dirpath, name))
            os.rmdir(dirpath)


# ---------------------------------------------------------------------------
# relational store + facade
# ---------------------------------------------------------------------------

_SCHEMA = """
CREATE TABLE IF NOT EXISTS users (
    user_id TEXT PRIMARY KEY,
    display_name TEXT NOT NULL,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS api_tokens (
    token_hash TEXT PRIMARY KEY,
    user_id TEXT NOT NULL REFERENCES users(user_id),
    created_at INTEGER NOT NULL,
    revoked INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE IF NOT EXISTS projects (
    project_id TEXT PRIMARY KEY,
    name TEXT NOT NULL,
    task_mode TEXT NOT NULL,
    created_at INTEGER NOT NULL,
    owner_user_id TEXT NOT NULL REFERENCES users(user_id),
    quantile REAL NOT NULL,
    UNIQUE (owner_user_id, name)
);
CREATE TABLE IF NOT EXISTS ref_features (
    project_id TEXT PRIMARY KEY REFERENCES projects(project_id),
    feature_names TEXT NOT NULL,
    matrix TEXT NOT NULL,
    ref_summary TEXT NOT NULL,
    gmm_model TEXT,
    pca_model TEXT,
    quantile REAL NOT NULL,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS logs (
    log_id TEXT PRIMARY KEY,
    project_id TEXT NOT NULL REFERENCES projects(project_id),
    sample_id TEXT NOT NULL,
    timestamp_ms INTEGER NOT NULL,
    record TEXT NOT NULL,
    has_outlier INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS idx_logs_project_ts ON logs(project_id, timestamp_ms, log_id);
"""


class Storage:
    """Facade over the relational store and blob buckets.

    All reads and writes take the acting `user_id` and enforce project
    ownership. DB access is serialized behind one lock (desk-scale); blob
    writes serialize per project so independent projects can write in
    parallel.
    """

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.blobs = BlobStore(self.root / "blobs")
        self._db = sqlite3.connect(self.root / "obz.sqlite3", check_same_thread=False)
        self._db.execute("PRAGMA foreign_keys = ON")
        self._db.executescript(_SCHEMA)
        self._db.commit()
        self._lock = threading.RLock()
        self._project_locks: dict[str, threading.Lock] = {}
        self._project_locks_guard = threading.Lock()

    def close(self) -> None:
        self._db.close()

    def project_lock(self, project_id: str) -> threading.Lock:
        with self._project_locks_guard:
            return self._project_locks.setdefault(project_id, threading.Lock())

    # -- users & tokens ----------------------------------------------------

    def ensure_user(self, user_id: str, display_name: str | None = None) -> UserRecord:
        if not _ID_CHARS.match(user_id):
            raise InvalidInput(f"invalid user id {user_id!r}")
        with self._lock:
            row = self._db.execute(
                "SELECT user_id, display_name, created_at FROM users WHERE user_id = ?",
                (user_id,),
            ).fetchone()
            if row:
                return UserRecord(*row)
            created = now_ms()
            self._db.execute(
                "INSERT INTO users (user_id, display_name, created_at) VALUES (?, ?, ?)",
                (user_id, display_name or user_id, created),
            )
            self._db.commit()
            return UserRecord(user_id, display_name or user_id, created)

    def issue_token(self, user_id: str) -> str:
        """Create a fresh API token; only the digest is stored."""
        raw = "obz_" + secrets.token_hex(20)
        with self._lock:
            if not self._db.execute(
                "SELECT 1 FROM users WHERE user_id = ?", (user_id,)
            ).fetchone():
                raise NotFound(f"user {user_id!r} not found")
            self._db.execute(
                "INSERT INTO api_tokens (token_hash, user_id, created_at, revoked) VALUES (?, ?, ?, 0)",
                (token_digest(raw), user_id, now_ms()),
            )
            self._db.commit()
        return raw

    def verify_token(self, raw_token: str) -> str | None:
        """Resolve a bearer token to its user id; None if unknown or revoked."""
        with self._lock:
            row = self._db.execute(
                "SELECT user_id, revoked FROM api_tokens WHERE token_hash = ?",
                (token_digest(raw_token),),
            ).fetchone()
        if row is None or row[1]:
            return None
        return row[0]

    def list_tokens(self, user_id: str) -> list[ApiToken]:
        with self._lock:
            rows = self._db.execute(
                "SELECT token_hash, user_id, created_at, revoked FROM api_tokens "
                "WHERE user_id = ? ORDER BY created_at, token_hash",
                (user_id,),
            ).fetchall()
        return [ApiToken(h, u, c, bool(r)) for h, u, c, r in rows]

    def revoke_token(self, user_id: str, token_hash: str) -> None:
        with self._lock:
            row = self._db.execute(
                "SELECT user_id FROM api_tokens WHERE token_hash = ?", (token_hash,)
            ).fetchone()
            if row is None:
                raise NotFound("token not found")
            if row[0] != user_id:
                raise Forbidden("cannot revoke another user's token")
            self._db.execute(
                "UPDATE api_tokens SET revoked = 1 WHERE token_hash = ?", (token_hash,)
            )
            self._db.commit()

    def get_user(self, user_id: str) -> UserRecord:
        with self._lock:
            row = self._db.execute(
                "SELECT user_id, display_name, created_at FROM users WHERE user_id = ?",
                (user_id,),
            ).fetchone()
        if row is None:
            raise NotFound(f"user {user_id!r} not found")
        return UserRecord(*row)

    # -- projects ------------------------------------------------------------

    def create_project(
        self,
        user_id: str,
        name: str,
        task_mode: str = "classification",
        quantile: float = 0.99,
    ) -> ProjectRecord:
        if task_mode not in TASK_MODES:
            raise InvalidInput(f"unsupported task mode {task_mode!r}")
        if not name:
            raise InvalidInput("project name must be non-empty")
        if not 0.0 < quantile <= 1.0:
            raise InvalidInput("quantile must be in (0, 1]")
        project_id = "p_" + secrets.token_hex(8)
        created = now_ms()
        with self._lock:
            try:
                self._db.execute(
                    "INSERT INTO projects (project_id, name, task_mode, created_at, owner_user_id, quantile) "
                    "VALUES (?, ?, ?, ?, ?, ?)",
                    (project_id, name, task_mode, created, user_id, quantile),
                )
                self._db.commit()
            except sqlite3.IntegrityError as exc:
                if "UNIQUE" in str(exc):
                    raise DuplicateName(f"project {name!r} already exists for user {user_id}") from exc
                raise NotFound(f"user {user_id!r} not found") from exc
        self.blobs.create_bucket(project_id)
        return ProjectRecord(project_id, name, task_mode, created, user_id, quantile)

    def _project_row(self, project_id: str) -> ProjectRecord | None:
        row = self._db.execute(
            "SELECT project_id, name, task_mode, created_at, owner_user_id, quantile "
            "FROM projects WHERE project_id = ?",
            (project_id,),
        ).fetchone()
        return ProjectRecord(*row) if row else None

    def require_project(self, user_id: str, project_id: str) -> ProjectRecord:
        """Fetch a project, enforcing ownership: NotFound / Forbidden."""
        with self._lock:
            project = self._project_row(project_id)
        if project is None:
            raise NotFound(f"project {project_id!r} not found")
        if project.owner_user_id != user_id:
            raise Forbidden(f"project {project_id!r} belongs to another user")
        return project

    def list_projects(self, user_id: str) -> list[ProjectRecord]:
        with self._lock:
            rows = self._db.execute(
                "SELECT project_id, name, task_mode, created_at, owner_user_id, quantile "
                "FROM projects WHERE owner_user_id = ? ORDER BY created_at, project_id",
                (user_id,),
            ).fetchall()
        return [ProjectRecord(*r) for r in rows]

    def delete_project(self, user_id: str, project_id: str) -> None:
        self.require_project(user_id, project_id)
        with self._lock:
            self._db.execute("DELETE FROM logs WHERE project_id = ?", (project_id,))
            self._db.execute("DELETE FROM ref_features WHERE project_id = ?", (project_id,))
            self._db.execute("DELETE FROM projects WHERE project_id = ?", (project_id,))
            self._db.commit()
        self.blobs.delete_bucket(project_id)

    # -- reference features ---------------------------------------------------

    def put_ref_features(self, user_id: str, ref: RefFeatureSet, refit: bool = False) -> None:
        """Store the reference set and fitted detector blobs in one transaction."""
        self.require_project(user_id, ref.project_id)
        with self._lock:
            exists = self._db.execute(
                "SELECT 1 FROM ref_features WHERE project_id = ?", (ref.project_id,)
            ).fetchone()
            if exists and not refit:
                raise AlreadyFitted(f"project {ref.project_id} already has reference features")
            self._db.execute(
                "INSERT OR REPLACE INTO ref_features "
                "(project_id, feature_names, matrix, ref_summary, gmm_model, pca_model, quantile, created_at) "
                "VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
                (
                    ref.project_id,
                    json.dumps(ref.feature_names),
                    json.dumps(ref.matrix),
                    json.dumps(ref.ref_summary),
                    ref.gmm_model_json,
                    ref.pca_model_json,
                    ref.quantile,
                    ref.created_at,
                ),
            )
            self._db.commit()

    def get_ref_features(self, user_id: str, project_id: str) -> RefFeatureSet | None:
        self.require_project(user_id, project_id)
        with self._lock:
            row = self._db.execute(
                "SELECT feature_names, matrix, ref_summary, gmm_model, pca_model, quantile, created_at "
                "FROM ref_features WHERE project_id = ?",
                (project_id,),
            ).fetchone()
        if row is None:
            return None
        names, matrix, summary, gmm, pca, quantile, created = row
        return RefFeatureSet(
            project_id=project_id,
            feature_names=json.loads(names),
            matrix=json.loads(matrix),
            ref_summary=json.loads(summary),
            gmm_model_json=gmm,
            pca_model_json=pca,
            quantile=quantile,
            created_at=created,
        )

    # -- logs -----------------------------------------------------------------

    def insert_log(self, user_id: str, record: LogRecord) -> None:
        project = self.require_project(user_id, record.project_id)
        validate_log_record(record, project.task_mode)
        with self._lock:
            self._db.execute(
                "INSERT INTO logs (log_id, project_id, sample_id, timestamp_ms, record, has_outlier) "
                "VALUES (?, ?, ?, ?, ?, ?)",
                (
                    record.log_id,
                    record.project_id,
                    record.sample_id,
                    record.timestamp_ms,
                    json.dumps(record.as_dict()),
                    int(record.has_outlier),
                ),
            )
            self._db.commit()

    def get_log(self, user_id: str, log_id: str) -> LogRecord:
        with self._lock:
            row = self._db.execute(
                "SELECT record FROM logs WHERE log_id = ?", (log_id,)
            ).fetchone()
        if row is None:
            raise NotFound(f"log {log_id!r} not found")
        record = LogRecord.from_dict(json.loads(row[0]))
        self.require_project(user_id, record.project_id)
        return record

    def query_logs(
        self,
        user_id: str,
        project_id: str,
        from_ms: int = 0,
        to_ms: int = 2**62,
        outlier_only: bool = False,
        limit: int | None = None,
        offset: int = 0,
    ) -> list[LogRecord]:
        """Records with from <= timestamp < to, ascending by (timestamp, log_id)."""
        self.require_project(user_id, project_id)
        if from_ms > to_ms:
            raise InvalidInput("from must be <= to")
        sql = (
            "SELECT record FROM logs WHERE project_id = ? AND timestamp_ms >= ? AND timestamp_ms < ?"
        )
        params: list = [project_id, from_ms, to_ms]
        if outlier_only:
            sql += " AND has_outlier = 1"
        sql += " ORDER BY timestamp_ms, log_id LIMIT ? OFFSET ?"
        params += [-1 if limit is None else limit, offset]
        with self._lock:
            rows = self._db.execute(sql, params).fetchall()
        return [LogRecord.from_dict(json.loads(r[0])) for r in rows]

    def delete_log(self, user_id: str, log_id: str) -> None:
        record = self.get_log(user_id, log_id)
        with self._lock:
            self._db.execute("DELETE FROM logs WHERE log_id = ?", (log_id,))
            self._db.commit()
        for key in [record.image_key, *record.heatmap_keys.values()]:
            if key:
                self.blobs.delete(record.project_id, key)

    # -- blobs (authorized) ----------------------------------------------------

    def put_blob(self, user_id: str, project_id: str, key: str, data: bytes) -> str:
        self.require_project(user_id, project_id)
        with self.project_lock(project_id):
            return self.blobs.put(project_id, key, data)

    def get_blob(self, user_id: str, project_id: str, key: str) -> bytes:
        self.require_project(user_id, project_id)
        return self.blobs.get(project_id, key)
