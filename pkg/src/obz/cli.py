"""`obz` command-line client for the observability service.

Config precedence: flags > environment (OBZ_SERVER, OBZ_TOKEN, OBZ_PROJECT)
> config file (OBZ_CONFIG_FILE, default ~/.config/obz/config.json). Output is
human-readable lines; --json switches to structured output. Exit codes:
0 success, 2 connection refused, 3 server-side 4xx/5xx, 4 malformed local file.
"""

from __future__ import annotations

import base64
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import click
import httpx
import numpy as np

from .errors import CorruptTensor, InvalidInput
from .features import CANONICAL_FEATURE_NAMES, ImageSample, extract_first_order
from .obzt import decode_tensor, encode_tensor
from .pgm import read_pgm

EXIT_CONNECTION = 2
EXIT_SERVER = 3
EXIT_BAD_FILE = 4


@dataclass
class ClientConfig:
    server_url: str
    api_token: str
    default_project: str
    timeout: float = 30.0
    as_json: bool = False

    def headers(self) -> dict[str, str]:
        return {"Authorization": f"Bearer {self.api_token}"}


class CliFailure(click.ClickException):
    def __init__(self, message: str, exit_code: int, payload: dict | None = None):
        super().__init__(message)
        self.exit_code = exit_code
        self.payload = payload or {"message": message}

    def show(self, file=None) -> None:
        # one machine-readable error line on stderr
        click.echo(json.dumps({"error": self.payload}), err=True)


def _load_config_file() -> dict:
    path = Path(os.environ.get("OBZ_CONFIG_FILE", "~/.config/obz/config.json")).expanduser()
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        return {}


def build_config(server, token, project, timeout, as_json) -> ClientConfig:
    file_cfg = _load_config_file()
    return ClientConfig(
        server_url=server or os.environ.get("OBZ_SERVER") or file_cfg.get("server", ""),
        api_token=token or os.environ.get("OBZ_TOKEN") or file_cfg.get("token", ""),
        default_project=project or os.environ.get("OBZ_PROJECT") or file_cfg.get("project", ""),
        timeout=timeout if timeout is not None else float(file_cfg.get("timeout", 30.0)),
        as_json=as_json,
    )


def api_request(cfg: ClientConfig, method: str, path: str, **kwargs) -> httpx.Response:
    if not cfg.server_url:
        raise CliFailure("no server configured (set OBZ_SERVER or --server)", EXIT_SERVER)
    url = cfg.server_url.rstrip("/") + path
    try:
        response = httpx.request(
            method, url, headers=cfg.headers(), timeout=cfg.timeout, **kwargs
        )
    except httpx.ConnectError as exc:
        raise CliFailure(f"cannot connect to {cfg.server_url}: {exc}", EXIT_CONNECTION)
    except httpx.HTTPError as exc:
        raise CliFailure(f"transport error: {exc}", EXIT_CONNECTION)
    if response.status_code >= 400:
        try:
            message = response.json().get("error", {}).get("message", response.text)
        except json.JSONDecodeError:
            message = response.text
        raise CliFailure(
            f"server returned {response.status_code}: {message}",
            EXIT_SERVER,
            payload={"status": response.status_code, "message": message},
        )
    return response


def emit(cfg: ClientConfig, payload: dict, human_lines: list[str]) -> None:
    if cfg.as_json:
        click.echo(json.dumps(payload))
    else:
        for line in human_lines:
            click.echo(line)


def require_project(cfg: ClientConfig) -> str:
    if not cfg.default_project:
        raise CliFailure("no project configured (set OBZ_PROJECT or --project)", EXIT_SERVER)
    return cfg.default_project


# ---------------------------------------------------------------------------
# image loading (PGM / OBZT only, by design)
# ---------------------------------------------------------------------------

def load_image_float32(path: Path) -> np.ndarray:
    """Read a .pgm or .obzt image as the float32 grid the server will see."""
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CliFailure(f"cannot read {path}: {exc}", EXIT_BAD_FILE)
    suffix = path.suffix.lower()
    try:
        if suffix == ".obzt":
            dims, values = decode_tensor(data)
            if len(dims) != 2:
                raise InvalidInput(f"image tensor must be 2-D, got {len(dims)}-D")
            return values
        pixels = read_pgm(data)
        return pixels.astype(np.float32)
    except (InvalidInput, CorruptTensor) as exc:
        raise CliFailure(f"{path}: {exc}", EXIT_BAD_FILE)


def image_to_b64(pixels_f32: np.ndarray) -> str:
    raw = encode_tensor(pixels_f32.shape, pixels_f32)
    return base64.b64encode(raw).decode("ascii")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

@click.group()
@click.option("--server", default=None, help="Service base URL.")
@click.option("--token", default=None, help="API bearer token.")
@click.option("--project", default=None, help="Default project id.")
@click.option("--timeout", default=None, type=float, help="Request timeout in seconds.")
@click.option("--json", "as_json", is_flag=True, help="Structured JSON output.")
@click.pass_context
def main(ctx, server, token, project, timeout, as_json):
    """Client for the CV-model observability service."""
    ctx.obj = build_config(server, token, project, timeout, as_json)


@main.command()
@click.pass_obj
def init(cfg: ClientConfig):
    """Validate the configured token and list reachable projects."""
    me = api_request(cfg, "GET", "/v1/me").json()
    projects = api_request(cfg, "GET", "/v1/projects").json()["projects"]
    emit(
        cfg,
        {"user": me, "projects": projects},
        [f"user: {me['user_id']}", f"projects: {len(projects)}"]
        + [f"  {p['project_id']}  {p['name']}" for p in projects],
    )


@main.group()
def project():
    """Project management."""


@project.command("create")
@click.argument("name")
@click.option("--task-mode", default="classification")
@click.option("--quantile", default=None, type=float, help="Threshold quantile for detectors.")
@click.pass_obj
def project_create(cfg: ClientConfig, name, task_mode, quantile):
    """Create a project owned by the token's user."""
    body = {"name": name, "task_mode": task_mode}
    if quantile is not None:
        body["quantile"] = quantile
    payload = api_request(cfg, "POST", "/v1/projects", json=body).json()
    emit(cfg, payload, [f"created project {payload['project_id']} ({name})"])


@main.group()
def ref():
    """Reference feature management."""


@ref.command("upload")
@click.argument("csv_path", type=click.Path(path_type=Path))
@click.option("--detector", "detector_list", multiple=True, type=click.Choice(["gmm", "pca"]),
              help="Detectors to fit; default gmm for the canonical 16 features, else pca.")
@click.option("--k", "gmm_k", default="auto", help="GMM component count or 'auto'.")
@click.option("--seed", default=0, type=int)
@click.option("--rank", default=None, type=int, help="Explicit PCA rank.")
@click.option("--variance-fraction", default=0.90, type=float)
@click.option("--quantile", default=None, type=float)
@click.option("--refit", is_flag=True, help="Replace previously fitted reference models.")
@click.pass_obj
def ref_upload(cfg: ClientConfig, csv_path, detector_list, gmm_k, seed, rank,
               variance_fraction, quantile, refit):
    """Upload a reference feature matrix (CSV: header row of names, float rows)."""
    project_id = require_project(cfg)
    try:
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
        names = rows[0]
        matrix = [[float(v) for v in row] for row in rows[1:] if row]
    except (OSError, ValueError, IndexError) as exc:
        raise CliFailure(f"{csv_path}: {exc}", EXIT_BAD_FILE)

    body: dict = {
        "feature_names": names,
        "matrix": matrix,
        "gmm_k": int(gmm_k) if gmm_k != "auto" else "auto",
        "seed": seed,
        "pca_variance_fraction": variance_fraction,
        "refit": refit,
    }
    if detector_list:
        body["detectors"] = list(detector_list)
    if rank is not None:
        body["pca_rank"] = rank
    if quantile is not None:
        body["quantile"] = quantile
    payload = api_request(cfg, "POST", f"/v1/projects/{project_id}/ref_features", json=body).json()
    lines = [f"fitted reference on {payload['n_rows']} rows (quantile {payload['quantile']})"]
    for kind, summary in payload["detectors"].items():
        desc = ", ".join(f"{k}={v}" for k, v in summary.items() if k != "explained_variance_ratio")
        lines.append(f"  {kind}: {desc}")
    emit(cfg, payload, lines)


def _parse_pred(pred_options) -> list[dict]:
    out = []
    for item in pred_options:
        label, sep, prob = item.rpartition(":")
        if not sep:
            raise CliFailure(f"bad --pred {item!r}, expected label:prob", EXIT_BAD_FILE)
        try:
            out.append({"label": label, "probability": float(prob)})
        except ValueError:
            raise CliFailure(f"bad --pred probability in {item!r}", EXIT_BAD_FILE)
    return out


def _parse_heatmaps(heatmap_options) -> dict[str, str]:
    out = {}
    for item in heatmap_options:
        method, sep, file_part = item.partition("=")
        if not sep:
            raise CliFailure(f"bad --heatmap {item!r}, expected method=file.obzt", EXIT_BAD_FILE)
        path = Path(file_part)
        try:
            raw = path.read_bytes()
            decode_tensor(raw)  # validate before shipping
        except OSError as exc:
            raise CliFailure(f"cannot read {path}: {exc}", EXIT_BAD_FILE)
        except CorruptTensor as exc:
            raise CliFailure(f"{path}: {exc}", EXIT_BAD_FILE)
        out[method] = base64.b64encode(raw).decode("ascii")
    return out


def _log_one(cfg: ClientConfig, project_id: str, image_path: Path, heatmaps, preds,
             sample_id, timestamp, target_class, local_features, score) -> dict:
    pixels = load_image_float32(image_path)
    body: dict = {
        "sample_id": sample_id or image_path.stem,
        "prediction": preds,
        "heatmaps": heatmaps,
        "score": score,
    }
    if timestamp is not None:
        body["timestamp"] = timestamp
    if target_class is not None:
        body["target_class"] = target_class
    if local_features:
        sample = ImageSample(pixels=pixels.astype(np.float64), sample_id=body["sample_id"])
        fv = extract_first_order(sample)
        body["features"] = {"names": list(fv.names), "values": list(fv.values)}
    else:
        body["image_obzt_b64"] = image_to_b64(pixels)
    return api_request(cfg, "POST", f"/v1/projects/{project_id}/logs", json=body).json()


def _verdict_lines(payload: dict) -> list[str]:
    lines = [f"log {payload['log_id']}"]
    for v in payload["verdicts"]:
        flag = "OUTLIER" if v["is_outlier"] else "ok"
        lines.append(
            f"  {v['detector_kind']}: score={v['score']:.6g} threshold={v['threshold']:.6g} {flag}"
        )
    return lines


@main.command("log")
@click.argument("image", required=False, type=click.Path(path_type=Path))
@click.option("--batch", "batch_dir", type=click.Path(path_type=Path), default=None,
              help="Upload every .pgm/.obzt image in a directory.")
@click.option("--heatmap", "heatmaps", multiple=True, help="method=file.obzt, repeatable.")
@click.option("--pred", "preds", multiple=True, help="label:prob, repeatable.")
@click.option("--sample-id", default=None)
@click.option("--timestamp", default=None, type=int, help="Milliseconds since epoch, UTC.")
@click.option("--target-class", default=None)
@click.option("--local-features", is_flag=True,
              help="Extract features locally and ship them instead of the raw image.")
@click.option("--no-score", is_flag=True, help="Ingest without outlier scoring.")
@click.option("--parallel", default=4, type=int, help="In-flight requests for --batch.")
@click.pass_obj
def log_cmd(cfg: ClientConfig, image, batch_dir, heatmaps, preds, sample_id, timestamp,
            target_class, local_features, no_score, parallel):
    """Log one inference (image required unless --batch)."""
    project_id = require_project(cfg)
    pred_payload = _parse_pred(preds)
    heat_payload = _parse_heatmaps(heatmaps)
    score = not no_score

    if batch_dir is not None:
        paths = sorted(
            p for p in Path(batch_dir).iterdir() if p.suffix.lower() in (".pgm", ".obzt")
        )
        if not paths:
            raise CliFailure(f"no .pgm/.obzt images in {batch_dir}", EXIT_BAD_FILE)

        def upload(path: Path) -> dict:
            return _log_one(cfg, project_id, path, {}, pred_payload, None, timestamp,
                            target_class, local_features, score)

        with ThreadPoolExecutor(max_workers=max(1, parallel)) as pool:
            results = list(pool.map(upload, paths))
        payload = {"logged": results}
        emit(cfg, payload, [f"{p.name}: {r['log_id']}" for p, r in zip(paths, results)])
        return

    if image is None:
        raise CliFailure("IMAGE argument or --batch required", EXIT_BAD_FILE)
    payload = _log_one(cfg, project_id, image, heat_payload, pred_payload, sample_id,
                       timestamp, target_class, local_features, score)
    emit(cfg, payload, _verdict_lines(payload))


@main.command()
@click.option("--from", "from_ms", default=None, type=int)
@click.option("--to", "to_ms", default=None, type=int)
@click.option("--metrics", default=None, help="Comma-separated canonical feature names.")
@click.pass_obj
def summary(cfg: ClientConfig, from_ms, to_ms, metrics):
    """Window totals, outlier count, and per-feature time series."""
    project_id = require_project(cfg)
    params: dict = {}
    if from_ms is not None:
        params["from"] = from_ms
    if to_ms is not None:
        params["to"] = to_ms
    if metrics is not None:
        params["metrics"] = metrics
    payload = api_request(cfg, "GET", f"/v1/projects/{project_id}/summary", params=params).json()
    lines = [f"total={payload['total_samples']} outliers={payload['outlier_count']}"]
    for name, points in payload["series"].items():
        lines.append(f"  {name}: {len(points)} points")
    emit(cfg, payload, lines)


@main.command()
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--from", "from_ms", default=None, type=int)
@click.option("--to", "to_ms", default=None, type=int)
@click.option("--outlier-only", is_flag=True)
@click.pass_obj
def export(cfg: ClientConfig, out_path, from_ms, to_ms, outlier_only):
    """Download the CSV export of logged samples."""
    project_id = require_project(cfg)
    params: dict = {}
    if from_ms is not None:
        params["from"] = from_ms
    if to_ms is not None:
        params["to"] = to_ms
    if outlier_only:
        params["outlier_only"] = "true"
    response = api_request(cfg, "GET", f"/v1/projects/{project_id}/export.csv", params=params)
    out_path.write_bytes(response.content)
    n_rows = max(response.content.decode("utf-8").count("\r\n") - 1, 0)
    emit(cfg, {"path": str(out_path), "rows": n_rows}, [f"wrote {n_rows} rows to {out_path}"])


@main.group()
def admin():
    """Local-deployment administration (operates directly on the data root)."""


@admin.group()
def token():
    """API token administration."""


@token.command("new")
@click.argument("user")
@click.option("--data-root", default=None, type=click.Path(path_type=Path),
              help="Storage root (default: OBZ_DATA_ROOT).")
@click.option("--display-name", default=None)
@click.pass_obj
def token_new(cfg: ClientConfig, user, data_root, display_name):
    """Issue a token for USER (created if missing); prints the raw token once."""
    from .storage import Storage

    root = data_root or os.environ.get("OBZ_DATA_ROOT")
    if not root:
        raise CliFailure("no data root (set OBZ_DATA_ROOT or --data-root)", EXIT_BAD_FILE)
    store = Storage(Path(root))
    try:
        store.ensure_user(user, display_name)
        raw = store.issue_token(user)
    finally:
        store.close()
    emit(cfg, {"user_id": user, "token": raw}, [raw])


if __name__ == "__main__":
    main()
