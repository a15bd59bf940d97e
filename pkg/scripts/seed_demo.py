"""Start a service instance and seed it with the standard demo fixture.

Seeds over real HTTP: one project, a 500-row reference, 100 logged samples
(95 inliers, 5 injected outliers), one log carrying a prediction and an
attribution heatmap. Prints a single JSON line with connection details, then
serves until killed. Used interactively and by the dashboard's fixture tests.
"""

from __future__ import annotations

import argparse
import base64
import hashlib
import json
import socket
import sys
import tempfile
import threading
import time
from pathlib import Path

import httpx
import numpy as np
import uvicorn

from obz.obzt import encode_tensor
from obz.pgm import read_pgm
from obz.service_api import AppConfig, create_app
from obz.storage import Storage
from obz.synthetic import write_demo_files


def free_port() -> int:
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    return port


def b64_obzt(arr: np.ndarray) -> str:
    arr = np.asarray(arr, dtype=np.float32)
    return base64.b64encode(encode_tensor(arr.shape, arr)).decode()


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-root", default=None)
    parser.add_argument("--port", type=int, default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--user", default="demo")
    parser.add_argument("--project-name", default="demo-project")
    args = parser.parse_args()

    data_root = Path(args.data_root or tempfile.mkdtemp(prefix="obz-demo-"))
    port = args.port or free_port()

    store = Storage(data_root)
    store.ensure_user(args.user)
    token = store.issue_token(args.user)
    app = create_app(AppConfig(data_root=data_root), store=store)

    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    while not server.started:
        time.sleep(0.02)
    url = f"http://127.0.0.1:{port}"

    fixture = write_demo_files(data_root / "fixture", seed=args.seed)
    headers = {"Authorization": f"Bearer {token}"}
    client = httpx.Client(base_url=url, headers=headers, timeout=60.0)

    project_id = client.post(
        "/v1/projects", json={"name": args.project_name, "quantile": 1.0}
    ).json()["project_id"]

    with open(fixture["ref_csv"]) as fh:
        rows = [line.strip().split(",") for line in fh if line.strip()]
    client.post(
        f"/v1/projects/{project_id}/ref_features",
        json={"feature_names": rows[0], "matrix": [[float(v) for v in r] for r in rows[1:]]},
    ).raise_for_status()

    # deterministic demo heatmap: center-positive, border-negative
    yy, xx = np.mgrid[0:16, 0:16]
    heatmap = np.exp(-((yy - 8.0) ** 2 + (xx - 8.0) ** 2) / 20.0) - 0.35
    heatmap_bytes = encode_tensor(heatmap.shape, heatmap.astype(np.float32))

    heatmap_log_id = None
    base_ts = 1_700_000_000_000
    for i, path in enumerate(sorted(Path(fixture["images_dir"]).iterdir())):
        pixels = read_pgm(path.read_bytes()).astype(np.float32)
        body = {
            "sample_id": path.stem,
            "timestamp": base_ts + i * 60_000,
            "image_obzt_b64": b64_obzt(pixels),
        }
        if i == 0:
            body["prediction"] = [
                {"label": "golf ball", "probability": 0.986},
                {"label": "baseball", "probability": 0.009},
                {"label": "ping-pong ball", "probability": 0.005},
            ]
            body["heatmaps"] = {"cdam": base64.b64encode(heatmap_bytes).decode()}
            body["target_class"] = "golf ball"
        response = client.post(f"/v1/projects/{project_id}/logs", json=body)
        response.raise_for_status()
        if i == 0:
            heatmap_log_id = response.json()["log_id"]

    summary = client.get(f"/v1/projects/{project_id}/summary").json()
    info = {
        "url": url,
        "token": token,
        "project_id": project_id,
        "user": args.user,
        "total_samples": summary["total_samples"],
        "outlier_count": summary["outlier_count"],
        "heatmap_log_id": heatmap_log_id,
        "heatmap_method": "cdam",
        "heatmap_sha256": hashlib.sha256(heatmap_bytes).hexdigest(),
        "outlier_files": fixture["outlier_files"],
        "data_root": str(data_root),
    }
    print(json.dumps(info), flush=True)

    try:
        while thread.is_alive():
            time.sleep(0.5)
    except KeyboardInterrupt:
        server.should_exit = True
        sys.exit(0)


if __name__ == "__main__":
    main()
