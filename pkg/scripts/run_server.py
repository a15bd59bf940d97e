"""Start the observability service.

Environment: OBZ_DATA_ROOT (storage root), OBZ_BIND (host:port, default
127.0.0.1:8000), OBZ_DEFAULT_QUANTILE. Pass --ui <dir> to also serve a built
dashboard (frontend/dist) at /ui.
"""

from __future__ import annotations

import argparse
import os
from pathlib import Path

import uvicorn

from obz.service_api import AppConfig, create_app


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--bind", default=os.environ.get("OBZ_BIND", "127.0.0.1:8000"))
    parser.add_argument("--data-root", default=os.environ.get("OBZ_DATA_ROOT", "./obz-data"))
    parser.add_argument("--ui", default=None, help="Directory of built dashboard assets.")
    args = parser.parse_args()

    app = create_app(AppConfig(
        data_root=Path(args.data_root),
        default_quantile=float(os.environ.get("OBZ_DEFAULT_QUANTILE", "0.99")),
    ))
    if args.ui:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=args.ui, html=True), name="ui")

    host, _, port = args.bind.rpartition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))


if __name__ == "__main__":
    main()
