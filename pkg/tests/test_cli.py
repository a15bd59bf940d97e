"""CLI tests against a live HTTP server (plus PGM parsing units)."""

from __future__ import annotations

import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from obz.cli import main
from obz.errors import InvalidInput
from obz.features import CANONICAL_FEATURE_NAMES
from obz.obzt import encode_tensor
from obz.pgm import read_pgm, write_pgm
from obz.service_api import AppConfig, create_app
from obz.storage import Storage
from obz.synthetic import inlier_image, reference_matrix

from live_server import LiveServer


@pytest.fixture(scope="module")
def live(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-data")
    store = Storage(root)
    store.ensure_user("carol")
    token = store.issue_token("carol")
    app = create_app(AppConfig(data_root=root), store=store)
    with LiveServer(app) as server:
        yield {"url": server.url, "token": token, "store": store, "root": root}
    store.close()


@pytest.fixture()
def runner():
    return CliRunner()


def cli_env(live, project=""):
    return {
        "OBZ_SERVER": live["url"],
        "OBZ_TOKEN": live["token"],
        "OBZ_PROJECT": project,
        "OBZ_CONFIG_FILE": "/nonexistent/obz.json",
    }


def run_ok(runner, args, env):
    result = runner.invoke(main, args, env=env)
    assert result.exit_code == 0, result.output
    return result


def make_ref_csv(path, seed=0, n=120):
    matrix = reference_matrix(seed, n=n, size=8)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CANONICAL_FEATURE_NAMES)
        writer.writerows(matrix.tolist())
    return matrix


# -- PGM units ---------------------------------------------------------------

def test_pgm_binary_round_trip():
    rng = np.random.default_rng(0)
    px = rng.integers(0, 256, size=(7, 5)).astype(np.float64)
    assert np.array_equal(read_pgm(write_pgm(px, maxval=255)), px)


def test_pgm_16bit_round_trip():
    rng = np.random.default_rng(1)
    px = rng.integers(0, 65536, size=(4, 6)).astype(np.float64)
    assert np.array_equal(read_pgm(write_pgm(px, maxval=65535)), px)


def test_pgm_ascii_and_comments():
    data = b"P2\n# a comment\n3 2\n255\n0 1 2\n3 4 5\n"
    assert read_pgm(data).tolist() == [[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]


def test_pgm_rejects_garbage():
    with pytest.raises(InvalidInput):
        read_pgm(b"JFIF not a pgm")
    with pytest.raises(InvalidInput):
        read_pgm(b"P5\n2 2\n255\n\x00\x01")  # truncated pixels


# -- CLI against the live server ----------------------------------------------

def test_init_lists_projects(runner, live):
    result = run_ok(runner, ["init"], cli_env(live))
    assert "user: carol" in result.output


def test_project_create_and_summary_empty(runner, live):
    result = run_ok(runner, ["--json", "project", "create", "empty-proj"], cli_env(live))
    pid = json.loads(result.output)["project_id"]
    result = run_ok(runner, ["summary"], cli_env(live, project=pid))
    assert "total=0 outliers=0" in result.output


def test_full_flow_log_matches_detail(runner, live, tmp_path):
    env_result = run_ok(runner, ["--json", "project", "create", "flow-proj"], cli_env(live))
    pid = json.loads(env_result.output)["project_id"]
    env = cli_env(live, project=pid)

    csv_path = tmp_path / "ref.csv"
    make_ref_csv(csv_path, n=150)
    result = run_ok(runner, ["--json", "ref", "upload", str(csv_path), "--quantile", "1.0"], env)
    assert "gmm" in json.loads(result.output)["detectors"]

    rng = np.random.default_rng(7)
    img_path = tmp_path / "img.pgm"
    img_path.write_bytes(write_pgm(np.clip(inlier_image(rng, 8), 0, 255), maxval=255))
    heat_path = tmp_path / "heat.obzt"
    heat = rng.normal(size=(8, 8)).astype(np.float32)
    heat_path.write_bytes(encode_tensor(heat.shape, heat))

    result = run_ok(
        runner,
        ["--json", "log", str(img_path), "--pred", "cat:0.9", "--pred", "dog:0.1",
         "--heatmap", f"cdam={heat_path}"],
        env,
    )
    payload = json.loads(result.output)
    assert payload["verdicts"][0]["detector_kind"] == "gmm"

    import httpx

    detail = httpx.get(
        f"{live['url']}/v1/logs/{payload['log_id']}",
        headers={"Authorization": f"Bearer {live['token']}"},
    ).json()
    assert detail["verdicts"] == payload["verdicts"]
    assert detail["heatmap_keys"].keys() == {"cdam"}


def test_local_features_equal_server_extraction(runner, live, tmp_path):
    result = run_ok(runner, ["--json", "project", "create", "localfeat-proj"], cli_env(live))
    pid = json.loads(result.output)["project_id"]
    env = cli_env(live, project=pid)
    make_ref_csv(tmp_path / "ref.csv", n=120)
    run_ok(runner, ["ref", "upload", str(tmp_path / "ref.csv")], env)

    rng = np.random.default_rng(3)
    img_path = tmp_path / "img.pgm"
    img_path.write_bytes(write_pgm(np.clip(inlier_image(rng, 8), 0, 255), maxval=255))

    remote = json.loads(run_ok(runner, ["--json", "log", str(img_path)], env).output)
    local = json.loads(
        run_ok(runner, ["--json", "log", str(img_path), "--local-features"], env).output
    )

    import httpx

    headers = {"Authorization": f"Bearer {live['token']}"}
    d_remote = httpx.get(f"{live['url']}/v1/logs/{remote['log_id']}", headers=headers).json()
    d_local = httpx.get(f"{live['url']}/v1/logs/{local['log_id']}", headers=headers).json()
    a = np.asarray(d_remote["feature_values"])
    b = np.asarray(d_local["feature_values"])
    assert np.abs(a - b).max() <= 1e-12
    assert d_remote["image_key"] and d_local["image_key"] is None


def test_export_rows_equal_summary_total(runner, live, tmp_path):
    result = run_ok(runner, ["--json", "project", "create", "export-proj"], cli_env(live))
    pid = json.loads(result.output)["project_id"]
    env = cli_env(live, project=pid)
    make_ref_csv(tmp_path / "ref.csv", n=120)
    run_ok(runner, ["ref", "upload", str(tmp_path / "ref.csv"), "--quantile", "1.0"], env)

    rng = np.random.default_rng(5)
    batch = tmp_path / "batch"
    batch.mkdir()
    for i in range(6):
        (batch / f"s{i}.pgm").write_bytes(
            write_pgm(np.clip(inlier_image(rng, 8), 0, 255), maxval=255)
        )
    run_ok(runner, ["log", "--batch", str(batch)], env)

    summary_payload = json.loads(run_ok(runner, ["--json", "summary"], env).output)
    out_csv = tmp_path / "out.csv"
    export_payload = json.loads(
        run_ok(runner, ["--json", "export", "--out", str(out_csv)], env).output
    )
    assert export_payload["rows"] == summary_payload["total_samples"] == 6
    with open(out_csv, newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 7  # header + 6


def test_exit_codes(runner, live, tmp_path):
    # connection refused -> 2
    bad_env = dict(cli_env(live), OBZ_SERVER="http://127.0.0.1:1")
    result = runner.invoke(main, ["init"], env=bad_env)
    assert result.exit_code == 2

    # 4xx from server -> 3, with a machine-readable error line
    result = runner.invoke(main, ["summary"], env=cli_env(live, project="p_missing"))
    assert result.exit_code == 3
    err = json.loads(result.output.strip().splitlines()[-1])
    assert err["error"]["status"] == 404

    # malformed local file -> 4
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"not a pgm at all")
    result = runner.invoke(main, ["log", str(bad)], env=cli_env(live, project="p_x"))
    assert result.exit_code == 4


def test_admin_token_new_and_use(runner, live, tmp_path):
    result = run_ok(
        runner,
        ["admin", "token", "new", "dave", "--data-root", str(live["root"])],
        {"OBZ_CONFIG_FILE": "/nonexistent/obz.json"},
    )
    token = result.output.strip()
    assert token.startswith("obz_")
    assert live["store"].verify_token(token) == "dave"

    env = dict(cli_env(live), OBZ_TOKEN=token)
    result = run_ok(runner, ["--json", "init"], env)
    assert json.loads(result.output)["user"]["user_id"] == "dave"


def test_flag_overrides_env(runner, live):
    # flags > env: a bogus env token is overridden by --token
    env = dict(cli_env(live), OBZ_TOKEN="obz_bogus")
    result = runner.invoke(main, ["--token", live["token"], "init"], env=env)
    assert result.exit_code == 0, result.output
