"""Acceptance suite: one test per release criterion, each printing a verdict line.

Run with `python3 -m pytest tests/test_acceptance.py -s` to see the lines.
"""

from __future__ import annotations

import csv
import json
import struct
import time

import numpy as np
import pytest
from click.testing import CliRunner

from obz.cli import main as cli_main
from obz.detectors import (
    calibrate_threshold,
    deserialize_model,
    fit_gmm,
    fit_pca,
    gmm_nll,
    gmm_nll_batch,
    pca_loss_batch,
)
from obz.errors import CorruptTensor
from obz.features import CANONICAL_FEATURE_NAMES, ImageSample, extract_first_order
from obz.obzt import decode_tensor, encode_tensor
from obz.service_api import AppConfig, create_app
from obz.storage import Storage
from obz.synthetic import gaussian_inliers, shifted_outliers, write_demo_files
from obz.xai_eval import AttributionMap, PerturbationCurve, compactness, fidelity_score, perturbation_curve

from live_server import LiveServer
from reference_impls import (
    fof_reference,
    gini_pairwise_reference,
    linear_deletion_score_reference,
    pca_eigh_reference,
)

TOL = 1e-9


def report(name: str, detail: str = ""):
    print(f"[PASS] {name}" + (f" — {detail}" if detail else ""))


def close(a, b, tol=TOL):
    """|a-b| <= tol measured relative for large magnitudes, absolute otherwise."""
    return abs(a - b) <= tol * max(1.0, abs(b))


def test_fof_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(20250811)
    worst = 0.0
    for _ in range(1000):
        h, w = (int(v) for v in rng.integers(8, 65, size=2))
        px = rng.normal(120.0, 40.0, size=(h, w))
        got = extract_first_order(ImageSample(pixels=px, sample_id="a")).as_dict()
        want = fof_reference(px.reshape(-1))
        for name in CANONICAL_FEATURE_NAMES:
            err = abs(got[name] - want[name]) / max(1.0, abs(want[name]))
            worst = max(worst, err)
            assert close(got[name], want[name]), (name, got[name], want[name])
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"took {elapsed:.1f}s"
    report("FOF oracle equivalence", f"1000 images, worst diff {worst:.2e}, {elapsed:.1f}s")


def test_em_monotonicity():
    start = time.perf_counter()
    for seed in range(20):
        rng = np.random.default_rng(seed)
        k = seed % 3 + 1
        centers = rng.uniform(-5.0, 5.0, size=(k, 16))
        rows = [rng.normal(centers[rng.integers(k)], 1.0) for _ in range(1000)]
        model = fit_gmm(np.asarray(rows), k=k, seed=seed)
        lls = np.asarray(model.log_likelihoods)
        slack = 1e-9 * np.maximum(np.abs(lls[:-1]), 1.0)
        assert (np.diff(lls) >= -slack).all(), f"seed {seed}: LL decreased"
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0, f"took {elapsed:.1f}s"
    report("EM monotonicity", f"20 seeded fits (N=1000, d=16), {elapsed:.1f}s")


def test_calibration_soundness():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    d = 16
    ref = gaussian_inliers(rng, 10_000, d)
    model = fit_gmm(ref, k=1, seed=0)
    model.threshold = calibrate_threshold(gmm_nll_batch(model, ref), 0.99)

    fresh = gaussian_inliers(rng, 10_000, d)
    flagged = float(np.mean(gmm_nll_batch(model, fresh) > model.threshold))
    assert abs(flagged - 0.01) <= 0.004, f"inlier flag rate {flagged:.4f}"

    outliers = shifted_outliers(rng, 10_000, d, shift_sigmas=6.0)
    caught = float(np.mean(gmm_nll_batch(model, outliers) > model.threshold))
    assert caught >= 0.95, f"outlier recall {caught:.4f}"
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    report(
        "Calibration soundness",
        f"fresh inliers flagged {100 * flagged:.2f}%, 6-sigma outliers {100 * caught:.1f}%, {elapsed:.1f}s",
    )


def test_pca_correctness():
    rng = np.random.default_rng(11)

    data = rng.normal(size=(80, 5)) @ rng.normal(size=(5, 5))
    full = fit_pca(data, r=5)
    probes = rng.normal(size=(50, 5)) * 3.0
    worst_loss = float(pca_loss_batch(full, probes).max())
    assert worst_loss <= 1e-10

    ref_components, ref_ratio = pca_eigh_reference(data)
    for got, want in zip(full.components, ref_components):
        assert min(np.abs(got - want).max(), np.abs(got + want).max()) <= 1e-8
    np.testing.assert_allclose(full.explained_variance_ratio, ref_ratio, atol=1e-8)

    gram_err = float(np.abs(full.components @ full.components.T - np.eye(5)).max())
    assert gram_err <= 1e-8
    report(
        "PCA correctness",
        f"full-rank loss {worst_loss:.1e}, eigen-oracle match, orthonormality {gram_err:.1e}",
    )


def test_fidelity_closed_form_and_dominance():
    rng = np.random.default_rng(13)
    half = rng.uniform(0.5, 2.0, size=32)
    vals = np.concatenate([half, -half])  # exact zero mean -> baseline 0.0
    rng.shuffle(vals)
    image = ImageSample(pixels=vals.reshape(8, 8), sample_id="fid")
    w = rng.normal(size=64)

    def oracle(img, target):
        return float(w @ img.pixels.reshape(-1))

    fractions = tuple(np.round(np.arange(0, 11) * 0.05, 2))
    exact_map = AttributionMap(
        scores=(w * vals).reshape(8, 8), method="exact", target_class=0
    )
    curve = perturbation_curve(image, exact_map, oracle, fractions=fractions)
    baseline = float(image.pixels.mean())
    for f, got in zip(curve.fractions, curve.scores):
        want = linear_deletion_score_reference(w, vals, baseline, int(np.floor(f * 64)))
        assert close(got, want), (f, got, want)

    for trial in range(50):
        random_map = AttributionMap(
            scores=rng.normal(size=(8, 8)), method="random", target_class=0
        )
        random_curve = perturbation_curve(image, random_map, oracle, fractions=fractions)
        for f, ex, rd in zip(fractions, curve.scores, random_curve.scores):
            assert rd >= ex - TOL, f"random order beat exact attribution at f={f}"

    report("Fidelity closed form", "analytic deletion curve matched; dominates 50 random orders")


def test_compactness_bounds():
    uniform = AttributionMap(scores=np.full((5, 5), 3.0), method="m", target_class=0)
    assert compactness(uniform) == pytest.approx(0.0, abs=1e-12)

    one_hot = np.zeros((6, 6))
    one_hot[4, 2] = 2.0
    n = 36
    assert compactness(
        AttributionMap(scores=one_hot, method="m", target_class=0)
    ) == pytest.approx((n - 1) / n, abs=1e-12)

    rng = np.random.default_rng(17)
    for _ in range(25):
        scores = rng.normal(size=(int(rng.integers(2, 10)), int(rng.integers(2, 10))))
        got = compactness(AttributionMap(scores=scores, method="m", target_class=0))
        assert close(got, gini_pairwise_reference(scores.reshape(-1)))
    report("Compactness bounds", "uniform=0, one-hot=(N-1)/N, pairwise-Gini oracle matched")


def test_obzt_codec_fuzz_and_corruption():
    rng = np.random.default_rng(19)
    for _ in range(1000):
        ndim = int(rng.integers(1, 5))
        dims = tuple(int(d) for d in rng.integers(1, 6, size=ndim))
        values = rng.normal(scale=100.0, size=dims).astype(np.float32)
        out_dims, out = decode_tensor(encode_tensor(dims, values))
        assert out_dims == dims and out.tobytes() == values.tobytes()

    good = encode_tensor((2, 3), np.arange(6, dtype=np.float32))
    corruptions = [good[:cut] for cut in range(len(good))]
    corruptions += [
        b"NOPE" + good[4:],
        good[:4] + b"\x09" + good[5:],
        good[:5] + b"\x02" + good[6:],
        good[:6] + b"\x00" + good[7:],
        good[:6] + b"\x05" + good[7:],
        good[:7] + b"\x01" + good[8:],
        good[:8] + struct.pack("<I", 0) + good[12:],
        good + b"\x00",
        good[:-4] + struct.pack("<f", float("nan")),
    ]
    for blob in corruptions:
        with pytest.raises(CorruptTensor):
            decode_tensor(blob)
    report("OBZT codec", f"1000 fuzz round trips bit-exact; {len(corruptions)} corruption cases rejected")


def test_end_to_end_cli_service(tmp_path):
    start = time.perf_counter()
    data_root = tmp_path / "server-data"
    store = Storage(data_root)
    store.ensure_user("e2e")
    token = store.issue_token("e2e")
    app = create_app(AppConfig(data_root=data_root), store=store)

    fixture = write_demo_files(tmp_path / "demo", seed=0)
    runner = CliRunner()

    with LiveServer(app) as server:
        env = {
            "OBZ_SERVER": server.url,
            "OBZ_TOKEN": token,
            "OBZ_CONFIG_FILE": "/nonexistent/obz.json",
        }

        created = runner.invoke(
            cli_main, ["--json", "project", "create", "e2e-project", "--quantile", "1.0"], env=env
        )
        assert created.exit_code == 0, created.output
        project_id = json.loads(created.output)["project_id"]
        env["OBZ_PROJECT"] = project_id

        uploaded = runner.invoke(cli_main, ["--json", "ref", "upload", fixture["ref_csv"]], env=env)
        assert uploaded.exit_code == 0, uploaded.output
        assert json.loads(uploaded.output)["n_rows"] == 500

        logged = runner.invoke(cli_main, ["--json", "log", "--batch", fixture["images_dir"]], env=env)
        assert logged.exit_code == 0, logged.output
        assert len(json.loads(logged.output)["logged"]) == 100

        summarized = runner.invoke(cli_main, ["--json", "summary"], env=env)
        assert summarized.exit_code == 0, summarized.output
        payload = json.loads(summarized.output)
        assert payload["total_samples"] == 100, payload
        assert payload["outlier_count"] == 5, payload

        out_csv = tmp_path / "export.csv"
        exported = runner.invoke(cli_main, ["export", "--out", str(out_csv)], env=env)
        assert exported.exit_code == 0, exported.output
        lines = [l for l in out_csv.read_bytes().decode("utf-8").split("\r\n") if l]
        assert len(lines) == 101, f"expected 101 CSV lines, got {len(lines)}"

    # ingest-time verdicts == offline recomputation from stored model + features
    ref = store.get_ref_features("e2e", project_id)
    model = deserialize_model(ref.gmm_model_json)
    logs = store.query_logs("e2e", project_id)
    assert len(logs) == 100
    flagged_samples = set()
    for record in logs:
        recomputed = gmm_nll(model, np.asarray(record.feature_values))
        verdict = record.verdicts[0]
        assert verdict.score == recomputed, "ingest-time score != offline recomputation"
        assert verdict.is_outlier == (recomputed > model.threshold)
        if verdict.is_outlier:
            flagged_samples.add(record.sample_id)
    assert flagged_samples == {name.removesuffix(".pgm") for name in fixture["outlier_files"]}
    store.close()

    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    report(
        "End-to-end",
        f"500-row ref, 100 logs, summary 100/5, 101 CSV lines, exact verdict replay, {elapsed:.1f}s",
    )


def test_auth_isolation_matrix(tmp_path):
    from fastapi.testclient import TestClient

    store = Storage(tmp_path / "data")
    app = create_app(AppConfig(data_root=tmp_path / "data"), store=store)
    client = TestClient(app)
    store.ensure_user("owner")
    store.ensure_user("intruder")
    tokens = {u: store.issue_token(u) for u in ("owner", "intruder")}

    def hdr(user):
        return {"Authorization": f"Bearer {tokens[user]}"}

    ref = np.random.default_rng(0).normal(size=(40, 3))
    pid = client.post("/v1/projects", json={"name": "vault"}, headers=hdr("owner")).json()["project_id"]
    client.post(
        f"/v1/projects/{pid}/ref_features",
        json={"feature_names": ["a", "b", "c"], "matrix": ref.tolist(), "detectors": ["pca"]},
        headers=hdr("owner"),
    )
    heat = encode_tensor((2, 2), np.ones(4, dtype=np.float32))
    import base64

    log_id = client.post(
        f"/v1/projects/{pid}/logs",
        json={
            "embedding": ref[0].tolist(),
            "heatmaps": {"cdam": base64.b64encode(heat).decode()},
        },
        headers=hdr("owner"),
    ).json()["log_id"]
    owner_token_hash = store.list_tokens("owner")[0].token_hash

    kwargs = {"json": None}
    attempts = [
        ("GET", f"/v1/projects/{pid}", None),
        ("DELETE", f"/v1/projects/{pid}", None),
        ("POST", f"/v1/projects/{pid}/ref_features",
         {"feature_names": ["a"], "matrix": [[0.0]] * 25, "refit": True}),
        ("POST", f"/v1/projects/{pid}/logs", {"embedding": [0.0, 0.0, 0.0]}),
        ("GET", f"/v1/projects/{pid}/summary", None),
        ("GET", f"/v1/projects/{pid}/logs", None),
        ("GET", f"/v1/projects/{pid}/export.csv", None),
        ("GET", f"/v1/logs/{log_id}", None),
        ("GET", f"/v1/logs/{log_id}/heatmap/cdam", None),
        ("DELETE", f"/v1/logs/{log_id}", None),
        ("POST", f"/v1/tokens/{owner_token_hash}/revoke", None),
    ]
    denied = 0
    for method, path, body in attempts:
        r = client.request(method, path, json=body, headers=hdr("intruder"))
        assert r.status_code in (403, 404), (method, path, r.status_code)
        denied += 1

    # no auth at all is rejected too
    for method, path, body in attempts:
        r = client.request(method, path, json=body)
        assert r.status_code == 401

    # owner state is fully intact
    assert client.get(f"/v1/logs/{log_id}", headers=hdr("owner")).status_code == 200
    summary = client.get(f"/v1/projects/{pid}/summary", headers=hdr("owner")).json()
    assert summary["total_samples"] == 1
    assert store.verify_token(tokens["owner"]) == "owner"
    store.close()
    report("Auth isolation", f"{denied} cross-user attempts denied; unauthenticated rejected")
