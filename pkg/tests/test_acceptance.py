"""Acceptance checks: ten numbered end-to-end criteria, each timed.

Every test prints one PASS line with its runtime; a failed assertion in
any of them is the corresponding FAIL.  Limits are generous on purpose:
they catch algorithmic blowups, not machine jitter.
"""
from __future__ import annotations

import json
import threading
import time
from fractions import Fraction

import numpy as np
import pytest
import uvicorn
from fastapi import FastAPI

from mstp.agents import CallContext, DecisionBackendDescriptor
from mstp.analysis import MarginalAccuracies, fit_accuracy_fid, mc_gap, predicted_fid, product_bound
from mstp.augment import AugmentConfig, augment_transitions, class_balance, compute_alpha, find_transitions
from mstp.dataset import SplitSpec, build_clips, clip_alignment, read_manifest, split_clips, write_manifest
from mstp.engine import RunSettings, evaluate_clips, write_trajectories
from mstp.errors import InvalidAgentOutput
from mstp.generation import GeneratorDescriptor
from mstp.images import save_image
from mstp.metrics.features import ActivationBlock, FeatureSet, fid, kid, lpips
from mstp.metrics.state import joint_state_metrics, state_metrics
from mstp.metrics.visual import psnr, ssim
from mstp.model import StateVector, make_time_grid
from mstp.sequences import AnnotatedSequence, Frame
from mstp.service.client import ProtocolClient
from mstp.service.remote import RemoteDecisionBackend
from mstp.service.server import MockBacking, serve_mock

from _synth import (
    clip_from_labels,
    permissive_schema,
    random_image,
    random_walk_labels,
    sequence_from_labels,
    two_level_schema,
)
from test_metrics_features import oracle_lpips
from test_metrics_state import assert_matches_oracle


def _finish(name: str, started: float, limit: float) -> None:
    elapsed = time.monotonic() - started
    assert elapsed < limit, f"{name} took {elapsed:.2f} s, limit {limit:g} s"
    print(f"{name}: PASS ({elapsed:.2f} s < {limit:g} s)")


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """50 disk-backed sequences cut into a 1,050-clip manifest."""
    root = tmp_path_factory.mktemp("corpus")
    schema = two_level_schema()
    clips = []
    for i in range(50):
        rng = np.random.default_rng(500 + i)
        labels = random_walk_labels(schema, 24, rng, change_prob=0.35)
        image_dir = root / f"vid{i:02d}"
        image_dir.mkdir()
        frames = []
        image_rng = np.random.default_rng(900 + i)
        for j, row in enumerate(labels):
            path = image_dir / f"{j:04d}.png"
            save_image(random_image(image_rng), str(path))
            frames.append(
                Frame(idx=j, state=StateVector(tuple(row), schema.digest),
                      image_path=str(path))
            )
        seq = AnnotatedSequence(sequence_id=f"vid{i:02d}", fps=1.0,
                                frames=tuple(frames))
        clips.extend(build_clips(seq, [4.0]))
    manifest = root / "clips.jsonl"
    write_manifest(clips, manifest)
    loaded = read_manifest(manifest, schema)
    assert len(loaded) == 1050
    return {"schema": schema, "clips": loaded, "root": root}


def test_criterion_01_product_bound() -> None:
    started = time.monotonic()
    rows = [
        ((57.1, 51.9, 49.9), 14.8, 44.8, 30.0),
        ((55.4, 43.8, 58.5), 14.2, 40.6, 26.4),
        ((54.9, 33.2, 58.8), 10.7, 36.2, 25.5),
    ]
    for marginals, pi_expected, mc, gap_expected in rows:
        pi = product_bound(MarginalAccuracies.of(*marginals))
        assert abs(pi - pi_expected) <= 0.05
        assert round(mc_gap(mc, pi), 1) == gap_expected
    _finish("criterion 1 (product bound)", started, 1.0)


def test_criterion_02_dataset_table() -> None:
    started = time.monotonic()
    schema = two_level_schema()
    rng = np.random.default_rng(0)
    seq = sequence_from_labels(
        schema, random_walk_labels(schema, 120, rng, 0.3), "seq120"
    )
    expected = {1.0: 2, 5.0: 6, 30.0: 31, 60.0: 61}
    clips = build_clips(seq, [1.0, 5.0, 30.0, 60.0], sample_fps=1.0)
    seen = set()
    for clip in clips:
        frames = len(clip.frames)
        states = sum(len(f.state.labels) for f in clip.frames)
        assert frames == expected[clip.horizon]
        assert states == 2 * frames
        seen.add((clip.horizon, frames, states))
    assert seen == {(1.0, 2, 4), (5.0, 6, 12), (30.0, 31, 62), (60.0, 61, 122)}
    train, test = split_clips(clips, SplitSpec.parse("10:1", seed=1))
    assert abs(len(test) - len(clips) / 11) <= 1
    _finish("criterion 2 (dataset table)", started, 5.0)


def test_criterion_03_indicator_gating() -> None:
    started = time.monotonic()
    worked = make_time_grid(60.0, 5.0, 30.0)
    assert worked.n_steps == 12
    outputs = [k for k in range(1, worked.n_steps + 1) if worked.is_output_point(k)]
    assert outputs == [6, 12]
    rng = np.random.default_rng(2)
    for _ in range(100):
        tau = float(rng.choice([0.25, 0.5, 1.0, 2.0, 2.5, 5.0]))
        ratio = int(rng.integers(1, 11))
        n_coarse = int(rng.integers(1, 16))
        grid = make_time_grid(tau * ratio * n_coarse, tau, tau * ratio)
        outputs = [k for k in range(1, grid.n_steps + 1) if grid.is_output_point(k)]
        assert outputs == [ratio * i for i in range(1, n_coarse + 1)]
        assert grid.n_output_points == n_coarse
    _finish("criterion 3 (indicator gating)", started, 1.0)


def test_criterion_04_oracle_closure(corpus) -> None:
    started = time.monotonic()
    schema, clips = corpus["schema"], corpus["clips"]
    assert len(clips) >= 1000
    closure = evaluate_clips(
        schema, clips,
        RunSettings(
            incremental_scale=1.0, temporal_scale=2.0,
            dm=DecisionBackendDescriptor("ground_truth"),
            vg=GeneratorDescriptor("passthrough"),
        ),
    )
    assert all(o.report.objective == 1.0 for o in closure.outcomes)
    assert closure.aggregate_objective == 1.0

    constant = evaluate_clips(
        schema, clips,
        RunSettings(
            incremental_scale=1.0, temporal_scale=2.0,
            dm=DecisionBackendDescriptor("scripted", {"table": ""}),
            vg=GeneratorDescriptor("identity"),
        ),
    )
    by_id = {o.clip_id: o for o in constant.outcomes}
    expected_sum = 0.0
    for clip in clips:
        truth = clip_alignment(clip, 1.0)
        grid = make_time_grid(clip.horizon, 1.0, 2.0)
        hits = [
            truth.state_at(k).labels == truth.state_at(0).labels
            for k in range(1, grid.n_steps + 1)
            if grid.is_output_point(k)
        ]
        analytic = sum(hits) / len(hits)
        assert by_id[clip.clip_id].report.objective == analytic
        expected_sum += analytic
    assert constant.aggregate_objective == pytest.approx(
        expected_sum / len(clips), abs=1e-12
    )
    _finish("criterion 4 (oracle closure)", started, 30.0)


def test_criterion_05_independence_law() -> None:
    started = time.monotonic()
    schema = permissive_schema(3, fanout=2)
    clips = [
        clip_from_labels(
            schema,
            [(f"l1v{k % 2}", f"l2v{k % 2}", f"l3v{k % 2}") for k in range(91)],
            clip_id=f"c{i:03d}",
            image_seed=i,
        )
        for i in range(120)
    ]
    result = evaluate_clips(
        schema, clips,
        RunSettings(
            incremental_scale=1.0, temporal_scale=1.0,
            dm=DecisionBackendDescriptor(
                "noisy",
                {"probabilities": (0.3, 0.4, 0.5), "mode": "independent", "seed": 11},
            ),
            vg=GeneratorDescriptor("identity"),
        ),
    )
    points = sum(len(o.report.indicators) for o in result.outcomes)
    assert points >= 10_000
    measured = 100.0 * result.aggregate_objective
    target = 100.0 * (0.7 * 0.6 * 0.5)
    sigma = 100.0 * float(np.sqrt(0.21 * 0.79 / points))
    assert abs(measured - target) <= 3.0 * sigma, (
        f"joint accuracy {measured:.2f}% outside 21.0% +- {3 * sigma:.2f}%"
    )
    _finish("criterion 5 (independence law)", started, 120.0)


def test_criterion_06_state_metric_oracle() -> None:
    started = time.monotonic()
    rng = np.random.default_rng(6)
    alphabet = ["a", "b", "c", "d", "e"]
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        k = int(rng.integers(1, len(alphabet) + 1))
        pred = [alphabet[i] for i in rng.integers(0, k, size=n)]
        truth = [alphabet[i] for i in rng.integers(0, k, size=n)]
        assert_matches_oracle(state_metrics(pred, truth), pred, truth)
    for _ in range(200):
        n = int(rng.integers(1, 20))
        pred_rows = [
            (alphabet[i], alphabet[j])
            for i, j in zip(rng.integers(0, 2, n), rng.integers(0, 3, n))
        ]
        truth_rows = [
            (alphabet[i], alphabet[j])
            for i, j in zip(rng.integers(0, 2, n), rng.integers(0, 3, n))
        ]
        report = joint_state_metrics(
            [StateVector(r, "s") for r in pred_rows],
            [StateVector(r, "s") for r in truth_rows],
        )
        assert_matches_oracle(report, pred_rows, truth_rows,
                              name=lambda c: "/".join(c))
    hand = state_metrics(["a", "a", "b", "c"], ["a", "b", "b", "b"])
    assert hand.accuracy == pytest.approx(50.0, abs=1e-9)
    assert hand.macro.f1 == pytest.approx(float(Fraction(350, 9)), abs=1e-9)
    assert hand.macro.jaccard == pytest.approx(float(Fraction(250, 9)), abs=1e-9)
    _finish("criterion 6 (state metric oracle)", started, 30.0)


def test_criterion_07_visual_metric_properties() -> None:
    started = time.monotonic()
    rng = np.random.default_rng(7)
    image = random_image(rng, 24, 24, 3)
    assert psnr(image, image) == float("inf")
    assert ssim(image, image) == pytest.approx(1.0, abs=1e-9)

    data = rng.standard_normal((400, 8))
    assert fid(FeatureSet(data), FeatureSet(data.copy())) <= 1e-6

    shift_rng = np.random.default_rng(2024)
    mu = np.full(8, 3.0 / np.sqrt(8.0))
    x = shift_rng.standard_normal((10_000, 8))
    y = shift_rng.standard_normal((10_000, 8)) + mu
    value = fid(FeatureSet(x), FeatureSet(y))
    target = float(mu @ mu)
    assert abs(value - target) <= 0.05 * target

    kid_values = []
    for rep in range(16):
        pool = np.random.default_rng(3000 + rep).standard_normal((1000, 6))
        kid_values.append(kid(FeatureSet(pool[:500]), FeatureSet(pool[500:])))
    kid_values = np.array(kid_values)
    se = kid_values.std(ddof=1) / np.sqrt(len(kid_values))
    assert abs(kid_values.mean()) <= 3.0 * se

    shapes = [(3, 5, 6), (4, 3, 3)]
    a = tuple(ActivationBlock(f"conv{i}", rng.standard_normal(s))
              for i, s in enumerate(shapes))
    b = tuple(ActivationBlock(f"conv{i}", rng.standard_normal(s))
              for i, s in enumerate(shapes))
    assert lpips(a, b) == pytest.approx(
        oracle_lpips(a, b, [1.0, 1.0]), abs=1e-9
    )
    _finish("criterion 7 (visual metric properties)", started, 60.0)


def test_criterion_08_augmentation_balance() -> None:
    started = time.monotonic()
    schema = two_level_schema()
    rng = np.random.default_rng(8)
    for case in range(20):
        eps = int(rng.integers(1, 4))
        sparsity = int(rng.integers(50, 500))
        extra = int(rng.integers(0, eps))
        n_steps = eps * (sparsity + 1) + extra
        change_at = set(
            int(v) for v in rng.choice(np.arange(1, n_steps), size=eps,
                                       replace=False)
        )
        labels = []
        current = ("prep", "idle")
        for pos in range(n_steps + 1):
            if pos in change_at:
                current = (
                    ("prep", "setup") if current == ("prep", "idle")
                    else ("prep", "idle")
                )
            labels.append(current)
        seq = sequence_from_labels(schema, labels, f"sparse{case}",
                                   image_seed=case)
        grid = make_time_grid(float(n_steps), 1.0, 1.0)
        idx = find_transitions(seq, grid)
        assert idx.count == eps
        alpha = compute_alpha(idx.n_steps, idx.count)
        balance = class_balance(idx.n_steps, idx.count, alpha)
        assert 0.9 <= balance <= 1.1, (
            f"balance {balance:.3f} at sparsity {sparsity}:1"
        )
        samples = augment_transitions(
            seq, idx, AugmentConfig(alpha=2, delta_tau_max=0, eps_img=0.0)
        )
        for sample in samples:
            source = seq.frame_image(sample.provenance.source_k - 1)
            assert sample.image.pixels.tobytes() == source.pixels.tobytes()
            assert sample.anchor_k == sample.provenance.source_k
    _finish("criterion 8 (augmentation balance)", started, 30.0)


def test_criterion_09_protocol_transparency(corpus) -> None:
    started = time.monotonic()
    schema = corpus["schema"]
    clips = corpus["clips"][:50]
    dm = DecisionBackendDescriptor(
        "noisy", {"probabilities": (0.2, 0.3), "mode": "independent", "seed": 5}
    )
    vg = GeneratorDescriptor("noise", {"sigma": 2.0, "seed": 7})
    local = evaluate_clips(
        schema, clips,
        RunSettings(incremental_scale=1.0, temporal_scale=2.0, dm=dm, vg=vg),
    )
    backing = MockBacking(
        schema=schema, decision=dm, generator=vg,
        clips={c.clip_id: c for c in clips},
    )
    handle = serve_mock(backing)
    try:
        with ProtocolClient(handle.base_url) as client:
            remote = evaluate_clips(
                schema, clips,
                RunSettings(
                    incremental_scale=1.0, temporal_scale=2.0,
                    dm=DecisionBackendDescriptor("remote"),
                    vg=GeneratorDescriptor("remote"),
                ),
                client=client,
            )
    finally:
        handle.stop()
    local_dump = corpus["root"] / "local.jsonl"
    remote_dump = corpus["root"] / "remote.jsonl"
    write_trajectories(local, local_dump)
    write_trajectories(remote, remote_dump)
    assert local_dump.read_bytes() == remote_dump.read_bytes()
    assert remote.aggregate_objective == local.aggregate_objective

    app = FastAPI()
    hits = {"predict": 0}

    @app.post("/v1/predict/{level}")
    def predict(level: int, body: dict):
        hits["predict"] += 1
        return {"label": "not-a-real-label"}

    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="critical",
                            access_log=False)
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    while not server.started:
        time.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]
    try:
        with ProtocolClient(f"http://127.0.0.1:{port}") as client:
            backend = RemoteDecisionBackend(client, schema)
            with pytest.raises(InvalidAgentOutput):
                backend.predict(
                    CallContext(clip_id="c", step_k=1), 1, ("prep", "idle"),
                    ("prep", "work"), random_image(np.random.default_rng(0)),
                )
        assert hits["predict"] == 1
    finally:
        server.should_exit = True
        thread.join(timeout=10)
    _finish("criterion 9 (protocol transparency)", started, 60.0)


def test_criterion_10_regression_fit(tmp_path) -> None:
    started = time.monotonic()
    points = [(float(x), 100.0 - 2.0 * x) for x in range(10, 100, 10)]
    fit = fit_accuracy_fid(points)
    assert fit.pearson_r == -1.0
    assert fit.intercept == pytest.approx(100.0, abs=1e-9)
    assert fit.slope == pytest.approx(2.0, abs=1e-9)
    for x, y in points:
        assert abs(predicted_fid(fit, x) - y) < 1e-9
    two_point = fit_accuracy_fid([(43.3, 70.63), (40.58, 94.82)])
    assert two_point.pearson_r < 0
    _finish("criterion 10 (regression fit)", started, 10.0)
