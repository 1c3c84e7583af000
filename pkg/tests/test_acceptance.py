"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Criteria 6, 7 and 10 train real policies and dominate the runtime (tens of
minutes on one CPU core). They share trained models through module fixtures.
"""

from __future__ import annotations

import math
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest
import torch

from mact.dataset import pad_history, record_episode
from mact.embed import temporal_pe
from mact.evaluation import ExpertAgent, PolicyAgent, evaluate
from mact.net import MACT, ModelConfig, TrainConfig, batch_tensors, compute_loss, grad, loss, tiny_config, train
from mact.policy import EnsembleConfig, Policy, aggregate, ensemble_weights
from mact.sim import Disturbance, EnvConfig
from mact.taskgen import TaskSpec

# Shared settings for the learned-policy criteria (6, 7, 10).
RESOLUTION = 32
N_EPISODES = 50
DATA_SEED = 10_000
TRAIN_SEEDS = (0, 1, 2)
EVAL_SEEDS = range(10)
STEPS_PER_EPOCH = 100
EPOCHS = 40
LR = 5e-4
RASTER = EnvConfig(resolution=RESOLUTION, task=TaskSpec(kind="raster"))


def model_config(T: int, use_pos_embed: bool = True) -> ModelConfig:
    return ModelConfig(T=T, K=5, image_size=RESOLUTION, channels=(16, 32, 64), use_pos_embed=use_pos_embed)


def hyper() -> TrainConfig:
    return TrainConfig(epochs=EPOCHS, steps_per_epoch=STEPS_PER_EPOCH, lr=LR)


def mean_score(model: MACT, config: EnvConfig = RASTER) -> float:
    rows = evaluate(PolicyAgent(Policy(model, EnsembleConfig(mode="chunked"))), config, EVAL_SEEDS)
    return float(np.mean([m.score for _, m in rows]))


@pytest.fixture(scope="module")
def raster_episodes():
    return [record_episode(RASTER, DATA_SEED + i) for i in range(N_EPISODES)]


@pytest.fixture(scope="module")
def memory_runs(raster_episodes):
    """MACT (T=15) and single-frame (T=1) runs per training seed, with wall time."""
    t0 = time.time()
    runs = {}
    for T in (15, 1):
        for seed in TRAIN_SEEDS:
            result = train(raster_episodes, model_config(T), hyper(), seed=seed)
            runs[(T, seed)] = (result, mean_score(result.model))
    return runs, time.time() - t0


# 1 ---------------------------------------------------------------------------
def test_c1_expert_scores(acceptance_report):
    t0 = time.time()
    scores = {}
    for kind in ("contour", "raster"):
        rows = evaluate(ExpertAgent(), EnvConfig(task=TaskSpec(kind=kind)), range(10))
        scores[kind] = min(m.score for _, m in rows)
    elapsed = time.time() - t0
    ok = scores["contour"] >= 90 and scores["raster"] >= 85 and elapsed < 10
    acceptance_report(1, "scripted-expert scores", ok,
                      f"min contour {scores['contour']:.2f} (>= 90), min raster {scores['raster']:.2f} (>= 85), "
                      f"{elapsed:.1f}s (< 10s)")
    assert ok


# 2 ---------------------------------------------------------------------------
def test_c2_gradient_check(acceptance_report):
    t0 = time.time()
    model = MACT(tiny_config(), seed=0).double()
    model.reset_parameters(0, zero_head=False)  # a zero head would zero every upstream gradient
    c = model.config
    rng = np.random.default_rng(0)
    from mact.dataset import Batch

    pos = rng.normal(size=(2, 3))
    batch = Batch(
        rgb=rng.uniform(size=(2, c.T, 3, 8, 8)),
        depth=rng.uniform(50, 70, size=(2, c.T, 1, 8, 8)),
        position=pos,
        target=pos[:, None] + rng.normal(size=(2, c.K, 3)),
        mask=np.array([[True, True], [True, False]]),
    )
    eps = torch.from_numpy(rng.normal(size=(2, c.z_dim)))
    analytic = grad(model, batch, eps)
    tensors = batch_tensors(model, batch)
    h = 1e-5
    worst, worst_name, count = 0.0, "", 0
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            g = analytic[name].reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = compute_loss(model, tensors, eps)[0].item()
                flat[i] = orig - h
                down = compute_loss(model, tensors, eps)[0].item()
                flat[i] = orig
                fd = (up - down) / (2 * h)
                rel = abs(g[i] - fd) / max(abs(g[i]), abs(fd), 1e-6)
                count += 1
                if rel > worst:
                    worst, worst_name = rel, name
    elapsed = time.time() - t0
    ok = worst < 1e-4 and elapsed < 60
    acceptance_report(2, "gradient check", ok,
                      f"{count} entries, max rel err {worst:.2e} ({worst_name}) (< 1e-4), {elapsed:.1f}s (< 60s)")
    assert ok


# 3 ---------------------------------------------------------------------------
def test_c3_temporal_pe(acceptance_report):
    T, d = 32, 64
    pe = temporal_pe(T, d)
    direct = np.empty((T, d))
    for t in range(T):
        for k in range(d):
            arg = t / 10000.0 ** ((2 * (k // 2)) / d)
            direct[t, k] = math.sin(arg) if k % 2 == 0 else math.cos(arg)
    err = float(np.max(np.abs(pe - direct)))
    row0 = bool(np.all(pe[0, 0::2] == 0.0) and np.all(pe[0, 1::2] == 1.0))
    ok = err <= 1e-12 and row0
    acceptance_report(3, "temporal PE conformance", ok, f"max abs err {err:.1e} (<= 1e-12), row 0 exact {row0}")
    assert ok


# 4 ---------------------------------------------------------------------------
def test_c4_ensemble(acceptance_report):
    rng = np.random.default_rng(0)
    failures = []
    for case in range(100):
        n = int(rng.integers(1, 11))
        alpha = float(rng.uniform(0, 10))
        cands = rng.uniform(-50, 50, size=(n, 3))
        w = ensemble_weights(n, alpha)
        if abs(w.sum() - 1.0) > 1e-9:
            failures.append(f"case {case}: weights sum {w.sum()}")
        if not np.allclose(aggregate(cands, 0.0), cands.mean(0), atol=1e-12):
            failures.append(f"case {case}: alpha=0 is not the mean")
        if np.max(np.abs(aggregate(cands, 50.0) - cands[0])) >= 1e-6:
            failures.append(f"case {case}: alpha=50 is not the oldest candidate")
        out = aggregate(cands, alpha)
        if np.any(out < cands.min(0) - 1e-9) or np.any(out > cands.max(0) + 1e-9):
            failures.append(f"case {case}: outside the candidate hull")
    ok = not failures
    acceptance_report(4, "ensemble properties", ok, f"100 cases, {len(failures)} failures {failures[:3]}")
    assert ok


# 5 ---------------------------------------------------------------------------
def test_c5_kl_monte_carlo(acceptance_report):
    rng = np.random.default_rng(0)
    z_dim, n = 4, 1_000_000
    worst = 0.0
    for _ in range(5):
        mu = rng.normal(size=z_dim)
        logvar = rng.uniform(-1.0, 1.0, size=z_dim)
        zero = np.zeros((1, 1, 3))
        closed = loss(zero, zero, np.ones((1, 1), bool), torch.from_numpy(mu[None]),
                      torch.from_numpy(logvar[None]))[1]["kl"].item()
        std = np.exp(0.5 * logvar)
        z = mu + std * rng.normal(size=(n, z_dim))
        log_q = -0.5 * (((z - mu) / std) ** 2 + logvar + math.log(2 * math.pi)).sum(1)
        log_p = -0.5 * (z**2 + math.log(2 * math.pi)).sum(1)
        mc = float(np.mean(log_q - log_p))
        worst = max(worst, abs(mc - closed) / closed)
    ok = worst < 0.01
    acceptance_report(5, "KL oracle", ok, f"max relative gap {worst:.2e} over 5 pairs (< 1e-2)")
    assert ok


# 6 ---------------------------------------------------------------------------
def test_c6_memory_ordering(memory_runs, acceptance_report):
    runs, elapsed = memory_runs
    mact = [runs[(15, s)][1] for s in TRAIN_SEEDS]
    act = [runs[(1, s)][1] for s in TRAIN_SEEDS]
    gap = float(np.median(mact) - np.median(act))
    ok = gap >= 5.0 and elapsed <= 3600
    acceptance_report(6, "memory ordering", ok,
                      f"median MACT {np.median(mact):.1f} {np.round(mact, 1).tolist()} vs ACT {np.median(act):.1f} "
                      f"{np.round(act, 1).tolist()}, gap {gap:.1f} (>= 5), {elapsed / 60:.1f} min (<= 60)")
    assert ok


# 7 ---------------------------------------------------------------------------
def test_c7_pe_ablation(memory_runs, raster_episodes, acceptance_report):
    runs, _ = memory_runs
    with_pe, without_pe = [], []
    for seed in TRAIN_SEEDS:
        with_pe.append(runs[(15, seed)][0].final_loss)
        without_pe.append(train(raster_episodes, model_config(15, use_pos_embed=False), hyper(), seed=seed).final_loss)
    wins = sum(a < b for a, b in zip(with_pe, without_pe))
    ok = wins >= 2
    acceptance_report(7, "hybrid PE ablation", ok,
                      f"final loss with PE {np.round(with_pe, 4).tolist()} vs without {np.round(without_pe, 4).tolist()}, "
                      f"lower on {wins}/3 seeds (>= 2)")
    assert ok


# 8 ---------------------------------------------------------------------------
def test_c8_padding(acceptance_report):
    checked = 0
    for T in range(1, 9):
        for n in range(1, T + 1):
            buf = [f"o{i}" for i in range(n)]
            out = pad_history(buf, T)
            assert out == [buf[0]] * (T - n) + buf
            assert pad_history(out, T) == out
            assert out[T - n:] == buf
            checked += 1
    assert pad_history(["x"], 3) == ["x", "x", "x"]
    acceptance_report(8, "padding semantics", True, f"{checked} (T, length) cases exhaustively, T <= 8")


# 9 ---------------------------------------------------------------------------
def test_c9_end_to_end_determinism(tmp_path, acceptance_report):
    import json

    (tmp_path / "env.json").write_text(json.dumps({"resolution": 16, "task": {"kind": "raster"}}))
    (tmp_path / "model.json").write_text(json.dumps(dict(
        d_model=16, n_heads=2, n_enc_layers=1, n_dec_layers=1, dim_feedforward=32, T=3, K=3, z_dim=4,
        image_size=16, feature_size=2, channels=[8, 8, 16], style_hidden=16)))

    def pipeline(run_dir):
        cli = [sys.executable, "-m", "mact.cli"]
        steps = [
            ["gen-data", "--env-config", str(tmp_path / "env.json"), "--episodes", "3", "--seed", "5",
             "--out", str(run_dir / "data")],
            ["train", "--manifest", str(run_dir / "data" / "manifest.json"), "--model-config",
             str(tmp_path / "model.json"), "--epochs", "5", "--steps-per-epoch", "4", "--batch-size", "4",
             "--augment", "--seed", "3", "--out", str(run_dir / "run")],
            ["eval", "--env-config", str(tmp_path / "env.json"), "--checkpoint",
             str(run_dir / "run" / "checkpoint.npz"), "--rollouts", "3", "--mode", "ensemble",
             "--out", str(run_dir / "metrics.csv")],
        ]
        for args in steps:
            subprocess.run(cli + args, check=True, capture_output=True)
        return (run_dir / "metrics.csv").read_bytes()

    a = pipeline(tmp_path / "a")
    b = pipeline(tmp_path / "b")
    ok = a == b and len(a.splitlines()) == 4
    acceptance_report(9, "end-to-end determinism", ok, f"metrics CSV identical: {a == b} ({len(a)} bytes)")
    assert ok


# 10 --------------------------------------------------------------------------
def test_c10_disturbance(memory_runs, acceptance_report):
    runs, _ = memory_runs
    shifted = replace(RASTER, disturbances=(Disturbance(step_index=50, dx=10.0, dy=0.0, dtheta=0.0),))
    details, ok = [], True
    for seed in TRAIN_SEEDS:
        result, static = runs[(15, seed)]
        moved = mean_score(result.model, shifted)  # raises on any numeric failure in the rollout
        degraded = (static - moved) / abs(static) if static else 0.0
        ok &= degraded < 0.5
        details.append(f"seed {seed}: {static:.1f} -> {moved:.1f}")
    acceptance_report(10, "disturbance robustness", ok, "; ".join(details) + " (degradation < 50%)")
    assert ok
