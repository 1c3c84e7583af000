"""Rollouts, the coverage-minus-penalty score, and success criteria."""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError, TaskError
from .geometry import RegionOfInterest
from .heightfield import HeightField
from .sim import EnvConfig, reset, step
from .taskgen import ScriptedExpert, build_path, project_to_surface

D_ACCEPT = 5.0
PENALTY_COEFF = 0.5
N_TARGETS = 200
EPISODE_STEPS = {"contour": 100, "raster": 150}


@dataclass(frozen=True)
class TargetSample:
    points: np.ndarray  # (N, 3), region frame


def sample_targets(region: RegionOfInterest, field: HeightField, kind: str, N: int = N_TARGETS,
                   seed: int = 0) -> TargetSample:
    """Area: uniform in the polygon by rejection. Contour: uniform arc-length partition from vertex 0."""
    if N < 1:
        raise ParameterError(f"N must be >= 1, got {N}")
    if region.area <= 1e-9 or region.perimeter <= 1e-9:
        raise TaskError("degenerate region")
    if kind == "contour":
        s = region.perimeter * np.arange(N) / N
        return TargetSample(project_to_surface(region.point_at(s), field))
    if kind not in ("raster", "area"):
        raise ParameterError(f"unknown target kind {kind!r}")
    rng = np.random.default_rng(seed)
    xmin, ymin, xmax, ymax = region.bounds
    found = []
    count = 0
    while count < N:
        cand = rng.uniform((xmin, ymin), (xmax, ymax), size=(2 * N, 2))
        ok = cand[region.contains(cand)]
        found.append(ok)
        count += len(ok)
    pts = np.concatenate(found)[:N]
    return TargetSample(project_to_surface(pts, field))


@dataclass
class RolloutTrace:
    positions: np.ndarray  # (M, 3) world frame
    local_positions: np.ndarray  # (M, 3) region frame at the time of each step
    surface_errors: np.ndarray  # (M,)
    actions: np.ndarray  # (M, 3)
    seed: int = 0
    task: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.positions)
        if not (len(self.local_positions) == len(self.surface_errors) == len(self.actions) == n):
            raise ParameterError("trace arrays disagree on length")

    def __len__(self) -> int:
        return len(self.positions)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "x", "y", "z", "surface_error", "local_x", "local_y", "local_z"])
        for i in range(len(self)):
            w.writerow([i, *map(repr, map(float, self.positions[i])), repr(float(self.surface_errors[i])),
                        *map(repr, map(float, self.local_positions[i]))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "RolloutTrace":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        pos = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows]).reshape(-1, 3)
        if rows and "local_x" in rows[0]:
            local = np.array([[float(r["local_x"]), float(r["local_y"]), float(r["local_z"])] for r in rows])
        else:
            local = pos.copy()
        err = np.array([float(r["surface_error"]) for r in rows])
        return cls(pos, local.reshape(-1, 3), err, np.full_like(pos, np.nan))


@dataclass(frozen=True)
class Metrics:
    coverage_pct: float
    penalty: float
    score: float


def coverage_score(trace: RolloutTrace, targets: TargetSample, d_accept: float = D_ACCEPT,
                   penalty_coeff: float = PENALTY_COEFF) -> Metrics:
    """Percentage of targets within ``d_accept`` of any visited position, minus ``penalty_coeff * mean|e|``."""
    if len(trace) == 0 or len(targets.points) == 0:
        raise ParameterError("coverage needs a non-empty trace and target set")
    p = trace.local_positions
    q = targets.points
    d2 = ((q[:, None, :] - p[None, :, :]) ** 2).sum(-1)
    reached = (d2.min(axis=1) <= d_accept**2).sum()
    coverage = 100.0 * float(reached) / len(q)
    penalty = penalty_coeff * float(np.mean(np.abs(trace.surface_errors)))
    return Metrics(coverage, penalty, coverage - penalty)


@dataclass(frozen=True)
class SuccessThresholds:
    min_coverage: float = 70.0
    max_contact_error: float = 10.0
    min_amplitude: float = 0.8


@dataclass
class SuccessReport:
    passed: bool
    reasons: list[str]
    coverage_pct: float
    max_abs_error: float
    amplitude: tuple[float, float]


def success_check(trace: RolloutTrace, region: RegionOfInterest, targets: TargetSample,
                  thresholds: SuccessThresholds = SuccessThresholds()) -> SuccessReport:
    metrics = coverage_score(trace, targets)
    max_err = float(np.max(np.abs(trace.surface_errors)))
    xmin, ymin, xmax, ymax = region.bounds
    lo = trace.local_positions[:, :2].min(0)
    hi = trace.local_positions[:, :2].max(0)
    amp = []
    for k, (rlo, rhi) in enumerate(((xmin, xmax), (ymin, ymax))):
        overlap = max(0.0, min(hi[k], rhi) - max(lo[k], rlo))
        amp.append(overlap / (rhi - rlo))
    reasons = []
    if metrics.coverage_pct < thresholds.min_coverage:
        reasons.append(f"coverage {metrics.coverage_pct:.1f}% below {thresholds.min_coverage}%")
    if max_err > thresholds.max_contact_error:
        reasons.append(f"contact error {max_err:.2f} mm exceeds {thresholds.max_contact_error} mm")
    if min(amp) < thresholds.min_amplitude:
        reasons.append(f"sweep amplitude {min(amp):.2f} below {thresholds.min_amplitude}")
    return SuccessReport(not reasons, reasons, metrics.coverage_pct, max_err, (amp[0], amp[1]))


class ExpertAgent:
    """Scripted expert that re-reads the region pose every step (privileged state)."""

    def __init__(self, tolerance: float = 1.0):
        self.tolerance = tolerance

    def begin(self, state) -> None:
        path = build_path(state.config.task, state.region, state.field, start=state.probe.position)
        self.expert = ScriptedExpert(path, self.tolerance)

    def __call__(self, observation, state) -> np.ndarray:
        local = state.region_pose.inverse_apply(observation.position[:2])
        target = self.expert(np.array([local[0], local[1], observation.position[2]]))
        xy = state.region_pose.apply(target[:2])
        return np.array([xy[0], xy[1], target[2]])


class PolicyAgent:
    def __init__(self, policy):
        self.policy = policy

    def begin(self, state) -> None:
        self.policy.reset()

    def __call__(self, observation, state) -> np.ndarray:
        return self.policy(observation)


def run_rollout(agent, config: EnvConfig, seed: int, max_steps: int | None = None) -> RolloutTrace:
    """Reset with ``seed`` and run ``agent`` for ``max_steps`` (task default when None)."""
    if max_steps is None:
        max_steps = EPISODE_STEPS[config.task.kind]
    state, obs = reset(config, seed)
    agent.begin(state)
    positions, local, errors, actions = [], [], [], []
    for i in range(max_steps):
        try:
            target = np.asarray(agent(obs, state), dtype=float)
            state, obs, contact = step(state, target)
        except Exception as exc:
            exc.args = (f"rollout seed {seed} step {i}: {exc}",) + exc.args[1:]
            raise
        positions.append(state.probe.position.copy())
        lxy = state.region_pose.inverse_apply(state.probe.position[:2])
        local.append([lxy[0], lxy[1], state.probe.position[2]])
        errors.append(contact.surface_error)
        actions.append(target)
    return RolloutTrace(np.array(positions), np.array(local), np.array(errors), np.array(actions),
                        seed, config.task.to_dict())


def evaluate_rollout(agent, config: EnvConfig, seed: int, max_steps: int | None = None,
                     n_targets: int = N_TARGETS) -> tuple[RolloutTrace, Metrics]:
    trace = run_rollout(agent, config, seed, max_steps)
    state, _ = reset(config, seed)
    targets = sample_targets(state.region, state.field, config.task.kind, n_targets, seed)
    return trace, coverage_score(trace, targets)


def evaluate(agent, config: EnvConfig, seeds, max_steps: int | None = None) -> list[tuple[int, Metrics]]:
    """Metrics per seed, sorted by seed."""
    return [(s, evaluate_rollout(agent, config, s, max_steps)[1]) for s in sorted(seeds)]


def metrics_csv(rows: list[tuple[int, Metrics]], path=None) -> str:
    lines = ["seed,coverage_pct,penalty,score"]
    lines += [f"{s},{m.coverage_pct!r},{m.penalty!r},{m.score!r}" for s, m in sorted(rows, key=lambda r: r[0])]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def summarize(rows: list[tuple[int, Metrics]]) -> dict[str, tuple[float, float]]:
    """Mean and sample standard deviation of each metric, reduced in seed order."""
    ordered = [m for _, m in sorted(rows, key=lambda r: r[0])]
    out = {}
    for name in ("coverage_pct", "penalty", "score"):
        vals = [getattr(m, name) for m in ordered]
        sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
        out[name] = (statistics.fmean(vals), sd)
    return out
