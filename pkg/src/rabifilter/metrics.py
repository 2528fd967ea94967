"""Knowledge measures and the ensemble experiment.

An ensemble draws a true Rabi frequency from the prior for every record,
simulates the record, filters it on the grid and averages posterior
variance, information gain and best-estimate purity across records.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bloch import BlochState, RabiGrid, SystemParams, build_grid, sample_prior, steady_state
from .filter import FilterTrace, Posterior, init_filter, run_filter
from .operators import SchemeConfig
from .trajectory import MeasurementRecord, simulate_record
from .utils import checkpoint_steps, n_steps_for, prior_rng, record_seed

STATS_COLUMNS = ["time", "p_mean", "p_se", "V_mean", "V_se", "dI_mean", "dI_se", "n"]


def _moments(weights: np.ndarray, points: np.ndarray):
    mean = weights @ points
    return mean, weights @ (points * points) - mean * mean


def posterior_variance(post: Posterior | np.ndarray, points: np.ndarray | None = None):
    """``sum w W^2 - (sum w W)^2``; accepts a Posterior or ``(..., G)`` weights."""
    if isinstance(post, Posterior):
        return float(_moments(post.weights, post.grid.points)[1])
    return _moments(np.asarray(post), np.asarray(points))[1]


def _neg_entropy(w: np.ndarray, cells: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(w > 0, w * np.log2(w / cells), 0.0)
    return terms.sum(axis=-1)


def info_gain(post: Posterior | np.ndarray, prior: RabiGrid) -> float | np.ndarray:
    """Entropy drop in bits from ``prior`` to ``post``.

    Masses are converted to densities with the grid cell widths, so this is
    a difference of differential entropies over the Rabi frequency.
    """
    w = post.weights if isinstance(post, Posterior) else np.asarray(post)
    if w.shape[-1] != len(prior):
        raise ValueError("posterior and prior must share a grid")
    gain = _neg_entropy(w, prior.cells) - _neg_entropy(prior.weights, prior.cells)
    return float(gain) if np.ndim(gain) == 0 else gain


@dataclass(frozen=True)
class RecordSummary:
    """Per-record series at the checkpoint times."""

    index: int
    seed: int
    omega_true: float
    purity: np.ndarray
    variance: np.ndarray
    mean: np.ndarray
    info_gain: np.ndarray
    jumps: np.ndarray | None
    first_jump: float | None
    n_clamped: int


@dataclass(frozen=True)
class EnsembleStats:
    """Ensemble means and standard errors at the checkpoint times.

    ``samples`` keeps the per-record series; ``kept`` holds full records and
    traces for the first few records when requested.
    """

    times: np.ndarray
    mean_purity: np.ndarray
    se_purity: np.ndarray
    mean_variance: np.ndarray
    se_variance: np.ndarray
    mean_info_gain: np.ndarray
    se_info_gain: np.ndarray
    n_records: int
    samples: list[RecordSummary] = field(default_factory=list, repr=False, compare=False)
    kept: list[tuple[MeasurementRecord, FilterTrace]] = field(default_factory=list, repr=False, compare=False)

    def series(self, name: str) -> np.ndarray:
        """Stack a per-record field into ``(n_records, C)``."""
        return np.stack([getattr(s, name) for s in self.samples])

    def at(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9:
            raise KeyError(f"no checkpoint at t={t}")
        return i


class EnsembleError(RuntimeError):
    pass


def _mean_se(x: np.ndarray):
    n = x.shape[0]
    return x.mean(axis=0), x.std(axis=0, ddof=1) / np.sqrt(n)


def run_one(index: int, scheme: SchemeConfig, params: SystemParams, grid: RabiGrid,
            policy: str, duration: float, dt: float, master_seed: int,
            checkpoint_interval: float, epsilon: float | None, keep: bool = False):
    """Simulate and filter record ``index`` of an ensemble."""
    seed = record_seed(master_seed, index)
    omega = float(sample_prior(params, prior_rng(seed)))
    start = steady_state(omega, params) if policy == "steady" else BlochState.ground()
    rec = simulate_record(omega, start, scheme, duration, dt, seed, params)
    fs = init_filter(grid, scheme, params, dt, policy, epsilon)
    _, trace = run_filter(fs, rec, None, checkpoint_interval)
    mean, var = _moments(trace.weights, grid.points)
    jumps, first = None, None
    if scheme.kind.is_jump:
        cum = np.concatenate(([0], np.cumsum(rec.outcomes, dtype=np.int64)))
        jumps = cum[np.rint(trace.times / dt).astype(np.int64)]
        clicks = np.flatnonzero(rec.outcomes)
        # end time of the step that carried the first click
        first = float((clicks[0] + 1) * dt) if clicks.size else None
    summary = RecordSummary(index, seed, omega, trace.best_purity, var, mean,
                            info_gain(trace.weights, grid), jumps, first, rec.n_clamped)
    return summary, ((rec, trace) if keep else None)


def ensemble_run(scheme: SchemeConfig, params: SystemParams = SystemParams(), policy: str = "steady",
                 n_records: int = 100, duration: float = 50.0, dt: float = 1e-3, n_grid: int = 201,
                 master_seed: int = 0, checkpoint_interval: float = 0.1,
                 epsilon: float | None = None, threads: int | None = None,
                 keep_records: int = 0) -> EnsembleStats:
    """Run an ensemble and reduce it in record order.

    Results depend only on the arguments, not on ``threads``.
    """
    if n_records < 2:
        raise ValueError("n_records must be at least 2")
    if policy not in ("steady", "ground"):
        raise ValueError(f"unknown initial-state policy {policy!r}")
    n_steps_for(duration, dt)
    grid = build_grid(params, n_grid)
    threads = threads or os.cpu_count() or 1

    def work(i):
        try:
            return run_one(i, scheme, params, grid, policy, duration, dt, master_seed,
                           checkpoint_interval, epsilon, keep=i < keep_records)
        except Exception as exc:
            raise EnsembleError(f"record {i} (seed {record_seed(master_seed, i)}) failed: {exc}") from exc

    if threads == 1:
        results = [work(i) for i in range(n_records)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(n_records)))
    samples = [r[0] for r in results]
    kept = [r[1] for r in results if r[1] is not None]
    p_m, p_s = _mean_se(np.stack([s.purity for s in samples]))
    v_m, v_s = _mean_se(np.stack([s.variance for s in samples]))
    i_m, i_s = _mean_se(np.stack([s.info_gain for s in samples]))
    times = checkpoint_steps(n_steps_for(duration, dt), dt, checkpoint_interval) * dt
    return EnsembleStats(times, p_m, p_s, v_m, v_s, i_m, i_s, n_records, samples, kept)


def write_stats(stats: EnsembleStats, path) -> None:
    """CSV with columns ``time,p_mean,p_se,V_mean,V_se,dI_mean,dI_se,n``."""
    cols = [stats.times, stats.mean_purity, stats.se_purity, stats.mean_variance,
            stats.se_variance, stats.mean_info_gain, stats.se_info_gain]
    lines = [",".join(STATS_COLUMNS)]
    for row in zip(*(c.tolist() for c in cols)):
        lines.append(",".join(repr(v) for v in row) + f",{stats.n_records}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_stats(path) -> EnsembleStats:
    lines = Path(path).read_text().splitlines()
    if lines[0].split(",") != STATS_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {lines[0]!r}")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(STATS_COLUMNS))
    return EnsembleStats(*(data[:, i] for i in range(7)), n_records=int(data[0, 7]))
