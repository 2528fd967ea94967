"""Input validation and seeding helpers shared across modules."""

from __future__ import annotations

import numpy as np


def n_steps_for(duration: float, dt: float, rel_tol: float = 1e-9) -> int:
    """Number of ``dt`` steps in ``duration``; rejects non-integral ratios."""
    if not (dt > 0):
        raise ValueError(f"dt must be positive, got {dt!r}")
    if not (duration >= 0):
        raise ValueError(f"duration must be non-negative, got {duration!r}")
    ratio = duration / dt
    n = int(round(ratio))
    if abs(ratio - n) > rel_tol * max(1.0, ratio):
        raise ValueError(f"duration={duration} is not an integer multiple of dt={dt}")
    return n


def checkpoint_steps(n_steps: int, dt: float, interval: float | None) -> np.ndarray:
    """Step indices ``0, m, 2m, ..`` up to ``n_steps`` with ``m = interval / dt``.

    The last step is always included. ``interval=None`` keeps every step.
    """
    if interval is None:
        every = 1
    else:
        every = n_steps_for(interval, dt)
        if every == 0:
            raise ValueError("checkpoint interval must be at least one step")
    steps = np.arange(0, n_steps + 1, every, dtype=np.int64)
    if steps[-1] != n_steps:
        steps = np.append(steps, n_steps)
    return steps


def record_seed(master_seed: int, index: int) -> int:
    """Independent 63-bit seed for record ``index`` of an ensemble."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def prior_rng(seed: int) -> np.random.Generator:
    """Stream for drawing a record's true Rabi frequency, disjoint from its noise."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(1,)))


def check_positive(name: str, value) -> float:
    value = float(value)
    if not (value > 0) or not np.isfinite(value):
        raise ValueError(f"{name} must be positive and finite, got {value!r}")
    return value
