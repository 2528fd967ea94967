"""Grid Bayesian filter built on linear (unnormalised) quantum trajectories.

Each grid point carries its own conditioned state, propagated with the
measurement operators divided by an ostensible outcome probability. The norm
of that linear state is, up to a factor common to all grid points, the
likelihood of the record. We store the normalised Bloch vector and the log of
the norm separately so long records never under- or overflow.

Ostensible probabilities: ``eps dt`` for a detection and ``1 - eps dt``
otherwise (jump schemes). For diffusive schemes the Gaussian reference
measure is the same for every grid point and is left out entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from . import _kernels
from .bloch import BLOCH_TOL, BlochState, RabiGrid, SystemParams, build_grid, purity, steady_states
from .operators import Scheme, SchemeConfig, current_coefficients, grid_transfers
from .trajectory import MeasurementRecord, ObservedRecord
from .utils import checkpoint_steps, n_steps_for

TRACE_FORMAT = "rabifilter-trace-v1"


class ZeroLikelihoodError(ValueError):
    """Every grid point assigns the record zero probability."""


def initial_states(grid: RabiGrid, params: SystemParams, policy="steady") -> np.ndarray:
    """Per-branch starting Bloch vectors, shape ``(G, 3)``.

    ``policy`` is ``"steady"`` (each branch at its own steady state),
    ``"ground"``, or an explicit Bloch vector shared by all branches.
    """
    g = len(grid)
    if isinstance(policy, str):
        if policy == "steady":
            return steady_states(grid.points, params)
        if policy == "ground":
            return np.tile([0.0, 0.0, -1.0], (g, 1))
        raise ValueError(f"unknown initial-state policy {policy!r}")
    v = BlochState.from_array(policy.as_array() if isinstance(policy, BlochState) else policy)
    return np.tile(v.as_array(), (g, 1))


@dataclass
class FilterState:
    """Per-grid-point normalised states with accumulated log norms.

    Dead branches (zero likelihood) have ``alive=False`` and
    ``log_norm=-inf``.
    """

    grid: RabiGrid
    scheme: SchemeConfig
    params: SystemParams
    dt: float
    states: np.ndarray
    log_norm: np.ndarray
    alive: np.ndarray
    epsilon: float | None = None
    step: int = 0
    n_clamped: int = 0
    _ops: tuple = field(default=None, repr=False, compare=False)

    def copy(self) -> "FilterState":
        return replace(self, states=self.states.copy(), log_norm=self.log_norm.copy(),
                       alive=self.alive.copy())

    @property
    def time(self) -> float:
        return self.step * self.dt


def init_filter(grid: RabiGrid, scheme: SchemeConfig, params: SystemParams = SystemParams(),
                dt: float = 1e-3, initial="steady", epsilon: float | None = None) -> FilterState:
    """Fresh filter with ``log_norm = 0`` for every grid point.

    ``epsilon`` is the ostensible detection rate for jump schemes and defaults
    to ``gamma / 4``. It cancels from the posterior.
    """
    if scheme.kind.is_jump:
        epsilon = params.gamma / 4 if epsilon is None else float(epsilon)
        if not (0 < epsilon * dt < 1):
            raise ValueError(f"need 0 < epsilon*dt < 1, got {epsilon * dt}")
        t0, t1 = grid_transfers(grid.points, params.gamma, scheme, dt)
        ops = (t0 / (1.0 - epsilon * dt), t1 / (epsilon * dt))
    else:
        epsilon = None
        ops = (grid_transfers(grid.points, params.gamma, scheme, dt),)
    g = len(grid)
    return FilterState(grid, scheme, params, float(dt), initial_states(grid, params, initial),
                       np.zeros(g), np.ones(g, dtype=bool), epsilon, 0, 0, ops)


def _step_all(fstate: FilterState, mats: np.ndarray) -> FilterState:
    """Apply one ``(G, 4, 4)`` linear map to every live branch."""
    out = fstate.copy()
    v = np.concatenate([np.ones((len(out.grid), 1)), out.states], axis=1)
    w = np.einsum("gij,gj->gi", mats, v)
    scale = np.abs(mats[:, 0, :] * v).sum(axis=1)
    tr = w[:, 0]
    if np.any(out.alive & (tr < -_kernels.ZERO_TRACE * scale)):
        raise ValueError("negative trace in linear step; dt too large")
    dies = out.alive & (tr <= _kernels.ZERO_TRACE * scale)
    live = out.alive & ~dies
    new = w[live, 1:] / tr[live, None]
    r2 = np.sum(new * new, axis=1)
    over = r2 > 1.0 + BLOCH_TOL
    new[over] /= np.sqrt(r2[over])[:, None]
    out.states[live] = new
    out.log_norm[live] += np.log(tr[live])
    out.log_norm[dies] = -np.inf
    out.alive = live
    out.step += 1
    out.n_clamped += int(over.sum())
    return out


def linear_jump_step(fstate: FilterState, outcome: int, mu_sign: int = 1) -> FilterState:
    """Advance every grid branch by one jump-record entry."""
    if not fstate.scheme.kind.is_jump:
        raise ValueError("linear_jump_step needs a jump scheme")
    if outcome not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {outcome!r}")
    s = 0
    if fstate.scheme.kind is Scheme.ADAPTIVE:
        if mu_sign not in (1, -1):
            raise ValueError("mu_sign must be +1 or -1")
        s = 0 if mu_sign == 1 else 1
    t0, t1 = fstate._ops
    return _step_all(fstate, (t1 if outcome else t0)[s])


def linear_diffusive_step(fstate: FilterState, outcome) -> FilterState:
    """Advance every grid branch by one current sample."""
    kind = fstate.scheme.kind
    if kind.is_jump:
        raise ValueError("linear_diffusive_step needs a diffusive scheme")
    if kind.is_homodyne and np.iscomplexobj(outcome):
        raise ValueError("homodyne currents are real")
    coef = current_coefficients(fstate.scheme, np.atleast_1d(outcome))[0]
    (parts,) = fstate._ops
    return _step_all(fstate, np.tensordot(parts, coef, axes=([1], [0])))


def _observed(record) -> ObservedRecord:
    if isinstance(record, MeasurementRecord):
        return record.observed()
    if isinstance(record, ObservedRecord):
        return record
    raise TypeError(f"expected a measurement record, got {type(record).__name__}")


def _check_record(fstate: FilterState, obs: ObservedRecord) -> None:
    if obs.scheme != fstate.scheme:
        raise ValueError(f"record scheme {obs.scheme} does not match filter scheme {fstate.scheme}")
    if obs.dt != fstate.dt:
        raise ValueError(f"record dt={obs.dt} does not match filter dt={fstate.dt}")


def _run(fstate: FilterState, obs: ObservedRecord, stop: int, ck: np.ndarray):
    """Run the compiled loop from ``fstate.step`` to ``stop``; returns (state, ck_log, ck_states)."""
    out = fstate.copy()
    start = out.step
    sl = slice(start, stop)
    g = len(out.grid)
    ck_log = np.empty((ck.size, g))
    ck_states = np.empty((ck.size, g, 3))
    local = np.ascontiguousarray(ck - start, dtype=np.int64)
    if out.scheme.kind.is_jump:
        t0, t1 = out._ops
        dn = np.ascontiguousarray(obs.outcomes[sl], dtype=np.int8)
        if obs.mu_history is not None:
            mu_idx = ((1 - obs.mu_history[sl]) // 2).astype(np.int8)
        else:
            mu_idx = np.zeros(dn.size, np.int8)
        clamps = _kernels.filter_jump(t0, t1, dn, mu_idx, out.states, out.log_norm, out.alive,
                                      local, ck_log, ck_states, BLOCH_TOL)
    else:
        (parts,) = out._ops
        coef = current_coefficients(out.scheme, obs.outcomes[sl])
        clamps = _kernels.filter_diffusive(parts, coef, out.states, out.log_norm, out.alive,
                                           local, ck_log, ck_states, BLOCH_TOL)
    out.step = stop
    out.n_clamped += int(clamps)
    return out, ck_log, ck_states


def _stop_step(fstate: FilterState, obs: ObservedRecord, upto: float | None) -> int:
    if upto is None:
        stop = obs.n_steps
    else:
        stop = n_steps_for(upto, fstate.dt)
    if stop > obs.n_steps:
        raise ValueError(f"upto={upto} exceeds the record duration {obs.n_steps * obs.dt}")
    if stop < fstate.step:
        raise ValueError("cannot run the filter backwards")
    return stop


def advance_filter(fstate: FilterState, record, upto: float | None = None) -> FilterState:
    """Consume record entries from the filter's current step up to time ``upto``.

    Only the observable part of the record is read. Returns a new state.
    """
    obs = _observed(record)
    _check_record(fstate, obs)
    stop = _stop_step(fstate, obs, upto)
    out, _, _ = _run(fstate, obs, stop, np.array([stop], dtype=np.int64))
    return out


@dataclass(frozen=True)
class Posterior:
    grid: RabiGrid
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != self.grid.points.shape:
            raise ValueError("posterior weights do not match the grid")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("posterior weights must be non-negative and sum to one")
        object.__setattr__(self, "weights", w)

    @property
    def mean(self) -> float:
        return float(self.weights @ self.grid.points)


def normalise_log_weights(log_norm: np.ndarray, prior: np.ndarray) -> np.ndarray:
    """``w ~ prior * exp(log_norm)`` along the last axis via a max shift.

    Entries with ``log_norm = -inf`` get weight exactly zero.
    """
    log_norm = np.asarray(log_norm, dtype=float)
    with np.errstate(divide="ignore"):
        lw = log_norm + np.log(prior)
    top = np.max(lw, axis=-1, keepdims=True)
    if np.any(~np.isfinite(top)):
        raise ZeroLikelihoodError("every grid point has zero likelihood; record inconsistent with the model")
    w = np.exp(lw - top)
    return w / w.sum(axis=-1, keepdims=True)


def posterior(fstate: FilterState) -> Posterior:
    return Posterior(fstate.grid, normalise_log_weights(fstate.log_norm, fstate.grid.weights))


def best_estimate(fstate: FilterState) -> BlochState:
    """Posterior-weighted mean of the per-branch conditioned states."""
    w = posterior(fstate).weights
    return BlochState.from_array(w @ fstate.states)


@dataclass(frozen=True)
class FilterTrace:
    """Posterior and best estimate sampled at checkpoint times.

    ``weights`` has shape ``(C, G)`` and ``best`` has shape ``(C, 3)``.
    """

    grid: RabiGrid
    times: np.ndarray
    weights: np.ndarray
    best: np.ndarray

    def __post_init__(self):
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("checkpoint times must be increasing")
        if self.weights.shape != (self.times.size, len(self.grid)) or self.best.shape != (self.times.size, 3):
            raise ValueError("trace arrays have inconsistent shapes")

    def __len__(self):
        return self.times.size

    def posterior_at(self, i: int) -> Posterior:
        return Posterior(self.grid, self.weights[i])

    @property
    def best_purity(self) -> np.ndarray:
        return purity(self.best)


def run_filter(fstate: FilterState, record, upto: float | None = None,
               checkpoint_interval: float | None = 0.1) -> tuple[FilterState, FilterTrace]:
    """Like :func:`advance_filter` but also records a :class:`FilterTrace`.

    Checkpoints fall on multiples of ``checkpoint_interval`` from the filter's
    starting step, plus the final step.
    """
    obs = _observed(record)
    _check_record(fstate, obs)
    stop = _stop_step(fstate, obs, upto)
    ck = fstate.step + checkpoint_steps(stop - fstate.step, fstate.dt, checkpoint_interval)
    out, ck_log, ck_states = _run(fstate, obs, stop, ck)
    w = normalise_log_weights(ck_log, fstate.grid.weights)
    best = np.einsum("cg,cgk->ck", w, ck_states)
    return out, FilterTrace(fstate.grid, ck * fstate.dt, w, best)


def write_trace(trace: FilterTrace, path) -> None:
    """CSV: ``time, omega_0.., w_0.., best_x, best_y, best_z, best_purity``.

    A ``#`` header block repeats the grid points, prior weights and cells.
    """
    g = len(trace.grid)
    lines = [
        f"# format={TRACE_FORMAT}",
        f"# n_grid={g}",
        "# grid_points=" + " ".join(repr(float(v)) for v in trace.grid.points),
        "# grid_weights=" + " ".join(repr(float(v)) for v in trace.grid.weights),
        "# grid_cells=" + " ".join(repr(float(v)) for v in trace.grid.cells),
    ]
    cols = (["time"] + [f"omega_{j}" for j in range(g)] + [f"w_{j}" for j in range(g)]
            + ["best_x", "best_y", "best_z", "best_purity"])
    lines.append(",".join(cols))
    pts = ",".join(repr(float(v)) for v in trace.grid.points)
    pur = trace.best_purity
    for i in range(len(trace)):
        row = [repr(float(trace.times[i])), pts]
        row += [repr(float(v)) for v in trace.weights[i]]
        row += [repr(float(v)) for v in trace.best[i]] + [repr(float(pur[i]))]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path) -> FilterTrace:
    text = Path(path).read_text().splitlines()
    meta = {}
    for ln in text:
        if ln.startswith("#") and "=" in ln:
            k, v = ln[1:].strip().split("=", 1)
            meta[k] = v
    if meta.get("format") != TRACE_FORMAT:
        raise ValueError(f"{path}: not a {TRACE_FORMAT} file")
    grid = RabiGrid(*(np.array([float(t) for t in meta[k].split()])
                      for k in ("grid_points", "grid_weights", "grid_cells")))
    g = len(grid)
    body = [ln for ln in text if ln and not ln.startswith("#")]
    if len(body[0].split(",")) != 2 * g + 5:
        raise ValueError(f"{path}: expected {2 * g + 5} columns")
    data = np.array([[float(t) for t in ln.split(",")] for ln in body[1:]]).reshape(-1, 2 * g + 5)
    return FilterTrace(grid, data[:, 0], data[:, 1 + g:1 + 2 * g], data[:, 1 + 2 * g:4 + 2 * g])


class RabiFilter(BaseEstimator):
    """Estimator wrapper around the grid filter.

    Parameters
    ----------
    scheme : str
        Detection scheme name.
    gamma, omega_max : float
        System constants.
    n_grid : int
        Odd number of grid points.
    epsilon : float, optional
        Ostensible detection rate for jump schemes.
    initial : {"steady", "ground"}
        Starting state of every branch.
    checkpoint_interval : float
        Spacing of the stored trace.
    phi, mu_magnitude : float, optional
        Local-oscillator settings; see :class:`SchemeConfig`.

    Attributes
    ----------
    grid_ : RabiGrid
    state_ : FilterState
    trace_ : FilterTrace
    posterior_ : Posterior
    best_estimate_ : BlochState
    """

    def __init__(self, scheme="direct", gamma=1.0, omega_max=10.0, n_grid=201, epsilon=None,
                 initial="steady", checkpoint_interval=0.1, phi=None, mu_magnitude=0.5):
        self.scheme = scheme
        self.gamma = gamma
        self.omega_max = omega_max
        self.n_grid = n_grid
        self.epsilon = epsilon
        self.initial = initial
        self.checkpoint_interval = checkpoint_interval
        self.phi = phi
        self.mu_magnitude = mu_magnitude

    def _config(self):
        params = SystemParams(self.gamma, self.omega_max)
        scheme = SchemeConfig(Scheme.parse(self.scheme), phi=self.phi, mu_magnitude=self.mu_magnitude)
        return params, scheme

    def fit(self, record, y=None):
        params, scheme = self._config()
        obs = _observed(record)
        self.grid_ = build_grid(params, self.n_grid)
        fs = init_filter(self.grid_, scheme, params, obs.dt, self.initial, self.epsilon)
        self.state_, self.trace_ = run_filter(fs, obs, None, self.checkpoint_interval)
        self.posterior_ = posterior(self.state_)
        self.best_estimate_ = best_estimate(self.state_)
        return self

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise AttributeError("RabiFilter is not fitted; call fit(record) first")

    def predict_proba(self, records=None) -> np.ndarray:
        """Posterior masses over ``grid_``; one row per record if given."""
        if records is None:
            self._check_fitted()
            return self.posterior_.weights
        return np.stack([self.fit(r).posterior_.weights for r in records])

    def predict(self, records=None) -> np.ndarray | float:
        """Posterior-mean Rabi frequency."""
        if records is None:
            self._check_fitted()
            return self.posterior_.mean
        return np.array([self.fit(r).posterior_.mean for r in records])
