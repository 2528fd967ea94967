"""Measurement records generated from the normalised (nonlinear) trajectory.

The per-step functions :func:`jump_step` and :func:`diffusive_step` are the
reference implementation; :func:`simulate_record` runs the same arithmetic
in a compiled loop over pre-drawn random numbers.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .bloch import BLOCH_TOL, BlochState, SystemParams, as_bloch_array, clamp_bloch
from .operators import Scheme, SchemeConfig, transfer_set
from .utils import checkpoint_steps, n_steps_for

RECORD_FORMAT = "rabifilter-record-v1"


@dataclass(eq=False)
class MeasurementRecord:
    """Time-discretised detector output of one run.

    ``outcomes`` holds one entry per step: ``dN`` bits (int8) for jump
    schemes, real currents for homodyne, complex currents for heterodyne.
    ``mu_history`` is the adaptive local-oscillator sign in force during each
    step. ``omega_true`` and ``seed`` are bookkeeping for evaluation and
    replay; the filter never reads them.
    """

    scheme: SchemeConfig
    dt: float
    outcomes: np.ndarray
    mu_history: np.ndarray | None = None
    omega_true: float | None = None
    seed: int | None = None
    gamma: float = 1.0
    n_clamped: int = 0

    def __post_init__(self):
        self.outcomes = np.asarray(self.outcomes)
        kind = self.scheme.kind
        if kind.is_jump:
            self.outcomes = self.outcomes.astype(np.int8, copy=False)
            if np.any((self.outcomes != 0) & (self.outcomes != 1)):
                raise ValueError("jump outcomes must be 0 or 1")
        elif kind is Scheme.HETERODYNE:
            self.outcomes = self.outcomes.astype(complex, copy=False)
        else:
            if np.iscomplexobj(self.outcomes):
                raise ValueError("homodyne outcomes must be real")
            self.outcomes = self.outcomes.astype(float, copy=False)
        if kind is Scheme.ADAPTIVE:
            if self.mu_history is None:
                raise ValueError("adaptive records need a mu_history")
            mu = np.asarray(self.mu_history).astype(np.int8)
            if mu.shape != self.outcomes.shape or np.any(np.abs(mu) != 1):
                raise ValueError("mu_history must hold one +/-1 entry per step")
            self.mu_history = mu
        elif self.mu_history is not None:
            raise ValueError(f"mu_history only applies to adaptive records, not {kind.value}")

    @property
    def n_steps(self) -> int:
        return int(self.outcomes.shape[0])

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        """Start time of each step."""
        return np.arange(self.n_steps) * self.dt

    def observed(self) -> "ObservedRecord":
        return ObservedRecord(self.scheme, self.dt, self.outcomes, self.mu_history)

    def __eq__(self, other):
        if not isinstance(other, MeasurementRecord):
            return NotImplemented
        same_mu = (self.mu_history is None and other.mu_history is None) or (
            self.mu_history is not None
            and other.mu_history is not None
            and np.array_equal(self.mu_history, other.mu_history)
        )
        return (
            self.scheme == other.scheme
            and self.dt == other.dt
            and self.gamma == other.gamma
            and self.seed == other.seed
            and self.omega_true == other.omega_true
            and np.array_equal(self.outcomes, other.outcomes)
            and same_mu
        )


@dataclass(frozen=True)
class ObservedRecord:
    """The part of a record an estimator is allowed to see."""

    scheme: SchemeConfig
    dt: float
    outcomes: np.ndarray
    mu_history: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return int(self.outcomes.shape[0])


@dataclass(frozen=True)
class StepOutcome:
    state: BlochState
    observed: float | complex | int
    mu_sign: int = 1
    clamped: bool = field(default=False, compare=False)


def _mu_index(scheme: SchemeConfig, mu_sign: int) -> int:
    if scheme.kind is Scheme.ADAPTIVE:
        if mu_sign not in (1, -1):
            raise ValueError(f"mu_sign must be +1 or -1, got {mu_sign!r}")
        return 0 if mu_sign == 1 else 1
    return 0


def _homogeneous(state) -> np.ndarray:
    return np.concatenate(([1.0], as_bloch_array(state)))


def detection_probability(state, omega, scheme, mu_sign, dt, params=SystemParams()) -> float:
    ts = transfer_set(omega, params.gamma, scheme, dt)
    return float(ts.jump[_mu_index(scheme, mu_sign)][0] @ _homogeneous(state))


def jump_step(state, omega, scheme: SchemeConfig, mu_sign: int, dt: float,
              rng: np.random.Generator, params: SystemParams = SystemParams()) -> StepOutcome:
    """One step of direct or adaptive detection.

    Draws a single uniform and records a detection if it falls below
    ``P(1) = Tr[M1 rho M1^dag]``. The adaptive LO sign flips on detection.
    """
    if not scheme.kind.is_jump:
        raise ValueError(f"jump_step needs a jump scheme, got {scheme.kind.value}")
    s = _mu_index(scheme, mu_sign)
    ts = transfer_set(omega, params.gamma, scheme, dt)
    v = _homogeneous(state)
    w1 = ts.jump[s] @ v
    p1 = w1[0]
    if p1 < -_kernels.ZERO_TRACE or p1 > 1.0:
        raise ValueError(f"detection probability {p1} outside [0, 1]; dt too large")
    if rng.random() < p1:
        new, dn = w1[1:] / p1, 1
        if scheme.kind is Scheme.ADAPTIVE:
            mu_sign = -mu_sign
    else:
        w0 = ts.no_jump[s] @ v
        new, dn = w0[1:] / w0[0], 0
    new, hit = clamp_bloch(new)
    return StepOutcome(BlochState.from_array(new), dn, mu_sign if scheme.kind is Scheme.ADAPTIVE else 1, hit)


def current_mean(state, scheme: SchemeConfig, params: SystemParams = SystemParams()):
    """Expected current for one step given the conditioned state."""
    x, y, _ = as_bloch_array(state)
    sg = np.sqrt(params.gamma)
    if scheme.kind is Scheme.HETERODYNE:
        return sg * complex(0.5 * x, -0.5 * y)
    return sg * (x * np.cos(scheme.phi) + y * np.sin(scheme.phi))


def diffusive_step(state, omega, scheme: SchemeConfig, dt: float,
                   rng: np.random.Generator, params: SystemParams = SystemParams()) -> StepOutcome:
    """One step of homodyne or heterodyne detection.

    The current is the conditional mean plus white noise of variance
    ``1/dt`` (split evenly between quadratures for heterodyne); the state is
    then updated with the measurement operator for that current.
    """
    if scheme.kind.is_jump:
        raise ValueError(f"diffusive_step needs a diffusive scheme, got {scheme.kind.value}")
    ts = transfer_set(omega, params.gamma, scheme, dt)
    mean = current_mean(state, scheme, params)
    if scheme.kind is Scheme.HETERODYNE:
        xi = rng.standard_normal(2) * np.sqrt(0.5 / dt)
        current = complex(mean.real + xi[0], mean.imag + xi[1])
        p, q = current.real, current.imag
        coef = np.array([1.0, p, q, p * p + q * q])
    else:
        current = mean + rng.standard_normal(1)[0] / np.sqrt(dt)
        coef = np.array([1.0, current, current * current])
    w = np.tensordot(coef, ts.parts, axes=1) @ _homogeneous(state)
    if not w[0] > 0:
        raise ValueError("non-positive trace in diffusive step")
    new, hit = clamp_bloch(w[1:] / w[0])
    return StepOutcome(BlochState.from_array(new), current, 1, hit)


@dataclass(frozen=True)
class Trajectory:
    """A record together with the known-omega conditioned states."""

    record: MeasurementRecord
    times: np.ndarray
    states: np.ndarray


def simulate_trajectory(omega_true: float, initial, scheme: SchemeConfig, duration: float,
                        dt: float = 1e-3, seed: int | None = 0,
                        params: SystemParams = SystemParams(),
                        checkpoint_interval: float | None = None) -> Trajectory:
    """Run the conditioned dynamics at ``omega_true`` and keep the states.

    States are stored at multiples of ``checkpoint_interval`` (every step if
    omitted).
    """
    n = n_steps_for(duration, dt)
    ck = checkpoint_steps(n, dt, checkpoint_interval)
    rng = np.random.default_rng(seed)
    v0 = as_bloch_array(initial).astype(float)
    BlochState.from_array(v0)
    ts = transfer_set(omega_true, params.gamma, scheme, dt)
    if scheme.kind.is_jump:
        u = rng.random(n)
        dn, mu, states, clamps = _kernels.simulate_jump(
            ts.no_jump, ts.jump, v0, u, scheme.kind is Scheme.ADAPTIVE, ck, BLOCH_TOL
        )
        outcomes = dn
        mu_hist = mu if scheme.kind is Scheme.ADAPTIVE else None
    else:
        het = scheme.kind is Scheme.HETERODYNE
        noise = rng.standard_normal((n, 2 if het else 1))
        cur, states, clamps = _kernels.simulate_diffusive(
            ts.parts, het, np.cos(scheme.phi), np.sin(scheme.phi), np.sqrt(params.gamma),
            v0, noise, dt, ck, BLOCH_TOL,
        )
        outcomes = cur[:, 0] + 1j * cur[:, 1] if het else cur[:, 0]
        mu_hist = None
    rec = MeasurementRecord(scheme, dt, outcomes, mu_hist, float(omega_true),
                            None if seed is None else int(seed), params.gamma, int(clamps))
    return Trajectory(rec, ck * dt, states)


def simulate_record(omega_true: float, initial, scheme: SchemeConfig, duration: float,
                    dt: float = 1e-3, seed: int | None = 0,
                    params: SystemParams = SystemParams()) -> MeasurementRecord:
    """Generate a measurement record at a known Rabi frequency.

    Fully determined by ``seed`` and the other arguments.
    """
    return simulate_trajectory(omega_true, initial, scheme, duration, dt, seed, params,
                               checkpoint_interval=duration if duration > 0 else None).record


# --- serialisation -------------------------------------------------------

def _columns(kind: Scheme) -> list[str]:
    if kind is Scheme.DIRECT:
        return ["step", "dN"]
    if kind is Scheme.ADAPTIVE:
        return ["step", "dN", "mu_sign"]
    if kind is Scheme.HETERODYNE:
        return ["step", "I_re", "I_im"]
    return ["step", "I"]


def write_record(record: MeasurementRecord, path) -> None:
    """Write a record as CSV with a ``# key=value`` header block.

    Columns by scheme: direct ``step,dN``; adaptive ``step,dN,mu_sign``;
    homodyne ``step,I``; heterodyne ``step,I_re,I_im``. Floats use the
    shortest round-trip representation.
    """
    header = {
        "format": RECORD_FORMAT,
        "scheme": record.scheme.kind.value,
        "phi": repr(record.scheme.phi),
        "mu_magnitude": repr(record.scheme.mu_magnitude),
        "gamma": repr(float(record.gamma)),
        "dt": repr(float(record.dt)),
        "steps": str(record.n_steps),
        "seed": "" if record.seed is None else str(record.seed),
        "omega_true": "" if record.omega_true is None else repr(float(record.omega_true)),
        "n_clamped": str(record.n_clamped),
    }
    kind = record.scheme.kind
    buf = io.StringIO()
    for k, v in header.items():
        buf.write(f"# {k}={v}\n")
    buf.write(",".join(_columns(kind)) + "\n")
    out = record.outcomes
    if kind is Scheme.DIRECT:
        rows = (f"{i},{d}\n" for i, d in enumerate(out.tolist()))
    elif kind is Scheme.ADAPTIVE:
        rows = (f"{i},{d},{m}\n" for i, (d, m) in enumerate(zip(out.tolist(), record.mu_history.tolist())))
    elif kind is Scheme.HETERODYNE:
        rows = (f"{i},{c.real!r},{c.imag!r}\n" for i, c in enumerate(out.tolist()))
    else:
        rows = (f"{i},{c!r}\n" for i, c in enumerate(out.tolist()))
    buf.writelines(rows)
    Path(path).write_text(buf.getvalue())


def _parse_header(lines) -> dict[str, str]:
    meta = {}
    for line in lines:
        body = line[1:].strip()
        if "=" in body:
            k, v = body.split("=", 1)
            meta[k.strip()] = v.strip()
    return meta


def read_record(path) -> MeasurementRecord:
    text = Path(path).read_text().splitlines()
    head = [ln for ln in text if ln.startswith("#")]
    body = [ln for ln in text if ln and not ln.startswith("#")]
    meta = _parse_header(head)
    if meta.get("format") != RECORD_FORMAT:
        raise ValueError(f"{path}: not a {RECORD_FORMAT} file")
    scheme = SchemeConfig(Scheme.parse(meta["scheme"]), phi=float(meta["phi"]),
                          mu_magnitude=float(meta["mu_magnitude"]))
    cols = body[0].split(",")
    if cols != _columns(scheme.kind):
        raise ValueError(f"{path}: unexpected columns {cols}")
    rows = [r.split(",") for r in body[1:]]
    steps = int(meta["steps"])
    if len(rows) != steps:
        raise ValueError(f"{path}: header says {steps} steps, found {len(rows)}")
    mu = None
    if scheme.kind.is_jump:
        outcomes = np.array([int(r[1]) for r in rows], dtype=np.int8)
        if scheme.kind is Scheme.ADAPTIVE:
            mu = np.array([int(r[2]) for r in rows], dtype=np.int8)
    elif scheme.kind is Scheme.HETERODYNE:
        outcomes = np.array([complex(float(r[1]), float(r[2])) for r in rows])
    else:
        outcomes = np.array([float(r[1]) for r in rows])
    return MeasurementRecord(
        scheme, float(meta["dt"]), outcomes, mu,
        float(meta["omega_true"]) if meta.get("omega_true") else None,
        int(meta["seed"]) if meta.get("seed") else None,
        float(meta["gamma"]), int(meta.get("n_clamped", 0)),
    )
