"""Two-level atom state algebra in the Bloch representation.

A density matrix is carried as the real vector ``(x, y, z)`` with
``rho = (1 + x sx + y sy + z sz) / 2``. The excited state is ``z = +1`` and
the ground state is ``z = -1``. The lowering operator is
``s = (sx - i sy) / 2`` so that ``<s> = (x - i y) / 2`` and
``<s^dag s> = (1 + z) / 2``.

Driven, damped dynamics (drive ``omega sx / 2``, decay ``gamma D[s]``)::

    dx/dt = -gamma x / 2
    dy/dt = -gamma y / 2 - omega z
    dz/dt =  omega y - gamma (z + 1)

Flipping ``y -> -y`` together with ``omega -> -omega`` leaves these
equations unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BLOCH_TOL = 1e-6


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the monitored atom.

    Parameters
    ----------
    gamma : float
        Spontaneous emission rate; sets the unit of time.
    omega_max : float
        Largest Rabi frequency reachable in the standing wave, in units of
        ``gamma``.
    """

    gamma: float = 1.0
    omega_max: float = 10.0

    def __post_init__(self):
        if not (self.gamma > 0):
            raise ValueError(f"gamma must be positive, got {self.gamma!r}")
        if not (self.omega_max > 0):
            raise ValueError(f"omega_max must be positive, got {self.omega_max!r}")


@dataclass(frozen=True)
class BlochState:
    x: float
    y: float
    z: float

    def __post_init__(self):
        r2 = self.x * self.x + self.y * self.y + self.z * self.z
        if not np.isfinite(r2) or r2 > 1.0 + BLOCH_TOL:
            raise ValueError(f"Bloch vector outside the unit ball: |r|^2 = {r2!r}")

    @classmethod
    def from_array(cls, v) -> "BlochState":
        x, y, z = (float(c) for c in np.asarray(v, dtype=float).reshape(3))
        return cls(x, y, z)

    @classmethod
    def ground(cls) -> "BlochState":
        return cls(0.0, 0.0, -1.0)

    @classmethod
    def excited(cls) -> "BlochState":
        return cls(0.0, 0.0, 1.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def purity(self) -> float:
        return purity(self)

    def density_matrix(self) -> np.ndarray:
        """2x2 matrix in the (excited, ground) basis."""
        return 0.5 * np.array(
            [[1 + self.z, self.x - 1j * self.y], [self.x + 1j * self.y, 1 - self.z]]
        )


@dataclass(frozen=True)
class RabiGrid:
    """Candidate Rabi frequencies with their prior masses.

    ``cells`` holds the width in omega of each grid point's cell, used to
    turn masses into densities for entropy calculations.
    """

    points: np.ndarray
    weights: np.ndarray
    cells: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        c = np.asarray(self.cells, dtype=float)
        if not (pts.ndim == 1 and pts.shape == w.shape == c.shape):
            raise ValueError("points, weights and cells must be 1-d arrays of equal length")
        if pts.size > 1 and np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("grid weights must be non-negative and sum to one")
        if np.any(c <= 0):
            raise ValueError("cell measures must be positive")
        for name, arr in (("points", pts), ("weights", w), ("cells", c)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.points.size

    def is_symmetric(self) -> bool:
        return bool(
            np.array_equal(self.points, -self.points[::-1])
            and np.array_equal(self.weights, self.weights[::-1])
        )

    def subgrid(self, index) -> "RabiGrid":
        """Restrict to ``index``; weights are renormalised."""
        index = np.asarray(index)
        w = self.weights[index]
        return RabiGrid(self.points[index], w / w.sum(), self.cells[index])


def as_bloch_array(state) -> np.ndarray:
    if isinstance(state, BlochState):
        return state.as_array()
    v = np.asarray(state, dtype=float)
    if v.shape[-1] != 3:
        raise ValueError(f"expected Bloch vectors with 3 components, got shape {v.shape}")
    return v


def purity(state) -> float | np.ndarray:
    """``Tr[rho^2] = (1 + |r|^2) / 2``; vectorised over leading axes."""
    v = as_bloch_array(state)
    p = 0.5 * (1.0 + np.sum(v * v, axis=-1))
    return float(p) if np.ndim(p) == 0 else p


def steady_state(omega: float, params: SystemParams) -> BlochState:
    g = params.gamma
    d = 2.0 * omega * omega + g * g
    return BlochState(0.0, 2.0 * omega * g / d, -g * g / d)


def steady_states(omegas, params: SystemParams) -> np.ndarray:
    omegas = np.asarray(omegas, dtype=float)
    g = params.gamma
    d = 2.0 * omegas**2 + g * g
    return np.stack([np.zeros_like(omegas), 2.0 * omegas * g / d, -g * g / d], axis=-1)


def bloch_rhs(v: np.ndarray, omega: float, gamma: float) -> np.ndarray:
    x, y, z = v
    return np.array(
        [-0.5 * gamma * x, -0.5 * gamma * y - omega * z, omega * y - gamma * (z + 1.0)]
    )


def master_generator(omega: float, params: SystemParams) -> np.ndarray:
    """Affine generator acting on ``(1, x, y, z)``; row 0 is zero (trace kept)."""
    g = params.gamma
    return np.array(
        [
            [0.0, 0.0, 0.0, 0.0],
            [0.0, -0.5 * g, 0.0, 0.0],
            [0.0, 0.0, -0.5 * g, -omega],
            [-g, 0.0, omega, -g],
        ]
    )


def master_evolve(
    state, omega: float, params: SystemParams, duration: float, dt: float = 1e-3
) -> BlochState:
    """Integrate the unmonitored master equation with fixed-step RK4.

    The step actually used is ``duration / ceil(duration / dt)`` so that the
    end point is hit exactly.
    """
    if duration < 0:
        raise ValueError("duration must be non-negative")
    v = as_bloch_array(state).astype(float).copy()
    if duration == 0:
        return BlochState.from_array(v)
    n = int(np.ceil(duration / dt - 1e-9))
    h = duration / n
    g = params.gamma
    for _ in range(n):
        k1 = bloch_rhs(v, omega, g)
        k2 = bloch_rhs(v + 0.5 * h * k1, omega, g)
        k3 = bloch_rhs(v + 0.5 * h * k2, omega, g)
        k4 = bloch_rhs(v + h * k3, omega, g)
        v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return BlochState.from_array(v)


def master_trajectory(
    state, omega: float, params: SystemParams, times, dt: float = 1e-3
) -> np.ndarray:
    """Master-equation solution sampled at increasing ``times`` (first may be 0)."""
    times = np.asarray(times, dtype=float)
    out = np.empty((times.size, 3))
    current, t_prev = BlochState.from_array(as_bloch_array(state)), 0.0
    for i, t in enumerate(times):
        current = master_evolve(current, omega, params, t - t_prev, dt)
        out[i] = current.as_array()
        t_prev = t
    return out


def clamp_bloch(v: np.ndarray, tol: float = BLOCH_TOL) -> tuple[np.ndarray, bool]:
    """Rescale onto the unit sphere if ``|r|^2`` exceeds ``1 + tol``."""
    r2 = float(v @ v)
    if r2 > 1.0 + tol:
        return v / np.sqrt(r2), True
    return v, False


def build_grid(params: SystemParams, n_points: int = 201) -> RabiGrid:
    """Equal-mass grid for the standing-wave prior ``1 / (pi sqrt(wmax^2 - w^2))``.

    Points sit at ``omega_max sin(theta)`` for cell midpoints ``theta`` that
    split ``(-pi/2, pi/2)`` into ``n_points`` equal cells, so every point
    carries mass ``1 / n_points``.
    """
    n_points = int(n_points)
    if n_points < 3 or n_points % 2 == 0:
        raise ValueError(f"n_points must be odd and >= 3, got {n_points}")
    half = (n_points - 1) // 2
    k = np.arange(-half, half + 1, dtype=float)
    h = np.pi / n_points
    # integer multiples of h keep the grid exactly antisymmetric
    theta = k * h
    points = params.omega_max * np.sin(theta)
    cells = params.omega_max * (np.sin(theta + 0.5 * h) - np.sin(theta - 0.5 * h))
    cells = 0.5 * (cells + cells[::-1])
    weights = np.full(n_points, 1.0 / n_points)
    return RabiGrid(points, weights, cells)


def sample_prior(params: SystemParams, rng: np.random.Generator, size=None):
    """Draw Rabi frequencies from the standing-wave prior."""
    u = rng.random(size)
    return params.omega_max * np.sin(np.pi * (u - 0.5))


def prior_density(omega, params: SystemParams):
    omega = np.asarray(omega, dtype=float)
    wm = params.omega_max
    with np.errstate(divide="ignore", invalid="ignore"):
        d = 1.0 / (np.pi * np.sqrt(wm * wm - omega * omega))
    return np.where(np.abs(omega) < wm, d, 0.0)
