"""Measurement operators for the five detection schemes.

Every scheme is reduced to a handful of real 4x4 transfer matrices acting
on the unnormalised Bloch vector ``(n, X, Y, Z) = Tr[rho] * (1, x, y, z)``.
A map ``rho -> A rho B^dag`` becomes ``T_ij = Tr[s_i A s_j B^dag] / 2`` with
``s_0 = 1`` and ``s_1..3`` the Pauli matrices. The transfer matrices are
built once per (omega, scheme, dt) so the stepping loops stay real-valued.

All operator sets are exactly complete. With ``U = exp(-i H dt)``:

jump schemes (direct, adaptive)::

    M1 = sqrt(gamma dt) (s + mu)
    M0 = U sqrt(1 - M1^dag M1)
    H  = omega sx / 2 - gamma mu sy / 2

The ``sy`` term is the coherent part of the local oscillator, so that
``M0 = 1 - (i omega sx/2 + gamma s^dag s/2 + mu gamma s + gamma mu^2/2) dt``
to first order.

diffusive schemes, current ``I`` with the ostensible Gaussian measure
factored out::

    homodyne:    M_I = U [sqrt(1 - gamma dt s^dag s) + sqrt(gamma) dt I  c],  c = s e^{i phi}
    heterodyne:  M_I = U [sqrt(1 - gamma dt s^dag s) + sqrt(gamma) dt I* s]

``M_I rho M_I^dag`` expands into matrices multiplying ``1, I, I^2`` (homodyne)
or ``1, Re I, Im I, |I|^2`` (heterodyne). The homodyne current has mean
``sqrt(gamma) <c + c^dag> = sqrt(gamma) (x cos(phi) + y sin(phi))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
ID2 = np.eye(2, dtype=complex)
PAULI = np.stack([ID2, SX, SY, SZ])
# lowering operator in the (excited, ground) basis
SIGMA = np.array([[0, 0], [1, 0]], dtype=complex)


class Scheme(str, Enum):
    DIRECT = "direct"
    ADAPTIVE = "adaptive"
    HOMODYNE_X = "homodyne_x"
    HOMODYNE_Y = "homodyne_y"
    HETERODYNE = "heterodyne"

    @property
    def is_jump(self) -> bool:
        return self in (Scheme.DIRECT, Scheme.ADAPTIVE)

    @property
    def is_homodyne(self) -> bool:
        return self in (Scheme.HOMODYNE_X, Scheme.HOMODYNE_Y)

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_").replace(" ", "_")
        key = _ALIASES.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(
                f"unknown scheme {value!r}; expected one of {[s.value for s in cls]}"
            ) from None


_ALIASES = {"homodynex": "homodyne_x", "homodyney": "homodyne_y", "het": "heterodyne"}


@dataclass(frozen=True)
class SchemeConfig:
    """Detection scheme and its local-oscillator settings.

    ``phi`` defaults to 0 for homodyne x and pi/2 for homodyne y and is
    ignored elsewhere. ``mu_magnitude`` is the dimensionless adaptive LO
    amplitude entering ``M1 = sqrt(gamma dt)(s + mu)``.
    """

    kind: Scheme
    phi: float | None = None
    mu_magnitude: float = 0.5

    def __post_init__(self):
        kind = Scheme.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        phi = self.phi
        if phi is None:
            phi = np.pi / 2 if kind is Scheme.HOMODYNE_Y else 0.0
        phi = float(phi)
        if not (0.0 <= phi < 2 * np.pi):
            raise ValueError(f"phi must lie in [0, 2pi), got {phi}")
        object.__setattr__(self, "phi", phi)
        if not (self.mu_magnitude > 0):
            raise ValueError("mu_magnitude must be positive")
        object.__setattr__(self, "mu_magnitude", float(self.mu_magnitude))

    @classmethod
    def make(cls, kind, **kw) -> "SchemeConfig":
        return cls(Scheme.parse(kind), **kw)


def sandwich(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``Tr[s_i a s_j b^dag] / 2`` as a complex 4x4 array."""
    return 0.5 * np.einsum("iab,bc,jcd,da->ij", PAULI, a, PAULI, b.conj().T)


def kraus_transfer(m: np.ndarray) -> np.ndarray:
    return _real(sandwich(m, m))


def cross_transfer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Transfer matrix of ``rho -> a rho b^dag + b rho a^dag``."""
    return _real(sandwich(a, b) + sandwich(b, a))


def icross_transfer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Transfer matrix of ``rho -> i (a rho b^dag - b rho a^dag)``."""
    return _real(1j * (sandwich(a, b) - sandwich(b, a)))


def _real(t: np.ndarray) -> np.ndarray:
    if np.max(np.abs(t.imag)) > 1e-12 * max(1.0, np.max(np.abs(t.real))):
        raise ArithmeticError("transfer matrix is not real; map is not Hermiticity preserving")
    return np.ascontiguousarray(t.real)


def unitary_step(h0: float, hx: float, hy: float, hz: float, dt: float) -> np.ndarray:
    """``exp(-i dt (h0 + h . sigma))`` in closed form."""
    norm = np.sqrt(hx * hx + hy * hy + hz * hz)
    phase = np.exp(-1j * h0 * dt)
    if norm == 0.0:
        return phase * ID2
    c, s = np.cos(norm * dt), np.sin(norm * dt)
    n_sigma = (hx * SX + hy * SY + hz * SZ) / norm
    return phase * (c * ID2 - 1j * s * n_sigma)


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(a)
    if w.min() < -1e-14:
        raise ValueError("matrix square root of a non-positive operator; dt too large")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def jump_kraus(omega: float, gamma: float, mu: float, dt: float):
    """``(M0, M1)`` for direct (``mu = 0``) or adaptive detection."""
    m1 = np.sqrt(gamma * dt) * (SIGMA + mu * ID2)
    f1 = m1.conj().T @ m1
    if np.linalg.eigvalsh(f1).max() >= 1.0:
        raise ValueError(f"dt={dt} too large: detection probability reaches one")
    u = unitary_step(0.0, 0.5 * omega, -0.5 * gamma * mu, 0.0, dt)
    m0 = u @ psd_sqrt(ID2 - f1)
    return m0, m1


def diffusive_parts(omega: float, gamma: float, scheme: SchemeConfig, dt: float):
    """``(A, B)`` with ``M_I = A + I B`` (homodyne) or ``A + conj(I) B`` (heterodyne)."""
    if gamma * dt >= 1.0:
        raise ValueError(f"dt={dt} too large for gamma={gamma}")
    u = unitary_step(0.0, 0.5 * omega, 0.0, 0.0, dt)
    s = np.diag([np.sqrt(1.0 - gamma * dt), 1.0]).astype(complex)
    if scheme.kind is Scheme.HETERODYNE:
        c = SIGMA
    else:
        c = SIGMA * np.exp(1j * scheme.phi)
    return u @ s, np.sqrt(gamma) * dt * (u @ c)


@dataclass(frozen=True)
class TransferSet:
    """Raw (un-rescaled) Bloch transfer matrices for one omega.

    Jump schemes: ``no_jump`` and ``jump`` have shape ``(S, 4, 4)`` with
    ``S = 1`` (direct) or ``2`` (adaptive; index 0 is ``+mu``, 1 is ``-mu``).
    Diffusive schemes: ``parts`` has shape ``(K, 4, 4)`` multiplying the
    per-step coefficients from :func:`current_coefficients`.
    """

    no_jump: np.ndarray | None = None
    jump: np.ndarray | None = None
    parts: np.ndarray | None = None


def mu_values(scheme: SchemeConfig) -> tuple[float, ...]:
    if scheme.kind is Scheme.ADAPTIVE:
        return (scheme.mu_magnitude, -scheme.mu_magnitude)
    return (0.0,)


@lru_cache(maxsize=4096)
def _transfer_cached(omega, gamma, kind, phi, mu_mag, dt) -> TransferSet:
    scheme = SchemeConfig(kind, phi=phi, mu_magnitude=mu_mag)
    if scheme.kind.is_jump:
        t0, t1 = [], []
        for mu in mu_values(scheme):
            m0, m1 = jump_kraus(omega, gamma, mu, dt)
            t0.append(kraus_transfer(m0))
            t1.append(kraus_transfer(m1))
        out = TransferSet(no_jump=np.stack(t0), jump=np.stack(t1))
    else:
        a, b = diffusive_parts(omega, gamma, scheme, dt)
        if scheme.kind is Scheme.HETERODYNE:
            # A + conj(I) B with I = p + i q:  p (B r A^+ + A r B^+) + q i (A r B^+ - B r A^+)
            parts = [kraus_transfer(a), cross_transfer(a, b), icross_transfer(a, b), kraus_transfer(b)]
        else:
            parts = [kraus_transfer(a), cross_transfer(a, b), kraus_transfer(b)]
        out = TransferSet(parts=np.stack(parts))
    for arr in (out.no_jump, out.jump, out.parts):
        if arr is not None:
            arr.setflags(write=False)
    return out


def transfer_set(omega: float, gamma: float, scheme: SchemeConfig, dt: float) -> TransferSet:
    return _transfer_cached(float(omega), float(gamma), scheme.kind, scheme.phi,
                            scheme.mu_magnitude, float(dt))


def grid_transfers(omegas, gamma: float, scheme: SchemeConfig, dt: float):
    """Stack transfer matrices over a grid.

    Returns ``(no_jump, jump)`` of shape ``(S, G, 4, 4)`` for jump schemes
    or ``parts`` of shape ``(G, K, 4, 4)`` for diffusive ones.
    """
    sets = [transfer_set(w, gamma, scheme, dt) for w in omegas]
    if scheme.kind.is_jump:
        t0 = np.ascontiguousarray(np.stack([s.no_jump for s in sets], axis=1))
        t1 = np.ascontiguousarray(np.stack([s.jump for s in sets], axis=1))
        return t0, t1
    return np.ascontiguousarray(np.stack([s.parts for s in sets]))


def current_coefficients(scheme: SchemeConfig, outcomes: np.ndarray) -> np.ndarray:
    """Per-step multipliers of the diffusive transfer parts, shape ``(N, K)``."""
    if scheme.kind is Scheme.HETERODYNE:
        i = np.asarray(outcomes, dtype=complex)
        p, q = i.real, i.imag
        return np.ascontiguousarray(np.stack([np.ones_like(p), p, q, p * p + q * q], axis=1))
    i = np.asarray(outcomes, dtype=float)
    return np.ascontiguousarray(np.stack([np.ones_like(i), i, i * i], axis=1))


def effects(omega: float, gamma: float, scheme: SchemeConfig, dt: float, mu_sign: int = 1):
    """Effect operators ``M_r^dag M_r`` of a jump scheme as 2x2 matrices."""
    if not scheme.kind.is_jump:
        raise ValueError("effects() is defined for jump schemes only")
    mu = scheme.mu_magnitude * mu_sign if scheme.kind is Scheme.ADAPTIVE else 0.0
    m0, m1 = jump_kraus(omega, gamma, mu, dt)
    return m0.conj().T @ m0, m1.conj().T @ m1
