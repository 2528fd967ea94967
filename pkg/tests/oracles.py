"""Independent reference computations shared by the test modules."""

import numpy as np

from rabifilter.bloch import RabiGrid
from rabifilter.operators import SIGMA, SX, SY, Scheme


def one_point(omega):
    return RabiGrid([omega], [1.0], [1.0])


def expm2(h, dt):
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * dt)) @ v.conj().T


def sqrtm2(a):
    w, v = np.linalg.eigh(a)
    return (v * np.sqrt(w)) @ v.conj().T


def brute_force_probability(record, omega, rho):
    """Product of per-step outcome probabilities from normalised 2x2 stepping.

    Diffusive steps use the density ``Tr[M_I rho M_I^dag]`` relative to the
    Gaussian reference, which is the quantity the linear norm carries.
    """
    sc, dt = record.scheme, record.dt
    total = 1.0
    for k, out in enumerate(record.outcomes):
        if sc.kind.is_jump:
            mu = 0.0
            if sc.kind is Scheme.ADAPTIVE:
                mu = sc.mu_magnitude * record.mu_history[k]
            m1 = np.sqrt(dt) * (SIGMA + mu * np.eye(2))
            u = expm2(0.5 * omega * SX - 0.5 * mu * SY, dt)
            m0 = u @ sqrtm2(np.eye(2) - m1.conj().T @ m1)
            m = m1 if out else m0
        else:
            u = expm2(0.5 * omega * SX, dt)
            s = np.diag([np.sqrt(1 - dt), 1.0])
            if sc.kind is Scheme.HETERODYNE:
                m = u @ (s + dt * np.conj(out) * SIGMA)
            else:
                m = u @ (s + dt * out * SIGMA * np.exp(1j * sc.phi))
        new = m @ rho @ m.conj().T
        p = np.trace(new).real
        total *= p
        rho = new / p
    return total


def ostensible(record, eps):
    if not record.scheme.kind.is_jump:
        return 1.0
    n1 = int(record.outcomes.sum())
    return (eps * record.dt) ** n1 * (1 - eps * record.dt) ** (record.n_steps - n1)
