"""Compiled inner loops.

All kernels take pre-drawn random numbers and precomputed transfer matrices
so they are pure functions of their arguments. They release the GIL, which
lets the ensemble runner spread records over a thread pool.
"""

import numpy as np
from numba import njit

# relative size below which a linear trace counts as exactly zero
ZERO_TRACE = 1e-13
_FOLD_LO = 1e-150
_FOLD_HI = 1e150


@njit(cache=True, nogil=True, inline="always")
def _apply(t, x, y, z):
    n = t[0, 0] + t[0, 1] * x + t[0, 2] * y + t[0, 3] * z
    a = t[1, 0] + t[1, 1] * x + t[1, 2] * y + t[1, 3] * z
    b = t[2, 0] + t[2, 1] * x + t[2, 2] * y + t[2, 3] * z
    c = t[3, 0] + t[3, 1] * x + t[3, 2] * y + t[3, 3] * z
    return n, a, b, c


@njit(cache=True, nogil=True, inline="always")
def _trace_scale(t, x, y, z):
    return abs(t[0, 0]) + abs(t[0, 1] * x) + abs(t[0, 2] * y) + abs(t[0, 3] * z)


@njit(cache=True, nogil=True, inline="always")
def _clamp(x, y, z, tol):
    r2 = x * x + y * y + z * z
    if r2 > 1.0 + tol:
        r = np.sqrt(r2)
        return x / r, y / r, z / r, 1
    return x, y, z, 0


@njit(cache=True, nogil=True)
def simulate_jump(t0, t1, v0, uniforms, adaptive, ck_steps, tol):
    """Nonlinear jump trajectory.

    ``t0``/``t1`` are raw transfer matrices ``(S, 4, 4)``; the detection
    probability of a step is row 0 of ``t1`` applied to the state.
    """
    n = uniforms.shape[0]
    dn = np.zeros(n, np.int8)
    mu = np.ones(n, np.int8)
    states = np.empty((ck_steps.shape[0], 3))
    x, y, z = v0[0], v0[1], v0[2]
    s = 0
    clamps = 0
    ci = 0
    while ci < ck_steps.shape[0] and ck_steps[ci] == 0:
        states[ci, 0], states[ci, 1], states[ci, 2] = x, y, z
        ci += 1
    for k in range(n):
        mu[k] = 1 - 2 * s
        p1, a, b, c = _apply(t1[s], x, y, z)
        if p1 < -ZERO_TRACE or p1 > 1.0:
            raise ValueError("detection probability outside [0, 1]; dt too large")
        if uniforms[k] < p1:
            dn[k] = 1
            x, y, z = a / p1, b / p1, c / p1
            if adaptive:
                s = 1 - s
        else:
            p0, a, b, c = _apply(t0[s], x, y, z)
            x, y, z = a / p0, b / p0, c / p0
        x, y, z, hit = _clamp(x, y, z, tol)
        clamps += hit
        while ci < ck_steps.shape[0] and ck_steps[ci] == k + 1:
            states[ci, 0], states[ci, 1], states[ci, 2] = x, y, z
            ci += 1
    return dn, mu, states, clamps


@njit(cache=True, nogil=True)
def simulate_diffusive(parts, heterodyne, cphi, sphi, sqrt_gamma, v0, noise, dt, ck_steps, tol):
    """Nonlinear diffusive trajectory; returns currents ``(N, 2)``.

    Homodyne currents are real (column 1 is zero); heterodyne currents are
    stored as (real, imaginary). ``noise`` holds standard normals.
    """
    n = noise.shape[0]
    cur = np.zeros((n, 2))
    states = np.empty((ck_steps.shape[0], 3))
    x, y, z = v0[0], v0[1], v0[2]
    clamps = 0
    ci = 0
    sd_hom = 1.0 / np.sqrt(dt)
    sd_het = np.sqrt(0.5 / dt)
    while ci < ck_steps.shape[0] and ck_steps[ci] == 0:
        states[ci, 0], states[ci, 1], states[ci, 2] = x, y, z
        ci += 1
    for k in range(n):
        if heterodyne:
            p = 0.5 * sqrt_gamma * x + sd_het * noise[k, 0]
            q = -0.5 * sqrt_gamma * y + sd_het * noise[k, 1]
            cur[k, 0], cur[k, 1] = p, q
            n0, a0, b0, c0 = _apply(parts[0], x, y, z)
            n1, a1, b1, c1 = _apply(parts[1], x, y, z)
            n2, a2, b2, c2 = _apply(parts[2], x, y, z)
            n3, a3, b3, c3 = _apply(parts[3], x, y, z)
            r = p * p + q * q
            tr = n0 + p * n1 + q * n2 + r * n3
            a = a0 + p * a1 + q * a2 + r * a3
            b = b0 + p * b1 + q * b2 + r * b3
            c = c0 + p * c1 + q * c2 + r * c3
        else:
            i = sqrt_gamma * (x * cphi + y * sphi) + sd_hom * noise[k, 0]
            cur[k, 0] = i
            n0, a0, b0, c0 = _apply(parts[0], x, y, z)
            n1, a1, b1, c1 = _apply(parts[1], x, y, z)
            n2, a2, b2, c2 = _apply(parts[2], x, y, z)
            i2 = i * i
            tr = n0 + i * n1 + i2 * n2
            a = a0 + i * a1 + i2 * a2
            b = b0 + i * b1 + i2 * b2
            c = c0 + i * c1 + i2 * c2
        if not tr > 0.0:
            raise ValueError("non-positive trace in diffusive step")
        x, y, z = a / tr, b / tr, c / tr
        x, y, z, hit = _clamp(x, y, z, tol)
        clamps += hit
        while ci < ck_steps.shape[0] and ck_steps[ci] == k + 1:
            states[ci, 0], states[ci, 1], states[ci, 2] = x, y, z
            ci += 1
    return cur, states, clamps


@njit(cache=True, nogil=True)
def filter_jump(t0, t1, dn, mu_idx, states, log_norm, alive, ck_steps, ck_log, ck_states, tol):
    """Advance every grid branch through a jump record, in place.

    ``t0``/``t1`` have shape ``(S, G, 4, 4)`` and already include the
    ostensible-probability rescaling. Branches are independent, so the loop
    runs branch-major with the state held in registers.
    """
    n = dn.shape[0]
    g_count = states.shape[0]
    n_ck = ck_steps.shape[0]
    clamps = 0
    for g in range(g_count):
        x, y, z = states[g, 0], states[g, 1], states[g, 2]
        ln = log_norm[g]
        live = alive[g]
        acc = 1.0
        ci = 0
        while ci < n_ck and ck_steps[ci] == 0:
            ck_log[ci, g] = ln if live else -np.inf
            ck_states[ci, g, 0], ck_states[ci, g, 1], ck_states[ci, g, 2] = x, y, z
            ci += 1
        for k in range(n):
            if live:
                if dn[k] == 1:
                    t = t1[mu_idx[k], g]
                else:
                    t = t0[mu_idx[k], g]
                tr, a, b, c = _apply(t, x, y, z)
                scale = _trace_scale(t, x, y, z)
                if tr <= ZERO_TRACE * scale:
                    if tr < -ZERO_TRACE * scale:
                        raise ValueError("negative trace in linear jump step; dt too large")
                    live = False
                    ln = -np.inf
                else:
                    x, y, z = a / tr, b / tr, c / tr
                    x, y, z, hit = _clamp(x, y, z, tol)
                    clamps += hit
                    acc *= tr
                    if acc < _FOLD_LO or acc > _FOLD_HI:
                        ln += np.log(acc)
                        acc = 1.0
            if ci < n_ck and ck_steps[ci] == k + 1:
                if live:
                    ln += np.log(acc)
                    acc = 1.0
                while ci < n_ck and ck_steps[ci] == k + 1:
                    ck_log[ci, g] = ln
                    ck_states[ci, g, 0], ck_states[ci, g, 1], ck_states[ci, g, 2] = x, y, z
                    ci += 1
        if live:
            ln += np.log(acc)
        states[g, 0], states[g, 1], states[g, 2] = x, y, z
        log_norm[g] = ln
        alive[g] = live
    return clamps


@njit(cache=True, nogil=True)
def filter_diffusive(parts, coef, states, log_norm, alive, ck_steps, ck_log, ck_states, tol):
    """Diffusive counterpart of :func:`filter_jump`.

    ``parts`` has shape ``(G, K, 4, 4)``; step ``k`` applies
    ``sum_m coef[k, m] * parts[g, m]``.
    """
    n = coef.shape[0]
    n_parts = coef.shape[1]
    g_count = states.shape[0]
    n_ck = ck_steps.shape[0]
    clamps = 0
    for g in range(g_count):
        x, y, z = states[g, 0], states[g, 1], states[g, 2]
        ln = log_norm[g]
        live = alive[g]
        acc = 1.0
        ci = 0
        while ci < n_ck and ck_steps[ci] == 0:
            ck_log[ci, g] = ln if live else -np.inf
            ck_states[ci, g, 0], ck_states[ci, g, 1], ck_states[ci, g, 2] = x, y, z
            ci += 1
        pg = parts[g]
        for k in range(n):
            if live:
                tr, a, b, c = _apply(pg[0], x, y, z)
                for m in range(1, n_parts):
                    w = coef[k, m]
                    tm, am, bm, cm = _apply(pg[m], x, y, z)
                    tr += w * tm
                    a += w * am
                    b += w * bm
                    c += w * cm
                if not tr > 0.0:
                    raise ValueError("non-positive trace in linear diffusive step; dt too large")
                x, y, z = a / tr, b / tr, c / tr
                x, y, z, hit = _clamp(x, y, z, tol)
                clamps += hit
                acc *= tr
                if acc < _FOLD_LO or acc > _FOLD_HI:
                    ln += np.log(acc)
                    acc = 1.0
            if ci < n_ck and ck_steps[ci] == k + 1:
                if live:
                    ln += np.log(acc)
                    acc = 1.0
                while ci < n_ck and ck_steps[ci] == k + 1:
                    ck_log[ci, g] = ln
                    ck_states[ci, g, 0], ck_states[ci, g, 1], ck_states[ci, g, 2] = x, y, z
                    ci += 1
        if live:
            ln += np.log(acc)
        states[g, 0], states[g, 1], states[g, 2] = x, y, z
        log_norm[g] = ln
        alive[g] = live
    return clamps
