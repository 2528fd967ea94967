import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rabifilter.bloch import BlochState, SystemParams, master_generator
from rabifilter.operators import (
    ID2, SIGMA, SX, SY, Scheme, SchemeConfig, current_coefficients, diffusive_parts, effects,
    grid_transfers, jump_kraus, kraus_transfer, transfer_set,
)

P = SystemParams()
DT = 1e-3


def bloch_of(rho):
    """Unnormalised (n, X, Y, Z) of a 2x2 operator."""
    return np.real([np.trace(rho), np.trace(SX @ rho), np.trace(SY @ rho),
                    rho[0, 0] - rho[1, 1]])


def random_state(rng):
    v = rng.normal(size=3)
    return v * rng.uniform() / np.linalg.norm(v)


def test_scheme_parse():
    assert Scheme.parse("Homodyne-Y") is Scheme.HOMODYNE_Y
    assert Scheme.parse("het") is Scheme.HETERODYNE
    with pytest.raises(ValueError):
        Scheme.parse("photon")


def test_scheme_config_defaults():
    assert SchemeConfig.make("homodyne_y").phi == pytest.approx(np.pi / 2)
    assert SchemeConfig.make("homodyne_x").phi == 0.0
    assert SchemeConfig.make("adaptive").mu_magnitude == 0.5
    with pytest.raises(ValueError):
        SchemeConfig.make("homodyne_x", phi=7.0)
    with pytest.raises(ValueError):
        SchemeConfig.make("adaptive", mu_magnitude=0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10), st.floats(-1, 1))
def test_jump_effects_complete(omega, mu):
    m0, m1 = jump_kraus(omega, 1.0, mu, DT)
    total = m0.conj().T @ m0 + m1.conj().T @ m1
    assert np.max(np.abs(total - ID2)) < 1e-14


def test_literal_no_jump_operator_is_complete_to_second_order():
    # M0 = 1 - (i H + M1^dag M1 / 2 / dt) dt misses completeness by O(dt^2)
    def defect(dt, omega=8.0, mu=0.5):
        m1 = np.sqrt(dt) * (SIGMA + mu * ID2)
        h = 0.5 * omega * SX - 0.5 * mu * SY
        m0 = ID2 - (1j * h + 0.5 * m1.conj().T @ m1 / dt) * dt
        return np.max(np.abs(m0.conj().T @ m0 + m1.conj().T @ m1 - ID2))
    ratio = defect(1e-3) / defect(5e-4)
    assert ratio == pytest.approx(4.0, rel=0.01)


@pytest.mark.parametrize("kind", list(Scheme))
def test_transfer_matches_brute_force(kind):
    sc = SchemeConfig.make(kind)
    rng = np.random.default_rng(0)
    ts = transfer_set(3.3, 1.0, sc, DT)
    for _ in range(5):
        v = random_state(rng)
        rho = BlochState.from_array(v).density_matrix()
        hv = np.concatenate(([1.0], v))
        if sc.kind.is_jump:
            for s, mu in enumerate([0.5, -0.5] if kind is Scheme.ADAPTIVE else [0.0]):
                m0, m1 = jump_kraus(3.3, 1.0, mu, DT)
                assert np.allclose(ts.no_jump[s] @ hv, bloch_of(m0 @ rho @ m0.conj().T), atol=1e-14)
                assert np.allclose(ts.jump[s] @ hv, bloch_of(m1 @ rho @ m1.conj().T), atol=1e-14)
        else:
            a, b = diffusive_parts(3.3, 1.0, sc, DT)
            current = complex(rng.normal(), rng.normal()) * 30
            if sc.kind.is_homodyne:
                current = current.real
            m = a + (np.conj(current) if kind is Scheme.HETERODYNE else current) * b
            coef = current_coefficients(sc, np.array([current]))[0]
            lhs = np.tensordot(coef, ts.parts, axes=1) @ hv
            assert np.allclose(lhs, bloch_of(m @ rho @ m.conj().T), atol=1e-12)


@pytest.mark.parametrize("kind", list(Scheme))
def test_average_map_preserves_trace(kind):
    sc = SchemeConfig.make(kind)
    ts = transfer_set(6.0, 1.0, sc, DT)
    if sc.kind.is_jump:
        avg = ts.no_jump + ts.jump
        for s in range(avg.shape[0]):
            assert np.allclose(avg[s][0], [1, 0, 0, 0], atol=1e-15)
    else:
        # Gaussian reference: E[I] = 0, E[I^2] (or E|I|^2) = 1/dt
        avg = ts.parts[0] + ts.parts[-1] / DT
        assert np.allclose(avg[0], [1, 0, 0, 0], atol=1e-14)


@pytest.mark.parametrize("kind", list(Scheme))
def test_average_map_generates_master_equation(kind):
    sc = SchemeConfig.make(kind)
    omega = 4.0
    ts = transfer_set(omega, 1.0, sc, DT)
    if sc.kind.is_jump:
        avg = (ts.no_jump + ts.jump)[0]
    else:
        avg = ts.parts[0] + ts.parts[-1] / DT
    gen = (avg - np.eye(4)) / DT
    assert np.max(np.abs(gen - master_generator(omega, P))) < 2 * omega**2 * DT


def test_direct_detection_probability():
    f0, f1 = effects(5.0, 1.0, SchemeConfig.make("direct"), DT)
    v = np.array([0.0, 10 / 51, -1 / 51])
    rho = BlochState.from_array(v).density_matrix()
    assert np.trace(f1 @ rho).real / DT == pytest.approx(25 / 51, rel=1e-12)


def test_adaptive_rate_from_ground():
    sc = SchemeConfig.make("adaptive")
    for sign in (1, -1):
        _, f1 = effects(0.0, 1.0, sc, DT, sign)
        rho = BlochState.ground().density_matrix()
        assert np.trace(f1 @ rho).real / DT == pytest.approx(0.25, rel=1e-12)


@pytest.mark.parametrize("kind, state, mean", [
    ("homodyne_x", (1, 0, 0), 1.0),
    ("homodyne_x", (0, 0, -1), 0.0),
    ("homodyne_y", (0, 1, 0), 1.0),
    ("homodyne_y", (1, 0, 0), 0.0),
])
def test_homodyne_current_mean_from_operators(kind, state, mean):
    # E[I] = (1/dt) * Tr of the I-linear part, to O(dt)
    ts = transfer_set(0.0, 1.0, SchemeConfig.make(kind), DT)
    hv = np.concatenate(([1.0], state))
    assert (ts.parts[1] @ hv)[0] / DT == pytest.approx(mean, abs=2 * DT)


def test_heterodyne_current_mean_from_operators():
    ts = transfer_set(0.0, 1.0, SchemeConfig.make("heterodyne"), DT)
    hv = np.array([1.0, 0.6, 0.8, 0.0])
    # Re and Im parts carry Tr terms (sigma + sigma^dag) and i(sigma^dag - sigma) -> E[I] = <s>
    p, q = (ts.parts[1] @ hv)[0] / DT, (ts.parts[2] @ hv)[0] / DT
    assert 0.5 * p == pytest.approx(0.3, abs=DT)
    assert 0.5 * q == pytest.approx(-0.4, abs=DT)


def test_grid_transfers_shapes():
    w = np.linspace(-5, 5, 7)
    t0, t1 = grid_transfers(w, 1.0, SchemeConfig.make("adaptive"), DT)
    assert t0.shape == t1.shape == (2, 7, 4, 4)
    parts = grid_transfers(w, 1.0, SchemeConfig.make("heterodyne"), DT)
    assert parts.shape == (7, 4, 4, 4)


def test_dt_too_large_rejected():
    with pytest.raises(ValueError):
        jump_kraus(1.0, 1.0, 0.5, 1.0)


def test_transfer_matrices_are_read_only():
    ts = transfer_set(1.0, 1.0, SchemeConfig.make("direct"), DT)
    with pytest.raises(ValueError):
        ts.jump[0, 0, 0] = 1.0


def test_kraus_transfer_of_identity():
    assert np.allclose(kraus_transfer(ID2), np.eye(4))
