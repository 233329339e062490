import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shocklab.linop import assemble
from shocklab.model import EndstatePair, jacobians, validate_structure
from shocklab.profile import (ProfileError, ReducedODE, constant_profile, decay_fit, lax_classification,
                              linear_decay_rate, profile_residual, rankine_hugoniot, solve_profile)


def p_system_jump(v_minus, v_plus, gamma=2.0, a=1.0):
    """Closed-form Lax 2-shock of the isentropic p-system: s^2 = -[p]/[v], [u] = -s[v]."""
    dp = a * v_plus ** -gamma - a * v_minus ** -gamma
    s = -np.sqrt(-dp / (v_plus - v_minus))
    return s, -s * (v_plus - v_minus)


def test_rankine_hugoniot_matches_closed_form(iso, iso_shock):
    Um, Up, s = iso_shock
    s_ref, du = p_system_jump(1.0, 0.5)
    assert s == pytest.approx(-np.sqrt(6.0), rel=1e-12)
    assert s == pytest.approx(s_ref, rel=1e-12)
    assert Up[1] - Um[1] == pytest.approx(du, rel=1e-12)


@given(vm=st.floats(0.8, 2.0), frac=st.floats(0.3, 0.9), um=st.floats(-1, 1))
def test_rankine_hugoniot_property(iso, vm, frac, um):
    Um = np.array([vm, um])
    Up, s = rankine_hugoniot(iso, Um, fixed={0: frac * vm}, lax=True)
    assert np.allclose(iso.flux(Up) - iso.flux(Um), s * (Up - Um), atol=1e-10)
    s_ref, du = p_system_jump(vm, frac * vm)
    assert s == pytest.approx(s_ref, rel=1e-9)
    es = EndstatePair.from_states(iso, Um, Up)
    assert lax_classification(es, s)["is_lax"]


def test_lax_classification_counts(iso_endstates, iso_shock):
    c = lax_classification(iso_endstates, iso_shock[2])
    assert c == {"p_minus_unstable_dim": 2, "p_plus_stable_dim": 1, "n": 2, "is_lax": True}


def test_reversed_jump_is_not_lax(iso, iso_shock):
    Um, Up, s = iso_shock
    es = EndstatePair.from_states(iso, Up, Um)
    assert not lax_classification(es, s)["is_lax"]
    with pytest.raises(ProfileError):
        solve_profile(iso, es, s, L=20.0, N=512)


def test_profile_residual_and_connection(iso_profile):
    p = iso_profile
    assert p.residual < 1e-8
    assert np.allclose(p.U[0], p.endstates.U_minus, atol=1e-6)
    assert np.allclose(p.U[-1], p.endstates.U_plus, atol=1e-6)
    # the specific volume decreases monotonically across a compressive shock
    assert np.all(np.diff(p.U[:, 0]) <= 1e-14)


def test_profile_satisfies_integrated_ode(iso_profile):
    p = iso_profile
    csys = p.system
    assert profile_residual(csys, p.x, p.U, p.endstates.U_minus) < 1e-8


def test_decay_rate_matches_linearization(iso_profile):
    p = iso_profile
    red = ReducedODE(p.system, p.endstates.U_minus, p.endstates.U_plus)
    k = red.k
    rate = linear_decay_rate(red.linearization(p.endstates.U_minus[k:]), red.linearization(p.endstates.U_plus[k:]))
    assert rate == pytest.approx(p.decay_rate, rel=1e-12)
    # reduced scalar ODE (nu/v) u' = -s(u - u-) + p(v) - p(v-) with v - v- = -(u - u-)/s
    s = p.s
    dp = lambda v: -2.0 * v ** -3
    nu = 1.0
    rates = [abs(v / nu * (-s - dp(v) / s)) for v in (1.0, 0.5)]
    assert rate == pytest.approx(min(rates), rel=1e-9)
    fit = decay_fit(p)
    assert abs(fit["eta"] - rate) / rate < 0.1


def test_discrete_steady_residual_is_second_order(iso_profile):
    res = []
    for N in (401, 801, 1601):
        Lop = assemble(iso_profile.resample(N, 20.0))
        res.append(np.sqrt(Lop.h * np.sum(Lop.base ** 2)))
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(orders >= 1.9)


def test_resample_evaluates_stored_solution(iso_profile):
    q = iso_profile.resample(301, 30.0)
    assert np.allclose(q.U, iso_profile.evaluate(q.x), atol=1e-12)
    assert np.allclose(q.U[0], iso_profile.endstates.U_minus, atol=1e-9)


def test_constant_profile(iso):
    c = constant_profile(iso, np.array([0.8, 0.1]), L=10.0, N=101)
    assert np.all(c.Ux == 0)
    assert np.allclose(c.evaluate(np.array([-3.0, 4.0])), [[0.8, 0.1], [0.8, 0.1]])


def test_full_ns_profile(ns, ns_shock):
    Um, Up, s = ns_shock
    es = EndstatePair.from_states(ns, Um, Up)
    assert lax_classification(es, s)["is_lax"]
    p = solve_profile(ns, es, s, N=1024)
    assert p.residual < 1e-8
    rep = validate_structure(ns.comoving(s), list(p.U[::64]), endstates=es)
    assert rep.all_pass, rep.failed()


def test_full_ns_weak_shock_speed_near_acoustic(ns):
    # |v+ - v-| = 0.1 is weak only relative to v-, so take v- = 10
    Um = np.array([10.0, 0.0, 2.5])
    Up, s = rankine_hugoniot(ns, Um, fixed={0: 9.9}, lax=True)
    c = np.max(np.abs(np.linalg.eigvals(jacobians(ns, Um)[0]).real))
    assert abs(abs(s) - c) / c < 0.01
