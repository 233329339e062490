import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import erf

from shocklab.dynamics import (TARGETS, CFLError, EKernel, IMEXStepper, decay_report, errfn, evolve_linear,
                               evolve_nonlinear, fit_with_ci, flux_residual, shift_perturbation, track_phase)
from shocklab.linop import assemble
from shocklab.profile import constant_profile


@pytest.fixture(scope="module")
def small(iso_profile):
    return iso_profile.resample(301, 30.0)


@pytest.fixture(scope="module")
def small_op(small):
    return assemble(small)


@pytest.fixture(scope="module")
def kernel(iso_profile):
    return EKernel.from_profile(iso_profile)


def test_errfn():
    z = np.array([-3.0, -0.5, 0.0, 0.7, 4.0])
    assert np.allclose(errfn(z), 0.5 * (1 + erf(z)))
    assert errfn(0.0) == 0.5


def test_kernel_incoming_modes(kernel, iso_endstates, iso_shock):
    # Lax 2-shock: both families enter from the left, one from the right
    assert len(kernel.a_minus) == 2 and len(kernel.a_plus) == 1
    assert np.all(kernel.a_minus > 0) and np.all(kernel.a_plus < 0)
    s = iso_shock[2]
    assert np.allclose(np.sort(kernel.a_minus), np.sort(iso_endstates.eig_minus - s))
    with pytest.raises(ValueError):
        kernel.eval(np.zeros(1), 0.0)
    with pytest.raises(ValueError):
        kernel.eval(np.zeros(1), 1.0, "xx")


@given(y=st.floats(-8, 8).filter(lambda v: abs(v) > 1e-2), t=st.floats(0.2, 5.0))
def test_kernel_derivatives_match_finite_differences(kernel, y, t):
    h = 1e-5
    ev = kernel.eval
    ey = (ev([y + h], t) - ev([y - h], t)) / (2 * h)
    et = (ev([y], t + h) - ev([y], t - h)) / (2 * h)
    ety = (ev([y], t + h, "y") - ev([y], t - h, "y")) / (2 * h)
    assert np.allclose(ev([y], t, "y"), ey, atol=1e-6)
    assert np.allclose(ev([y], t, "t"), et, atol=1e-6)
    assert np.allclose(ev([y], t, "ty"), ety, atol=1e-6)


def test_kernel_limits(kernel):
    y = np.array([-50.0, 50.0])
    assert np.allclose(kernel.eval(y, 1.0), 0.0)
    # behind the incoming characteristics the kernel is a plateau of l_k
    assert np.allclose(kernel.eval([-20.0], 200.0), kernel.l_minus.sum(0), atol=1e-6)
    assert np.allclose(kernel.eval([20.0], 200.0), kernel.l_plus.sum(0), atol=1e-6)


def test_imex_second_order(iso):
    prof = constant_profile(iso, np.array([0.8, 0.1]), L=5.0, N=41)
    Lop = assemble(prof)
    A = Lop.dense()
    x = Lop.x
    V0 = np.exp(-x ** 2)[:, None] * np.array([1.0, 0.5])
    T = 0.5
    exact = (sla.expm(T * A) @ V0.reshape(-1)).reshape(V0.shape)
    errs = []
    for K in (20, 40, 80):
        for _, V in IMEXStepper(Lop, T / K).iterate(V0, K):
            pass
        errs.append(np.max(np.abs(V - exact)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


def test_forced_linear_evolution_matches_duhamel(iso):
    prof = constant_profile(iso, np.array([0.8, 0.1]), L=5.0, N=41)
    Lop = assemble(prof)
    A = Lop.dense()
    f = np.exp(-Lop.x ** 2)[:, None] * np.array([0.0, 1.0])
    T = 0.4
    traj = evolve_linear(Lop, np.zeros_like(f), T, forcing=lambda t: f, dt=T / 200, record_dt=T)
    # int_0^T e^{sA} f ds is the top-right block of expm(T [[A, f], [0, 0]])
    m = len(A)
    aug = np.zeros((m + 1, m + 1))
    aug[:m, :m], aug[:m, m] = A, f.reshape(-1)
    exact = sla.expm(T * aug)[:m, m].reshape(f.shape)
    assert np.max(np.abs(traj.states[-1] - exact)) < 1e-4 * np.max(np.abs(exact))


def test_cfl_violation(small_op):
    with pytest.raises(CFLError):
        evolve_linear(small_op, np.zeros((small_op.N, 2)), 1.0, dt=10 * small_op.h)


def test_zero_perturbation_stays_zero(small, small_op):
    traj = evolve_nonlinear(small_op, np.zeros((small_op.N, 2)), 1.0)
    assert all(np.all(V == 0) for V in traj.states)
    assert np.all(flux_residual(small_op, np.zeros((small_op.N, 2))) == 0)


def test_flux_residual_quadratic(small_op):
    V = np.exp(-small_op.x ** 2)[:, None] * np.array([0.1, -0.2])
    r1 = np.max(np.abs(flux_residual(small_op, 1e-2 * V)))
    r2 = np.max(np.abs(flux_residual(small_op, 5e-3 * V)))
    assert np.log2(r1 / r2) == pytest.approx(2.0, abs=0.05)


def test_shift_identity(small):
    x = small.x
    W = np.exp(-x ** 2)[:, None] * np.array([0.1, 0.05])
    assert np.allclose(shift_perturbation(small, x, W, 0.0), W, atol=1e-14)
    # shifting a translate back recovers the profile
    U1 = small.evaluate(x + 0.25) - small.evaluate(x)
    assert np.max(np.abs(shift_perturbation(small, x, U1, -0.25)[np.abs(x) < 10])) < 1e-3


def test_translate_phase(small, small_op, kernel):
    x = small.x
    shift = 0.2
    V0 = small.evaluate(x - shift) - small.evaluate(x)
    traj = evolve_nonlinear(small_op, V0, 8.0, record_dt=0.05, contamination=None)
    traj = track_phase(traj, kernel, small_op)
    assert traj.alpha[-1] == pytest.approx(shift, abs=0.02)
    assert abs(traj.alpha_dot[-1]) < 1e-2


def test_fit_with_ci_exact_power_law():
    t = np.linspace(0, 100, 400)
    y = 3.0 * (1 + t) ** -0.75
    slope, ci, icpt = fit_with_ci(t, y, 5.0, 100.0)
    assert slope == pytest.approx(-0.75, abs=1e-10)
    assert icpt == pytest.approx(np.log(3.0), abs=1e-10)
    assert ci < 1e-8
    assert np.isnan(fit_with_ci(t, y, 200.0, 300.0)[0])


def test_decay_report_fields(small, small_op, kernel):
    x = small.x
    V0 = 1e-3 * np.exp(-(x + 3) ** 2)[:, None] * np.array([1.0, 0.0])
    traj = track_phase(evolve_nonlinear(small_op, V0, 6.0, record_dt=0.1, contamination=None), kernel, small_op)
    rep = decay_report(traj, fit_start=1.0)
    assert set(rep["exponents"]) == set(TARGETS)
    for row in rep["exponents"].values():
        assert {"exponent", "ci95", "intercept", "target"} <= set(row)
    assert not rep["degenerate"]
    assert np.all(np.diff(rep["zeta"]) >= 0)
    assert rep["window_ok"] is False
    with pytest.raises(ValueError):
        decay_report(evolve_nonlinear(small_op, V0, 0.5, contamination=None))
