import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shocklab.linop import (DiscretizationError, apply_projection, assemble, check_spectral_conditions,
                            coordinates, liu_majda, make_discretization, semigroup_decay_probe, symbol,
                            synthetic_unstable, unstable_spectrum)
from shocklab.model import jacobians
from shocklab.norms import inner, lp_norm
from shocklab.profile import constant_profile


@pytest.fixture(scope="module")
def op_small(iso_profile):
    return assemble(iso_profile.resample(201, 20.0))


@pytest.fixture(scope="module")
def synthetic(iso_profile):
    Lop = synthetic_unstable(assemble(iso_profile.resample(401, 30.0)))
    return Lop, unstable_spectrum(Lop)


@pytest.mark.parametrize("order", [2, 4])
@pytest.mark.parametrize("bc", ["dirichlet_endstate", "outflow_extrapolation"])
def test_jacobian_matches_central_differences(iso_profile, order, bc):
    q = iso_profile.resample(121, 20.0)
    Lop = assemble(q, order=order, bc=bc)
    rng = np.random.default_rng(3)
    d = rng.normal(size=q.U.shape)
    eps = 1e-6
    fd = (Lop.disc.rhs(q.U + eps * d) - Lop.disc.rhs(q.U - eps * d)) / (2 * eps)
    assert np.max(np.abs(Lop.apply(d) - fd)) < 1e-6 * np.max(np.abs(fd))


def test_constant_state_symbol(iso):
    U = np.array([0.8, 0.1])
    c = constant_profile(iso, U, L=10.0, N=2001)
    Lop = assemble(c)
    A = jacobians(iso, U)[0]
    B = iso.viscosity(U)
    for xi in (0.3, 1.0, 2.0):
        exact = -1j * xi * A - xi ** 2 * B
        got = symbol(Lop, xi)[0]
        assert np.max(np.abs(got - exact)) < 5 * (xi * Lop.h) ** 2 * (1 + np.max(np.abs(exact)))


@pytest.mark.parametrize("order,min_rate", [(2, 1.8), (4, 3.6)])
def test_zero_mode_convergence(iso_profile, order, min_rate):
    res = []
    for N in (401, 801, 1601):
        Lop = assemble(iso_profile.resample(N, 20.0), order=order)
        w = Lop.weights
        res.append(lp_norm(w, Lop.apply(Lop.Ubar_x), 2) / lp_norm(w, Lop.Ubar_x, 2))
    rates = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(rates >= min_rate)


def test_bad_discretization_rejected(iso_profile):
    q = iso_profile.resample(101, 20.0)
    with pytest.raises(DiscretizationError):
        make_discretization(q, order=3)
    with pytest.raises(DiscretizationError):
        make_discretization(q, bc="periodic")


def test_stable_shock_has_no_unstable_modes(op_small, iso_profile):
    spec = unstable_spectrum(op_small)
    assert spec.p == 0
    D = check_spectral_conditions(op_small, spec, op_small.profile)
    assert D.all_pass, D.to_dict()
    # the translational eigenvalue sits at the origin and is aligned with U_bar'
    j = np.argmin(np.abs(spec.all_eigenvalues))
    assert abs(spec.all_eigenvalues[j]) < 1e-3
    assert spec.all_zero_alignment[j] > 0.99


def test_liu_majda_independent(iso_endstates, iso_shock):
    s = iso_shock[2]
    det, cond, _ = liu_majda(iso_endstates, s)
    # outgoing mode: the fast right-moving family at U+ (speed sqrt(2/v^3) = 4)
    v = iso_endstates.U_plus[0]
    c = np.sqrt(2.0 / v ** 3)
    r = np.array([1.0, -c]) / np.hypot(1.0, c)
    M = np.column_stack([r, iso_endstates.jump])
    assert abs(det) == pytest.approx(abs(np.linalg.det(M)), rel=1e-10)
    assert abs(det) > 1e-3 and cond < 1e6


def test_synthetic_eigenvalue(synthetic):
    Lop, spec = synthetic
    assert spec.p == 1
    lam = np.linalg.eigvals(Lop.dense())
    assert spec.eigenvalues[0].real == pytest.approx(np.max(lam.real), rel=1e-8)
    assert abs(spec.eigenvalues[0].imag) < 1e-10
    assert np.max(np.abs(Lop.apply(spec.phi[0]) - spec.eigenvalues[0] * spec.phi[0])) < 1e-8


def test_projection_algebra(synthetic):
    Lop, spec = synthetic
    x = Lop.x
    f = np.exp(-0.5 * (x - 1.0) ** 2)[:, None] * np.array([1.0, -2.0])
    Pu = apply_projection(spec, "u", f)
    assert np.max(np.abs(apply_projection(spec, "u", Pu) - Pu)) < 1e-10
    assert np.allclose(Pu + apply_projection(spec, "cs", f), f)
    assert np.allclose(apply_projection(spec, "u", np.real(spec.phi[0])), np.real(spec.phi[0]), atol=1e-10)
    assert coordinates(spec, np.real(spec.phi[0]))[0] == pytest.approx(1.0, abs=1e-10)
    # the projection commutes with L
    LPf = Lop.apply(Pu)
    PLf = apply_projection(spec, "u", Lop.apply(f))
    assert np.max(np.abs(LPf - PLf)) < 1e-8 * max(1.0, np.max(np.abs(LPf)))
    with pytest.raises(ValueError):
        apply_projection(spec, "u", f[:-1])


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), c=st.floats(-5, 5))
def test_projection_is_linear(synthetic, a, b, c):
    Lop, spec = synthetic
    x = Lop.x
    f = np.exp(-0.5 * (x - c) ** 2)[:, None] * np.array([1.0, 0.5])
    g = np.exp(-0.25 * (x + 1.0) ** 2)[:, None] * np.array([-1.0, 2.0])
    lhs = apply_projection(spec, "u", a * f + b * g)
    rhs = a * apply_projection(spec, "u", f) + b * apply_projection(spec, "u", g)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_synthetic_keeps_translational_mode(synthetic, iso_profile):
    Lop, _ = synthetic
    base = assemble(Lop.profile)
    Ux = Lop.Ubar_x
    assert np.max(np.abs(Lop.apply(Ux) - base.apply(Ux))) < 1e-12


def test_decay_probe_zero_datum(op_small):
    tab = semigroup_decay_probe(op_small, None, np.zeros((op_small.N, 2)), np.linspace(0, 2, 5))
    assert all(np.all(v == 0) for v in tab.norms.values())


def test_decay_probe_removes_translation(op_small):
    # U_bar' is a steady state up to the O(h^2) discrete mismatch, which is all that remains
    Ux = op_small.Ubar_x
    tab = semigroup_decay_probe(op_small, None, Ux, np.linspace(0, 1, 5), contamination=1.0)
    assert np.max(tab.norms[2]) < 0.05 * lp_norm(op_small.weights, Ux, 2)
    assert np.allclose(tab.zero_mode, 1.0, atol=0.05)
    assert inner(op_small.weights, Ux, Ux) > 0
