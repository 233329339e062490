import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shocklab.linop import apply_projection, assemble, synthetic_unstable, unstable_spectrum
from shocklab.manifold import (TruncatedNonlinearity, WeightedTrajectory, contraction_ratio, cutoff,
                               default_rates, fixed_point, graph_map, initial_phase_fit, physical_margin)
from shocklab.norms import mixed_norm


@pytest.fixture(scope="module")
def synth(iso_profile):
    Lop = synthetic_unstable(assemble(iso_profile.resample(201, 30.0)))
    spec = unstable_spectrum(Lop)
    x = Lop.x
    d = np.exp(-0.5 * (x - 1.0) ** 2)[:, None] * np.array([1.0, -0.5])
    d = apply_projection(spec, "cs", d)
    k = Lop.n - Lop.profile.system.r
    return Lop, spec, d / mixed_norm(Lop.weights, d, k)


def test_cutoff_shape():
    r = np.linspace(0, 3, 3001)
    rho = cutoff(r)
    assert np.all(rho[r <= 1] == 1.0) and np.all(rho[r >= 2] == 0.0)
    assert np.all(np.diff(rho) <= 0)
    # C^2 junctions: first and second differences vanish at both ends of the ramp
    h = r[1] - r[0]
    for r0 in (1.0, 2.0):
        d1 = (cutoff(r0 + h) - cutoff(r0 - h)) / (2 * h)
        d2 = (cutoff(r0 + h) - 2 * cutoff(r0) + cutoff(r0 - h)) / h ** 2
        assert abs(d1) < 1e-5 and abs(d2) < 1e-2


@given(r=st.floats(0, 10))
def test_cutoff_range(r):
    assert 0.0 <= float(cutoff(r)) <= 1.0


def test_truncated_nonlinearity(synth):
    Lop, _, d = synth
    Ntr = TruncatedNonlinearity(Lop)
    assert 0 < Ntr.delta <= 0.1 * physical_margin(Lop) + 1e-15
    assert np.all(Ntr(np.zeros_like(d)) == 0)
    assert np.all(Ntr(3.0 * Ntr.delta * d) == 0)
    small = 1e-3 * Ntr.delta * d
    assert np.allclose(Ntr(small), Lop.nonlinear(small))
    with pytest.raises(ValueError):
        TruncatedNonlinearity(Lop, 0.0)


def test_nonlinearity_is_quadratic(synth):
    Lop, _, d = synth
    n1 = np.max(np.abs(Lop.nonlinear(1e-3 * d)))
    n2 = np.max(np.abs(Lop.nonlinear(5e-4 * d)))
    assert np.log2(n1 / n2) == pytest.approx(2.0, abs=0.05)


def test_rates_ordering(synth):
    _, spec, _ = synth
    eta, beta, omega = default_rates(spec)
    assert 3 * omega < eta < beta
    with pytest.raises(ValueError):
        WeightedTrajectory(np.zeros(1), np.zeros((1, 2, 2)), 1.0, 2.0, 0.5, np.ones(2), 1)


def test_graph_map_zero_and_tangency(synth):
    Lop, spec, d = synth
    Ntr = TruncatedNonlinearity(Lop, 0.05)
    Phi0, info = graph_map(Ntr, spec, np.zeros_like(d))
    assert np.all(Phi0 == 0) and info["converged"]
    k = Lop.n - Lop.profile.system.r
    norms = []
    for a in (2e-3, 1e-3):
        Phi, info = graph_map(Ntr, spec, a * d, tol=1e-13)
        assert info["converged"]
        # the graph lies in the unstable space
        assert np.allclose(apply_projection(spec, "u", Phi), Phi, atol=1e-12 + 1e-8 * np.max(np.abs(Phi)))
        norms.append(mixed_norm(Lop.weights, Phi, k))
    assert np.log2(norms[0] / norms[1]) == pytest.approx(2.0, abs=0.2)


def test_contraction_scales_with_radius(synth):
    Lop, spec, d = synth
    ratios = []
    for delta in (0.02, 0.01):
        _, hist = fixed_point(TruncatedNonlinearity(Lop, delta), spec, 0.5 * delta * d, tol=1e-13)
        ratios.append(contraction_ratio(hist))
    assert 0 < ratios[1] < ratios[0] < 1
    assert ratios[1] / ratios[0] == pytest.approx(0.5, abs=0.15)


def test_fixed_point_rejects_large_datum(synth):
    Lop, spec, d = synth
    Ntr = TruncatedNonlinearity(Lop, 0.01)
    with pytest.raises(ValueError):
        fixed_point(Ntr, spec, 0.02 * d)


def test_initial_phase_fit_recovers_shift(iso_profile):
    x = np.linspace(-15, 15, 601)
    U0 = iso_profile.evaluate(x - 0.3)
    a, res = initial_phase_fit(U0, iso_profile, x)
    assert a == pytest.approx(0.3, abs=1e-6)
    assert res < 1e-10
