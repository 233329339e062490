"""Discrete center-stable manifold by a truncated Picard scheme.

Solutions are split as v = w + z with w in the center-stable subspace and z
in the (finite-dimensional) unstable subspace.  The center part is
integrated forward from w0, the unstable part is the backward integral
z(t) = -int_t^T exp(L(t-s)) Pi_u N(v(s)) ds, and the map z -> z is iterated
to a fixed point.  The manifold is the graph w0 -> w0 + Phi(w0) with
Phi(w0) = z(0).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .dynamics import IMEXStepper, default_dt
from .linop import LinearOperator, SpectralData, apply_projection
from .model import PhysicalDomainError
from .norms import inner, lp_norm, mixed_norm, trapezoid_weights


class ContractionError(RuntimeError):
    pass


def cutoff(r):
    """Smooth cutoff: 1 on [0, 1], 0 on [2, inf), C^2 quintic smoothstep in between."""
    r = np.asarray(r, float)
    u = np.clip(r - 1.0, 0.0, 1.0)
    return 1.0 - u ** 3 * (10.0 - 15.0 * u + 6.0 * u ** 2)


def physical_margin(Lop: LinearOperator, c_max: float = 10.0, iters: int = 40) -> float:
    """Largest c such that U_bar +- c e_j stays physical for every component j (bisection)."""
    sys, U = Lop.profile.system, Lop.Ubar
    best = c_max
    for j in range(Lop.n):
        for sgn in (1.0, -1.0):
            lo, hi = 0.0, best
            e = np.zeros(Lop.n)
            e[j] = sgn
            if np.all(sys.is_physical(U + hi * e)):
                continue
            for _ in range(iters):
                mid = 0.5 * (lo + hi)
                if np.all(sys.is_physical(U + mid * e)):
                    lo = mid
                else:
                    hi = mid
            best = min(best, lo)
    return float(best)


class TruncatedNonlinearity:
    """N^delta(V) = rho(|V|_{H^{1,2}} / delta) N(V), N the conservative discrete nonlinear residual."""

    def __init__(self, Lop: LinearOperator, delta: Optional[float] = None):
        self.Lop = Lop
        self.k = Lop.n - Lop.profile.system.r
        self.w = trapezoid_weights(Lop.x)
        self.delta = float(delta) if delta is not None else 0.1 * physical_margin(Lop)
        if self.delta <= 0:
            raise ValueError("truncation radius must be positive")

    def norm(self, V):
        return mixed_norm(self.w, V, self.k)

    def untruncated(self, V):
        if not np.all(self.Lop.profile.system.is_physical(self.Lop.Ubar + V)):
            raise PhysicalDomainError("U_bar + V leaves the physical domain; shrink the amplitude")
        return self.Lop.nonlinear(V)

    def __call__(self, V):
        rho = float(cutoff(self.norm(V) / self.delta))
        if rho == 0.0:
            return np.zeros_like(V)
        return rho * self.untruncated(V)


def eval_truncated(Ntr: TruncatedNonlinearity, V):
    return Ntr(V)


@dataclass
class WeightedTrajectory:
    times: np.ndarray
    states: np.ndarray  # (K, N, n)
    eta: float
    beta: float
    omega: float
    weights: np.ndarray
    k: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (3.0 * self.omega < self.eta < self.beta):
            raise ValueError(f"rates must satisfy 3*omega < eta < beta, got {self.omega}, {self.eta}, {self.beta}")

    def norms(self):
        return np.array([mixed_norm(self.weights, V, self.k) for V in self.states])

    def weighted_norm(self, states=None):
        """sup_t e^{-eta t} |.|_{H^{1,2}} over the grid times."""
        S = self.states if states is None else states
        vals = np.array([mixed_norm(self.weights, V, self.k) for V in S])
        return float(np.max(np.exp(-self.eta * self.times) * vals)) if len(vals) else 0.0

    def weighted_l2(self, states=None):
        S = self.states if states is None else states
        vals = np.array([lp_norm(self.weights, V, 2) for V in S])
        return float(np.max(np.exp(-self.eta * self.times) * vals)) if len(vals) else 0.0

    def at(self, t):
        return self.states[int(round((t - self.times[0]) / (self.times[1] - self.times[0])))]


def default_rates(spec: SpectralData):
    beta = float(np.min(np.real(spec.eigenvalues))) if spec.p else 1.0
    eta = beta / 2.0
    return eta, beta, eta / 6.0


def _time_grid(Lop, spec, T, dt, tail_tol):
    eta, beta, omega = default_rates(spec)
    if T is None:
        T = np.log(1.0 / tail_tol) / beta
    if dt is None:
        dt = default_dt(Lop, 0.5)
    K = int(np.ceil(T / dt))
    return np.arange(K + 1) * (T / K), (eta, beta, omega)


def center_flow(Ntr: TruncatedNonlinearity, spec: SpectralData, z_traj: WeightedTrajectory, w0) -> WeightedTrajectory:
    """w_t = L w + Pi_cs N^delta(w + z) on the time grid of z, re-projected onto the center-stable space."""
    Lop = Ntr.Lop
    times = z_traj.times
    dt = times[1] - times[0]
    w0 = apply_projection(spec, "cs", w0)
    Z = z_traj.states

    def explicit(V, t):
        j = int(round(t / dt))
        return apply_projection(spec, "cs", Ntr(V + Z[j]))

    def project(V):
        return apply_projection(spec, "cs", V)

    stepper = IMEXStepper(Lop, dt)
    out = np.empty_like(Z)
    out[0] = w0
    for j, (t, V) in enumerate(stepper.iterate(w0, len(times) - 1, explicit, 0.0, project), 1):
        if not np.all(np.isfinite(V)):
            raise FloatingPointError(f"center flow blew up at t={t:.4g}")
        out[j] = V
    return WeightedTrajectory(times, out, z_traj.eta, z_traj.beta, z_traj.omega, z_traj.weights, z_traj.k)


def unstable_integral(Ntr: TruncatedNonlinearity, spec: SpectralData, w_traj: WeightedTrajectory,
                      z_traj: WeightedTrajectory, tail_tol: float = 1e-8):
    """z(t) = -int_t^T e^{L(t-s)} Pi_u N^delta(w + z)(s) ds on the whole time grid.

    In the unstable coordinates the propagator is diagonal; trapezoid rule on
    the grid, backward from z(T) = 0.  Returns (states, info) with the
    truncation bound sup|g| e^{-beta T} / beta at t = 0.
    """
    times = w_traj.times
    dt = times[1] - times[0]
    if spec.p == 0:
        return np.zeros_like(w_traj.states), {"tail_bound": 0.0}
    lam = spec.eigenvalues
    g = np.array([np.einsum("i,aic,ic->a", spec.weights, spec.phi_tilde, Ntr(w + z))
                  for w, z in zip(w_traj.states, z_traj.states)])
    K = len(times)
    zeta = np.zeros((K, spec.p), complex)
    decay = np.exp(-lam * dt)
    for j in range(K - 2, -1, -1):
        zeta[j] = decay * zeta[j + 1] - 0.5 * dt * (g[j] + decay * g[j + 1])
    beta = float(np.min(lam.real))
    tail = float(np.max(np.abs(g))) * np.exp(-beta * times[-1]) / beta if K else 0.0
    if tail > tail_tol and np.max(np.abs(g)) > 0:
        raise ValueError(f"horizon too short: tail bound {tail:.2e} exceeds {tail_tol:.1e}")
    states = np.real(np.einsum("ja,aic->jic", zeta, spec.phi))
    return states, {"tail_bound": tail, "g_max": float(np.max(np.abs(g)))}


def fixed_point(Ntr: TruncatedNonlinearity, spec: SpectralData, w0, tol: float = 1e-13,
                max_iter: int = 40, T: Optional[float] = None, dt: Optional[float] = None,
                tail_tol: float = 1e-8, halvings: int = 3):
    """Picard iteration z <- T(z, W(z, w0)) from z = 0; returns (z trajectory, history)."""
    Lop = Ntr.Lop
    times, (eta, beta, omega) = _time_grid(Lop, spec, T, dt, tail_tol)
    k = Ntr.k
    wts = Ntr.w
    zeros = np.zeros((len(times),) + np.shape(w0))
    z = WeightedTrajectory(times, zeros, eta, beta, omega, wts, k)
    if spec.p == 0:
        return z, {"iterations": 0, "diffs": [], "ratios": [], "delta": Ntr.delta, "converged": True}
    w0 = apply_projection(spec, "cs", np.asarray(w0, float))
    if Ntr.norm(w0) > 0.5 * Ntr.delta * (1 + 1e-12):
        raise ValueError("|w0|_{H^{1,2}} must not exceed delta/2")
    diffs, ratios = [], []
    bad = 0
    for it in range(1, max_iter + 1):
        w = center_flow(Ntr, spec, z, w0)
        z_new_states, info = unstable_integral(Ntr, spec, w, z, tail_tol)
        diff = z.weighted_norm(z_new_states - z.states)
        diffs.append(diff)
        if len(diffs) > 1 and diffs[-2] > 0:
            ratios.append(diff / diffs[-2])
            bad = bad + 1 if ratios[-1] >= 1.0 else 0
        z = WeightedTrajectory(times, z_new_states, eta, beta, omega, wts, k)
        if diff <= tol * max(1.0, z.weighted_norm()) or diff == 0.0:
            return z, {"iterations": it, "diffs": diffs, "ratios": ratios, "delta": Ntr.delta,
                       "converged": True, "w": w, "tail_bound": info["tail_bound"]}
        if bad >= 3:
            if halvings <= 0:
                raise ContractionError("Picard iteration does not contract")
            half = TruncatedNonlinearity(Lop, Ntr.delta / 2)
            return fixed_point(half, spec, w0 * min(1.0, 0.5 * half.delta / max(half.norm(w0), 1e-300)),
                               tol, max_iter, T, dt, tail_tol, halvings - 1)
    return z, {"iterations": max_iter, "diffs": diffs, "ratios": ratios, "delta": Ntr.delta,
               "converged": False, "w": w}


def graph_map(Ntr: TruncatedNonlinearity, spec: SpectralData, w0, **kwargs):
    """Phi(w0) = z(0) of the converged fixed point; the manifold point is w0 + Phi(w0)."""
    if spec.p == 0:
        return np.zeros_like(np.asarray(w0, float)), {"iterations": 0, "converged": True}
    z, hist = fixed_point(Ntr, spec, w0, **kwargs)
    hist = {k: v for k, v in hist.items() if k != "w"}
    return z.states[0].copy(), hist


def contraction_ratio(hist) -> float:
    """Geometric mean of the first measured contraction ratios (at most three)."""
    r = [q for q in hist["ratios"][:3] if q > 0]
    return float(np.exp(np.mean(np.log(r)))) if r else 0.0


def initial_phase_fit(U0, profile, x=None, tol: float = 1e-13, max_iter: int = 30, tube: float = None):
    """Shift a with <phi, U0(. + a) - U_bar> = 0, phi the profile derivative; scalar Newton."""
    x = profile.x if x is None else x
    w = trapezoid_weights(x)
    Ubar = profile.evaluate(x)
    phi = profile.derivative(x)
    es = profile.endstates
    spline = CubicSpline(x, U0, axis=0)
    dspline = spline.derivative()
    L = np.max(np.abs(x))
    tube = 0.25 * L if tube is None else tube

    def shifted(a, f, fill):
        xq = x + a
        out = f(xq)
        if fill is None:
            out[(xq < x[0]) | (xq > x[-1])] = 0.0
        else:
            out[xq < x[0]] = fill[0]
            out[xq > x[-1]] = fill[1]
        return out

    a = 0.0
    norm2 = inner(w, phi, phi)
    res = np.inf
    for _ in range(max_iter):
        res = inner(w, phi, shifted(a, spline, (es.U_minus, es.U_plus)) - Ubar)
        d = inner(w, phi, shifted(a, dspline, None))
        if abs(d) < 1e-3 * norm2:
            raise ValueError("phase equation degenerate: datum too far from the translates")
        step = res / d
        a -= step
        if abs(a) > tube:
            raise ValueError("phase fit left the tube around the translates")
        if abs(step) < tol:
            break
    return float(a), float(abs(res))
