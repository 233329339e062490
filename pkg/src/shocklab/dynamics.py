"""Time integration about a standing profile, phase tracking and decay measurement.

All evolutions use the perturbation form V_t = L V + N(V) + forcing with the
discrete operator of :mod:`shocklab.linop`, stepped by second-order
semi-implicit BDF (SBDF2): the linear part implicit through one sparse LU,
nonlinear and forcing terms extrapolated explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import erf

from .linop import LinearOperator, assemble, fit_exponent, liu_majda
from .model import PhysicalDomainError
from .norms import hk_norm, inner, lp_norm, trapezoid_weights
from .profile import ShockProfile

SQRT_PI = np.sqrt(np.pi)


class CFLError(ValueError):
    pass


class PhaseTrackingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Steppers

class IMEXStepper:
    """SBDF2 for V_t = L V + E(V, t); the first step is backward/forward Euler."""

    def __init__(self, Lop: LinearOperator, dt: float):
        self.Lop, self.dt = Lop, float(dt)
        self._s1 = None
        self._s2 = None

    def _solvers(self):
        if self._s2 is None:
            self._s1 = self.Lop.shifted_solver(1.0 / self.dt)
            self._s2 = self.Lop.shifted_solver(1.5 / self.dt)
        return self._s1, self._s2

    def first(self, V, E):
        s1, _ = self._solvers()
        return s1(V / self.dt + E)

    def next(self, V, V_prev, E, E_prev):
        _, s2 = self._solvers()
        return s2((4.0 * V - V_prev) / (2.0 * self.dt) + 2.0 * E - E_prev)

    def iterate(self, V0, n_steps, explicit: Optional[Callable] = None, t0: float = 0.0,
                project: Optional[Callable] = None):
        """Yield (t, V) after each of ``n_steps`` steps."""
        dt = self.dt
        zero = np.zeros_like(V0)

        def E(V, t):
            return zero if explicit is None else explicit(V, t)

        V_prev, E_prev = V0, E(V0, t0)
        V = self.first(V0, E_prev)
        if project is not None:
            V = project(V)
        t = t0 + dt
        yield t, V
        for _ in range(n_steps - 1):
            E_now = E(V, t)
            V_new = self.next(V, V_prev, E_now, E_prev)
            if project is not None:
                V_new = project(V_new)
            V_prev, E_prev, V = V, E_now, V_new
            t += dt
            yield t, V


class LinearStepper(IMEXStepper):
    """Stateful linear stepping with ``advance(V, t, T)``; history is kept between calls."""

    def __init__(self, Lop, dt):
        super().__init__(Lop, dt)
        self._hist = None

    def advance(self, V, t, T):
        while t + 0.5 * self.dt < T:
            if self._hist is None or self._hist[1] is not V:
                V_new = self.first(V, 0.0)
            else:
                V_new = self.next(V, self._hist[0], 0.0, 0.0)
            self._hist = (V, V_new)
            V = V_new
            t += self.dt
        return V, t


def default_dt(Lop: LinearOperator, cfl: float = 0.5):
    return cfl * Lop.h / max(Lop.max_speed, 1e-12)


def _record_plan(Lop, T, dt, cfl, record_dt):
    if dt is None:
        dt = default_dt(Lop, cfl)
    if record_dt is None:
        record_dt = max(dt, T / 200.0)
    every = max(1, int(np.ceil(record_dt / dt - 1e-9)))
    dt = record_dt / every
    # whole record intervals covering [0, T]
    n_steps = every * int(np.ceil(T / record_dt - 1e-9))
    return dt, every, n_steps


# ---------------------------------------------------------------------------
# Trajectories

@dataclass
class Trajectory:
    x: np.ndarray
    times: np.ndarray
    states: list  # perturbations at the record times
    norms: dict
    meta: dict = field(default_factory=dict)
    alpha: Optional[np.ndarray] = None
    alpha_dot: Optional[np.ndarray] = None
    tracked: Optional[list] = None  # phase-tracked perturbations V(x + alpha)
    tracked_norms: Optional[dict] = None

    def table(self):
        """Columns for CSV output."""
        cols = {"t": self.times}
        cols.update({f"lab_{k}": v for k, v in self.norms.items()})
        if self.tracked_norms is not None:
            cols.update({k: v for k, v in self.tracked_norms.items()})
        if self.alpha is not None:
            cols["alpha"], cols["alpha_dot"] = self.alpha, self.alpha_dot
        return cols


def norm_history(x, states):
    w = trapezoid_weights(x)
    h = x[1] - x[0]
    out = {"L1": [], "L2": [], "Linf": [], "H3": [], "mass": []}
    for V in states:
        out["L1"].append(lp_norm(w, V, 1))
        out["L2"].append(lp_norm(w, V, 2))
        out["Linf"].append(lp_norm(w, V, np.inf))
        out["H3"].append(hk_norm(w, V, 3))
        out["mass"].append(h * np.sum(V, axis=0))
    return {k: np.array(v) for k, v in out.items()}


def _as_operator(obj, order=2, bc="dirichlet_endstate"):
    if isinstance(obj, LinearOperator):
        return obj
    if isinstance(obj, ShockProfile):
        return assemble(obj, order=order, bc=bc)
    raise TypeError("expected a ShockProfile or LinearOperator")


def _evolve(Lop: LinearOperator, V0, T, explicit, dt, cfl, record_dt, contamination, physical,
            project=None, stop: Optional[Callable] = None, kind="nonlinear"):
    dt, every, n_steps = _record_plan(Lop, T, dt, cfl, record_dt)
    if dt * Lop.max_speed / Lop.h > 1.0 + 1e-12:
        raise CFLError(f"CFL number {dt * Lop.max_speed / Lop.h:.3f} exceeds 1")
    x = Lop.x
    far = np.abs(x) > 0.9 * np.max(np.abs(x))
    ref = max(np.max(np.abs(V0)), 1e-300)
    times, states = [0.0], [np.array(V0, float)]
    contaminated, stopped = None, None
    sys = Lop.profile.system
    stepper = IMEXStepper(Lop, dt)
    for step, (t, V) in enumerate(stepper.iterate(np.array(V0, float), n_steps, explicit, 0.0, project), 1):
        if not np.all(np.isfinite(V)):
            raise FloatingPointError(f"non-finite state at t={t:.4g}")
        if physical and not np.all(sys.is_physical(Lop.Ubar + V)):
            raise PhysicalDomainError(f"state left the physical domain at t={t:.4g}")
        if step % every:
            continue
        if contamination is not None and np.max(np.abs(V[far])) > contamination * ref:
            contaminated = float(t)
            break
        times.append(float(t))
        states.append(V.copy())
        if stop is not None and stop(t, V):
            stopped = float(t)
            break
    meta = {"dt": dt, "record_every": every, "order": Lop.order, "bc": Lop.bc, "kind": kind,
            "cfl": dt * Lop.max_speed / Lop.h, "contaminated_at": contaminated, "stopped_at": stopped,
            "T_requested": T, "operator": Lop.meta.get("kind", "linearized")}
    return Trajectory(x, np.array(times), states, norm_history(x, states), meta)


def evolve_linear(Lop: LinearOperator, w0, T: float, forcing: Optional[Callable] = None,
                  dt: Optional[float] = None, cfl: float = 0.5, record_dt: Optional[float] = None,
                  contamination: Optional[float] = None, project: Optional[Callable] = None) -> Trajectory:
    """w_t = L w + forcing(t)."""
    explicit = None if forcing is None else (lambda V, t: forcing(t))
    return _evolve(Lop, w0, T, explicit, dt, cfl, record_dt, contamination, False, project, kind="linear")


def evolve_nonlinear(obj, V0, T: float, dt: Optional[float] = None, cfl: float = 0.5,
                     record_dt: Optional[float] = None, contamination: Optional[float] = 1e-6,
                     order: int = 2, bc: str = "dirichlet_endstate",
                     stop: Optional[Callable] = None) -> Trajectory:
    """Full nonlinear evolution of U = U_bar + V in the frame of the wave.

    ``obj`` is a profile (the operator is assembled) or an already assembled
    operator, possibly with a low-rank synthetic term that then acts on V as well.
    """
    Lop = _as_operator(obj, order, bc)
    if not np.all(Lop.profile.system.is_physical(Lop.Ubar + V0)):
        raise PhysicalDomainError("initial state outside the physical domain")
    return _evolve(Lop, V0, T, lambda V, t: Lop.nonlinear(V), dt, cfl, record_dt, contamination,
                   True, stop=stop, kind="nonlinear")


# ---------------------------------------------------------------------------
# Nonlinear flux residual

def flux_residual(Lop: LinearOperator, V):
    """Pointwise nonlinear residual of the flux: viscous part minus convective part, both
    with the value and first-order Taylor terms about the profile removed."""
    sys = Lop.profile.system
    U, Ux = Lop.Ubar, Lop.Ubar_x
    h = Lop.h
    eps = 1e-30
    W = U + V
    Vx = np.gradient(V, h, axis=0, edge_order=2)
    Wx = Ux + Vx
    dF = np.imag(sys.flux(U + 1j * eps * V)) / eps
    dB = np.imag(sys.viscosity(U + 1j * eps * V)) / eps

    def mv(M, v):
        return np.einsum("...ij,...j->...i", M, v)
    BU = sys.viscosity(U)
    visc = mv(sys.viscosity(W), Wx) - mv(BU, Ux) - mv(BU, Vx) - mv(dB, Ux)
    conv = sys.flux(W) - sys.flux(U) - dF
    return visc - conv


# ---------------------------------------------------------------------------
# Phase kernel

def errfn(z):
    return 0.5 * (1.0 + erf(z))


@dataclass(frozen=True)
class EKernel:
    """Excited-translation kernel built from incoming characteristic modes at both ends.

    Each incoming mode k carries the coefficient vector l_k = c_k * ell_k with
    ell_k the left eigenvector (ell_k . r_k = 1) and c_k the last component of
    the Liu-Majda decomposition of r_k, i.e. the part of that mode's mass that
    ends up displacing the shock.
    """
    a_minus: np.ndarray  # incoming speeds at U-, positive
    l_minus: np.ndarray  # (m-, n)
    a_plus: np.ndarray  # incoming speeds at U+, negative
    l_plus: np.ndarray

    @classmethod
    def from_profile(cls, profile: ShockProfile, tol: float = 1e-10) -> "EKernel":
        es, s = profile.endstates, profile.s
        _, _, M = liu_majda(es, s)
        Minv = np.linalg.inv(M)
        out = []
        for eig, R, incoming in ((es.eig_minus, es.R_minus, lambda a: a > tol),
                                 (es.eig_plus, es.R_plus, lambda a: a < -tol)):
            a = np.real(eig) - s
            ell = np.linalg.inv(R)
            idx = [k for k in range(len(a)) if incoming(a[k])]
            coef = np.array([(Minv @ R[:, k])[-1] for k in idx])
            ls = np.array([np.real(coef[i] * ell[k]) for i, k in enumerate(idx)]).reshape(len(idx), len(a))
            out.append((a[idx], ls))
        return cls(out[0][0], out[0][1], out[1][0], out[1][1])

    def to_dict(self):
        return {"a_minus": self.a_minus.tolist(), "l_minus": self.l_minus.tolist(),
                "a_plus": self.a_plus.tolist(), "l_plus": self.l_plus.tolist(),
                "normalization": "l_k = [M^-1 r_k]_jump * left eigenvector"}

    def eval(self, y, t, derivative: str = "none"):
        """e, e_y, e_t or e_ty at points y (shape (len(y), n)) and time t > 0."""
        if t <= 0:
            raise ValueError("kernel is evaluated at t > 0 only")
        y = np.atleast_1d(np.asarray(y, float))
        n = self.l_minus.shape[1] if self.l_minus.size else self.l_plus.shape[1]
        out = np.zeros((len(y), n))
        left = y <= 0
        out[left] = _half_kernel(y[left], t, self.a_minus, self.l_minus, derivative)
        sign = -1.0 if derivative in ("y", "ty") else 1.0
        out[~left] = sign * _half_kernel(-y[~left], t, -self.a_plus, self.l_plus, derivative)
        return out


def _half_kernel(y, t, a, l, derivative):
    """sum_k [errfn((y + a t)/sqrt(4t)) - errfn((y - a t)/sqrt(4t))] l_k and derivatives."""
    out = np.zeros((len(y), l.shape[1] if l.size else 0))
    if len(a) == 0 or len(y) == 0:
        return out
    r4 = np.sqrt(4.0 * t)
    z1 = (y[:, None] + a[None, :] * t) / r4
    z2 = (y[:, None] - a[None, :] * t) / r4
    p1, p2 = np.exp(-z1 ** 2) / SQRT_PI, np.exp(-z2 ** 2) / SQRT_PI
    if derivative == "none":
        c = errfn(z1) - errfn(z2)
    elif derivative == "y":
        c = (p1 - p2) / r4
    elif derivative == "t":
        c = (z1 * p2 - z2 * p1) / (2.0 * t)
    elif derivative == "ty":
        c = (1.0 - 2.0 * z1 * z2) * (p2 - p1) / (2.0 * t * r4)
    else:
        raise ValueError(f"unknown derivative {derivative!r}")
    return c @ l


def e_kernel_eval(kernel: EKernel, y, t, derivative: str = "none"):
    return kernel.eval(y, t, derivative)


# ---------------------------------------------------------------------------
# Phase tracking

def shift_perturbation(profile: ShockProfile, x, W, alpha):
    """U(x + alpha) - U_bar(x) for U = U_bar + W.

    The profile part is evaluated exactly from the stored solution, only the
    small lab-frame perturbation W is shifted by cubic interpolation (zero
    beyond the grid).
    """
    xq = x + alpha
    Ws = CubicSpline(x, W, axis=0)(xq)
    Ws[(xq < x[0]) | (xq > x[-1])] = 0.0
    return profile.evaluate(xq) + Ws - profile.evaluate(x)


def track_phase(traj: Trajectory, kernel: EKernel, Lop: LinearOperator, corrections: int = 2,
                tol: float = 1e-6) -> Trajectory:
    """Phase alpha(t) and its rate from the kernel integral equations, marched on the record grid.

    Q = N(V) + alpha' V is treated as piecewise constant in time on each panel
    (average of its end values), which makes the history integrals exact in
    the kernel.  V = U(x + alpha) - U_bar is re-extracted after each update.
    """
    x, w = traj.x, trapezoid_weights(traj.x)
    prof = Lop.profile
    times = traj.times
    K = len(times)
    if K < 2:
        raise PhaseTrackingError("need at least two record times")
    dts = np.diff(times)
    if np.ptp(dts) > 1e-9 * dts[0]:
        raise PhaseTrackingError("record times must be uniform")
    dt = dts[0]
    L = np.max(np.abs(x))
    V0 = traj.states[0]
    # kernel at the lags m*dt; D[m] = e(m dt) - e((m-1) dt), with e(0) = 0
    E = np.zeros((K, len(x), V0.shape[1]))
    for m in range(1, K):
        E[m] = kernel.eval(x, m * dt)
    D = np.diff(E, axis=0, prepend=E[:1])
    alpha = np.zeros(K)
    alpha_dot = np.zeros(K)
    Vs = [V0.copy()]
    Qy = np.zeros_like(E)
    alpha_direct = np.zeros(K)

    def q_y(V, ad):
        Q = flux_residual(Lop, V) + ad * V
        return np.gradient(Q, x[1] - x[0], axis=0, edge_order=2)

    # small-time limit of e_t: the kernel acts as a point mass at y = 0
    j0 = int(np.argmin(np.abs(x)))
    c0 = kernel.a_minus @ kernel.l_minus - kernel.a_plus @ kernel.l_plus
    alpha_dot[0] = -float(c0 @ V0[j0])
    Qy[0] = q_y(V0, 0.0)
    max_corr = 0.0
    for k in range(1, K):
        W_k = traj.states[k]
        et = kernel.eval(x, times[k], "t")
        lin = -inner(w, et, V0)
        a_guess = alpha[k - 1] + dt * alpha_dot[k - 1]
        ad = alpha_dot[k - 1]
        last_change = np.inf
        for it in range(corrections + 1):
            if abs(a_guess) > 0.1 * L:
                raise PhaseTrackingError("phase left the interpolation range")
            V_k = shift_perturbation(prof, x, W_k, a_guess)
            Qy[k] = q_y(V_k, ad)
            Qbar = 0.5 * (Qy[:k] + Qy[1:k + 1])
            hist = np.einsum("i,jic,jic->", w, D[k:0:-1], Qbar)
            ad_new = lin - hist
            a_new = alpha[k - 1] + 0.5 * dt * (alpha_dot[k - 1] + ad_new)
            last_change = abs(a_new - a_guess)
            a_guess, ad = a_new, ad_new
        max_corr = max(max_corr, last_change)
        if last_change > tol + 1e-2 * abs(a_guess):
            raise PhaseTrackingError(f"outer correction did not settle at t={times[k]:.4g}")
        alpha[k], alpha_dot[k] = a_guess, ad
        V_k = shift_perturbation(prof, x, W_k, alpha[k])
        Qy[k] = q_y(V_k, ad)
        Vs.append(V_k)
        Qbar = 0.5 * (Qy[:k] + Qy[1:k + 1])
        Ek = E[k:0:-1] + E[k - 1::-1][:k]
        alpha_direct[k] = -inner(w, E[k], V0) - 0.5 * dt * np.einsum("i,jic,jic->", w, Ek, Qbar)
    traj.alpha, traj.alpha_dot, traj.tracked = alpha, alpha_dot, Vs
    traj.tracked_norms = norm_history(x, Vs)
    traj.meta["phase"] = {"max_outer_correction": float(max_corr),
                          "alpha_direct_mismatch": float(np.max(np.abs(alpha - alpha_direct))),
                          "kernel": kernel.to_dict()}
    return traj


def best_translate(x, U, Ubar_fn, alpha0: float = 0.0):
    """Least-squares translate: argmin_a |U - Ubar(x - a)|_{L2} by Gauss-Newton."""
    from scipy.optimize import least_squares
    w = np.sqrt(trapezoid_weights(x))[:, None]

    def res(a):
        return (w * (U - Ubar_fn(x - a[0]))).ravel()
    return float(least_squares(res, [alpha0], xtol=1e-14, ftol=1e-14).x[0])


# ---------------------------------------------------------------------------
# Decay report

def fit_with_ci(t, y, t0, t1):
    """Slope of log y against log(1 + t) on [t0, t1] with its 95% half-width and the intercept."""
    sel = (t >= t0) & (t <= t1) & (y > 0)
    if np.sum(sel) < 4:
        return float("nan"), float("nan"), float("nan")
    X, Y = np.log1p(t[sel]), np.log(y[sel])
    A = np.vstack([X, np.ones_like(X)]).T
    coef, res, *_ = np.linalg.lstsq(A, Y, rcond=None)
    dof = max(len(X) - 2, 1)
    s2 = float(np.sum((Y - A @ coef) ** 2)) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    return float(coef[0]), float(1.96 * np.sqrt(cov[0, 0])), float(coef[1])


TARGETS = {"L1": 0.0, "L2": -0.25, "Linf": -0.5, "H3": -0.25, "alpha_dot": -0.5}


def decay_report(traj: Trajectory, E0: Optional[float] = None, fit_start: float = 5.0,
                 min_decades: float = 1.5) -> dict:
    """Log-log fits of tracked norms and |alpha'| against 1 + t over the usable window."""
    if traj.tracked_norms is None:
        raise ValueError("trajectory has no phase-tracked norms; run track_phase first")
    t = traj.times
    t1 = float(t[-1])
    degenerate = bool(np.all(traj.tracked_norms["L2"] == 0))
    window_decades = float(np.log10((1 + t1) / (1 + fit_start))) if t1 > fit_start else 0.0
    rows = {}
    series = dict(traj.tracked_norms)
    series["alpha_dot"] = np.abs(traj.alpha_dot)
    for name in ("L1", "L2", "Linf", "H3", "alpha_dot"):
        slope, ci, icpt = fit_with_ci(t, series[name], fit_start, t1)
        rows[name] = {"exponent": slope, "ci95": ci, "intercept": icpt, "target": TARGETS[name]}
    alpha = traj.alpha
    total = abs(alpha[-1] - alpha[0])
    tail = np.abs(alpha[-1] - alpha[t >= 0.5 * t1])
    cauchy = float(np.max(tail)) if len(tail) else float("nan")
    # bootstrap quantity: sup_s of the weighted norms up to t
    V_L2, V_Li, H3 = series["L2"], series["Linf"], series["H3"]
    ad = series["alpha_dot"]
    zeta_inst = np.maximum.reduce([V_L2 * (1 + t) ** 0.25, V_Li * (1 + t) ** 0.5, H3 * (1 + t) ** 0.25,
                                   ad * (1 + t) ** 0.5])
    zeta = np.maximum.accumulate(zeta_inst)
    if E0 is None:
        w = trapezoid_weights(traj.x)
        E0 = lp_norm(w, traj.tracked[0], 1) + hk_norm(w, traj.tracked[0], 3)
    C2 = float(np.max(zeta / (E0 + zeta ** 2))) if E0 > 0 else float("nan")
    return {"exponents": rows, "fit_window": [fit_start, t1], "window_decades": window_decades,
            "window_ok": window_decades >= min_decades, "degenerate": degenerate,
            "alpha_final": float(alpha[-1]), "alpha_total_drift": float(total),
            "alpha_cauchy_tail": cauchy,
            "alpha_converged": bool(total > 0 and cauchy < 0.05 * total) if not degenerate else True,
            "zeta": zeta.tolist(), "E0": float(E0), "C2_fit": C2}


# ---------------------------------------------------------------------------
# Conditional stability

def tube_distance(Lop: LinearOperator, V, alpha0: float = 0.0):
    """L2 distance from U_bar + V to the set of translates of U_bar, and the best shift."""
    x = Lop.x
    prof = Lop.profile
    U = Lop.Ubar + V
    a = best_translate(x, U, prof.evaluate, alpha0)
    w = trapezoid_weights(x)
    return lp_norm(w, U - prof.evaluate(x - a), 2), a


def conditional_experiment(Lop: LinearOperator, spec, w0, mode: str = "on_manifold",
                           eps: float = 1e-4, R: Optional[float] = None, T: Optional[float] = None,
                           manifold_kwargs: Optional[dict] = None, dt: Optional[float] = None,
                           record_dt: Optional[float] = None) -> dict:
    """Evolve U_bar + w0 + Phi(w0) (+ eps * phi_1 off the manifold) and watch the tube around the translates."""
    from .manifold import TruncatedNonlinearity, graph_map

    w = trapezoid_weights(Lop.x)
    amp = lp_norm(w, w0, 2)
    if R is None:
        R = 10.0 * max(amp, eps)
    kw = dict(manifold_kwargs or {})
    if spec.p > 0:
        Ntr = TruncatedNonlinearity(Lop, kw.pop("delta", None))
        Phi, info = graph_map(Ntr, spec, w0, **kw)
    else:
        Phi, info = np.zeros_like(w0), {"iterations": 0}
    V0 = w0 + Phi
    lam1 = float(np.real(spec.eigenvalues[0])) if spec.p else 0.0
    if mode == "off_manifold":
        if spec.p == 0:
            raise ValueError("off-manifold data need an unstable mode")
        phi1 = np.real(spec.phi[0])
        V0 = V0 + eps * phi1 / lp_norm(w, phi1, 2)
    elif mode != "on_manifold":
        raise ValueError(f"unknown mode {mode!r}")
    predicted = float(np.log(R / eps) / lam1) if lam1 > 0 else float("inf")
    if T is None:
        T = 3.0 * predicted if np.isfinite(predicted) else 50.0
    state = {"a": 0.0}

    def exited(t, V):
        d, state["a"] = tube_distance(Lop, V, state["a"])
        return d > R
    traj = evolve_nonlinear(Lop, V0, T, dt=dt, record_dt=record_dt, contamination=None, stop=exited)
    dist = []
    a = 0.0
    for V in traj.states:
        d, a = tube_distance(Lop, V, a)
        dist.append(d)
    dist = np.array(dist)
    exit_time = traj.meta["stopped_at"]
    return {"mode": mode, "R": R, "eps": eps if mode == "off_manifold" else 0.0, "lambda1": lam1,
            "predicted_exit": predicted, "exit_time": exit_time,
            "stayed_inside": exit_time is None, "horizon": float(traj.times[-1]),
            "times": traj.times.tolist(), "distance": dist.tolist(),
            "Phi_norm": lp_norm(w, Phi, 2), "w0_norm": amp, "manifold": info}
