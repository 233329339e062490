"""Standing viscous shock profiles.

The traveling-wave ODE B(U)U' = F(U) - F(U_-) - s(U - U_-) is reduced to an
r-dimensional ODE in U2 by eliminating U1 through the affine first block, and
solved by two-sided shooting from the unstable manifold at U_- and the stable
manifold at U_+, matched at a phase section.  When one endstate is a node of
the reduced flow the one-dimensional manifold at the other end is followed all
the way through instead.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.optimize import least_squares

from .model import EndstatePair, SystemModel, jacobians

RH_TOL = 1e-12


class ProfileError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Jump conditions

def _rh_residual(sys, U_minus, U_plus, s):
    return sys.flux(U_plus) - sys.flux(U_minus) - s * (U_plus - U_minus)


def rankine_hugoniot(sys: SystemModel, U_minus, s: Optional[float] = None,
                     fixed: Optional[dict] = None, guess=None, s_guess: Optional[float] = None,
                     lax: bool = False, allow_trivial: bool = False, max_iter: int = 100):
    """Solve F(U+) - F(U-) = s (U+ - U-) by damped Newton.

    Either ``s`` is given (unknowns: U+) or ``fixed`` pins some components of U+
    as ``{index: value}`` with exactly one component free per pinned one plus s.
    With ``lax=True`` several starting speeds are tried and the first
    Lax-admissible root is returned; otherwise the root reached from
    ``s_guess`` (default: a characteristic speed at U-).
    """
    sys.check_physical(U_minus)
    U_minus = np.asarray(U_minus, float)
    n = sys.n
    fixed = dict(fixed or {})
    if s is None and len(fixed) != 1:
        raise ValueError("give either s or exactly one fixed component of U+")
    if s is not None and fixed:
        raise ValueError("give either s or fixed components, not both")
    free = [i for i in range(n) if i not in fixed]

    def unpack(z):
        U = np.empty(n)
        for i, val in fixed.items():
            U[i] = val
        if s is None:
            U[free] = z[:-1]
            return U, z[-1]
        U[:] = z
        return U, s

    def resid(z):
        U, ss = unpack(z)
        return _rh_residual(sys, U_minus, U, ss)

    def newton(z):
        for _ in range(max_iter):
            F0 = resid(z)
            if np.max(np.abs(F0)) < RH_TOL:
                return z
            J = np.empty((n, n))
            h = 1e-7 * max(1.0, np.max(np.abs(z)))
            for j in range(n):
                dz = np.zeros(n)
                dz[j] = h
                J[:, j] = (resid(z + dz) - resid(z - dz)) / (2 * h)
            try:
                step = np.linalg.solve(J, -F0)
            except np.linalg.LinAlgError:
                return None
            lam = 1.0
            while lam > 1e-6:
                zn = z + lam * step
                U, _ = unpack(zn)
                if np.all(sys.is_physical(U)) and np.max(np.abs(resid(zn))) < np.max(np.abs(F0)):
                    break
                lam /= 2
            else:
                return None
            z = zn
        return z if np.max(np.abs(resid(z))) < RH_TOL else None

    speeds = np.real(np.linalg.eigvals(jacobians(sys, U_minus)[0]))
    if s_guess is not None:
        starts = [s_guess]
    else:
        starts = list(speeds) + [2 * c for c in speeds] + [0.5 * c for c in speeds]
    base = np.asarray(guess, float) if guess is not None else U_minus.copy()
    for i, val in fixed.items():
        base[i] = val
    roots = []
    for s0 in starts:
        z0 = np.concatenate([base[free], [s0]]) if s is None else base.copy()
        if s is not None:
            z0 = z0 + 1e-3 * (np.arange(n) + 1)
        z = newton(z0)
        if z is None:
            continue
        U, ss = unpack(z)
        if np.max(np.abs(U - U_minus)) < 1e-10 and not allow_trivial:
            continue
        roots.append((U, float(ss)))
        if not lax:
            break
        try:
            if lax_classification(EndstatePair.from_states(sys, U_minus, U), ss)["is_lax"]:
                return U, float(ss)
        except ValueError:
            continue
    if not roots:
        if np.allclose(base, U_minus) and s is None:
            raise ProfileError("degenerate jump: U+ = U- admits every speed")
        raise ProfileError("Rankine-Hugoniot Newton iteration did not converge")
    if lax:
        raise ProfileError("no Lax-admissible Rankine-Hugoniot root found")
    return roots[0]


def lax_classification(endstates: EndstatePair, s: float, tol: float = 1e-10) -> dict:
    """Count eigenvalues of A- above s and of A+ below s; Lax iff the sum is n+1."""
    am = np.real(endstates.eig_minus) - s
    ap = np.real(endstates.eig_plus) - s
    if np.min(np.abs(am)) < tol or np.min(np.abs(ap)) < tol:
        raise ValueError("(H2) violated: characteristic speed equals the shock speed")
    n = len(am)
    pm, pp = int(np.sum(am > 0)), int(np.sum(ap < 0))
    return {"p_minus_unstable_dim": pm, "p_plus_stable_dim": pp, "n": n,
            "is_lax": pm + pp == n + 1}


# ---------------------------------------------------------------------------
# Profile ODE

class ReducedODE:
    """U2' = b(U)^{-1}[F2(U) - F2(U-)] with U1 eliminated through the affine first block."""

    def __init__(self, sys: SystemModel, U_minus, U_plus):
        self.sys = sys
        self.n, self.r = sys.n, sys.r
        self.k = sys.n - sys.r
        self.U_minus = np.asarray(U_minus, float)
        self.U_plus = np.asarray(U_plus, float)
        A = jacobians(sys, self.U_minus)[0]
        k = self.k
        if k:
            self.E = -np.linalg.solve(A[:k, :k], A[:k, k:])
        else:
            self.E = np.zeros((0, self.r))
        self.F_minus = sys.flux(self.U_minus)

    def full(self, U2):
        U2 = np.asarray(U2)
        U1 = self.U_minus[:self.k] + (U2 - self.U_minus[self.k:]) @ self.E.T
        return np.concatenate([U1, U2], axis=-1)

    def rhs(self, x, y):
        U = self.full(y)
        g = (self.sys.flux(U) - self.F_minus)[self.k:]
        return np.linalg.solve(self.sys.b(U), g)

    def rhs_grid(self, Y):
        U = self.full(Y)
        g = (self.sys.flux(U) - self.F_minus)[..., self.k:]
        return np.linalg.solve(self.sys.b(U), g[..., None])[..., 0]

    def linearization(self, U2):
        U = self.full(U2)
        dF = jacobians(self.sys, U)[0]
        k = self.k
        M = dF[k:, k:] + (dF[k:, :k] @ self.E if k else 0.0)
        return np.linalg.solve(self.sys.b(U), M)


def _real_basis(J, unstable):
    """Orthonormal real basis of the (un)stable invariant subspace of J."""
    w, V = np.linalg.eig(J)
    sel = w.real > 0 if unstable else w.real < 0
    cols = []
    for wi, vi in zip(w[sel], V[:, sel].T):
        cols.append(vi.real)
        if abs(wi.imag) > 1e-12:
            cols.append(vi.imag)
    if not cols:
        return np.zeros((len(J), 0)), w[sel]
    Q, _ = np.linalg.qr(np.array(cols).T)
    return Q[:, :int(np.sum(sel))], w[sel]


def _sphere(angles):
    """Unit vector in R^{len(angles)+1} from hyperspherical angles."""
    d = len(angles) + 1
    out = np.ones(d)
    for i, a in enumerate(angles):
        out[i] *= np.cos(a)
        out[i + 1:] *= np.sin(a)
    return out


@dataclass
class ShockProfile:
    x: np.ndarray
    U: np.ndarray
    Ux: np.ndarray
    endstates: EndstatePair
    s: float
    system: SystemModel  # comoving system (speed 0)
    decay_rate: float
    phase_anchor: int
    residual: float
    meta: dict = field(default_factory=dict)
    _branches: tuple = field(default=None, repr=False)

    @property
    def h(self):
        return float(self.x[1] - self.x[0])

    @property
    def L(self):
        return float(self.x[-1])

    @property
    def N(self):
        return len(self.x)

    def evaluate(self, xq):
        """Profile values at arbitrary points, from the stored shooting branches."""
        if self._branches is None:
            return np.broadcast_to(self.endstates.U_minus, (np.size(xq), len(self.endstates.U_minus))).copy()
        return _evaluate_branches(self._branches, np.asarray(xq, float))

    def derivative(self, xq):
        Y = self.evaluate(xq)
        if self._branches is None:
            return np.zeros_like(Y)
        red = self._branches[0]
        return _reduced_derivative(red, Y)

    def resample(self, N: int, L: Optional[float] = None) -> "ShockProfile":
        return _assemble(self._branches, self.endstates, self.s, self.system,
                         L if L is not None else self.L, N, self.meta.get("anchor_x", 0.0))


def constant_profile(sys: SystemModel, U, L: float, N: int, s: float = 0.0) -> ShockProfile:
    """Trivial wave U(x) = const, useful for checking discretizations against Fourier symbols."""
    U = np.asarray(U, float)
    csys = sys.comoving(s)
    x = np.linspace(-L, L, N)
    es = EndstatePair.from_states(csys, U, U)
    Ug = np.tile(U, (N, 1))
    return ShockProfile(x, Ug, np.zeros_like(Ug), es, s, csys, np.inf, N // 2, 0.0,
                        meta={"anchor_x": 0.0, "constant": True})


def _reduced_derivative(red: ReducedODE, U):
    dU2 = red.rhs_grid(U[..., red.k:])
    dU1 = dU2 @ red.E.T
    return np.concatenate([dU1, dU2], axis=-1)


def _evaluate_branches(branches, xq):
    red, left, right, anchor = branches
    xq = np.atleast_1d(xq)
    out = np.empty((len(xq), red.r))
    for sol, x0, J, y_end, side, sel in ((left, left[1], left[2], left[3], -1, xq <= anchor),
                                         (right, right[1], right[2], right[3], 1, xq > anchor)):
        dense, x_start, Jend, U2end = sol[0], sol[1], sol[2], sol[3]
        xs = xq[sel]
        inside = (xs - x_start) * side <= 0
        vals = np.empty((len(xs), red.r))
        if np.any(inside):
            vals[inside] = dense(xs[inside]).T
        if np.any(~inside):
            y0 = dense(np.array([x_start]))[:, 0]
            for m, xv in zip(np.where(~inside)[0], xs[~inside]):
                vals[m] = U2end + expm(Jend * (xv - x_start)) @ (y0 - U2end)
        out[sel] = vals
    return red.full(out)


def _shoot(red: ReducedODE, Q, U2end, direction, eps, comp, target, anchor, span):
    """Integrate from U2end + eps*Q dir toward the phase section; returns (dense, x_start) or None."""
    y0 = U2end + eps * (Q @ direction)

    def event(x, y):
        return y[comp] - target
    event.terminal = True
    sol = solve_ivp(red.rhs, (0.0, span), y0, method="DOP853",
                    rtol=1e-12, atol=1e-14, events=event, dense_output=True)
    if sol.status != 1 or len(sol.t_events[0]) == 0:
        return None
    xe = sol.t_events[0][0]
    shift = anchor - xe

    def dense(xs, _d=sol.sol, _s=shift):
        return _d(np.asarray(xs) - _s)
    return dense, shift, sol.y_events[0][0]


def _shoot_through(red: ReducedODE, Q, U2end, U2other, eps, comp, target, anchor, span):
    """Follow a one-dimensional invariant manifold all the way to the opposite endstate.

    Used when the opposite endstate is a node of the reduced flow (every
    eigenvalue has the same sign), so no matching is needed.  Returns the
    dense solution, the shift, and the shifted coordinate of the far end.
    """
    y0 = U2end + eps * Q[:, 0]

    def event(x, y):
        return y[comp] - target
    scale = np.max(np.abs(U2other - U2end))

    def blowup(x, y):
        return 10.0 * scale - np.max(np.abs(y - U2other))
    blowup.terminal = True
    with np.errstate(all="ignore"):
        sol = solve_ivp(red.rhs, (0.0, span), y0, method="DOP853",
                        rtol=1e-12, atol=1e-14, events=(event, blowup), dense_output=True)
    if sol.status != 0 or len(sol.t_events[0]) == 0:
        return None
    if np.max(np.abs(sol.y[:, -1] - U2other)) > 1e-8 * scale:
        return None
    shift = anchor - sol.t_events[0][0]

    def dense(xs, _d=sol.sol, _s=shift):
        return _d(np.asarray(xs) - _s)
    return dense, shift, float(sol.t[-1] + shift)


def solve_profile(sys: SystemModel, endstates: EndstatePair, s: float = 0.0, L: Optional[float] = None,
                  N: int = 2048, anchor_x: float = 0.0, eps: float = 1e-9,
                  residual_tol: float = 1e-8, tail_tol: float = 1e-6) -> ShockProfile:
    """Solve the standing-wave ODE for a Lax shock and sample it on x in [-L, L].

    ``sys`` is the lab-frame system; the profile is computed in the frame
    moving with speed ``s``.  The phase condition puts the midpoint of the U2
    component with the largest jump at ``x = anchor_x``.
    """
    jump = endstates.U_plus - endstates.U_minus
    if np.max(np.abs(jump)) < 1e-12:
        raise ProfileError("degenerate: zero jump between endstates")
    csys = sys.comoving(s)
    if np.max(np.abs(_rh_residual(csys, endstates.U_minus, endstates.U_plus, 0.0))) > 1e-9:
        raise ProfileError("endstates do not satisfy the jump conditions")
    red = ReducedODE(csys, endstates.U_minus, endstates.U_plus)
    k, r = red.k, red.r
    U2m, U2p = endstates.U_minus[k:], endstates.U_plus[k:]
    Jm, Jp = red.linearization(U2m), red.linearization(U2p)
    Qm, mu_m = _real_basis(Jm, unstable=True)
    Qp, mu_p = _real_basis(Jp, unstable=False)
    km, kp = Qm.shape[1], Qp.shape[1]
    if km == 0 or kp == 0 or km + kp != r + 1:
        raise ProfileError(f"no transversal connection possible: dims {km}+{kp} vs r+1={r + 1}")
    comp = int(np.argmax(np.abs(U2p - U2m)))
    target = 0.5 * (U2p[comp] + U2m[comp])
    rate_m, rate_p = float(np.min(mu_m.real)), float(np.min(-mu_p.real))
    span_m = 60.0 / rate_m + 50.0
    span_p = 60.0 / rate_p + 50.0
    scale = eps * np.max(np.abs(jump))

    others = [i for i in range(r) if i != comp]

    def branches(theta):
        dm = _sphere(theta[:km - 1])
        dp = _sphere(theta[km - 1:])
        left = _shoot(red, Qm, U2m, dm, scale, comp, target, anchor_x, span_m)
        right = _shoot(red, Qp, U2p, dp, scale, comp, target, anchor_x, -span_p)
        return left, right

    def mismatch(theta):
        left, right = branches(theta)
        if left is None or right is None:
            return np.full(len(others), 1e3)
        return (left[2] - right[2])[others]

    best = None
    n_ang = (km - 1) + (kp - 1)
    if (km == r and kp == 1) or (kp == r and km == 1):
        # the far endstate is a node: follow the one-dimensional manifold through
        from_plus = km == r
        Q1, start, other = (Qp, U2p, U2m) if from_plus else (Qm, U2m, U2p)
        span = (span_m + span_p) * (-1.0 if from_plus else 1.0)
        for sgn in (1.0, -1.0):
            got = _shoot_through(red, sgn * Q1, start, other, scale, comp, target, anchor_x, span)
            if got is None:
                continue
            dense, shift, x_far = got
            near, far = (dense, shift), (dense, x_far)
            best = (far, near) if from_plus else (near, far)
            break
        n_ang = -1

    seeds = list(itertools.product(*[np.linspace(0, 2 * np.pi, 7, endpoint=False)] * n_ang)) or [()]
    if n_ang == 0:
        # sign choices on S^0 are realized by flipping the basis vectors
        for sm, sp in itertools.product((1.0, -1.0), repeat=2):
            left = _shoot(red, sm * Qm, U2m, np.ones(1), scale, comp, target, anchor_x, span_m)
            right = _shoot(red, sp * Qp, U2p, np.ones(1), scale, comp, target, anchor_x, -span_p)
            if left is not None and right is not None:
                best = (left, right)
                break
    elif n_ang > 0:
        for seed in seeds:
            theta0 = np.array(seed, float)
            if np.max(np.abs(mismatch(theta0))) >= 1e3:
                continue
            sol = least_squares(mismatch, theta0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
            if np.max(np.abs(sol.fun)) < 1e-10:
                best = branches(sol.x)
                break
    if best is None:
        raise ProfileError("no connection found from any seed direction")
    left, right = best
    branch_data = (red, (left[0], left[1], Jm, U2m), (right[0], right[1], Jp, U2p), anchor_x)
    if L is None:
        L = float(np.log(1e8) / min(rate_m, rate_p)) + abs(anchor_x) + 5.0
    prof = _assemble(branch_data, endstates, s, csys, L, N, anchor_x)
    prof.meta.update({"linear_rate_minus": rate_m, "linear_rate_plus": rate_p,
                      "dims": [km, kp], "phase_component": k + comp})
    tail = max(np.max(np.abs(prof.U[0] - endstates.U_minus)), np.max(np.abs(prof.U[-1] - endstates.U_plus)))
    prof.meta["tail_mismatch"] = float(tail)
    if tail > tail_tol:
        raise ProfileError(f"grid too short: endstate mismatch {tail:.2e} at |x| = L")
    return prof


def _assemble(branch_data, endstates, s, csys, L, N, anchor_x):
    x = np.linspace(-L, L, N)
    U = _evaluate_branches(branch_data, x)
    red = branch_data[0]
    Ux = _reduced_derivative(red, U)
    res = profile_residual(csys, x, U, endstates.U_minus)
    anchor = int(np.argmin(np.abs(x - anchor_x)))
    prof = ShockProfile(x, U, Ux, endstates, s, csys, np.nan, anchor, res,
                        meta={"anchor_x": anchor_x}, _branches=branch_data)
    prof.decay_rate = linear_decay_rate(branch_data[1][2], branch_data[2][2])
    return prof


def linear_decay_rate(J_minus, J_plus) -> float:
    """Slowest approach rate to the endstates predicted by the reduced-ODE linearizations."""
    wm = np.linalg.eigvals(J_minus).real
    wp = np.linalg.eigvals(J_plus).real
    return float(min(np.min(wm[wm > 0]), np.min(-wp[wp < 0])))


_D6 = np.array([-1, 9, -45, 0, 45, -9, 1]) / 60.0


def profile_residual(csys: SystemModel, x, U, U_minus) -> float:
    """Sup-norm of B(U) D U - [F(U) - F(U-)] at interior points, D a sixth-order difference."""
    h = x[1] - x[0]
    DU = sum(c * U[3 + j - 3: len(U) - 3 + j - 3 or None] for j, c in enumerate(_D6)) / h
    Ui = U[3:-3]
    res = np.einsum("nij,nj->ni", csys.viscosity(Ui), DU) - (csys.flux(Ui) - csys.flux(U_minus))
    return float(np.max(np.abs(res)))


def decay_fit(profile: ShockProfile, upper: float = 1e-4, lower: float = 1e-11):
    """Least-squares fit of log|U - U±| against |x| on both tails.

    Returns a dict with the worse (smaller) rate ``eta``, the matching ``C``,
    per-derivative rates for r = 0, 1, 2 and the fit R^2 values.
    """
    x, U, Ux = profile.x, profile.U, profile.Ux
    Uxx = np.gradient(Ux, x, axis=0, edge_order=2)
    es = profile.endstates
    dev_m = np.max(np.abs(U - es.U_minus), axis=1)
    dev_p = np.max(np.abs(U - es.U_plus), axis=1)
    half = 0.5 * (x[-1] - x[0])
    for dev, side in ((dev_m, x < 0), (dev_p, x > 0)):
        close = side & (dev < upper)
        if not np.any(close) or np.ptp(x[close]) < 0.25 * half:
            raise ValueError("tail not in asymptotic regime (profile not resolved on the grid)")

    def fit(values, side_mask):
        sel = side_mask & (values < upper) & (values > lower)
        if np.sum(sel) < 5:
            raise ValueError("no decay signal in tail")
        X = np.abs(x[sel])
        Y = np.log(values[sel])
        A = np.vstack([X, np.ones_like(X)]).T
        coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
        pred = A @ coef
        r2 = 1.0 - np.sum((Y - pred) ** 2) / max(np.sum((Y - Y.mean()) ** 2), 1e-300)
        return -coef[0], float(np.exp(coef[1])), float(r2)

    fields = [(dev_m, dev_p)]
    for f in (Ux, Uxx):
        mag = np.max(np.abs(f), axis=1)
        fields.append((mag, mag))
    rates, fits0 = [], None
    for k, (fm, fp) in enumerate(fields):
        per = [fit(fm, x < 0), fit(fp, x > 0)]
        rates.append(min(p[0] for p in per))
        if k == 0:
            fits0 = per
    if rates[0] <= 0:
        raise ValueError("no decay signal in tail")
    worst = min(fits0, key=lambda p: p[0])
    return {"eta": float(rates[0]), "C": worst[1], "rates": [float(v) for v in rates],
            "r2": [p[2] for p in fits0]}
