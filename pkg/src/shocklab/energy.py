"""Kawashima compensators and the weighted H^1 energy of the linearized flow.

The energy is the weighted quadratic form
E(w) = C^2 <alpha A0 w, w> + C <alpha K w_x, w> + <alpha A0 w_x, w_x>,
assembled as a symmetric matrix on the grid, so that along the discrete
evolution w_t = L w + f its rate is exactly 2 w^T S (L w + f).  The damping
inequality is then checked both on random forced runs and by an exact
quadratic-form certificate (a Schur complement in the forcing).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import minimize

from .linop import LinearOperator
from .model import jacobians
from .norms import trapezoid_weights
from .profile import ShockProfile


class EnergyError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Compensator

def _skew(params, n):
    K = np.zeros((n, n))
    K[np.triu_indices(n, 1)] = params
    return K - K.T


def _margin(K, A, A0B):
    M = K @ A + A0B
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


@dataclass
class KawashimaResult:
    K: np.ndarray
    margin: float
    success: bool
    coupling_margin: float
    message: str = ""


def coupling_margin(A, B):
    """min over unit eigenvectors r of A of |B r|; zero means an eigenvector lies in ker B."""
    w, R = np.linalg.eig(A)
    R = R / np.linalg.norm(R, axis=0)
    return float(np.min(np.linalg.norm(B @ R, axis=0)))


def kawashima_pair(A, B, A0, seed: int = 0, restarts: int = 6, k_max: float = 1e3) -> KawashimaResult:
    """Skew K maximizing the smallest eigenvalue of sym(K A + A0 B) (Nelder-Mead with restarts).

    The seed set includes K = 0 and the skew part of
    sum_{j != k} P_j A0 B P_k / (lambda_k - lambda_j) from A's spectral projections.
    """
    A, B, A0 = (np.asarray(M, float) for M in (A, B, A0))
    n = A.shape[0]
    A0B = A0 @ B
    m = n * (n - 1) // 2
    coup = coupling_margin(A, B)
    if m == 0:
        marg = _margin(np.zeros((1, 1)), A, A0B)
        return KawashimaResult(np.zeros((1, 1)), marg, marg > 0, coup)
    lam, R = np.linalg.eig(A)
    Rinv = np.linalg.inv(R)
    P = [np.real(np.outer(R[:, j], Rinv[j])) for j in range(n)]
    K0 = np.zeros((n, n))
    for j in range(n):
        for k in range(n):
            if j != k and abs(lam[k] - lam[j]) > 1e-12:
                K0 += np.real(P[j].T @ A0B @ P[k] / (lam[k] - lam[j]))
    K0 = 0.5 * (K0 - K0.T)
    rng = np.random.default_rng(seed)
    scale = max(np.linalg.norm(A0B), 1.0) / max(np.linalg.norm(A), 1e-12)
    seeds = [np.zeros(m), K0[np.triu_indices(n, 1)]]
    seeds += [scale * rng.normal(size=m) for _ in range(restarts)]

    def obj(p):
        if np.max(np.abs(p)) > k_max:
            return 1e6
        return -_margin(_skew(p, n), A, A0B)

    best = None
    for p0 in seeds:
        res = minimize(obj, p0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000 * m, "maxfev": 8000 * m})
        if best is None or res.fun < best.fun:
            best = res
    K = _skew(best.x, n)
    marg = _margin(K, A, A0B)
    ok = marg > 0
    msg = "" if ok else ("genuine coupling fails" if coup < 1e-8 else "optimizer found no positive margin")
    return KawashimaResult(K, marg, ok, coup, msg)


# ---------------------------------------------------------------------------
# Grid operators

def _diff_matrices(N, h):
    D = sp.diags([-0.5, 0.5], [-1, 1], shape=(N, N), format="lil") / h
    D[0, :3] = np.array([-1.5, 2.0, -0.5]) / h
    D[N - 1, N - 3:] = np.array([0.5, -2.0, 1.5]) / h
    D2 = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(N, N), format="lil") / h ** 2
    D2[0, :3] = np.array([1.0, -2.0, 1.0]) / h ** 2
    D2[N - 1, N - 3:] = np.array([1.0, -2.0, 1.0]) / h ** 2
    return D.tocsr(), D2.tocsr()


def _blocks(fields):
    return sp.block_diag(list(fields), format="csr")


def _component(M, n, comps):
    sel = np.zeros((n, n))
    for c in comps:
        sel[c, c] = 1.0
    return sp.kron(M, sel, format="csr")


def sobolev_grams(x, n, k):
    """Gram matrices (L2, H1, mixed H^{1,2}) for point-major flattened grid functions."""
    N, h = len(x), x[1] - x[0]
    W = sp.diags(trapezoid_weights(x))
    D, D2 = _diff_matrices(N, h)
    G0 = sp.kron(W, np.eye(n), format="csr")
    G1 = G0 + sp.kron(D.T @ W @ D, np.eye(n), format="csr")
    DD = D @ D
    Gm = G1 + _component(DD.T @ W @ DD, n, range(k, n))
    return G0, G1, Gm


# ---------------------------------------------------------------------------
# Energy form

@dataclass
class EnergyForm:
    x: np.ndarray
    C: float
    C_star: float
    alpha: np.ndarray
    K_field: np.ndarray  # (N, n, n)
    K_minus: np.ndarray
    K_plus: np.ndarray
    S: np.ndarray  # symmetric matrix of E
    G_L2: sp.csr_matrix
    G_H1: sp.csr_matrix
    G_mixed: sp.csr_matrix
    c1: float
    c2: float
    reflected: bool
    margins: dict = field(default_factory=dict)

    def __call__(self, w):
        v = np.asarray(w).reshape(-1)
        return float(v @ self.S @ v)

    @property
    def positive(self):
        return self.c1 > 0

    def to_dict(self):
        return {"C": self.C, "C_star": self.C_star, "c1": self.c1, "c2": self.c2,
                "reflected": self.reflected, "K_minus": self.K_minus.tolist(),
                "K_plus": self.K_plus.tolist(), "margins": self.margins,
                "alpha_range": [float(self.alpha.min()), float(self.alpha.max())]}


def compensator_field(profile: ShockProfile):
    """K_-, K_+ at the endstates and the arclength interpolant K(x) along the profile."""
    csys = profile.system
    res = {}
    for key, U in (("minus", profile.endstates.U_minus), ("plus", profile.endstates.U_plus)):
        A, _, A0 = jacobians(csys, U)
        res[key] = kawashima_pair(A, csys.viscosity(U), A0)
        if not res[key].success:
            raise EnergyError(f"no compensator at U_{key}: {res[key].message}")
    speed = np.linalg.norm(profile.Ux, axis=1)
    arc = cumulative_trapezoid(speed, profile.x, initial=0.0)
    theta = arc / arc[-1] if arc[-1] > 0 else np.linspace(0.0, 1.0, len(arc))
    Kf = (1.0 - theta)[:, None, None] * res["minus"].K + theta[:, None, None] * res["plus"].K
    return res["minus"], res["plus"], Kf


def build_energy(profile: ShockProfile, Lop: Optional[LinearOperator], C: float, C_star: float,
                 compensators=None, reflect: Optional[bool] = None) -> EnergyForm:
    x = profile.x if Lop is None else Lop.x
    N, n = len(x), profile.system.n
    k = n - profile.system.r
    h = x[1] - x[0]
    Km, Kp, Kf = compensators if compensators is not None else compensator_field(profile)
    Ux = profile.Ux if Lop is None else Lop.Ubar_x
    U = profile.U if Lop is None else Lop.Ubar
    # transported block: the weight must grow against the transport direction
    A = jacobians(profile.system, profile.endstates.U_minus)[0]
    a11 = np.real(np.linalg.eigvals(A[:k, :k])) if k else np.array([-1.0])
    reflected = bool(np.all(a11 > 0)) if reflect is None else bool(reflect)
    sign = -1.0 if reflected else 1.0
    speed = np.linalg.norm(Ux, axis=1)
    arc = cumulative_trapezoid(speed, x, initial=0.0)
    arc -= np.interp(0.0, x, arc)
    expo = sign * C_star * arc
    if np.max(np.abs(expo)) > 600:
        raise EnergyError("weight overflow: reduce C_star")
    alpha = np.exp(expo)
    A0 = np.array([profile.system.symmetrizer(u) for u in U])
    W = sp.kron(sp.diags(trapezoid_weights(x)), np.eye(n), format="csr")
    D, D2 = _diff_matrices(N, h)
    Dn = sp.kron(D, np.eye(n), format="csr")
    Al = sp.kron(sp.diags(alpha), np.eye(n), format="csr")
    A0b, Kb = _blocks(A0), _blocks(Kf)
    # weight kept outside the derivatives: C^2<a A0 w,w> + C<a K w_x,w> + <a A0 w_x,w_x>
    WA = W @ Al
    M = WA @ (C ** 2 * A0b + C * Kb @ Dn) + Dn.T @ WA @ A0b @ Dn
    M = M.toarray()
    S = 0.5 * (M + M.T)
    G0, G1, Gm = sobolev_grams(x, n, k)
    ev = sla.eigh(S, G1.toarray(), eigvals_only=True)
    return EnergyForm(x, C, C_star, alpha, Kf, Km.K, Kp.K, S, G0, G1, Gm, float(ev[0]), float(ev[-1]),
                      reflected, {"K_minus_margin": Km.margin, "K_plus_margin": Kp.margin})


# ---------------------------------------------------------------------------
# Damping

def _forcing_embedding(N, n, k):
    """Columns embedding the U2 block forcing r into the full state."""
    sel = np.zeros((n, n - k))
    sel[k:, :] = np.eye(n - k)
    return sp.kron(sp.identity(N), sel, format="csr")


def _interior_mask(Lop: LinearOperator, layer: Optional[int]):
    from .linop import HALF_WIDTH
    m = 2 * HALF_WIDTH[Lop.order] + 2 if layer is None else int(layer)
    keep = np.zeros((Lop.N, Lop.n), bool)
    keep[m:Lop.N - m] = True
    return keep.reshape(-1)


class _Certifier:
    """Quadratic forms of the damping inequality on states vanishing in a boundary layer.

    The inequality concerns the whole line; on the truncated grid the
    inflow closure adds a boundary flux term of size O(1/h) that no
    interior estimate controls, so the cells next to the ends are excluded.
    """

    def __init__(self, E: EnergyForm, Lop: LinearOperator, layer: Optional[int] = None):
        N, n = Lop.N, Lop.n
        k = n - Lop.profile.system.r
        keep = _interior_mask(Lop, layer)
        SL = E.S @ Lop.dense()
        P = _forcing_embedding(N, n, k).toarray()
        wr = np.repeat(trapezoid_weights(Lop.x), n - k)
        SP = E.S @ P
        sub = np.ix_(keep, keep)
        self.rate = (SL + SL.T)[sub]
        self.force = ((SP / wr[None, :]) @ SP.T)[sub]
        self.Gm = E.G_mixed.toarray()[sub]
        self.G0 = E.G_L2.toarray()[sub]
        self.layer = layer

    def __call__(self, theta, C_f):
        Q = self.rate + theta * self.Gm - C_f * self.G0 + self.force / C_f
        return float(sla.eigh(0.5 * (Q + Q.T), self.Gm, eigvals_only=True)[-1])

    def largest_theta(self, C_f, theta_max=10.0, iters=30):
        if self(0.0, C_f) > 0:
            return 0.0
        lo, hi = 0.0, theta_max
        if self(hi, C_f) <= 0:
            return hi
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if self(mid, C_f) <= 0:
                lo = mid
            else:
                hi = mid
        return lo

    def smallest_constant(self, max_exp=30):
        """Smallest power of two C_f admitting some theta > 0, with that theta."""
        for j in range(-4, max_exp):
            th = self.largest_theta(2.0 ** j, iters=12)
            if th > 0:
                return 2.0 ** j, self.largest_theta(2.0 ** j)
        return None, 0.0


def damping_certificate(E: EnergyForm, Lop: LinearOperator, theta: float, C_f: float,
                        layer: Optional[int] = None) -> float:
    """Largest generalized eigenvalue of

        2 w.S(Lw + Pr) + theta |w|_{H^{1,2}}^2 - C_f(|r|^2 + |w|_{L2}^2)

    maximized over the forcing r (Schur complement), relative to the mixed
    Gram matrix.  Non-positive means the damping inequality holds for every
    interior state and every forcing.
    """
    return _Certifier(E, Lop, layer)(theta, C_f)


def largest_theta(E: EnergyForm, Lop: LinearOperator, C_f: float, theta_max: float = 10.0,
                  iters: int = 30, layer: Optional[int] = None):
    return _Certifier(E, Lop, layer).largest_theta(C_f, theta_max, iters)


@dataclass
class DampingReport:
    theta: float
    C_f: float
    certificate: float
    trials: int
    passed: int
    worst_slack: float
    records: list = field(default_factory=list)

    @property
    def all_pass(self):
        return self.passed == self.trials and self.theta > 0

    def to_dict(self):
        return {"theta": self.theta, "C": self.C_f, "certificate_max_eig": self.certificate,
                "trials": self.trials, "passed": self.passed, "pass_rate": self.passed / max(self.trials, 1),
                "worst_slack": self.worst_slack}


def _random_field(rng, x, n, L):
    m = rng.integers(1, 4)
    out = np.zeros((len(x), n))
    for _ in range(m):
        c = rng.uniform(-0.2, 0.2) * L
        wd = rng.uniform(0.5, 0.1 * L)
        out += np.exp(-0.5 * ((x - c) / wd) ** 2)[:, None] * rng.normal(size=n)[None, :]
    return out


def verify_linear_damping(E: EnergyForm, Lop: LinearOperator, trials: int = 100, seed: int = 0,
                          T: float = 1.0, C_f: Optional[float] = None, theta: Optional[float] = None,
                          dt: Optional[float] = None, layer: Optional[int] = None) -> DampingReport:
    """Check dE/dt <= -theta |w|_{H^{1,2}}^2 + C_f (|f|^2 + |w|_{L2}^2) along random forced runs.

    dE/dt is evaluated exactly as 2 w.S(Lw + f) at every step of the
    discrete evolution.  (theta, C_f) default to half the certified
    largest theta at the smallest certified power-of-two C_f.  Trial data
    and forcing are localized well inside the domain.
    """
    from .dynamics import IMEXStepper, default_dt

    N, n = Lop.N, Lop.n
    k = n - Lop.profile.system.r
    cert_form = _Certifier(E, Lop, layer)
    if C_f is None:
        C_f, th = cert_form.smallest_constant()
        if C_f is None:
            raise EnergyError("no (theta, C) certified; retune C and C_star")
        theta = 0.5 * th if theta is None else theta
    elif theta is None:
        theta = 0.5 * cert_form.largest_theta(C_f)
    cert = cert_form(theta, C_f)
    rng = np.random.default_rng(seed)
    x, L = Lop.x, np.max(np.abs(Lop.x))
    wts = trapezoid_weights(x)
    dt = default_dt(Lop, 0.5) if dt is None else dt
    steps = max(2, int(np.ceil(T / dt)))
    S, Gm, G0 = E.S, E.G_mixed, E.G_L2
    passed, worst, records = 0, np.inf, []
    for trial in range(trials):
        w0 = _random_field(rng, x, n, L) * rng.uniform(0.1, 1.0)
        shapes = _random_field(rng, x, n - k, L) if n > k else np.zeros((N, 0))
        freq, phase = rng.uniform(0.5, 5.0), rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.0, 2.0)

        def forcing(t, _s=shapes, _f=freq, _p=phase, _a=amp):
            f = np.zeros((N, n))
            f[:, k:] = _a * np.sin(_f * t + _p) * _s
            return f
        stepper = IMEXStepper(Lop, dt)
        ok, slack_min = True, np.inf
        states = [(0.0, w0)] + list(stepper.iterate(w0, steps, lambda V, t: forcing(t)))
        for t, w in states:
            v = w.reshape(-1)
            f = forcing(t)
            rate = 2.0 * v @ (S @ (Lop.apply(w).reshape(-1) + f.reshape(-1)))
            fn2 = float(np.sum(wts[:, None] * f[:, k:] ** 2))
            rhs = -theta * float(v @ (Gm @ v)) + C_f * (fn2 + float(v @ (G0 @ v)))
            slack = rhs - rate
            scale = abs(rhs) + abs(rate) + 1e-300
            slack_min = min(slack_min, slack / scale)
            if slack < -1e-10 * scale:
                ok = False
        passed += ok
        worst = min(worst, slack_min)
        records.append({"trial": trial, "pass": ok, "min_relative_slack": slack_min})
    return DampingReport(theta, C_f, cert, trials, passed, float(worst), records)


def auto_tune(profile: ShockProfile, Lop: LinearOperator, k_range=range(0, 7), m_range=range(0, 4),
              c_f_max_exp: int = 30):
    """First (C, C_star) = (2^k, 2^m C) giving a positive definite E and a certified theta > 0.

    m = 0 (C_star = C) is tried first; an unweighted energy is not part of the search.
    """
    comps = compensator_field(profile)
    tried = []
    for kk in k_range:
        C = 2.0 ** kk
        for m in m_range:
            C_star = 2.0 ** m * C
            try:
                E = build_energy(profile, Lop, C, C_star, comps)
            except EnergyError as exc:
                tried.append({"C": C, "C_star": C_star, "error": str(exc)})
                continue
            if not E.positive:
                tried.append({"C": C, "C_star": C_star, "c1": E.c1})
                continue
            C_f, th = _Certifier(E, Lop).smallest_constant(c_f_max_exp)
            if C_f is not None:
                return E, {"C": C, "C_star": C_star, "C_f": C_f, "theta_max": th, "tried": tried}
            tried.append({"C": C, "C_star": C_star, "c1": E.c1, "certified": False})
    raise EnergyError("auto-tuning found no admissible (C, C_star)")


def verify_nonlinear_damping(traj, theta1_grid=None, theta2_grid=None) -> dict:
    """Feasible (theta1, theta2, C) for |V|_{H3}^2 <= C e^{-theta1 t}|V0|^2 + C int e^{-theta2(t-s)}(|V|^2 + |a'|^2) ds."""
    t = traj.times
    norms = traj.tracked_norms if traj.tracked_norms is not None else traj.norms
    H3 = norms["H3"] ** 2
    L2 = norms["L2"] ** 2
    ad = traj.alpha_dot ** 2 if traj.alpha_dot is not None else np.zeros_like(t)
    src = L2 + ad
    theta1_grid = [0.05, 0.1, 0.2, 0.5, 1.0] if theta1_grid is None else theta1_grid
    theta2_grid = [0.05, 0.1, 0.2, 0.5, 1.0] if theta2_grid is None else theta2_grid
    feasible = []
    for th1 in theta1_grid:
        for th2 in theta2_grid:
            conv = np.zeros_like(t)
            for i in range(1, len(t)):
                s = t[: i + 1]
                conv[i] = np.trapezoid(np.exp(-th2 * (t[i] - s)) * src[: i + 1], s)
            base = np.exp(-th1 * t) * H3[0] + conv
            if np.any((base <= 0) & (H3 > 0)):
                continue
            ratio = np.where(base > 0, H3 / np.where(base > 0, base, 1.0), 0.0)
            feasible.append({"theta1": th1, "theta2": th2, "C": float(max(np.max(ratio), 1.0))})
    degenerate = bool(np.all(H3 == 0))
    return {"feasible": feasible, "ok": bool(feasible) or degenerate, "degenerate": degenerate}
