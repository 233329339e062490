"""Discrete linearized operator about a standing profile.

The nonlinear right-hand side -(F(U))_x + (B(U)U_x)_x is discretized in
conservation form on a uniform grid with ghost cells.  The transported block
(constant A11 because F1 is affine) is upwinded by the sign of the
eigenvalues of A11; everything else is differenced centrally.  The
linearized operator is the exact Jacobian of that discrete right-hand side at
the profile, obtained by colored complex-step differentiation, so linear and
nonlinear evolutions share one discretization.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import cumulative_trapezoid

from .model import jacobians
from .norms import inner, lp_norm, trapezoid_weights
from .profile import ReducedODE, ShockProfile

HALF_WIDTH = {2: 2, 4: 3}
BOUNDARY_CLOSURES = ("outflow_extrapolation", "dirichlet_endstate")


class DiscretizationError(ValueError):
    pass


class SpectralFault(RuntimeError):
    pass


@dataclass(frozen=True)
class Discretization:
    system: object
    x: np.ndarray
    order: int
    bc: str
    U_minus: np.ndarray
    U_plus: np.ndarray
    A11: np.ndarray
    P_pos: np.ndarray
    P_neg: np.ndarray

    @property
    def h(self):
        return float(self.x[1] - self.x[0])

    @property
    def g(self):
        return HALF_WIDTH[self.order]

    def pad(self, U):
        g = self.g
        if self.bc == "dirichlet_endstate":
            left = np.broadcast_to(self.U_minus, (g,) + U.shape[1:])
            right = np.broadcast_to(self.U_plus, (g,) + U.shape[1:])
        else:
            left = np.repeat(U[:1], g, axis=0)
            right = np.repeat(U[-1:], g, axis=0)
        return np.concatenate([left.astype(U.dtype), U, right.astype(U.dtype)])

    def rhs(self, U):
        """-(F(U))_x + (B(U)U_x)_x at the grid nodes, U of shape (N, n); complex-safe."""
        N = U.shape[0]
        g, h, k = self.g, self.h, self.A11.shape[0]
        P = self.pad(U)

        def at(arr, j):  # interface-left values with offset j, N+1 interfaces
            return arr[g - 1 + j: g + N + j]

        F = self.system.flux(P)
        Fc = F.copy()
        if k:
            Fc[:, :k] = F[:, :k] - P[:, :k] @ self.A11.T
            wp = P[:, :k] @ self.P_pos.T
            wm = P[:, :k] @ self.P_neg.T
        if self.order == 2:
            Fhat = 0.5 * (at(Fc, 0) + at(Fc, 1))
            if k:
                Fhat[:, :k] += 0.5 * (3 * at(wp, 0) - at(wp, -1)) + 0.5 * (3 * at(wm, 1) - at(wm, 2))
            Um = 0.5 * (at(P, 0) + at(P, 1))
            D = (at(P, 1) - at(P, 0)) / h
            Ghat = np.einsum("...ij,...j->...i", self.system.viscosity(Um), D)
        else:
            Fhat = (-at(Fc, -1) + 7 * at(Fc, 0) + 7 * at(Fc, 1) - at(Fc, 2)) / 12.0
            if k:
                Fhat[:, :k] += (2 * at(wp, -2) - 13 * at(wp, -1) + 47 * at(wp, 0)
                                + 27 * at(wp, 1) - 3 * at(wp, 2)) / 60.0
                Fhat[:, :k] += (2 * at(wm, 3) - 13 * at(wm, 2) + 47 * at(wm, 1)
                                + 27 * at(wm, 0) - 3 * at(wm, -1)) / 60.0

            def e(j):  # N+3 interfaces, left cells g-2 .. g+N
                return P[g - 2 + j: g + N + 1 + j]
            Um = (-e(-1) + 9 * e(0) + 9 * e(1) - e(2)) / 16.0
            D = (e(-1) - 27 * e(0) + 27 * e(1) - e(2)) / (24.0 * h)
            G = np.einsum("...ij,...j->...i", self.system.viscosity(Um), D)
            Ghat = (-G[:-2] + 26 * G[1:-1] - G[2:]) / 24.0
        return -(Fhat[1:] - Fhat[:-1]) / h + (Ghat[1:] - Ghat[:-1]) / h


def make_discretization(profile: ShockProfile, order: int = 2, bc: str = "dirichlet_endstate",
                        x: Optional[np.ndarray] = None) -> Discretization:
    if order not in HALF_WIDTH:
        raise DiscretizationError(f"order must be 2 or 4, got {order}")
    if bc not in BOUNDARY_CLOSURES:
        raise DiscretizationError(f"unknown boundary closure {bc!r}")
    csys = profile.system
    k = csys.n - csys.r
    A = jacobians(csys, profile.endstates.U_minus)[0]
    A11 = A[:k, :k]
    if k:
        lam, R = np.linalg.eig(A11)
        Rinv = np.linalg.inv(R)
        P_pos = np.real(R @ np.diag(np.maximum(lam.real, 0.0)) @ Rinv)
        P_neg = np.real(R @ np.diag(np.minimum(lam.real, 0.0)) @ Rinv)
    else:
        P_pos = P_neg = np.zeros((0, 0))
    return Discretization(csys, profile.x if x is None else x, order, bc,
                          profile.endstates.U_minus, profile.endstates.U_plus, A11, P_pos, P_neg)


def grid_jacobian(disc: Discretization, U, step: float = 1e-30):
    """Sparse Jacobian of ``disc.rhs`` at U by colored complex step (real differences as fallback)."""
    N, n = U.shape
    w = 2 * disc.g + 1
    rows, cols, vals = [], [], []
    use_complex = True
    try:
        probe = disc.rhs(U.astype(complex) + 1j * step)
        use_complex = np.all(np.isfinite(probe))
    except (TypeError, ValueError, FloatingPointError):
        use_complex = False
    base = None if use_complex else disc.rhs(U)
    idx = np.arange(N)
    for c in range(w):
        nodes = idx[c::w]
        for m in range(n):
            if use_complex:
                Z = U.astype(complex)
                Z[nodes, m] += 1j * step
                col = np.imag(disc.rhs(Z)) / step
            else:
                eps = 1e-7 * max(1.0, float(np.max(np.abs(U[:, m]))))
                Z = U.copy()
                Z[nodes, m] += eps
                col = (disc.rhs(Z) - base) / eps
            for j in nodes:
                lo, hi = max(0, j - disc.g), min(N, j + disc.g + 1)
                block = col[lo:hi]
                rr = (np.arange(lo, hi)[:, None] * n + np.arange(n)[None, :]).ravel()
                rows.append(rr)
                cols.append(np.full(len(rr), j * n + m))
                vals.append(block.ravel())
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    keep = vals != 0.0
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(N * n, N * n))


@dataclass(frozen=True)
class LinearOperator:
    """L V = -(A(x)V)_x + (B(x)V_x)_x on the grid, plus an optional low-rank term."""
    profile: ShockProfile
    disc: Discretization
    matrix: sp.csr_matrix
    base: np.ndarray
    low_rank: Optional[tuple] = None  # (left, right) columns; adds left @ (right.T @ v)
    meta: dict = field(default_factory=dict)

    @property
    def x(self):
        return self.disc.x

    @property
    def h(self):
        return self.disc.h

    @property
    def N(self):
        return len(self.disc.x)

    @property
    def n(self):
        return self.profile.system.n

    @property
    def order(self):
        return self.disc.order

    @property
    def bc(self):
        return self.disc.bc

    @property
    def weights(self):
        return trapezoid_weights(self.disc.x)

    @property
    def max_speed(self):
        es, s = self.profile.endstates, self.profile.s
        return float(max(np.max(np.abs(es.eig_minus - s)), np.max(np.abs(es.eig_plus - s))))

    @property
    def Ubar(self):
        return self.profile.U

    @property
    def Ubar_x(self):
        return self.profile.Ux

    def apply(self, V):
        V = np.asarray(V)
        out = self.matrix @ V.reshape(-1)
        if self.low_rank is not None:
            left, right = self.low_rank
            out = out + left @ (right.T @ V.reshape(-1))
        return out.reshape(V.shape)

    def full_rhs(self, V):
        """RHS_h(U + V) - RHS_h(U): the perturbation right-hand side including the low-rank term."""
        out = self.disc.rhs(self.profile.U + V) - self.base
        if self.low_rank is not None:
            left, right = self.low_rank
            out = out + (left @ (right.T @ V.reshape(-1))).reshape(V.shape)
        return out

    def nonlinear(self, V):
        """Nonlinear remainder N(V) = RHS_h(U + V) - RHS_h(U) - L V."""
        return self.disc.rhs(self.profile.U + V) - self.base - (self.matrix @ V.reshape(-1)).reshape(V.shape)

    def dense(self):
        M = self.matrix.toarray()
        if self.low_rank is not None:
            M = M + self.low_rank[0] @ self.low_rank[1].T
        return M

    def shifted_solver(self, c: float):
        """Return a solver for (c I - L) y = b, sparse LU plus Sherman-Morrison-Woodbury."""
        A = (c * sp.identity(self.N * self.n, format="csc") - self.matrix.tocsc())
        lu = spla.splu(A)
        if self.low_rank is None:
            return lambda b: lu.solve(np.asarray(b).reshape(-1)).reshape(np.shape(b))
        left, right = self.low_rank
        Z = lu.solve(left)  # (cI - M)^{-1} left, and cI - L = (cI - M) - left right^T
        cap = np.eye(left.shape[1]) - right.T @ Z

        def solve(b):
            y = lu.solve(np.asarray(b).reshape(-1))
            y = y + Z @ np.linalg.solve(cap, right.T @ y)
            return y.reshape(np.shape(b))
        return solve


def assemble(profile: ShockProfile, order: int = 2, bc: str = "dirichlet_endstate",
             resolution_tol: float = 1e-6) -> LinearOperator:
    """Discretize the linearization about ``profile`` on the profile grid."""
    es = profile.endstates
    tail = max(np.max(np.abs(profile.U[0] - es.U_minus)), np.max(np.abs(profile.U[-1] - es.U_plus)))
    if not np.isfinite(tail) or tail > resolution_tol or not np.all(np.isfinite(profile.U)):
        raise DiscretizationError(f"profile tails not converged on the grid (mismatch {tail:.2e})")
    if profile.N < 4 * HALF_WIDTH.get(order, 2):
        raise DiscretizationError("grid too coarse")
    disc = make_discretization(profile, order, bc)
    J = grid_jacobian(disc, profile.U)
    base = disc.rhs(profile.U)
    return LinearOperator(profile, disc, J, base, meta={"kind": "linearized"})


def symbol(Lop: LinearOperator, xi):
    """Discrete Fourier symbol of the interior stencil at the middle node, shape (len(xi), n, n).

    For a constant-state profile this should approximate -i xi A - xi^2 B.
    """
    n, N, h = Lop.n, Lop.N, Lop.h
    i0 = N // 2
    rows = Lop.matrix[i0 * n:(i0 + 1) * n].toarray()
    xi = np.atleast_1d(xi)
    out = np.zeros((len(xi), n, n), complex)
    for j in range(max(0, i0 - Lop.disc.g), min(N, i0 + Lop.disc.g + 1)):
        block = rows[:, j * n:(j + 1) * n]
        out += block[None] * np.exp(1j * xi * (j - i0) * h)[:, None, None]
    return out


def synthetic_unstable(Lop: LinearOperator, gamma: float = 1.0, width: float = 2.0,
                       center: float = 0.0, direction=None) -> LinearOperator:
    """L + gamma psi <psi~, .> with psi = d/dx of a localized bump, so psi has zero mean.

    psi~ is made orthogonal to the profile derivative, which keeps the
    translational zero mode of the original operator.
    """
    x, w, n = Lop.x, Lop.weights, Lop.n
    d = np.ones(n) / np.sqrt(n) if direction is None else np.asarray(direction, float) / np.linalg.norm(direction)
    z = (x - center) / width
    bump = np.exp(-0.5 * z ** 2)
    psi = (-z / width * bump)[:, None] * d[None, :]
    psi_t = psi.copy()
    Ux = Lop.Ubar_x
    psi_t -= inner(w, psi_t, Ux) / inner(w, Ux, Ux) * Ux
    psi_t /= inner(w, psi_t, psi)
    left = gamma * psi.reshape(-1, 1)
    right = (w[:, None] * psi_t).reshape(-1, 1)
    meta = dict(Lop.meta, kind="synthetic", gamma=gamma, width=width, center=center)
    return dataclasses.replace(Lop, low_rank=(left, right), meta=meta)


# ---------------------------------------------------------------------------
# Spectrum and projections

@dataclass(frozen=True)
class SpectralData:
    x: np.ndarray
    weights: np.ndarray
    eigenvalues: np.ndarray
    phi: np.ndarray  # (p, N, n) right eigenfunctions
    phi_tilde: np.ndarray  # (p, N, n) adjoint eigenfunctions, <phi~_i, phi_j> = delta_ij
    Phi: np.ndarray  # antiderivatives of phi
    dphi_tilde: np.ndarray
    re_cutoff: float
    all_eigenvalues: np.ndarray
    all_tail_mass: np.ndarray
    all_zero_alignment: np.ndarray
    excluded: list = field(default_factory=list)
    method: str = "dense"

    @property
    def p(self):
        return len(self.eigenvalues)

    @property
    def N(self):
        return len(self.x)

    def to_json(self):
        return {"p": self.p,
                "eigenvalues": [[float(l.real), float(l.imag)] for l in self.eigenvalues],
                "re_cutoff": self.re_cutoff, "method": self.method,
                "excluded": [{k: ([float(v.real), float(v.imag)] if isinstance(v, complex) else v)
                              for k, v in e.items()} for e in self.excluded]}


def _tail_mass(x, w, vec, frac):
    mag = np.sum(np.abs(vec) ** 2, axis=-1)
    tot = np.sum(w * mag)
    far = np.abs(x) > frac * np.max(np.abs(x))
    return float(np.sum(w[far] * mag[far]) / tot) if tot > 0 else 1.0


def _alignment(w, vec, Ux):
    num = abs(np.sum(w[:, None] * np.conj(vec) * Ux))
    den = np.sqrt(np.sum(w[:, None] * np.abs(vec) ** 2) * np.sum(w[:, None] * Ux ** 2))
    return float(num / den) if den > 0 else 0.0


def _eigs_shift_invert(Lop: LinearOperator, shifts, k):
    size = Lop.N * Lop.n
    vals, right, left = [], [], []
    for sigma in shifts:
        def make(transpose):
            A = (Lop.matrix - sigma * sp.identity(size)).tocsc().astype(complex)
            if transpose:
                A = A.T.tocsc()
            lu = spla.splu(A)
            if Lop.low_rank is None:
                return spla.LinearOperator((size, size), matvec=lu.solve, dtype=complex)
            a, b = Lop.low_rank
            if transpose:
                a, b = b, a
            Z = lu.solve(a.astype(complex))
            cap = np.eye(a.shape[1]) + b.T @ Z

            def mv(v):
                y = lu.solve(v.astype(complex))
                return y - Z @ np.linalg.solve(cap, b.T @ y)
            return spla.LinearOperator((size, size), matvec=mv, dtype=complex)

        M = Lop.matrix.astype(complex)
        lr = Lop.low_rank

        def matvec(v, T=False):
            out = (M.T if T else M) @ v
            if lr is not None:
                a, b = (lr[1], lr[0]) if T else lr
                out = out + a @ (b.T @ v)
            return out
        A = spla.LinearOperator((size, size), matvec=matvec, dtype=complex)
        AT = spla.LinearOperator((size, size), matvec=lambda v: matvec(v, True), dtype=complex)
        w, V = spla.eigs(A, k=k, sigma=sigma, OPinv=make(False))
        wl, Y = spla.eigs(AT, k=k, sigma=sigma, OPinv=make(True))
        for lam, vec in zip(w, V.T):
            j = int(np.argmin(np.abs(wl - lam)))
            if abs(wl[j] - lam) > 1e-6 * max(1.0, abs(lam)):
                continue
            if any(abs(lam - v0) < 1e-8 * max(1.0, abs(lam)) for v0 in vals):
                continue
            vals.append(lam)
            right.append(vec)
            left.append(Y[:, j])
    return np.array(vals), np.array(right).T, np.array(left).T


def unstable_spectrum(Lop: LinearOperator, re_cutoff: float = 1e-6, tail_threshold: float = 0.01,
                      tail_region: float = 0.8, zero_tol: float = 1e-3, dense_max: int = 3000,
                      shifts=None, k: int = 12) -> SpectralData:
    """Eigenpairs of L with Re > re_cutoff, filtered to exponentially localized modes.

    Boundary modes (tail mass beyond ``tail_region`` * L above ``tail_threshold``)
    and the translational mode (|lambda| < zero_tol and eigenfunction aligned with
    the profile derivative) are excluded and reported.
    """
    x, w, N, n = Lop.x, Lop.weights, Lop.N, Lop.n
    try:
        if N * n <= dense_max:
            lam, vl, vr = sla.eig(Lop.dense(), left=True, right=True)
            Y = np.conj(vl)  # rows of Y.T are transpose-left eigenvectors
            method = "dense"
        else:
            if shifts is None:
                shifts = [0.5 + 0j, 2.0 + 0j, 0.5 + 2j, 0.5 - 2j]
            lam, vr, Y = _eigs_shift_invert(Lop, shifts, k)
            method = "shift-invert"
    except (np.linalg.LinAlgError, spla.ArpackError, RuntimeError) as exc:
        raise SpectralFault(f"eigensolver failure: {exc}") from exc
    vecs = vr.T.reshape(len(lam), N, n)
    tails = np.array([_tail_mass(x, w, v, tail_region) for v in vecs])
    align = np.array([_alignment(w, v, Lop.Ubar_x) for v in vecs])
    keep, excluded = [], []
    for j, l in enumerate(lam):
        if l.real <= re_cutoff:
            continue
        if abs(l) < zero_tol and align[j] > 0.99:
            excluded.append({"lambda": complex(l), "reason": "translational", "alignment": float(align[j])})
            continue
        if tails[j] >= tail_threshold:
            excluded.append({"lambda": complex(l), "reason": "not_localized", "tail_mass": float(tails[j])})
            continue
        keep.append(j)
    keep.sort(key=lambda j: -lam[j].real)
    lam_u = lam[keep]
    phi = vecs[keep]
    yl = Y.T[keep].reshape(len(keep), N, n)
    phi_t = yl / w[None, :, None]
    if len(keep):
        G = np.einsum("i,aic,bic->ab", w, phi_t, phi)
        if np.linalg.cond(G) > 1e10:
            raise SpectralFault("non-semisimple unstable eigenvalue (Jordan block) not supported")
        phi_t = np.einsum("ab,bic->aic", np.linalg.inv(G), phi_t)
        # real eigenvalues get real eigenfunctions
        for a, l in enumerate(lam_u):
            if abs(l.imag) < 1e-12 * max(1.0, abs(l)):
                j = np.argmax(np.abs(phi[a]))
                ph = phi[a].flat[j] / abs(phi[a].flat[j])
                phi[a] = phi[a] / ph
                phi_t[a] = phi_t[a] * ph
    Phi = cumulative_trapezoid(phi, x, axis=1, initial=0.0) if len(keep) else np.zeros((0, N, n))
    dphi_t = np.gradient(phi_t, x, axis=1, edge_order=2) if len(keep) else np.zeros((0, N, n))
    return SpectralData(x, w, lam_u, phi, phi_t, Phi, dphi_t, re_cutoff, lam, tails, align,
                        excluded, method)


def apply_projection(spec: SpectralData, which: str, f):
    """Pi_u, Pi_cs = I - Pi_u and the intertwined variants with Pi d/dx = d/dx Pi~."""
    f = np.asarray(f, float)
    if f.ndim != 2 or f.shape[0] != spec.N or (spec.p and f.shape[1] != spec.phi.shape[2]):
        raise ValueError(f"dimension mismatch: got {f.shape}, grid has {spec.N} points")
    if which in ("u", "cs"):
        coef = np.einsum("i,aic,ic->a", spec.weights, spec.phi_tilde, f)
        pu = np.real(np.einsum("a,aic->ic", coef, spec.phi)) if spec.p else np.zeros_like(f)
        return pu if which == "u" else f - pu
    if which in ("u_tilde", "cs_tilde"):
        # integration by parts: <phi~, f_x> = -<phi~_x, f> for compactly supported f
        coef = -np.einsum("i,aic,ic->a", spec.weights, spec.dphi_tilde, f)
        pu = np.real(np.einsum("a,aic->ic", coef, spec.Phi)) if spec.p else np.zeros_like(f)
        return pu if which == "u_tilde" else f - pu
    raise ValueError(f"unknown projection {which!r}")


def coordinates(spec: SpectralData, f):
    """Coefficients <phi~_j, f>."""
    return np.einsum("i,aic,ic->a", spec.weights, spec.phi_tilde, np.asarray(f, float))


# ---------------------------------------------------------------------------
# Spectral hypotheses

def liu_majda(endstates, s: float = 0.0, tol: float = 1e-10):
    """Liu-Majda matrix of outgoing eigenvectors and the jump; returns (det, cond, matrix).

    Outgoing modes have speed below s at U_- and above s at U_+.
    """
    cols = [endstates.R_minus[:, j] for j, a in enumerate(endstates.eig_minus) if np.real(a) - s < -tol]
    cols += [endstates.R_plus[:, j] for j, a in enumerate(endstates.eig_plus) if np.real(a) - s > tol]
    cols.append(endstates.jump)
    M = np.column_stack(cols)
    if M.shape[0] != M.shape[1]:
        return 0.0, np.inf, M
    return float(np.linalg.det(M)), float(np.linalg.cond(M)), M


@dataclass
class DReport:
    D1: dict
    D2: dict
    D3: dict

    @property
    def all_pass(self):
        return bool(self.D1["pass"] and self.D2["pass"] and self.D3["pass"])

    def to_dict(self):
        return {"D1": self.D1, "D2": self.D2, "D3": self.D3, "all_pass": self.all_pass}


def check_spectral_conditions(Lop: LinearOperator, spec: SpectralData, profile: ShockProfile,
                              strip: float = 1e-3, im_max: float = 5.0, zero_tol: float = 1e-3,
                              tail_threshold: float = 0.01, det_tol: float = 1e-3,
                              cond_max: float = 1e6) -> DReport:
    lam = spec.all_eigenvalues
    tails = spec.all_tail_mass
    near = (np.abs(lam.real) <= strip) & (np.abs(lam.imag) <= im_max)
    flagged, inconclusive = [], []
    for j in np.where(near)[0]:
        if abs(lam[j]) < zero_tol and spec.all_zero_alignment[j] > 0.99:
            continue
        entry = {"lambda": [float(lam[j].real), float(lam[j].imag)], "tail_mass": float(tails[j])}
        if tails[j] < 0.5 * tail_threshold:
            flagged.append(entry)
        elif tails[j] < 2.0 * tail_threshold:
            inconclusive.append(entry)
    d1 = {"pass": not flagged, "flagged": flagged, "inconclusive": inconclusive, "strip": strip}

    es = profile.endstates
    red = ReducedODE(profile.system, es.U_minus, es.U_plus)
    mu_m = np.linalg.eigvals(red.linearization(es.U_minus[red.k:])).real
    mu_p = np.linalg.eigvals(red.linearization(es.U_plus[red.k:])).real
    km, kp = int(np.sum(mu_m > 0)), int(np.sum(mu_p < 0))
    d2 = {"pass": km + kp == red.r + 1, "dim_unstable_minus": km, "dim_stable_plus": kp, "r": red.r}

    det, cond, _ = liu_majda(es, profile.s)
    d3 = {"pass": bool(abs(det) > det_tol and cond < cond_max), "det": det, "cond": cond}
    return DReport(d1, d2, d3)


# ---------------------------------------------------------------------------
# Linear decay probe

@dataclass
class DecayTable:
    times: np.ndarray
    norms: dict
    exponents: dict
    targets: dict
    zero_mode: np.ndarray
    contaminated_at: Optional[float]
    fit_window: tuple

    def to_dict(self):
        return {"times": self.times.tolist(),
                "norms": {str(p): v.tolist() for p, v in self.norms.items()},
                "exponents": {str(p): v for p, v in self.exponents.items()},
                "targets": {str(p): v for p, v in self.targets.items()},
                "zero_mode": self.zero_mode.tolist(),
                "contaminated_at": self.contaminated_at, "fit_window": list(self.fit_window)}


def fit_exponent(t, y, t_min, t_max):
    """Least-squares slope of log y against log(1 + t) over [t_min, t_max]."""
    sel = (t >= t_min) & (t <= t_max) & (y > 0)
    if np.sum(sel) < 3:
        return float("nan")
    return float(np.polyfit(np.log1p(t[sel]), np.log(y[sel]), 1)[0])


def semigroup_decay_probe(Lop: LinearOperator, spec: Optional[SpectralData], f, times,
                          p_norms=(1, 2, np.inf), dt: Optional[float] = None, cfl: float = 0.5,
                          fit_start: float = 5.0, contamination: float = 1e-6,
                          remove_zero_mode: bool = True) -> DecayTable:
    """Evolve V_t = L V from f and measure L^p norms; fit exponents against (1 + t).

    With ``remove_zero_mode`` the non-decaying multiple of the profile
    derivative (the shock displacement) is projected out before measuring.
    The horizon stops when the solution exceeds ``contamination`` (relative to
    its maximum) on |x| > 0.9 L.
    """
    from .dynamics import LinearStepper

    f = np.asarray(f, float)
    if spec is not None and spec.p > 0:
        f = apply_projection(spec, "cs", f)
    times = np.sort(np.asarray(times, float))
    if dt is None:
        dt = cfl * Lop.h / max(Lop.max_speed, 1e-12)
    w, x = Lop.weights, Lop.x
    Ux = Lop.Ubar_x
    uxx = inner(w, Ux, Ux)
    far = np.abs(x) > 0.9 * np.max(np.abs(x))
    stepper = LinearStepper(Lop, dt)
    norms = {p: [] for p in p_norms}
    zero, recorded = [], []
    contaminated = None
    V = f.copy()
    t = 0.0
    for T in times:
        V, t = stepper.advance(V, t, T)
        peak = np.max(np.abs(V))
        if peak > 0 and np.max(np.abs(V[far])) > contamination * peak and T > 0:
            contaminated = float(T)
            break
        c = inner(w, V, Ux) / uxx if uxx > 0 else 0.0
        Vr = V - c * Ux if remove_zero_mode else V
        for p in p_norms:
            norms[p].append(lp_norm(w, Vr, p))
        zero.append(c)
        recorded.append(T)
    recorded = np.array(recorded)
    norms = {p: np.array(v) for p, v in norms.items()}
    t_max = recorded[-1] if len(recorded) else 0.0
    exps = {p: fit_exponent(recorded, norms[p], fit_start, t_max) for p in p_norms}
    targets = {p: 0.5 * ((0.0 if np.isinf(p) else 1.0 / p) - 1.0) for p in p_norms}
    return DecayTable(recorded, norms, exps, targets, np.array(zero), contaminated, (fit_start, float(t_max)))
