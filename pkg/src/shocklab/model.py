"""Conservation-law systems U_t + F(U)_x = (B(U)U_x)_x in hyperbolic-parabolic block form.

A :class:`SystemModel` carries vectorized callables acting on arrays whose last
axis is the state index, so the same object evaluates a single state ``(n,)``
or a whole grid ``(N, n)``.  The built-ins are Lagrangian gas dynamics
(isentropic and full) and Lagrangian MHD.  Every callable is complex-safe so
that grid Jacobians can be taken by complex step.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

ArrayFn = Callable[[np.ndarray], np.ndarray]

SYMMETRY_TOL = 1e-10
RESIDUAL_TOL = 1e-8


class PhysicalDomainError(ValueError):
    """A state lies outside the physical domain of the system."""


@dataclass(frozen=True)
class SystemModel:
    name: str
    n: int
    r: int
    flux: ArrayFn
    viscosity: ArrayFn
    symmetrizer: ArrayFn
    is_physical: Callable[[np.ndarray], np.ndarray]
    jacobian: Optional[ArrayFn] = None
    viscosity_derivative: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    extra_checks: Optional[Callable[[np.ndarray], dict]] = None
    s: float = 0.0
    frame_speed: float = 0.0
    params: dict = field(default_factory=dict)

    def b(self, U):
        """Lower-right r x r block of B(U)."""
        return self.viscosity(U)[..., self.n - self.r:, self.n - self.r:]

    def comoving(self, s: float) -> "SystemModel":
        """Same system seen from a frame moving with speed ``s``: flux F(U) - sU, speed 0."""
        if s == 0.0:
            return self
        flux, jac = self.flux, self.jacobian

        def shifted_flux(U):
            return flux(U) - s * U

        shifted_jac = None
        if jac is not None:
            def shifted_jac(U):
                return jac(U) - s * np.eye(self.n)

        return dataclasses.replace(self, flux=shifted_flux, jacobian=shifted_jac,
                                   s=0.0, frame_speed=self.frame_speed + s)

    def check_physical(self, U):
        ok = np.asarray(self.is_physical(np.real(U)))
        if not np.all(ok):
            raise PhysicalDomainError(f"{self.name}: state outside physical domain")


@dataclass
class EndstatePair:
    U_minus: np.ndarray
    U_plus: np.ndarray
    A_minus: np.ndarray
    A_plus: np.ndarray
    eig_minus: np.ndarray
    eig_plus: np.ndarray
    R_minus: np.ndarray  # columns are unit right eigenvectors, sorted by eigenvalue
    R_plus: np.ndarray

    @classmethod
    def from_states(cls, sys: SystemModel, U_minus, U_plus) -> "EndstatePair":
        U_minus = np.asarray(U_minus, float)
        U_plus = np.asarray(U_plus, float)
        Am = jacobians(sys, U_minus)[0]
        Ap = jacobians(sys, U_plus)[0]
        em, Rm = _sorted_eig(Am)
        ep, Rp = _sorted_eig(Ap)
        return cls(U_minus, U_plus, Am, Ap, em, ep, Rm, Rp)

    @property
    def jump(self):
        return self.U_plus - self.U_minus


def _sorted_eig(A):
    w, R = np.linalg.eig(A)
    order = np.argsort(w.real)
    w, R = w[order], R[:, order]
    if np.allclose(w.imag, 0.0, atol=1e-12):
        w, R = w.real, R.real
    R = R / np.linalg.norm(R, axis=0)
    return w, R


# ---------------------------------------------------------------------------
# Built-in systems

def _require_positive(params, keys):
    for k in keys:
        if not params[k] > 0:
            raise ValueError(f"transport/EOS coefficient {k!r} must be positive, got {params[k]!r}")


def _isentropic_ns(params):
    p = {"gamma": 1.4, "a": 1.0, "nu": 1.0}
    p.update(params)
    _require_positive(p, ["gamma", "a", "nu"])
    gamma, a, nu = p["gamma"], p["a"], p["nu"]

    def pressure(v):
        return a * v ** (-gamma)

    def dpressure(v):
        return -gamma * a * v ** (-gamma - 1.0)

    def flux(U):
        v, u = U[..., 0], U[..., 1]
        return np.stack([-u, pressure(v)], axis=-1)

    def jac(U):
        v = U[..., 0]
        J = np.zeros(U.shape + (2,), dtype=np.result_type(U, float))
        J[..., 0, 1] = -1.0
        J[..., 1, 0] = dpressure(v)
        return J

    def visc(U):
        v = U[..., 0]
        B = np.zeros(U.shape + (2,), dtype=np.result_type(U, float))
        B[..., 1, 1] = nu / v
        return B

    def dvisc(U, V):
        v = U[..., 0]
        D = np.zeros(U.shape + (2,), dtype=np.result_type(U, V, float))
        D[..., 1, 1] = -nu * V[..., 0] / v ** 2
        return D

    def sym(U):
        v = U[..., 0]
        A0 = np.zeros(U.shape + (2,), dtype=np.result_type(U, float))
        A0[..., 0, 0] = -dpressure(v)
        A0[..., 1, 1] = 1.0
        return A0

    def physical(U):
        return np.real(U[..., 0]) > 0

    return SystemModel("isentropic_ns", 2, 1, flux, visc, sym, physical, jac, dvisc,
                       params=p)


def ideal_gas_eos(gamma, cv):
    """Return eos(v, e) -> (p, p_v, p_e, T, T_e) for a gamma-law gas with T = e/cv."""
    def eos(v, e):
        p = (gamma - 1.0) * e / v
        return p, -p / v, (gamma - 1.0) / v + 0 * e, e / cv, 1.0 / cv + 0 * e
    return eos


def _full_ns(params):
    p = {"gamma": 1.4, "cv": 1.0, "nu": 1.0, "kappa": 1.0}
    p.update(params)
    p.setdefault("mu", p["nu"])
    _require_positive(p, ["gamma", "cv", "nu", "kappa", "mu"])
    nu, kappa, mu = p["nu"], p["kappa"], p["mu"]
    eos = p.get("eos") or ideal_gas_eos(p["gamma"], p["cv"])
    custom = "eos" in p

    def split(U):
        v, u, E = U[..., 0], U[..., 1], U[..., 2]
        return v, u, E - 0.5 * u * u

    def flux(U):
        v, u, e = split(U)
        pr = eos(v, e)[0]
        return np.stack([-u, pr, pr * u], axis=-1)

    def jac(U):
        v, u, e = split(U)
        pr, pv, pe, _, _ = eos(v, e)
        pu = -u * pe
        J = np.zeros(U.shape + (3,), dtype=np.result_type(U, float))
        J[..., 0, 1] = -1.0
        J[..., 1, 0], J[..., 1, 1], J[..., 1, 2] = pv, pu, pe
        J[..., 2, 0], J[..., 2, 1], J[..., 2, 2] = u * pv, pr + u * pu, u * pe
        return J

    def visc(U):
        v, u, e = split(U)
        Te = eos(v, e)[4]
        B = np.zeros(U.shape + (3,), dtype=np.result_type(U, float))
        B[..., 1, 1] = nu / v
        B[..., 2, 1] = (mu - kappa * Te) * u / v
        B[..., 2, 2] = kappa * Te / v
        return B

    def dvisc(U, V):
        # closed form for T = e/cv only
        v, u, _ = split(U)
        Te = 1.0 / p["cv"]
        dv, du = V[..., 0], V[..., 1]
        D = np.zeros(U.shape + (3,), dtype=np.result_type(U, V, float))
        D[..., 1, 1] = -nu * dv / v ** 2
        D[..., 2, 1] = (mu - kappa * Te) * (du / v - u * dv / v ** 2)
        D[..., 2, 2] = -kappa * Te * dv / v ** 2
        return D

    def sym(U):
        # block-diagonal symmetrizer diag(a, M) solving A0 A = (A0 A)^T for a general EOS
        v, u, e = split(U)
        pr, pv, pe, _, _ = eos(v, e)
        A0 = np.zeros(U.shape + (3,), dtype=np.result_type(U, float))
        A0[..., 0, 0] = -pv * pr / pe
        A0[..., 1, 1] = u * u + pr / pe
        A0[..., 1, 2] = A0[..., 2, 1] = -u
        A0[..., 2, 2] = 1.0
        return A0

    def physical(U):
        v, u, e = split(np.real(U))
        return (v > 0) & (e > 0)

    def checks(U):
        v, u, e = split(np.real(U))
        _, pv, _, T, Te = eos(v, e)
        return {"Tstab": np.min(np.real(Te)), "temperature": np.min(np.real(T)),
                "thermstab_pv": np.min(-np.real(pv))}

    return SystemModel("full_ns", 3, 2, flux, visc, sym, physical,
                       None if custom else jac, None if custom else dvisc, checks, params=p)


def _mhd(params):
    p = {"gamma": 1.4, "cv": 1.0, "nu": 1.0, "kappa": 1.0, "mu0": 1.0, "sigma": 1.0,
         "B1": 0.5}
    p.update(params)
    p.setdefault("mu", p["nu"])
    _require_positive(p, ["gamma", "cv", "nu", "kappa", "mu0", "sigma", "mu"])
    g, cv, nu, mu, kappa, mu0, sigma, B1 = (p[k] for k in
                                            ("gamma", "cv", "nu", "mu", "kappa", "mu0", "sigma", "B1"))

    # U = (v, u1, u2, u3, v B2, v B3, E),  E = e + |u|^2/2 + v |B_perp|^2 / (2 mu0)
    def prim(U):
        v = U[..., 0]
        u1, u2, u3 = U[..., 1], U[..., 2], U[..., 3]
        B2, B3 = U[..., 4] / v, U[..., 5] / v
        e = U[..., 6] - 0.5 * (u1 * u1 + u2 * u2 + u3 * u3) - v * (B2 * B2 + B3 * B3) / (2 * mu0)
        return v, u1, u2, u3, B2, B3, e

    def flux(U):
        v, u1, u2, u3, B2, B3, e = prim(U)
        pr = (g - 1.0) * e / v
        ptot = pr + (B2 * B2 + B3 * B3) / (2 * mu0)
        return np.stack([-u1, ptot, -B1 * B2 / mu0, -B1 * B3 / mu0, -B1 * u2, -B1 * u3,
                         ptot * u1 - B1 * (B2 * u2 + B3 * u3) / mu0], axis=-1)

    def viscous_flux(U, Ux):
        v, u1, u2, u3, B2, B3, e = prim(U)
        vx = Ux[..., 0]
        u1x, u2x, u3x = Ux[..., 1], Ux[..., 2], Ux[..., 3]
        B2x = (Ux[..., 4] - B2 * vx) / v
        B3x = (Ux[..., 5] - B3 * vx) / v
        ex = (Ux[..., 6] - (u1 * u1x + u2 * u2x + u3 * u3x)
              - (vx * (B2 * B2 + B3 * B3) + 2 * v * (B2 * B2x + B3 * B3x)) / (2 * mu0))
        Tx = ex / cv
        return np.stack([0 * vx, nu / v * u1x, nu / v * u2x, nu / v * u3x,
                         B2x / (sigma * mu0 * v), B3x / (sigma * mu0 * v),
                         nu / v * u1 * u1x + mu / v * (u2 * u2x + u3 * u3x) + kappa / v * Tx
                         + (B2 * B2x + B3 * B3x) / (sigma * mu0 ** 2 * v)], axis=-1)

    def visc(U):
        eye = np.eye(7)
        cols = [viscous_flux(U, np.broadcast_to(eye[j], U.shape).astype(U.dtype)) for j in range(7)]
        return np.stack(cols, axis=-1)

    def physical(U):
        v, *_, e = prim(np.real(U))
        return (v > 0) & (e > 0)

    def checks(U):
        return {"Tstab": 1.0 / cv, "thermstab_pv": np.min(np.real((g - 1.0) * prim(U)[-1] / prim(U)[0] ** 2))}

    model = SystemModel("mhd", 7, 6, flux, visc, lambda U: None, physical, None, None, checks,
                        params=p)
    return dataclasses.replace(model, symmetrizer=lambda U: numeric_symmetrizer(model, U))


BUILTINS = {"isentropic_ns": _isentropic_ns, "full_ns": _full_ns, "mhd": _mhd}


def builtin_system(name: str, params: Optional[dict] = None) -> SystemModel:
    if name not in BUILTINS:
        raise ValueError(f"unknown system {name!r}; choose from {sorted(BUILTINS)}")
    return BUILTINS[name](dict(params or {}))


def system_from_json(doc) -> SystemModel:
    """Build a system from ``{"system": name, "params": {...}}`` (dict, JSON text or path)."""
    if isinstance(doc, str):
        doc = json.loads(doc) if doc.lstrip().startswith("{") else json.load(open(doc))
    return builtin_system(doc["system"], doc.get("params", {}))


# ---------------------------------------------------------------------------
# Derivatives

def _fd_jacobian(f, U, order4=True):
    U = np.asarray(U, float)
    n = U.shape[-1]
    h = 1e-4 * max(1.0, float(np.max(np.abs(U))))
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        if order4:
            d = (-f(U + 2 * e) + 8 * f(U + e) - 8 * f(U - e) + f(U - 2 * e)) / (12 * h)
        else:
            d = (f(U + e) - f(U - e)) / (2 * h)
        cols.append(d)
    return np.stack(cols, axis=-1)


def jacobians(sys: SystemModel, U):
    """Return (dF(U), V -> dB(U)V, A0(U)).

    Closed forms are used when the system provides them, otherwise fourth-order
    central differences with step scaled to |U|.
    """
    U = np.asarray(U, float)
    sys.check_physical(U)
    dF = sys.jacobian(U) if sys.jacobian is not None else _fd_jacobian(sys.flux, U)

    def dB_dir(V):
        V = np.asarray(V, float)
        if sys.viscosity_derivative is not None:
            return sys.viscosity_derivative(U, V)
        nv = np.max(np.abs(V))
        if nv == 0.0:
            return np.zeros(U.shape + (sys.n,))
        h = 1e-4 * max(1.0, float(np.max(np.abs(U)))) / nv
        Bf = sys.viscosity
        return (-Bf(U + 2 * h * V) + 8 * Bf(U + h * V) - 8 * Bf(U - h * V) + Bf(U - 2 * h * V)) / (12 * h)

    return dF, dB_dir, sys.symmetrizer(U)


def numeric_symmetrizer(sys: SystemModel, U):
    """Block-diagonal symmetric A0 with A0 dF(U) symmetric, chosen closest to the identity."""
    U = np.asarray(U, float)
    if U.ndim > 1:
        return np.stack([numeric_symmetrizer(sys, u) for u in U.reshape(-1, sys.n)]).reshape(U.shape + (sys.n,))
    n, k = sys.n, sys.n - sys.r
    A = sys.jacobian(U) if sys.jacobian is not None else _fd_jacobian(sys.flux, U)
    basis = []
    for lo, hi in ((0, k), (k, n)):
        for i in range(lo, hi):
            for j in range(i, hi):
                E = np.zeros((n, n))
                E[i, j] = E[j, i] = 1.0
                basis.append(E)
    iu = np.triu_indices(n, 1)
    rows = np.array([(E @ A - (E @ A).T)[iu] for E in basis]).T
    _, sv, Vt = np.linalg.svd(rows)
    null = Vt[np.sum(sv > 1e-10 * sv[0]):]
    mats = np.einsum("kb,bij->kij", null, np.array(basis))

    def combo(c):
        M = np.einsum("k,kij->ij", c, mats)
        return M / np.linalg.norm(M)

    def neg_margin(c):
        return -np.linalg.eigvalsh(combo(c))[0]

    c0, *_ = np.linalg.lstsq(mats.reshape(len(mats), -1).T, np.eye(n).ravel(), rcond=None)
    if len(mats) > 1 and neg_margin(c0) >= 0:
        from scipy.optimize import minimize
        best = c0
        for start in [c0] + list(np.eye(len(mats))) + list(-np.eye(len(mats))):
            res = minimize(neg_margin, start, method="Nelder-Mead",
                           options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
            if res.fun < neg_margin(best):
                best = res.x
        c0 = best
    A0 = combo(c0)
    return A0 if np.trace(A0) > 0 else -A0


# ---------------------------------------------------------------------------
# Structural hypotheses

@dataclass
class StructureReport:
    entries: dict = field(default_factory=dict)  # name -> {"pass": bool, "margin": float}
    notes: list = field(default_factory=list)

    def add(self, name, passed, margin):
        self.entries[name] = {"pass": bool(passed), "margin": float(margin)}

    @property
    def all_pass(self):
        return all(e["pass"] for e in self.entries.values())

    def failed(self):
        return [k for k, e in self.entries.items() if not e["pass"]]

    def to_dict(self):
        return {"entries": self.entries, "notes": self.notes, "all_pass": self.all_pass}


def _f1_hessian_residual(sys, U, k):
    """Max central-difference second derivative of F1, scaled by |F1|."""
    n = sys.n
    h = 1e-3 * max(1.0, float(np.max(np.abs(U))))
    f0 = sys.flux(U)[:k]
    worst = 0.0
    for i in range(n):
        for j in range(i, n):
            ei, ej = np.zeros(n), np.zeros(n)
            ei[i], ej[j] = h, h
            d2 = (sys.flux(U + ei + ej)[:k] - sys.flux(U + ei - ej)[:k]
                  - sys.flux(U - ei + ej)[:k] + sys.flux(U - ei - ej)[:k]) / (4 * h * h)
            worst = max(worst, float(np.max(np.abs(d2))))
    return worst / max(1.0, float(np.max(np.abs(f0))))


def validate_structure(sys: SystemModel, states, endstates=None,
                       tol: float = RESIDUAL_TOL, sym_tol: float = SYMMETRY_TOL) -> StructureReport:
    """Numerically check (A1)-(A3), (H1)-(H2) on sample states and endstates.

    Failures are recorded in the report, never raised.  When ``endstates`` is
    None every sample state is treated as a candidate endstate for the
    endstate-only conditions.  (H0) smoothness is not checkable and is noted.
    """
    rep = StructureReport()
    rep.notes.append("H0 (C^k regularity, k>=4) assumed, not checked numerically")
    n, r = sys.n, sys.r
    k = n - r
    states = [np.asarray(S, float) for S in states]
    if endstates is None:
        ends = states
    elif isinstance(endstates, EndstatePair):
        ends = [endstates.U_minus, endstates.U_plus]
    else:
        ends = [np.asarray(S, float) for S in endstates]

    phys = [bool(np.all(sys.is_physical(S))) for S in states]
    rep.add("physical_domain", all(phys), float(np.mean(phys)))
    states = [S for S, ok in zip(states, phys) if ok]

    block_defect, b_smin, f1_res = 0.0, np.inf, 0.0
    a0_min, a0_block, a0_sym, a11_sym, a22b_min = np.inf, 0.0, 0.0, 0.0, np.inf
    a11_imag, a11_sep = 0.0, np.inf
    a11_vals = []
    for S in states:
        B = sys.viscosity(S)
        block_defect = max(block_defect, float(np.max(np.abs(B[:k, :]))), float(np.max(np.abs(B[:, :k]))))
        b = B[k:, k:]
        b_smin = min(b_smin, float(np.linalg.svd(b, compute_uv=False)[-1]))
        f1_res = max(f1_res, _f1_hessian_residual(sys, S, k))
        dF, _, A0 = jacobians(sys, S)
        scale = max(1.0, float(np.max(np.abs(A0))))
        a0_block = max(a0_block, float(np.max(np.abs(A0[:k, k:]))) / scale, float(np.max(np.abs(A0[k:, :k]))) / scale)
        a0_sym = max(a0_sym, float(np.max(np.abs(A0 - A0.T))) / scale)
        a0_min = min(a0_min, float(np.min(np.linalg.eigvalsh(0.5 * (A0 + A0.T)))))
        M = A0[:k, :k] @ dF[:k, :k]
        a11_sym = max(a11_sym, float(np.max(np.abs(M - M.T))) / max(1.0, float(np.max(np.abs(M)))))
        P = A0[k:, k:] @ b
        a22b_min = min(a22b_min, float(np.min(np.linalg.eigvalsh(0.5 * (P + P.T)))))
        w = np.linalg.eigvals(dF[:k, :k]) - sys.s
        a11_imag = max(a11_imag, float(np.max(np.abs(w.imag))))
        a11_vals.append(np.sort(w.real))
        if k > 1:
            a11_sep = min(a11_sep, float(np.min(np.diff(np.sort(w.real)))))
    rep.add("A1_block_form", block_defect <= tol, -block_defect)
    rep.add("A1_b_nonsingular", b_smin > tol, b_smin)
    rep.add("A1_F1_linear", f1_res <= 1e-6, -f1_res)
    rep.add("A2_A0_block_diagonal", a0_block <= sym_tol, -a0_block)
    rep.add("A2_A0_symmetric", a0_sym <= sym_tol, -a0_sym)
    rep.add("A2_A0_positive_definite", a0_min > 0, a0_min)
    rep.add("A2_A011_A11_symmetric", a11_sym <= sym_tol, -a11_sym)
    rep.add("A2_A022_b_positive", a22b_min > 0, a22b_min)
    if a11_vals:
        v = np.concatenate(a11_vals)
        sign_margin = max(float(np.min(v)), float(-np.max(v)))
        rep.add("H1_A11_real", a11_imag <= tol, -a11_imag)
        rep.add("H1_A11_sign", sign_margin > 0, sign_margin)
        if k > 1:
            rep.add("H1_constant_multiplicity", a11_sep > tol, a11_sep)

    sym_def, coupling, real_def, simple, nonzero = 0.0, np.inf, 0.0, np.inf, np.inf
    for S in ends:
        dF, _, A0 = jacobians(sys, S)
        M = A0 @ dF
        sym_def = max(sym_def, float(np.max(np.abs(M - M.T))) / max(1.0, float(np.max(np.abs(M)))))
        w, R = np.linalg.eig(dF)
        R = R / np.linalg.norm(R, axis=0)
        B = sys.viscosity(S)
        coupling = min(coupling, float(np.min(np.linalg.norm(B @ R, axis=0))))
        real_def = max(real_def, float(np.max(np.abs(w.imag))))
        ws = np.sort(w.real)
        if n > 1:
            simple = min(simple, float(np.min(np.diff(ws))))
        nonzero = min(nonzero, float(np.min(np.abs(w.real - sys.s))))
    rep.add("A2_A0A_endstates_symmetric", sym_def <= 1e-8, -sym_def)
    rep.add("A3_genuine_coupling", coupling > tol, coupling)
    rep.add("H2_real", real_def <= tol, -real_def)
    if n > 1:
        rep.add("H2_simple", simple > tol, simple)
    rep.add("H2_nonzero", nonzero > tol, nonzero)

    if sys.extra_checks is not None:
        for S in states:
            for name, val in sys.extra_checks(S).items():
                prev = rep.entries.get(name, {"margin": np.inf})["margin"]
                m = min(prev, float(val))
                rep.add(name, m > 0, m)
    return rep
