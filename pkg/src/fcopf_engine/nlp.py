"""Quadratic nonlinear programs and a primal-dual interior-point solver.

Every constraint this engine writes is at most quadratic, so a program is
stored as sparse linear parts plus lists of bilinear terms ``c * x_i * x_j``.
Residuals, Jacobians and the Lagrangian Hessian are then gather/scatter
loops over those terms (see :mod:`fcopf_engine._kernels`).
"""
from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels

log = logging.getLogger(__name__)


class QuadraticSystem:
    """Rows ``r_k(x) = a_k . x + c_k + sum_t coef_t x_i x_j``."""

    def __init__(self, m: int, n: int, lin, quad, const):
        self.m, self.n = m, n
        lr, lc, lv = (np.asarray(a) for a in lin)
        qr, qi, qj, qc = (np.asarray(a) for a in quad)
        lr = lr.astype(np.intp)
        lc = lc.astype(np.intp)
        self.q_rows = qr.astype(np.intp)
        self.q_i = qi.astype(np.intp)
        self.q_j = qj.astype(np.intp)
        self.q_coef = qc.astype(float)
        self.const = np.asarray(const, dtype=float)
        self.A = sp.csr_matrix((lv.astype(float), (lr, lc)), shape=(m, n))

        keys = np.concatenate([lr * n + lc, self.q_rows * n + self.q_i, self.q_rows * n + self.q_j])
        uniq, inv = np.unique(keys, return_inverse=True)
        inv = inv.astype(np.intp)
        rows = uniq // n
        self._jac_indices = (uniq % n).astype(np.int32)
        self._jac_indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=m))]).astype(np.int32)
        L, T = lr.size, self.q_rows.size
        self._jac_base = np.bincount(inv[:L], weights=lv.astype(float), minlength=uniq.size).astype(float)
        self._slot_i = np.ascontiguousarray(inv[L : L + T])
        self._slot_j = np.ascontiguousarray(inv[L + T :])

    def residual(self, x: np.ndarray) -> np.ndarray:
        out = self.A @ x + self.const
        _kernels.quad_residual(x, self.q_rows, self.q_i, self.q_j, self.q_coef, out)
        return out

    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        data = self._jac_base.copy()
        _kernels.quad_jacobian(x, self.q_i, self.q_j, self.q_coef, self._slot_i, self._slot_j, data)
        return sp.csr_matrix((data, self._jac_indices, self._jac_indptr), shape=(self.m, self.n))

    def hessian_terms(self):
        return self.q_rows, self.q_i, self.q_j, self.q_coef


class _RowSet:
    def __init__(self):
        self.lin_r: list[int] = []
        self.lin_c: list[int] = []
        self.lin_v: list[float] = []
        self.q_r: list[int] = []
        self.q_i: list[int] = []
        self.q_j: list[int] = []
        self.q_c: list[float] = []
        self.const: list[float] = []
        self.labels: list[tuple[str, str]] = []

    def add(self, family: str, element: str, lin=(), quad=(), const=0.0) -> int:
        k = len(self.const)
        for col, val in lin:
            if val != 0.0:
                self.lin_r.append(k)
                self.lin_c.append(col)
                self.lin_v.append(val)
        for i, j, c in quad:
            if c != 0.0:
                self.q_r.append(k)
                self.q_i.append(i)
                self.q_j.append(j)
                self.q_c.append(c)
        self.const.append(const)
        self.labels.append((family, element))
        return k

    def compile(self, n: int) -> QuadraticSystem:
        return QuadraticSystem(
            len(self.const), n, (self.lin_r, self.lin_c, self.lin_v), (self.q_r, self.q_i, self.q_j, self.q_c),
            self.const,
        )


class ModelBuilder:
    """Incrementally declares variables and quadratic constraint rows."""

    def __init__(self):
        self.names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.x0: list[float] = []
        self.groups: dict[str, list[int]] = {}
        self.eq = _RowSet()
        self.ineq = _RowSet()
        self.obj_lin: dict[int, float] = {}
        self.obj_quad: list[tuple[int, int, float]] = []
        self.obj_const = 0.0

    @property
    def n(self) -> int:
        return len(self.names)

    def var(self, name: str, lb=-math.inf, ub=math.inf, x0=0.0, group: str | None = None) -> int:
        k = len(self.names)
        self.names.append(name)
        self.lb.append(lb)
        self.ub.append(ub)
        self.x0.append(x0)
        if group is not None:
            self.groups.setdefault(group, []).append(k)
        return k

    def add_eq(self, family: str, element: str, lin=(), quad=(), const=0.0) -> int:
        return self.eq.add(family, element, lin, quad, const)

    def add_ineq(self, family: str, element: str, lin=(), quad=(), const=0.0) -> int:
        """Row ``lin + quad + const <= 0``."""
        return self.ineq.add(family, element, lin, quad, const)

    def add_objective(self, lin: Iterable[tuple[int, float]] = (), quad=(), const=0.0):
        for col, val in lin:
            self.obj_lin[col] = self.obj_lin.get(col, 0.0) + val
        self.obj_quad.extend(quad)
        self.obj_const += const

    def build(self, **meta) -> "NlpProblem":
        n = self.n
        cols = list(self.obj_lin)
        obj = QuadraticSystem(
            1, n, ([0] * len(cols), cols, [self.obj_lin[c] for c in cols]),
            ([0] * len(self.obj_quad), [q[0] for q in self.obj_quad], [q[1] for q in self.obj_quad],
             [q[2] for q in self.obj_quad]),
            [self.obj_const],
        )
        return NlpProblem(
            objective=obj,
            equalities=self.eq.compile(n),
            inequalities=self.ineq.compile(n),
            xl=np.array(self.lb, dtype=float),
            xu=np.array(self.ub, dtype=float),
            x0=np.array(self.x0, dtype=float),
            var_names=list(self.names),
            eq_labels=list(self.eq.labels),
            ineq_labels=list(self.ineq.labels),
            groups={k: np.array(v, dtype=np.intp) for k, v in self.groups.items()},
            meta=meta,
        )


@dataclass(eq=False)
class NlpProblem:
    """``min f(x)  s.t.  g(x) = 0,  h(x) <= 0,  xl <= x <= xu``."""

    objective: QuadraticSystem
    equalities: QuadraticSystem
    inequalities: QuadraticSystem
    xl: np.ndarray
    xu: np.ndarray
    x0: np.ndarray
    var_names: list[str]
    eq_labels: list[tuple[str, str]]
    ineq_labels: list[tuple[str, str]]
    groups: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.n
        systems = (self.objective, self.equalities, self.inequalities)
        offsets = np.cumsum([0] + [s.m for s in systems])
        rows, ii, jj, cc = [], [], [], []
        for s, off in zip(systems, offsets):
            r, i, j, c = s.hessian_terms()
            rows.append(r + off)
            ii.append(i)
            jj.append(j)
            cc.append(c)
        self._h_rows = np.concatenate(rows).astype(np.intp)
        qi = np.concatenate(ii).astype(np.intp)
        qj = np.concatenate(jj).astype(np.intp)
        self._h_coef = np.concatenate(cc).astype(float)
        diag = np.arange(n, dtype=np.intp)
        keys = np.concatenate([qi * n + qj, qj * n + qi, diag * n + diag])
        uniq, inv = np.unique(keys, return_inverse=True)
        T = qi.size
        inv = inv.astype(np.intp)
        self._h_slot_ij = np.ascontiguousarray(inv[:T])
        self._h_slot_ji = np.ascontiguousarray(inv[T : 2 * T])
        self._h_indices = (uniq % n).astype(np.int32)
        self._h_indptr = np.concatenate([[0], np.cumsum(np.bincount(uniq // n, minlength=n))]).astype(np.int32)
        self._h_nnz = uniq.size

    @property
    def n(self) -> int:
        return self.x0.size

    def f(self, x):
        return float(self.objective.residual(x)[0])

    def grad(self, x):
        return np.asarray(self.objective.jacobian(x).toarray()).ravel()

    def g(self, x):
        return self.equalities.residual(x)

    def jac_g(self, x):
        return self.equalities.jacobian(x)

    def h(self, x):
        return self.inequalities.residual(x)

    def jac_h(self, x):
        return self.inequalities.jacobian(x)

    def hess(self, x, lam, mu, obj_factor=1.0) -> sp.csr_matrix:
        """Hessian of ``obj_factor * f + lam . g + mu . h`` (constant in ``x``)."""
        w = np.concatenate([[obj_factor], lam, mu]).astype(float)
        data = np.zeros(self._h_nnz)
        _kernels.quad_hessian(w, self._h_rows, self._h_coef, self._h_slot_ij, self._h_slot_ji, data)
        return sp.csr_matrix((data, self._h_indices, self._h_indptr), shape=(self.n, self.n))

    def group(self, key: str) -> np.ndarray:
        return self.groups[key]


class SolveStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    ITERATION_LIMIT = "IterationLimit"
    NUMERIC_FAILURE = "NumericFailure"


@dataclass
class SolveDiagnostics:
    status: SolveStatus
    iterations: int
    objective: float
    stationarity: float
    primal_feasibility: float
    dual_feasibility: float
    complementarity: float
    seconds: float = 0.0
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "iterations": self.iterations,
            "objective": self.objective,
            "stationarity": self.stationarity,
            "primal_feasibility": self.primal_feasibility,
            "dual_feasibility": self.dual_feasibility,
            "complementarity": self.complementarity,
            "seconds": self.seconds,
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolveDiagnostics":
        d = dict(d)
        d["status"] = SolveStatus(d["status"])
        return cls(**d)


@dataclass
class NlpSolution:
    x: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    diagnostics: SolveDiagnostics


class NumericFailure(RuntimeError):
    pass


def _bound_rows(problem: NlpProblem):
    n = problem.n
    lo = np.flatnonzero(np.isfinite(problem.xl))
    hi = np.flatnonzero(np.isfinite(problem.xu))
    k = lo.size + hi.size
    J = sp.csr_matrix(
        (np.concatenate([-np.ones(lo.size), np.ones(hi.size)]), (np.arange(k), np.concatenate([lo, hi]))),
        shape=(k, n),
    )
    const = np.concatenate([problem.xl[lo], -problem.xu[hi]])
    return J, const


def solve_nlp(
    problem: NlpProblem,
    *,
    tol: float = 1e-6,
    feas_tol: float = 1e-8,
    max_iter: int = 150,
    x0: np.ndarray | None = None,
    sigma: float = 0.1,
    barrier: float = 1.0,
    lam0: np.ndarray | None = None,
) -> NlpSolution:
    """Primal-dual interior-point method with slacks on the inequalities.

    Newton steps use the exact (constant) Lagrangian Hessian.  A diagonal
    shift is added when the reduced curvature of a step is not positive, and
    steps follow the fraction-to-boundary rule with a filter on
    (primal infeasibility, barrier merit).

    For a warm start pass ``x0``, optionally ``lam0``, and a small initial
    ``barrier``; slacks then start at ``sqrt(barrier)`` off the boundary.
    """
    t_start = time.perf_counter()
    xi = 0.99995
    n = problem.n
    x = np.array(problem.x0 if x0 is None else x0, dtype=float)
    Jb, cb = _bound_rows(problem)
    neq = problem.equalities.m
    niq = problem.inequalities.m + Jb.shape[0]
    n_user_iq = problem.inequalities.m

    def h_all(x):
        return np.concatenate([problem.h(x), Jb @ x + cb])

    def jac_h_all(x):
        return sp.vstack([problem.jac_h(x), Jb], format="csr")

    f = problem.f(x)
    df = problem.grad(x)
    g = problem.g(x)
    h = h_all(x)
    Jg = problem.jac_g(x)
    Jh = jac_h_all(x)

    gamma = min(float(barrier), 1.0)
    z0 = math.sqrt(gamma)
    lam = np.zeros(neq) if lam0 is None else np.array(lam0, dtype=float)
    z = np.maximum(np.full(niq, z0), -h)
    mu = np.full(niq, 1.0) if gamma >= 1.0 else gamma / z

    def conditions(x, z, lam, mu, g, h, Lx, f, f_prev):
        primal = max(np.abs(g).max(initial=0.0), max(h.max(initial=0.0), 0.0))
        stat = np.abs(Lx).max(initial=0.0) / (1 + max(np.abs(lam).max(initial=0.0), np.abs(mu).max(initial=0.0)))
        comp = float(z @ mu) / (1 + np.abs(x).max(initial=0.0)) if niq else 0.0
        cost = abs(f - f_prev) / (1 + abs(f_prev))
        return primal, stat, comp, cost

    Lx = df + Jg.T @ lam + Jh.T @ mu
    primal, stat, comp, cost = conditions(x, z, lam, mu, g, h, Lx, f, f)
    status = SolveStatus.ITERATION_LIMIT
    message = ""
    it = 0
    delta_prev = 0.0
    filt: list[tuple[float, float]] = []

    def merit(x_f, g_, z_, h_):
        theta = np.abs(g_).sum() + np.abs(h_ + z_).sum()
        phi = x_f - gamma * np.log(z_).sum() if niq else x_f
        return theta, phi

    for it in range(1, max_iter + 1):
        f_prev = f
        Lxx = problem.hess(x, lam, mu[:n_user_iq] if n_user_iq else np.zeros(0))
        zinv = 1.0 / z
        D = sp.diags(mu * zinv)
        M = (Lxx + Jh.T @ D @ Jh).tocsc()
        N = Lx + Jh.T @ (zinv * (mu * h + gamma))

        delta = 0.0
        for attempt in range(12):
            Mreg = M + sp.identity(n, format="csc") * delta if delta else M
            reg_c = -1e-12 * sp.identity(neq, format="csc") if attempt else None
            K = sp.bmat([[Mreg, Jg.T], [Jg, reg_c]], format="csc")
            rhs = np.concatenate([-N, -g])
            try:
                with np.errstate(all="ignore"):
                    sol = spla.splu(K, permc_spec="COLAMD", options={"SymmetricMode": False}).solve(rhs)
            except RuntimeError:
                sol = None
            ok = sol is not None and np.all(np.isfinite(sol))
            if ok:
                dx = sol[:n]
                curv = float(dx @ (Mreg @ dx))
                if curv > 1e-10 * float(dx @ dx) or float(dx @ dx) < 1e-28:
                    break
            delta = max(1e-8, delta_prev / 3, delta * 10) if delta else max(1e-8, delta_prev / 3)
        else:
            status = SolveStatus.NUMERIC_FAILURE
            message = "KKT system could not be factorized with a descent step"
            break
        delta_prev = delta
        dx = sol[:n]
        dlam = sol[n:]
        dz = -h - z - Jh @ dx
        dmu = -mu + zinv * (gamma - mu * dz)

        neg = dz < 0
        alphap = min(xi * np.min(z[neg] / -dz[neg]), 1.0) if neg.any() else 1.0
        neg = dmu < 0
        alphad = min(xi * np.min(mu[neg] / -dmu[neg]), 1.0) if neg.any() else 1.0

        theta0, phi0 = merit(f, g, z, h)
        for _ in range(20):
            xt = x + alphap * dx
            zt = z + alphap * dz
            ft = problem.f(xt)
            gt = problem.g(xt)
            ht = h_all(xt)
            theta, phi = merit(ft, gt, zt, ht)
            acceptable = (
                theta <= (1 - 1e-5) * theta0
                or phi <= phi0 - 1e-5 * theta0
                or theta < 1e-9
            ) and all(theta < tf or phi < pf for tf, pf in filt)
            if acceptable or alphap < 1e-4:
                break
            alphap *= 0.5
        if theta0 > 1e-6:
            filt.append(((1 - 1e-5) * theta0, phi0 - 1e-5 * theta0))
            filt = filt[-30:]

        x = xt
        z = zt
        lam = lam + alphad * dlam
        mu = mu + alphad * dmu
        if niq:
            gamma = sigma * float(z @ mu) / niq

        f, g, h = ft, gt, ht
        df = problem.grad(x)
        Jg = problem.jac_g(x)
        Jh = jac_h_all(x)
        Lx = df + Jg.T @ lam + Jh.T @ mu
        primal, stat, comp, cost = conditions(x, z, lam, mu, g, h, Lx, f, f_prev)
        log.debug(
            "it %3d f %.8g primal %.2e stat %.2e comp %.2e alpha %.3f/%.3f delta %.1e",
            it, f, primal, stat, comp, alphap, alphad, delta,
        )
        if not (np.all(np.isfinite(x)) and np.isfinite(f)):
            status = SolveStatus.NUMERIC_FAILURE
            message = "non-finite iterate"
            break
        if primal < feas_tol and stat < tol and comp < tol * 1e-2 and cost < tol:
            status = SolveStatus.OPTIMAL
            break
        if max(np.abs(lam).max(initial=0.0), np.abs(mu).max(initial=0.0)) > 1e12:
            status = SolveStatus.INFEASIBLE
            message = "multipliers diverged; problem is likely infeasible"
            break

    diag = SolveDiagnostics(
        status=status,
        iterations=it,
        objective=f,
        stationarity=float(stat),
        primal_feasibility=float(primal),
        dual_feasibility=float(max(0.0, -mu.min(initial=0.0))),
        complementarity=float(comp),
        seconds=time.perf_counter() - t_start,
        message=message,
    )
    return NlpSolution(x, lam, mu[:n_user_iq] if n_user_iq else np.zeros(0), diag)
