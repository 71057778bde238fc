"""Dense convex QP with two-sided linear constraints.

    minimize    0.5 th' H th + g' th
    subject to  lb <= E th + f <= ub

solved by a primal active-set method. Each equality-constrained subproblem is
solved in range-space form with one Cholesky factor of ``H`` per call.
A feasible starting point comes from the previous active set (warm start),
the unconstrained minimizer, or a slack phase-1 problem solved by the same
routine. Infinite bounds never enter the arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

REG_EPS = 1e-10


class QPError(RuntimeError):
    pass


class QPInfeasible(QPError):
    pass


class QPMaxIter(QPError):
    pass


@dataclass
class QuadraticProgram:
    H: np.ndarray
    g: np.ndarray
    E: np.ndarray | None = None
    f: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        d = self.g.size
        if self.E is None:
            self.E = np.zeros((0, d))
        self.E = np.asarray(self.E, dtype=float).reshape(-1, d)
        c = self.E.shape[0]
        self.f = np.zeros(c) if self.f is None else np.asarray(self.f, dtype=float)
        self.lb = np.full(c, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(c, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        if self.H.shape != (d, d):
            raise ValueError("Hessian shape does not match gradient")
        if not np.allclose(self.H, self.H.T, atol=1e-10 * max(1.0, np.abs(self.H).max())):
            raise ValueError("Hessian must be symmetric")
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound exceeds upper bound")

    def objective(self, th):
        return 0.5 * th @ self.H @ th + self.g @ th


@dataclass
class QPResult:
    x: np.ndarray
    status: str
    active: list[tuple[int, int]]
    multipliers: np.ndarray
    iterations: int
    kkt: dict = field(default_factory=dict)


def _one_sided(qp: QuadraticProgram):
    """Rows ``a' th >= b``; ``sides[k] = +1`` for a lower bound, ``-1`` for an upper."""
    rows, sides = [], []
    for r in range(qp.E.shape[0]):
        if np.isfinite(qp.lb[r]):
            rows.append(r); sides.append(1)
        if np.isfinite(qp.ub[r]):
            rows.append(r); sides.append(-1)
    rows = np.asarray(rows, dtype=int)
    sides = np.asarray(sides, dtype=float)
    if rows.size:
        A = qp.E[rows] * sides[:, None]
        bound = np.where(sides > 0, qp.lb[rows], qp.ub[rows]) if rows.size else np.zeros(0)
        b = (bound - qp.f[rows]) * sides
    else:
        A = np.zeros((0, qp.g.size)); b = np.zeros(0)
    return A, b, rows, sides


def _factor(H):
    try:
        return cho_factor(H)
    except np.linalg.LinAlgError:
        scale = max(1.0, np.abs(H).max())
        return cho_factor(H + REG_EPS * scale * np.eye(H.shape[0]))


class _Core:
    def __init__(self, H, g, A, b, tol):
        self.H, self.g, self.A, self.b, self.tol = H, g, A, b, tol
        self.cf = _factor(H)
        self.HinvAt = cho_solve(self.cf, A.T) if A.size else np.zeros((H.shape[0], 0))

    def eqp(self, x, W):
        """Step ``p`` and multipliers for the working set ``W`` at ``x``."""
        q = self.H @ x + self.g
        Hq = cho_solve(self.cf, q)
        self.newton = np.linalg.norm(Hq, np.inf)
        if not W:
            return -Hq, np.zeros(0)
        AW = self.A[W]
        S = AW @ self.HinvAt[:, W]
        lam = np.linalg.solve(S, AW @ Hq)
        if len(W) == x.size:
            return np.zeros_like(x), lam
        return self.HinvAt[:, W] @ lam - Hq, lam

    def point_on(self, W):
        """Minimizer with the constraints in ``W`` held as equalities."""
        x0 = -cho_solve(self.cf, self.g)
        if not W:
            return x0
        AW = self.A[W]
        S = AW @ self.HinvAt[:, W]
        lam = np.linalg.solve(S, self.b[W] - AW @ x0)
        return x0 + self.HinvAt[:, W] @ lam

    def feasible(self, x):
        if not self.A.size:
            return True
        # Residual tolerance scaled by the magnitude of the terms being compared.
        mag = 1.0 + np.abs(self.b) + np.abs(self.A) @ np.abs(x)
        return bool(np.all(self.A @ x >= self.b - self.tol * mag))

    def run(self, x, W, max_iter):
        W = list(W)
        scale = 1.0 + np.abs(self.g).max(initial=0.0)
        for it in range(1, max_iter + 1):
            p, lam = self.eqp(x, W)
            size = max(1.0, np.linalg.norm(x, np.inf), self.newton)
            if np.linalg.norm(p, np.inf) <= 1e-12 * size:
                if lam.size == 0 or lam.min() >= -self.tol * scale:
                    return x, W, lam, it
                W.pop(int(np.argmin(lam)))
                continue
            alpha, block = 1.0, None
            if self.A.size:
                Ap = self.A @ p
                cand = np.flatnonzero(Ap < -1e-14 * (1.0 + np.abs(Ap).max()))
                cand = [j for j in cand if j not in W]
                if cand:
                    cand = np.asarray(cand)
                    steps = (self.b[cand] - self.A[cand] @ x) / Ap[cand]
                    steps = np.maximum(steps, 0.0)
                    k = int(np.argmin(steps))
                    if steps[k] < 1.0:
                        alpha, block = steps[k], int(cand[k])
            x = x + alpha * p
            if block is not None:
                W.append(block)
        raise QPMaxIter(f"active-set iterations exceeded {max_iter}")


def _independent(A, W, tol=1e-10):
    keep = []
    for j in W:
        trial = keep + [j]
        if np.linalg.matrix_rank(A[trial], tol=tol) == len(trial):
            keep.append(j)
    return keep


def _phase_one(core: _Core, x0, tol, max_iter):
    """Find a feasible point by minimizing a nonnegative slack ``t`` with
    ``A x + t >= b``; a small proximal term keeps the subproblem strictly convex."""
    d = x0.size
    viol = max(0.0, float(np.max(core.b - core.A @ x0)))
    center = x0.copy()
    for _ in range(5):
        rho = 1e-6 / (1.0 + viol)
        H = rho * np.eye(d + 1)
        g = np.concatenate([-rho * center, [1.0]])
        A = np.vstack([np.hstack([core.A, np.ones((core.A.shape[0], 1))]),
                       np.concatenate([np.zeros(d), [1.0]])[None, :]])
        b = np.concatenate([core.b, [0.0]])
        aux = _Core(H, g, A, b, tol * 1e-2)
        start = np.concatenate([center, [viol + 1.0]])
        sol, _, _, _ = aux.run(start, [], max_iter)
        x = sol[:d]
        if core.feasible(x):
            return x
        center = x
        viol = max(0.0, float(np.max(core.b - core.A @ x)))
    raise QPInfeasible(f"no feasible point; smallest bound violation {viol:.3g}")


def solve(qp: QuadraticProgram, tol: float = 1e-9, warm_start: list[tuple[int, int]] | None = None,
          max_iter: int = 500) -> QPResult:
    A, b, rows, sides = _one_sided(qp)
    core = _Core(qp.H, qp.g, A, b, tol)
    key = {(int(r), int(s)): k for k, (r, s) in enumerate(zip(rows, sides))}

    x = None
    W: list[int] = []
    if warm_start:
        W0 = _independent(A, [key[a] for a in warm_start if a in key])
        cand = core.point_on(W0)
        if core.feasible(cand):
            x, W = cand, W0
    if x is None:
        cand = core.point_on([])
        if core.feasible(cand):
            x = cand
        else:
            x = _phase_one(core, cand, tol, max_iter)
            if A.size:
                slack = A @ x - b
                W = _independent(A, list(np.flatnonzero(np.abs(slack) <= tol)))
    x, W, lam, its = core.run(x, W, max_iter)

    mult = np.zeros(qp.E.shape[0])
    for j, l in zip(W, lam):
        mult[rows[j]] += sides[j] * l
    active = [(int(rows[j]), int(sides[j])) for j in W]
    return QPResult(x, "optimal", active, mult, its, kkt_residuals(qp, x, mult))


def kkt_residuals(qp: QuadraticProgram, x, mult) -> dict:
    """Stationarity, primal feasibility and complementarity residuals (inf-norms)."""
    Ex = qp.E @ x + qp.f
    stat = qp.H @ x + qp.g - qp.E.T @ mult
    viol = np.concatenate([np.maximum(qp.lb - Ex, 0.0), np.maximum(Ex - qp.ub, 0.0), [0.0]])
    viol = viol[np.isfinite(viol)]
    lo_mult, hi_mult = np.maximum(mult, 0.0), np.maximum(-mult, 0.0)
    comp = []
    with np.errstate(invalid="ignore"):
        comp.extend(np.where(np.isfinite(qp.lb), lo_mult * (Ex - qp.lb), lo_mult * 0 + np.where(lo_mult > 0, np.inf, 0)))
        comp.extend(np.where(np.isfinite(qp.ub), hi_mult * (qp.ub - Ex), np.where(hi_mult > 0, np.inf, 0)))
    return {
        "stationarity": float(np.abs(stat).max(initial=0.0)),
        "primal": float(viol.max(initial=0.0)),
        "complementarity": float(np.abs(np.asarray(comp)).max(initial=0.0)),
    }
