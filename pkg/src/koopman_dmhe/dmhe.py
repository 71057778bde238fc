"""Centralized and partition-based distributed moving horizon estimation.

Both estimators work in scaled, lifted coordinates and use the condensed
horizon stacks from :mod:`predict`. The decision vector of a window that
starts at ``s = k - N`` is ``(z(s|k), w(s|k), ..., w(k-1|k))``.

Distributed scheme, one instant ``k >= N + 1``:

1. every estimator receives the latest measurement of all subsystems;
2. every estimator propagates its window-start prior from its own estimates
   and its neighbors' estimates at ``k - 1``; priors are exchanged
   (one barrier), then all local QPs are solved independently;
3. the global estimate ``z(k|k)`` is assembled from the local windows;
4. the arrival-cost weights ``P_i`` are advanced by the distributed
   covariance recursion.

For ``k <= N`` the window is not yet full. The estimate is then the open-loop
rollout of the lifted initial guess with zero disturbances, and the first
optimization happens at ``k = N + 1``.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import block_diag, cho_factor, cho_solve

from .identify import KoopmanSubsystemModel
from .predict import LiftedNetwork, StackedMatrices, build_stacked
from .qp import QPError, QuadraticProgram, solve
from .topology import SubsystemTopology, offsets, select_columns

log = logging.getLogger(__name__)

COND_LIMIT = 1e14


class EstimationError(RuntimeError):
    """A local or centralized estimator failed at a given instant."""


class CovarianceError(EstimationError):
    pass


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def _spd(M: np.ndarray, name: str):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(M).min() <= 0:
        raise ValueError(f"{name} must be positive definite")
    return M


@dataclass
class EstimatorConfig:
    """Window length, weights, bounds and initial guess for one estimator run.

    Weights are per subsystem in lifted coordinates (``P0[i]``, ``Q[i]``) and
    per measured channel (``R[i]``). Bounds are on original, unscaled states;
    use ``-inf``/``inf`` for unbounded coordinates.

    ``coupling`` selects which subsystems' priors explain the measurement
    stack in a local problem: ``"all"`` (every other subsystem) or
    ``"neighbors"`` (only the dynamic neighbors). ``measurements`` selects the
    measurement rows a local problem fits: ``"neighborhood"`` (the subsystem
    and its neighbors) or ``"global"`` (every sensor). ``iterations`` repeats the
    local solves within an instant with refreshed window-start estimates; the
    standard scheme uses a single pass.
    """

    N: int
    P0: list[np.ndarray]
    Q: list[np.ndarray]
    R: list[np.ndarray]
    x_guess: np.ndarray
    x_lb: np.ndarray | None = None
    x_ub: np.ndarray | None = None
    coupling: str = "all"
    measurements: str = "neighborhood"
    iterations: int = 1
    qp_tol: float = 1e-9

    def __post_init__(self):
        if int(self.N) < 1:
            raise ValueError("window length N must be at least 1")
        self.N = int(self.N)
        if self.coupling not in ("all", "neighbors"):
            raise ValueError("coupling must be 'all' or 'neighbors'")
        if self.measurements not in ("neighborhood", "global"):
            raise ValueError("measurements must be 'neighborhood' or 'global'")
        if int(self.iterations) < 1:
            raise ValueError("iterations must be at least 1")
        self.P0 = [_spd(P, "P0") for P in self.P0]
        self.Q = [_spd(Q, "Q") for Q in self.Q]
        self.R = [_spd(R, "R") if np.size(R) else np.zeros((0, 0)) for R in self.R]
        self.x_guess = np.asarray(self.x_guess, dtype=float)
        n = self.x_guess.size
        self.x_lb = np.full(n, -np.inf) if self.x_lb is None else np.asarray(self.x_lb, dtype=float)
        self.x_ub = np.full(n, np.inf) if self.x_ub is None else np.asarray(self.x_ub, dtype=float)
        if self.x_lb.shape != (n,) or self.x_ub.shape != (n,):
            raise ValueError("bound vectors must match the state dimension")
        if np.any(self.x_lb > self.x_ub):
            raise ValueError("lower state bound exceeds upper bound")

    @classmethod
    def uniform(cls, lifted: SubsystemTopology, N: int, p0: float, q: float, r: float, x_guess,
                **kwargs) -> "EstimatorConfig":
        """Scalar multiples of identity for every subsystem."""
        return cls(
            N=N,
            P0=[p0 * np.eye(n) for n in lifted.n_z],
            Q=[q * np.eye(n) for n in lifted.n_z],
            R=[r * np.eye(n) for n in lifted.n_y],
            x_guess=x_guess, **kwargs,
        )

    def check(self, lifted: SubsystemTopology):
        for i in range(lifted.m):
            nz, ny = lifted.n_z[i], lifted.n_y[i]
            if self.P0[i].shape != (nz, nz) or self.Q[i].shape != (nz, nz):
                raise ValueError(f"subsystem {i}: P0 and Q must be {nz}x{nz}")
            if self.R[i].shape != (ny, ny):
                raise ValueError(f"subsystem {i}: R must be {ny}x{ny}")
        if self.x_guess.size != lifted.total_x:
            raise ValueError("initial guess does not match the state dimension")


# --- covariance recursions -------------------------------------------------

def riccati_update(P, A, C, Q, R) -> np.ndarray:
    """Predicted-form Kalman covariance step
    ``Q + A P A' - A P C' (R + C P C')^-1 C P A'``."""
    APCt = A @ P @ C.T
    S = R + C @ P @ C.T
    if np.linalg.cond(S) > COND_LIMIT:
        raise CovarianceError("innovation covariance is singular")
    return symmetrize(Q + A @ P @ A.T - APCt @ np.linalg.solve(S, APCt.T))


def filtered_covariance_update(P, A, C, Q, R) -> np.ndarray:
    """Filtered-form step ``M - M C' (C M C' + R)^-1 C M`` with ``M = A P A' + Q``."""
    M = A @ P @ A.T + Q
    CM = C @ M
    S = CM @ C.T + R
    if np.linalg.cond(S) > COND_LIMIT:
        raise CovarianceError("innovation covariance is singular")
    return symmetrize(M - CM.T @ np.linalg.solve(S, CM))


def distributed_covariance_update(i: int, P, A, C, Q_i, R, lifted: SubsystemTopology):
    """Arrival-weight recursion of estimator ``i``; returns ``(L, P_new)``.

    With ``A_c = A[:, i]`` and ``C_c = C[:, i]`` the column blocks belonging to
    subsystem ``i``::

        X = C A_c P A_ii' + C_c Q_i
        S = C A_c P A_c' C' + C_c Q_i C_c' + R
        L = X' S^-1
        P_new = -L X + A_ii P A_ii' + Q_i
    """
    Ac = select_columns(A, i, lifted.n_z)
    Cc = select_columns(C, i, lifted.n_z)
    Aii = Ac[lifted.z_slice(i)]
    CAc = C @ Ac
    X = CAc @ P @ Aii.T + Cc @ Q_i
    S = CAc @ P @ CAc.T + Cc @ Q_i @ Cc.T + R
    if S.size and np.linalg.cond(S) > COND_LIMIT:
        raise CovarianceError(f"subsystem {i}: innovation covariance is singular")
    L = np.linalg.solve(S, X).T if S.size else np.zeros((Aii.shape[0], 0))
    return L, symmetrize(-L @ X + Aii @ P @ Aii.T + Q_i)


# --- priors ----------------------------------------------------------------

def propagate_prior(model: KoopmanSubsystemModel, z_prev: Mapping[int, np.ndarray], ut_i, w_i) -> np.ndarray:
    """One-step model prediction of the window start from the previous window.

    ``z_prev`` maps subsystem index to ``z_j(k-N-1|k-1)``; it must contain the
    subsystem itself and every neighbor with a coupling block.
    """
    i = model.index
    missing = [j for j in [i, *model.A_ij] if j not in z_prev]
    if missing:
        raise EstimationError(f"subsystem {i}: missing estimates from {missing}")
    neighbor_z = {j: z_prev[j] for j in model.A_ij}
    return model.step(np.asarray(z_prev[i]), neighbor_z, np.asarray(ut_i)) + np.asarray(w_i)


# --- local and centralized window problems ---------------------------------

@dataclass
class WindowSolution:
    """Result of one window problem.

    ``Z`` holds the predicted lifted states over the window (``N + 1`` rows),
    ``w`` the disturbance estimates (``N`` rows).
    """

    z_start: np.ndarray
    w: np.ndarray
    Z: np.ndarray
    iterations: int
    active: list
    kkt: dict
    seconds: float


def _bound_rows(n_block: int, n_total: int, offset: int, lb, ub, N: int):
    """Rows of a lifted state stack carrying finite bounds on the first
    ``len(lb)`` coordinates of one subsystem block, for all ``N + 1`` times."""
    keep = np.flatnonzero(np.isfinite(lb) | np.isfinite(ub))
    rows = np.array([t * n_total + offset + c for t in range(N + 1) for c in keep], dtype=int)
    return rows, np.tile(lb[keep], N + 1), np.tile(ub[keep], N + 1)


def _scaled_bounds(net: LiftedNetwork, cfg: EstimatorConfig):
    with np.errstate(invalid="ignore"):
        lb = net.scaler.scale_x(cfg.x_lb)
        ub = net.scaler.scale_x(cfg.x_ub)
    return np.where(np.isnan(lb), -np.inf, lb), np.where(np.isnan(ub), np.inf, ub)


def _measurement_weight(R: Sequence[np.ndarray], N: int) -> np.ndarray:
    Rg = block_diag(*[r for r in R if r.size]) if any(r.size for r in R) else np.zeros((0, 0))
    return np.kron(np.eye(N + 1), np.linalg.inv(Rg))


def _inv_spd(P: np.ndarray) -> np.ndarray:
    try:
        cf = cho_factor(P)
    except np.linalg.LinAlgError:
        raise CovarianceError("arrival weight is not positive definite") from None
    return symmetrize(cho_solve(cf, np.eye(P.shape[0])))


class LocalEstimator:
    """Condensed local window problem of subsystem ``i``.

    Everything that does not change between instants (measurement misfit
    Hessian, constraint rows) is built once.
    """

    def __init__(self, i: int, net: LiftedNetwork, stacks: StackedMatrices, cfg: EstimatorConfig,
                 W: np.ndarray, lb: np.ndarray, ub: np.ndarray):
        lz = net.lifted
        N, sizes = stacks.N, lz.n_z
        self.i, self.N, self.nz = i, N, sizes[i]
        self.model = net.models[i]
        self.Qinv = _inv_spd(cfg.Q[i])
        self.tol = cfg.qp_tol
        if cfg.coupling == "all":
            self.others = [j for j in range(lz.m) if j != i]
        else:
            self.others = list(lz.neighbors[i])
        if cfg.measurements == "global":
            self.y_rows = np.arange(stacks.O.shape[0])
        else:
            seen = sorted({i, *lz.neighbors[i]})
            oy, ny_tot = offsets(lz.n_y), lz.total_y
            self.y_rows = np.array([t * ny_tot + c for t in range(N + 1) for l in seen
                                    for c in range(oy[l], oy[l + 1])], dtype=int)
        r = self.y_rows
        W = W[np.ix_(r, r)]
        O_i = select_columns(stacks.O[r], i, sizes)
        Gam_i = select_columns(stacks.Gam[r], i, sizes, repeat=N)
        M = np.hstack([O_i, Gam_i])
        self.MtW = M.T @ W
        self.MtWM = symmetrize(self.MtW @ M)
        self.O_j = {j: select_columns(stacks.O[r], j, sizes) for j in self.others}
        self.Lam = stacks.Lam[r]

        # Predicted states of subsystem i over the window, all lifted coordinates.
        nz_tot = lz.total_z
        oz = offsets(sizes)
        own = np.array([t * nz_tot + oz[i] + c for t in range(N + 1) for c in range(self.nz)], dtype=int)
        self.Z_z0 = select_columns(stacks.G[own], i, sizes)
        self.Z_w = select_columns(stacks.J[own], i, sizes, repeat=N)
        self.Z_j = {j: select_columns(stacks.G[own], j, sizes) for j in self.others}
        self.Z_u = stacks.Hs[own]

        xs = net.topology.x_slice(i)
        rows, self.lb, self.ub = _bound_rows(self.nz, nz_tot, oz[i], lb[xs], ub[xs], N)
        self.E = np.hstack([select_columns(stacks.G[rows], i, sizes),
                            select_columns(stacks.J[rows], i, sizes, repeat=N)])
        self.F_j = {j: select_columns(stacks.G[rows], j, sizes) for j in self.others}
        self.F_u = stacks.Hs[rows]
        self.warm: list | None = None

    def solve(self, y_stack: np.ndarray, ut_stack: np.ndarray, priors: Mapping[int, np.ndarray],
              P: np.ndarray, k: int | None = None) -> WindowSolution:
        t0 = time.perf_counter()
        zbar = priors[self.i]
        known = self.Lam @ ut_stack
        for j in self.others:
            known = known + self.O_j[j] @ priors[j]
        Pinv = _inv_spd(P)
        H = self.MtWM.copy()
        H[:self.nz, :self.nz] += Pinv
        H[self.nz:, self.nz:] += np.kron(np.eye(self.N), self.Qinv)
        g = -self.MtW @ (y_stack[self.y_rows] - known)
        g[:self.nz] -= Pinv @ zbar
        f = self.F_u @ ut_stack
        for j in self.others:
            f = f + self.F_j[j] @ priors[j]
        qp = QuadraticProgram(symmetrize(H), g, self.E, f, self.lb, self.ub)
        try:
            res = solve(qp, tol=self.tol, warm_start=self.warm)
        except QPError as exc:
            where = "" if k is None else f" at instant {k}"
            raise EstimationError(f"local estimator {self.i}{where}: {exc}") from exc
        self.warm = res.active
        z0, w = res.x[:self.nz], res.x[self.nz:]
        Z = self.Z_z0 @ z0 + self.Z_w @ w + self.Z_u @ ut_stack
        for j in self.others:
            Z = Z + self.Z_j[j] @ priors[j]
        return WindowSolution(z0, w.reshape(self.N, self.nz), Z.reshape(self.N + 1, self.nz),
                              res.iterations, res.active, res.kkt, time.perf_counter() - t0)


def local_mhe_step(i: int, net: LiftedNetwork, stacks: StackedMatrices, cfg: EstimatorConfig,
                   y_stack, ut_stack, priors: Mapping[int, np.ndarray], P) -> WindowSolution:
    """Single local window solve; builds the estimator on the fly."""
    lb, ub = _scaled_bounds(net, cfg)
    est = LocalEstimator(i, net, stacks, cfg, _measurement_weight(cfg.R, stacks.N), lb, ub)
    return est.solve(np.asarray(y_stack, float).ravel(), np.asarray(ut_stack, float).ravel(), priors, P)


class CentralizedWindow:
    """Condensed window problem over the full aggregated model."""

    def __init__(self, net: LiftedNetwork, stacks: StackedMatrices, cfg: EstimatorConfig,
                 W: np.ndarray, lb: np.ndarray, ub: np.ndarray):
        lz = net.lifted
        self.N, self.nz = stacks.N, lz.total_z
        self.Qinv = _inv_spd(block_diag(*cfg.Q))
        self.tol = cfg.qp_tol
        M = np.hstack([stacks.O, stacks.Gam])
        self.MtW = M.T @ W
        self.MtWM = symmetrize(self.MtW @ M)
        self.stacks = stacks
        oz = offsets(lz.n_z)
        rows, lbs, ubs = [], [], []
        for i in range(lz.m):
            xs = net.topology.x_slice(i)
            r, l_, u_ = _bound_rows(lz.n_z[i], self.nz, oz[i], lb[xs], ub[xs], self.N)
            rows.append(r); lbs.append(l_); ubs.append(u_)
        rows = np.concatenate(rows).astype(int)
        self.lb, self.ub = np.concatenate(lbs), np.concatenate(ubs)
        self.E = np.hstack([stacks.G[rows], stacks.J[rows]])
        self.F_u = stacks.Hs[rows]
        self.warm = None

    def solve(self, y_stack, ut_stack, zbar, P, k=None) -> WindowSolution:
        t0 = time.perf_counter()
        st = self.stacks
        Pinv = _inv_spd(P)
        H = self.MtWM.copy()
        H[:self.nz, :self.nz] += Pinv
        H[self.nz:, self.nz:] += np.kron(np.eye(self.N), self.Qinv)
        g = -self.MtW @ (y_stack - st.Lam @ ut_stack)
        g[:self.nz] -= Pinv @ zbar
        qp = QuadraticProgram(symmetrize(H), g, self.E, self.F_u @ ut_stack, self.lb, self.ub)
        try:
            res = solve(qp, tol=self.tol, warm_start=self.warm)
        except QPError as exc:
            where = "" if k is None else f" at instant {k}"
            raise EstimationError(f"centralized estimator{where}: {exc}") from exc
        self.warm = res.active
        z0, w = res.x[:self.nz], res.x[self.nz:]
        Z = st.G @ z0 + st.J @ w + st.Hs @ ut_stack
        return WindowSolution(z0, w.reshape(self.N, self.nz), Z.reshape(self.N + 1, self.nz),
                              res.iterations, res.active, res.kkt, time.perf_counter() - t0)


def centralized_mhe_step(net: LiftedNetwork, stacks: StackedMatrices, cfg: EstimatorConfig,
                         y_stack, ut_stack, zbar, P) -> WindowSolution:
    lb, ub = _scaled_bounds(net, cfg)
    win = CentralizedWindow(net, stacks, cfg, _measurement_weight(cfg.R, stacks.N), lb, ub)
    return win.solve(np.asarray(y_stack, float).ravel(), np.asarray(ut_stack, float).ravel(), zbar, P)


# --- runners -----------------------------------------------------------------

@dataclass
class GlobalEstimate:
    """Estimate traces of one run.

    ``z`` and ``x`` hold ``z(k|k)`` and the unscaled reconstruction per instant.
    ``solve_seconds`` has one column per local estimator (one column for the
    centralized estimator) and is NaN during warm-up.
    """

    z: np.ndarray
    x: np.ndarray
    solve_seconds: np.ndarray
    qp_iterations: np.ndarray
    p_min_eig: np.ndarray
    p_asymmetry: np.ndarray
    kkt_max: float
    bound_violation: float
    meta: dict = field(default_factory=dict)

    def error_norm(self, x_true: np.ndarray, scaler) -> np.ndarray:
        """Euclidean norm of the scaled estimation error at each instant."""
        return np.linalg.norm(scaler.scale_x(self.x) - scaler.scale_x(x_true), axis=1)

    def rmse(self, x_true: np.ndarray, scaler) -> float:
        err = scaler.scale_x(self.x) - scaler.scale_x(x_true)
        return float(np.sqrt(np.mean(err ** 2)))

    @property
    def mean_solve_seconds(self) -> float:
        s = self.solve_seconds[np.isfinite(self.solve_seconds)]
        return float(s.mean()) if s.size else float("nan")


def _check_signals(net: LiftedNetwork, y, u):
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float).reshape(len(u), -1)
    if y.ndim != 2 or y.shape[1] != net.topology.total_y:
        raise ValueError(f"measurements must have {net.topology.total_y} columns")
    if len(u) != len(y) or u.shape[1] != net.topology.total_u:
        raise ValueError("inputs must have one row per measurement and match the input dimension")
    return y, u


def _guess(net: LiftedNetwork, cfg: EstimatorConfig) -> np.ndarray:
    s0 = net.scaler.scale_x(cfg.x_guess)
    if np.any(s0 < 0) or np.any(s0 > 1):
        log.info("initial guess lies outside the identification range")
    return np.concatenate([net.state_dicts[i](s0[net.topology.x_slice(i)]) for i in range(net.m)])


def _health(P: np.ndarray):
    return float(np.linalg.eigvalsh(symmetrize(P)).min()), float(np.abs(P - P.T).max(initial=0.0))


class DistributedMHE:
    """Runs one local estimator per subsystem over a measurement record.

    ``threads > 1`` solves the local problems of an instant concurrently. The
    priors are fixed before any solve starts, so the result does not depend
    on the execution order.
    """

    def __init__(self, net: LiftedNetwork, cfg: EstimatorConfig, threads: int = 1):
        cfg.check(net.lifted)
        self.net, self.cfg, self.threads = net, cfg, max(1, int(threads))
        self.stacks = build_stacked(net.A, net.B, net.C, cfg.N)
        self.W = _measurement_weight(cfg.R, cfg.N)
        self.lb, self.ub = _scaled_bounds(net, cfg)
        self.C_full = net.C
        self.R_full = block_diag(*[r for r in cfg.R if r.size])

    def _locals(self):
        return [LocalEstimator(i, self.net, self.stacks, self.cfg, self.W, self.lb, self.ub)
                for i in range(self.net.m)]

    def run(self, y, u) -> GlobalEstimate:
        net, cfg, N = self.net, self.cfg, self.cfg.N
        lz = net.lifted
        y, u = _check_signals(net, y, u)
        ys, ut = net.scale_y(y), net.lift_u(u)
        T, m = len(ys), net.m
        est = self._locals()
        z = np.empty((T, lz.total_z))
        secs = np.full((T, m), np.nan)
        iters = np.zeros((T, m), dtype=int)
        pmin = np.empty((T, m))
        pasym = np.empty((T, m))
        P_hist = [list(cfg.P0)]
        for i in range(m):
            pmin[0, i], pasym[0, i] = _health(cfg.P0[i])
        kkt_max = 0.0
        # Window of instant k-1 for each subsystem: (start, Z rows, w rows).
        prev: list[tuple[int, np.ndarray, np.ndarray]] = []
        pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None
        try:
            for k in range(T):
                if k <= N:
                    z[k] = _guess(net, cfg) if k == 0 else net.A @ z[k - 1] + net.B @ ut[k - 1]
                    prev = [(0, z[:k + 1, lz.z_slice(i)].copy(), np.zeros((k, lz.n_z[i]))) for i in range(m)]
                else:
                    s = k - N
                    z_prev = {j: prev[j][1][s - 1 - prev[j][0]] for j in range(m)}
                    priors = {}
                    for i in range(m):
                        start, _, W_prev = prev[i]
                        priors[i] = propagate_prior(net.models[i], z_prev, ut[s - 1, lz.ut_slice(i)],
                                                    W_prev[s - 1 - start])
                    y_stack = ys[s:k + 1].ravel()
                    u_stack = ut[s:k].ravel()
                    P_arr = P_hist[s]
                    sols = self._solve_all(est, pool, y_stack, u_stack, priors, P_arr, k)
                    for _ in range(cfg.iterations - 1):
                        fresh = {j: sols[j].z_start for j in range(m)}
                        sols = self._solve_all(est, pool, y_stack, u_stack,
                                               [{**fresh, i: priors[i]} for i in range(m)], P_arr, k)
                    for i, sol in enumerate(sols):
                        z[k, lz.z_slice(i)] = sol.Z[-1]
                        secs[k, i] = sol.seconds
                        iters[k, i] = sol.iterations
                        kkt_max = max(kkt_max, *sol.kkt.values())
                    prev = [(s, sol.Z, sol.w) for sol in sols]
                if k >= 1:
                    P_new = []
                    for i in range(m):
                        _, Pi = distributed_covariance_update(i, P_hist[k - 1][i], net.A, self.C_full,
                                                              cfg.Q[i], self.R_full, lz)
                        pmin[k, i], pasym[k, i] = _health(Pi)
                        P_new.append(Pi)
                    P_hist.append(P_new)
                    if k - N - 1 >= 0:
                        P_hist[k - N - 1] = None  # no longer needed as an arrival weight
        finally:
            if pool is not None:
                pool.shutdown()
        return self._finish(z, secs, iters, pmin, pasym, kkt_max, N)

    def _solve_all(self, est, pool, y_stack, u_stack, priors, P_arr, k):
        per = priors if isinstance(priors, list) else [priors] * len(est)
        jobs = [(e, per[e.i], P_arr[e.i]) for e in est]
        if pool is None:
            return [e.solve(y_stack, u_stack, p, P, k) for e, p, P in jobs]
        return list(pool.map(lambda a: a[0].solve(y_stack, u_stack, a[1], a[2], k), jobs))

    def _finish(self, z, secs, iters, pmin, pasym, kkt_max, N):
        net = self.net
        x = net.x_from_z(z)
        lo, hi = self.cfg.x_lb, self.cfg.x_ub
        # Warm-up instants are model rollouts, not constrained estimates;
        # project them onto the hard bounds so every reported estimate is feasible.
        x[:N + 1] = np.clip(x[:N + 1], lo, hi)
        with np.errstate(invalid="ignore"):
            viol = np.maximum(np.nan_to_num(lo - x, nan=0.0, neginf=0.0), 0).max(initial=0.0)
            viol = max(viol, np.maximum(np.nan_to_num(x - hi, nan=0.0, neginf=0.0), 0).max(initial=0.0))
        return GlobalEstimate(z, x, secs, iters, pmin, pasym, kkt_max, float(viol),
                              {"N": N, "estimator": type(self).__name__})


class CentralizedMHE(DistributedMHE):
    """One window problem over the aggregated model.

    ``covariance`` chooses the arrival-weight recursion: ``"riccati"`` for the
    predicted-form Kalman update, ``"filtered"`` for the filtered form (the
    form the distributed recursion takes for a single subsystem).
    """

    def __init__(self, net: LiftedNetwork, cfg: EstimatorConfig, covariance: str = "riccati"):
        super().__init__(net, cfg, threads=1)
        if covariance not in ("riccati", "filtered"):
            raise ValueError("covariance must be 'riccati' or 'filtered'")
        self.update = riccati_update if covariance == "riccati" else filtered_covariance_update

    def run(self, y, u) -> GlobalEstimate:
        net, cfg, N = self.net, self.cfg, self.cfg.N
        y, u = _check_signals(net, y, u)
        ys, ut = net.scale_y(y), net.lift_u(u)
        T = len(ys)
        win = CentralizedWindow(net, self.stacks, cfg, self.W, self.lb, self.ub)
        Qg = block_diag(*cfg.Q)
        z = np.empty((T, net.lifted.total_z))
        secs = np.full((T, 1), np.nan)
        iters = np.zeros((T, 1), dtype=int)
        pmin, pasym = np.empty((T, 1)), np.empty((T, 1))
        P_hist = [block_diag(*cfg.P0)]
        pmin[0, 0], pasym[0, 0] = _health(P_hist[0])
        kkt_max = 0.0
        prev = None
        for k in range(T):
            if k <= N:
                z[k] = _guess(net, cfg) if k == 0 else net.A @ z[k - 1] + net.B @ ut[k - 1]
                prev = (0, z[:k + 1].copy(), np.zeros((k, z.shape[1])))
            else:
                s = k - N
                start, Z_prev, W_prev = prev
                zbar = net.A @ Z_prev[s - 1 - start] + net.B @ ut[s - 1] + W_prev[s - 1 - start]
                sol = win.solve(ys[s:k + 1].ravel(), ut[s:k].ravel(), zbar, P_hist[s], k)
                z[k] = sol.Z[-1]
                secs[k, 0], iters[k, 0] = sol.seconds, sol.iterations
                kkt_max = max(kkt_max, *sol.kkt.values())
                prev = (s, sol.Z, sol.w)
            if k >= 1:
                P = self.update(P_hist[k - 1], net.A, net.C, Qg, self.R_full)
                pmin[k, 0], pasym[k, 0] = _health(P)
                P_hist.append(P)
        return self._finish(z, secs, iters, pmin, pasym, kkt_max, N)

