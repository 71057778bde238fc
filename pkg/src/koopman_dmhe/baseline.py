"""Linearized subsystem models of the reactor network, the reference the
Koopman models are compared against.

The nonlinear balances are linearized at a steady state by central
differences, discretized exactly under a zero-order hold, and cut into
subsystem blocks. The models are expressed in the same scaled coordinates as
the identified ones and reuse the same container type. The affine offset of
each subsystem is carried as a constant input channel (basis ``"one"``), so
the estimator code needs no special case.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from .identify import KoopmanSubsystemModel, Scaler
from .simulate.cstr import CstrConfig, rhs
from .topology import SubsystemTopology


class LinearizationError(RuntimeError):
    pass


def jacobians(f, x_s, u_s, dx, du):
    """Central-difference Jacobians of ``f(x, u)`` with per-coordinate steps."""
    x_s, u_s = np.asarray(x_s, float), np.asarray(u_s, float)
    f0 = np.asarray(f(x_s, u_s), float)
    Jx = np.empty((f0.size, x_s.size))
    Ju = np.empty((f0.size, u_s.size))
    for c in range(x_s.size):
        e = np.zeros_like(x_s); e[c] = dx[c]
        Jx[:, c] = (f(x_s + e, u_s) - f(x_s - e, u_s)) / (2 * dx[c])
    for c in range(u_s.size):
        e = np.zeros_like(u_s); e[c] = du[c]
        Ju[:, c] = (f(x_s, u_s + e) - f(x_s, u_s - e)) / (2 * du[c])
    if not (np.all(np.isfinite(Jx)) and np.all(np.isfinite(Ju))):
        raise LinearizationError("Jacobian evaluation produced non-finite entries")
    return f0, Jx, Ju


def zoh(Jx, Ju, f0, h):
    """Exact discretization of ``dx/dt = f0 + Jx dx + Ju du`` under a zero-order hold.

    Returns ``(Ad, Bd, cd)`` with ``dx(k+1) = Ad dx(k) + Bd du(k) + cd``.
    """
    n, m = Ju.shape
    M = np.zeros((n + m + 1, n + m + 1))
    M[:n, :n], M[:n, n:n + m], M[:n, -1] = Jx, Ju, f0
    E = expm(M * h)
    return E[:n, :n], E[:n, n:n + m], E[:n, -1]


def linearized_baseline(config: CstrConfig, x_s, Q_s, scaler: Scaler, topology: SubsystemTopology,
                        h: float | None = None, step: float = 1e-6, fill_in: str = "drop"):
    """Subsystem models from a Taylor expansion at ``(x_s, Q_s)``.

    ``step`` is the finite-difference step in scaled units. The exact
    discretization couples every reactor with every other one; ``fill_in``
    either drops blocks outside the interaction topology (``"drop"``, the
    models keep the same structure as the identified ones) or widens the
    neighbor sets to hold them (``"keep"``).

    Returns ``(models, topology)``.
    """
    if fill_in not in ("drop", "keep"):
        raise ValueError("fill_in must be 'drop' or 'keep'")
    h = config.dt if h is None else h
    x_s, Q_s = np.asarray(x_s, float), np.asarray(Q_s, float)
    Sx = scaler.x_max - scaler.x_min
    Su = scaler.u_max - scaler.u_min
    f0, Jx, Ju = jacobians(lambda x, u: rhs(x, u, config), x_s, Q_s, step * Sx, step * Su)
    Ad, Bd, cd = zoh(Jx, Ju, f0, h)
    # Deviation model in scaled units: ds+ = As ds + Bs dsu + cs.
    As = Ad * Sx[None, :] / Sx[:, None]
    Bs = Bd * Su[None, :] / Sx[:, None]
    cs = cd / Sx
    s_s, su_s = scaler.scale_x(x_s), scaler.scale_u(Q_s)

    m = topology.m
    xo = [topology.x_slice(i) for i in range(m)]
    uo = [topology.u_slice(i) for i in range(m)]
    tol = 1e-12 * np.abs(As).max()
    if fill_in == "keep":
        nb = tuple(tuple(j for j in range(m) if j != i and np.abs(As[xo[i], xo[j]]).max() > tol)
                   for i in range(m))
        topology = SubsystemTopology(topology.n_x, topology.n_z, topology.n_u, nb, topology.sensors)
    models = []
    for i in range(m):
        r = xo[i]
        A_ii = As[r, r].copy()
        A_ij = {j: As[r, xo[j]].copy() for j in topology.neighbors[i]}
        B_ii = Bs[r, uo[i]]
        kept = A_ii @ s_s[r] + sum(A_ij[j] @ s_s[xo[j]] for j in A_ij) + B_ii @ su_s[uo[i]]
        offset = s_s[r] + cs[r] - kept
        dropped = [As[r, xo[j]] for j in range(m) if j != i and j not in A_ij]
        dropped += [Bs[r, uo[j]] for j in range(m) if j != i]
        nx = topology.n_x[i]
        C = np.zeros((topology.n_y[i], nx))
        C[np.arange(topology.n_y[i]), list(topology.sensors[i])] = 1.0
        models.append(KoopmanSubsystemModel(
            index=i, A_ii=A_ii, A_ij=A_ij, B=np.column_stack([B_ii, offset]), C=C, D=np.eye(nx),
            state_functions=("identity",), input_functions=("identity", "one"),
            diagnostics={
                "dropped_norm": float(np.sqrt(sum(np.sum(b ** 2) for b in dropped))),
                "steady_residual": float(np.abs(f0).max()),
            },
        ))
    return models, topology
