"""Aggregated model, open-loop rollout and condensed horizon matrices.

For a window of length ``N`` with start state ``z0``, inputs ``u = {u(0..N-1)}``
and disturbances ``w = {w(0..N-1)}``::

    {y(0..N)} = O z0 + Lam u + Gam w + {v}
    {z(0..N)} = G z0 + Hs u + J w
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .identify import KoopmanSubsystemModel, Scaler
from .lifting import LiftingDictionary
from .topology import SubsystemTopology, offsets

log = logging.getLogger(__name__)


class PredictionError(RuntimeError):
    pass


def assemble_global(models: Sequence[KoopmanSubsystemModel], topology: SubsystemTopology):
    """Block matrices ``(A, B, C)`` of the aggregated lifted model."""
    nz = [m.n_z for m in models]
    nut = [m.n_ut for m in models]
    ny = [m.C.shape[0] for m in models]
    oz, ou, oy = offsets(nz), offsets(nut), offsets(ny)
    A = np.zeros((oz[-1], oz[-1]))
    B = np.zeros((oz[-1], ou[-1]))
    C = np.zeros((oy[-1], oz[-1]))
    for i, mdl in enumerate(models):
        if mdl.A_ii.shape != (nz[i], nz[i]):
            raise ValueError(f"subsystem {i}: A_ii has shape {mdl.A_ii.shape}")
        rows = slice(oz[i], oz[i + 1])
        A[rows, rows] = mdl.A_ii
        for j, Aij in mdl.A_ij.items():
            if j not in topology.neighbors[i]:
                raise ValueError(f"subsystem {i}: coupling block for non-neighbor {j}")
            if Aij.shape != (nz[i], nz[j]):
                raise ValueError(f"subsystem {i}: A_{i}{j} has shape {Aij.shape}")
            A[rows, oz[j]:oz[j + 1]] = Aij
        B[rows, ou[i]:ou[i + 1]] = mdl.B
        C[oy[i]:oy[i + 1], rows] = mdl.C
    return A, B, C


@dataclass(frozen=True)
class StackedMatrices:
    N: int
    O: np.ndarray
    Lam: np.ndarray
    Gam: np.ndarray
    G: np.ndarray
    Hs: np.ndarray
    J: np.ndarray


def build_stacked(A: np.ndarray, B: np.ndarray, C: np.ndarray, N: int) -> StackedMatrices:
    if N < 1:
        raise ValueError("window length must be at least 1")
    nz, nu = B.shape
    ny = C.shape[0]
    powers = [np.eye(nz)]
    for _ in range(N):
        powers.append(A @ powers[-1])
    G = np.vstack(powers)
    O = np.vstack([C @ P for P in powers])
    J = np.zeros(((N + 1) * nz, N * nz))
    Hs = np.zeros(((N + 1) * nz, N * nu))
    for r in range(1, N + 1):
        for c in range(r):
            P = powers[r - 1 - c]
            J[r * nz:(r + 1) * nz, c * nz:(c + 1) * nz] = P
            Hs[r * nz:(r + 1) * nz, c * nu:(c + 1) * nu] = P @ B
    Gam = np.kron(np.eye(N + 1), C) @ J
    Lam = np.kron(np.eye(N + 1), C) @ Hs
    return StackedMatrices(N, O, Lam, Gam, G, Hs, J)


class StackCache:
    """Stacks keyed by window length, rebuilt only when the model changes."""

    def __init__(self):
        self._key = None
        self._store: dict[int, StackedMatrices] = {}

    def get(self, A, B, C, N) -> StackedMatrices:
        key = (id(A), id(B), id(C))
        if key != self._key:
            self._key, self._store = key, {}
        if N not in self._store:
            self._store[N] = build_stacked(A, B, C, N)
        return self._store[N]


def lift_global(x_scaled: np.ndarray, topology: SubsystemTopology,
                state_dicts: Sequence[LiftingDictionary]) -> np.ndarray:
    """Concatenate ``phi_i(x_i)`` over subsystems for one scaled state."""
    return np.concatenate([state_dicts[i](x_scaled[topology.x_slice(i)]) for i in range(topology.m)])


def lift_inputs(u_scaled: np.ndarray, topology: SubsystemTopology,
                input_dicts: Sequence[LiftingDictionary]) -> np.ndarray:
    """Lift row-per-sample scaled inputs; returns row-per-sample lifted inputs."""
    u_scaled = np.atleast_2d(u_scaled)
    cols = [input_dicts[i](u_scaled[:, topology.u_slice(i)].T) for i in range(topology.m)]
    return np.vstack(cols).T


def reconstruct(z: np.ndarray, topology: SubsystemTopology, lifted: SubsystemTopology) -> np.ndarray:
    """Scaled original states ``D z`` for row-per-sample lifted states."""
    z = np.atleast_2d(z)
    return np.hstack([z[:, lifted.z_slice(i)][:, :topology.n_x[i]] for i in range(topology.m)])


def open_loop_predict(models, topology: SubsystemTopology, scaler: Scaler, state_dicts, input_dicts,
                      x0: np.ndarray, u: np.ndarray, horizon: int | None = None):
    """Roll the aggregated model forward from ``x0`` without measurement feedback.

    ``x0`` and ``u`` are unscaled. Returns ``(x_hat, z)`` with one row per
    sample, ``x_hat`` unscaled.
    """
    u = np.asarray(u, dtype=float).reshape(len(u), -1)
    horizon = len(u) if horizon is None else horizon
    A, B, C = assemble_global(models, topology)
    lifted = topology.with_lifted([m.n_z for m in models], [m.n_ut for m in models])
    s0 = scaler.scale_x(x0)
    if np.any(s0 < 0) or np.any(s0 > 1):
        log.info("initial state lies outside the identification range")
    ut = lift_inputs(scaler.scale_u(u), topology, input_dicts)
    z = np.empty((horizon, A.shape[0]))
    z[0] = lift_global(s0, topology, state_dicts)
    for k in range(horizon - 1):
        z[k + 1] = A @ z[k] + B @ ut[k]
        if not np.all(np.isfinite(z[k + 1])):
            raise PredictionError(f"open-loop prediction became non-finite at step {k + 1}")
    x_hat = scaler.unscale_x(reconstruct(z, topology, lifted))
    return x_hat, z


def scaled_rmse(x_true: np.ndarray, x_est: np.ndarray, scaler: Scaler, axis=None):
    err = scaler.scale_x(x_est) - scaler.scale_x(x_true)
    return np.sqrt(np.mean(err ** 2, axis=axis))


class LiftedNetwork:
    """Identified subsystem models bundled with their scaling and dictionaries.

    Holds the aggregated ``(A, B, C)`` and converts raw signals to the scaled,
    lifted coordinates the estimators work in.
    """

    def __init__(self, models: Sequence[KoopmanSubsystemModel], topology: SubsystemTopology, scaler: Scaler):
        from .lifting import LiftingDictionary, state_dictionary

        self.models = list(models)
        self.topology = topology
        self.scaler = scaler
        self.state_dicts = [state_dictionary(m.state_functions, topology.n_x[i]) for i, m in enumerate(models)]
        self.input_dicts = [LiftingDictionary(m.input_functions, topology.n_u[i]) for i, m in enumerate(models)]
        self.lifted = topology.with_lifted([m.n_z for m in models], [m.n_ut for m in models])
        self.A, self.B, self.C = assemble_global(models, topology)

    @property
    def m(self) -> int:
        return self.topology.m

    def lift_x(self, x: np.ndarray) -> np.ndarray:
        return lift_global(self.scaler.scale_x(x), self.topology, self.state_dicts)

    def lift_u(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(len(u), -1)
        return lift_inputs(self.scaler.scale_u(u), self.topology, self.input_dicts)

    def scale_y(self, y: np.ndarray) -> np.ndarray:
        return self.scaler.scale_y(y, self.topology)

    def x_from_z(self, z: np.ndarray) -> np.ndarray:
        return self.scaler.unscale_x(reconstruct(z, self.topology, self.lifted))
