"""Random stable coupled linear systems, used as an exactly identifiable test process."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..topology import SubsystemTopology
from .signals import NoiseSpec, Trajectory, measure, truncated_normal


@dataclass
class LinearSystem:
    """``x(k+1) = A x(k) + B u(k)`` with the sparsity pattern of ``topology``."""

    A: np.ndarray
    B: np.ndarray
    topology: SubsystemTopology
    u_min: np.ndarray = field(default_factory=lambda: np.zeros(0))
    u_max: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def block(self, i: int, j: int) -> np.ndarray:
        return self.A[self.topology.x_slice(i), self.topology.x_slice(j)]

    def input_block(self, i: int) -> np.ndarray:
        return self.B[self.topology.x_slice(i), self.topology.u_slice(i)]


def chain_topology(n_x, n_u=None, sensors=None) -> SubsystemTopology:
    """Subsystems in a line, each coupled to its predecessor and successor."""
    m = len(n_x)
    n_u = n_u or (1,) * m
    sensors = sensors or ((0,),) * m
    neighbors = tuple(tuple(j for j in (i - 1, i + 1) if 0 <= j < m) for i in range(m))
    return SubsystemTopology(tuple(n_x), tuple(n_x), tuple(n_u), neighbors, tuple(sensors))


def random_system(topology: SubsystemTopology, seed: int, radius: float = 0.9,
                  coupling: float = 0.3) -> LinearSystem:
    """Draw a system whose block pattern follows ``topology`` and whose
    spectral radius equals ``radius``."""
    if not 0 < radius < 1:
        raise ValueError("spectral radius must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    n, nu = topology.total_x, topology.total_u
    A = np.zeros((n, n))
    for i in range(topology.m):
        ri = topology.x_slice(i)
        A[ri, ri] = rng.normal(size=(topology.n_x[i], topology.n_x[i]))
        for j in topology.neighbors[i]:
            A[ri, topology.x_slice(j)] = coupling * rng.normal(size=(topology.n_x[i], topology.n_x[j]))
    A *= radius / max(abs(np.linalg.eigvals(A)))
    B = np.zeros((n, nu))
    for i in range(topology.m):
        B[topology.x_slice(i), topology.u_slice(i)] = rng.normal(size=(topology.n_x[i], topology.n_u[i]))
    return LinearSystem(A, B, topology, -np.ones(nu), np.ones(nu))


def simulate_linear(system: LinearSystem, noise: NoiseSpec, horizon: int, seed: int, x0=None,
                    hold: int = 1) -> Trajectory:
    """Uniform random inputs held for ``hold`` samples; additive bounded noise."""
    topo = system.topology
    ss = np.random.SeedSequence(seed)
    s_u, s_x, s_w, s_v = (np.random.default_rng(s) for s in ss.spawn(4))
    n_levels = -(-horizon // hold)
    levels = system.u_min + (system.u_max - system.u_min) * s_u.random((n_levels, topo.total_u))
    u = np.repeat(levels, hold, axis=0)[:horizon]
    w = truncated_normal(s_w, noise.sigma_w, horizon, noise.truncation)
    w[-1] = 0.0
    v = truncated_normal(s_v, noise.sigma_v, horizon, noise.truncation)
    x = np.empty((horizon, topo.total_x))
    x[0] = s_x.uniform(-1, 1, topo.total_x) if x0 is None else np.asarray(x0, dtype=float)
    for k in range(horizon - 1):
        x[k + 1] = system.A @ x[k] + system.B @ u[k] + w[k]
    y = measure(x, topo, v)
    return Trajectory(np.arange(horizon, dtype=float), x, u, y, w, v, seed, {"process": "linear"})
