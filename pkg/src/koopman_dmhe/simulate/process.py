"""Trajectory generation for the two case-study processes.

Both runners use ``x(k+1) = f(x(k), u(k)) + w(k)`` with bounded Gaussian
``w`` applied after integration, and ``y(k) = H x(k) + v(k)``. Inputs,
disturbances and measurement noise draw from independent child streams of
one seed, so a ``(config, seed)`` pair reproduces a run bit for bit.
"""
from __future__ import annotations

import numpy as np

from ..topology import SubsystemTopology
from .cstr import CstrConfig, step_cstr
from .richards import SoilConfig, step_richards
from .signals import NoiseSpec, Trajectory, generate_inputs, irrigation_schedule, measure, truncated_normal


def _streams(seed: int):
    ss = np.random.SeedSequence(seed)
    input_seed, w_seq, v_seq = ss.spawn(3)
    return int(input_seed.generate_state(1)[0]), np.random.default_rng(w_seq), np.random.default_rng(v_seq)


def cstr_topology() -> SubsystemTopology:
    """Each reactor is one subsystem with state (T, CA) and one temperature sensor."""
    return SubsystemTopology(
        n_x=(2, 2, 2, 2), n_z=(2, 2, 2, 2), n_u=(1, 1, 1, 1),
        neighbors=((1, 3), (0,), (1,), (2,)),
        sensors=((0,), (0,), (0,), (0,)),
    )


def soil_topology(n_cells: int = 96, n_sub: int = 8) -> SubsystemTopology:
    """Consecutive blocks of compartments; sensors at the 2nd and last cell of
    each block; the surface flux enters the top block only."""
    if n_cells % n_sub:
        raise ValueError("compartment count must divide evenly into subsystems")
    size = n_cells // n_sub
    neighbors = tuple(tuple(j for j in (i - 1, i + 1) if 0 <= j < n_sub) for i in range(n_sub))
    return SubsystemTopology(
        n_x=(size,) * n_sub, n_z=(size,) * n_sub, n_u=(1,) + (0,) * (n_sub - 1),
        neighbors=neighbors, sensors=((1, size - 1),) * n_sub,
    )


def simulate_cstr(config: CstrConfig, noise: NoiseSpec, horizon: int, seed: int,
                  x0=None, topology: SubsystemTopology | None = None) -> Trajectory:
    topology = topology or cstr_topology()
    input_seed, rng_w, rng_v = _streams(seed)
    hold = int(round(config.hold_time / config.dt))
    u = generate_inputs(config.Q_min, config.Q_max, hold, horizon, input_seed)
    w = truncated_normal(rng_w, noise.sigma_w, horizon, noise.truncation)
    w[-1] = 0.0  # the last disturbance never acts on a recorded sample
    v = truncated_normal(rng_v, noise.sigma_v, horizon, noise.truncation)
    x = np.empty((horizon, 8))
    x[0] = np.asarray(config.x_init if x0 is None else x0, dtype=float)
    for k in range(horizon - 1):
        x[k + 1] = step_cstr(x[k], u[k], config, k=k) + w[k]
    y = measure(x, topology, v)
    t = config.dt * np.arange(horizon)
    return Trajectory(t, x, u, y, w, v, seed, {"process": "cstr"})


def simulate_soil(config: SoilConfig, noise: NoiseSpec, horizon: int, seed: int, h0,
                  topology: SubsystemTopology | None = None) -> Trajectory:
    topology = topology or soil_topology(config.n_cells)
    _, rng_w, rng_v = _streams(seed)
    dt = config.dt_minutes / 60.0
    u = irrigation_schedule(horizon, dt, config.irrigation_rate, config.irrigation_hours)
    w = truncated_normal(rng_w, noise.sigma_w, horizon, noise.truncation)
    w[-1] = 0.0
    v = truncated_normal(rng_v, noise.sigma_v, horizon, noise.truncation)
    x = np.empty((horizon, config.n_cells))
    x[0] = np.broadcast_to(np.asarray(h0, dtype=float), (config.n_cells,))
    for k in range(horizon - 1):
        x[k + 1] = step_richards(x[k], float(u[k, 0]), config, dt, k=k) + w[k]
    y = measure(x, topology, v)
    t = dt * np.arange(horizon)
    return Trajectory(t, x, u, y, w, v, seed, {"process": "soil"})
