"""Input schedules, bounded noise and measurement maps."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..topology import SubsystemTopology


@dataclass
class NoiseSpec:
    sigma_w: list[float]
    sigma_v: list[float]
    truncation: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if min(self.sigma_w, default=0.0) < 0 or min(self.sigma_v, default=0.0) < 0:
            raise ValueError("noise standard deviations must be non-negative")
        if self.truncation <= 0:
            raise ValueError("truncation multiple must be positive")


def truncated_normal(rng: np.random.Generator, sigma, size: int, truncation: float = 5.0) -> np.ndarray:
    """Zero-mean Gaussian samples with std ``sigma`` clipped to ``±truncation*sigma``.

    Returns an array of shape ``(size, len(sigma))``.
    """
    sigma = np.asarray(sigma, dtype=float)
    draws = rng.standard_normal((size, sigma.size))
    return np.clip(draws, -truncation, truncation) * sigma


def generate_inputs(q_min, q_max, hold_samples: int, horizon: int, seed: int) -> np.ndarray:
    """Piecewise-constant inputs; each level is uniform in ``[q_min, q_max]``
    and is held for ``hold_samples`` samples. Shape ``(horizon, n_u)``."""
    q_min = np.asarray(q_min, dtype=float)
    q_max = np.asarray(q_max, dtype=float)
    rng = np.random.default_rng(seed)
    n_levels = -(-horizon // hold_samples)
    levels = q_min + (q_max - q_min) * rng.random((n_levels, q_min.size))
    return np.repeat(levels, hold_samples, axis=0)[:horizon]


def irrigation_schedule(horizon: int, dt_hours: float, rate: float, hours_on: float = 8.0,
                        period: float = 24.0, start: float = 0.0) -> np.ndarray:
    """Surface flux that is ``rate`` for the first ``hours_on`` of every ``period``."""
    t = start + dt_hours * np.arange(horizon)
    return np.where(np.mod(t, period) < hours_on - 1e-12, rate, 0.0)[:, None]


def measure(x: np.ndarray, topology: SubsystemTopology, v: np.ndarray | None = None) -> np.ndarray:
    """``y = H x + v`` for one state (1-D) or a batch of row-wise states (2-D)."""
    H = topology.global_sensor_matrix()
    y = np.asarray(x) @ H.T
    return y if v is None else y + v


@dataclass
class Trajectory:
    """Time-indexed record of one simulation run. Arrays are row-per-sample."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    w: np.ndarray
    v: np.ndarray
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.t)
        for name in ("x", "u", "y", "w", "v"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"trajectory field {name} has {len(getattr(self, name))} rows, expected {n}")

    def __len__(self):
        return len(self.t)

    def slice(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(self.t[start:stop], self.x[start:stop], self.u[start:stop], self.y[start:stop],
                          self.w[start:stop], self.v[start:stop], self.seed, dict(self.meta))


def add_noise(traj: Trajectory, spec: NoiseSpec, topology: SubsystemTopology) -> Trajectory:
    """Add bounded measurement noise to the outputs of a noise-free trajectory.

    Process disturbances are injected during simulation (they alter the
    state sequence), so only ``v`` is drawn here. With all sigmas zero the
    trajectory is returned unchanged.
    """
    rng = np.random.default_rng(spec.seed)
    v = truncated_normal(rng, spec.sigma_v, len(traj), spec.truncation)
    y = measure(traj.x, topology, v)
    return Trajectory(traj.t, traj.x, traj.u, y, traj.w, v, traj.seed, dict(traj.meta))
