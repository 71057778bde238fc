"""Subsystem decomposition of a plant-wide process.

Subsystems are indexed from 0. Every stacked matrix in the package orders
its column blocks by subsystem index, so a topology fixes the layout of the
aggregated model and of all horizon stacks built from it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class TopologyError(ValueError):
    """Raised when a topology violates one of its structural invariants."""


@dataclass(frozen=True)
class SubsystemTopology:
    """Dimensions, couplings and sensor layout of ``m`` interacting subsystems.

    ``sensors[i]`` lists the local state coordinates of subsystem ``i`` that
    are measured; it defines the rows of the selector ``H_i``.
    ``neighbors[i]`` are the subsystems whose states enter the dynamics of
    subsystem ``i``. They are stored sorted so concatenations are deterministic.
    """

    n_x: tuple[int, ...]
    n_z: tuple[int, ...]
    n_u: tuple[int, ...]
    neighbors: tuple[tuple[int, ...], ...]
    sensors: tuple[tuple[int, ...], ...]
    n_ut: tuple[int, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "n_x", tuple(int(v) for v in self.n_x))
        object.__setattr__(self, "n_z", tuple(int(v) for v in self.n_z))
        object.__setattr__(self, "n_u", tuple(int(v) for v in self.n_u))
        object.__setattr__(
            self, "neighbors", tuple(tuple(sorted(int(j) for j in nb)) for nb in self.neighbors)
        )
        object.__setattr__(self, "sensors", tuple(tuple(int(s) for s in ss) for ss in self.sensors))
        if not self.n_ut:
            object.__setattr__(self, "n_ut", self.n_u)
        else:
            object.__setattr__(self, "n_ut", tuple(int(v) for v in self.n_ut))

    @property
    def m(self) -> int:
        return len(self.n_x)

    @property
    def n_y(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.sensors)

    @property
    def total_x(self) -> int:
        return sum(self.n_x)

    @property
    def total_z(self) -> int:
        return sum(self.n_z)

    @property
    def total_y(self) -> int:
        return sum(self.n_y)

    @property
    def total_u(self) -> int:
        return sum(self.n_u)

    @property
    def total_ut(self) -> int:
        return sum(self.n_ut)

    def sensor_matrix(self, i: int) -> np.ndarray:
        """Selector ``H_i`` mapping local states to local measurements."""
        H = np.zeros((len(self.sensors[i]), self.n_x[i]))
        for r, c in enumerate(self.sensors[i]):
            H[r, c] = 1.0
        return H

    def global_sensor_matrix(self) -> np.ndarray:
        H = np.zeros((self.total_y, self.total_x))
        ys, xs = offsets(self.n_y), offsets(self.n_x)
        for i in range(self.m):
            H[ys[i]:ys[i + 1], xs[i]:xs[i + 1]] = self.sensor_matrix(i)
        return H

    def x_slice(self, i: int) -> slice:
        o = offsets(self.n_x)
        return slice(o[i], o[i + 1])

    def z_slice(self, i: int) -> slice:
        o = offsets(self.n_z)
        return slice(o[i], o[i + 1])

    def y_slice(self, i: int) -> slice:
        o = offsets(self.n_y)
        return slice(o[i], o[i + 1])

    def u_slice(self, i: int) -> slice:
        o = offsets(self.n_u)
        return slice(o[i], o[i + 1])

    def ut_slice(self, i: int) -> slice:
        o = offsets(self.n_ut)
        return slice(o[i], o[i + 1])

    def with_lifted(self, n_z: Sequence[int], n_ut: Sequence[int]) -> "SubsystemTopology":
        return SubsystemTopology(self.n_x, tuple(n_z), self.n_u, self.neighbors, self.sensors, tuple(n_ut))


def offsets(sizes: Sequence[int]) -> list[int]:
    out = [0]
    for s in sizes:
        out.append(out[-1] + int(s))
    return out


def validate(topology: SubsystemTopology) -> None:
    """Check every structural invariant; raise ``TopologyError`` on the first violation."""
    t = topology
    m = t.m
    if m < 1:
        raise TopologyError("topology needs at least one subsystem")
    for name in ("n_z", "n_u", "neighbors", "sensors", "n_ut"):
        if len(getattr(t, name)) != m:
            raise TopologyError(f"{name} has {len(getattr(t, name))} entries, expected {m}")
    for i in range(m):
        if t.n_x[i] < 1:
            raise TopologyError(f"subsystem {i}: n_x must be positive")
        if t.n_z[i] < t.n_x[i]:
            raise TopologyError(f"subsystem {i}: n_z={t.n_z[i]} smaller than n_x={t.n_x[i]}")
        if t.n_u[i] < 0 or t.n_ut[i] < 0:
            raise TopologyError(f"subsystem {i}: negative input dimension")
        if i in t.neighbors[i]:
            raise TopologyError(f"subsystem {i}: self-coupling in neighbor set")
        for j in t.neighbors[i]:
            if not 0 <= j < m:
                raise TopologyError(f"subsystem {i}: neighbor index {j} outside [0, {m - 1}]")
        if len(set(t.neighbors[i])) != len(t.neighbors[i]):
            raise TopologyError(f"subsystem {i}: duplicate neighbor")
        for s in t.sensors[i]:
            if not 0 <= s < t.n_x[i]:
                raise TopologyError(f"subsystem {i}: sensor coordinate {s} outside local state")


def column_indices(i: int, sizes: Sequence[int], repeat: int = 1) -> np.ndarray:
    """Column indices of subsystem ``i`` in a matrix whose columns hold
    ``repeat`` consecutive copies of the per-subsystem layout ``sizes``."""
    o = offsets(sizes)
    total = o[-1]
    return np.concatenate([np.arange(r * total + o[i], r * total + o[i + 1]) for r in range(repeat)])


def select_columns(M: np.ndarray, i: int, sizes: Sequence[int], repeat: int = 1) -> np.ndarray:
    """Columns of ``M`` that multiply the variables of subsystem ``i``.

    ``sizes`` is the per-subsystem block width (``n_z`` for lifted states and
    disturbances); ``repeat`` is the number of time blocks stacked along the
    columns (1 for ``O`` and ``G``, ``N`` for ``Gamma`` and ``J``).
    """
    M = np.asarray(M)
    width = sum(sizes) * repeat
    if M.ndim != 2 or M.shape[1] != width:
        raise TopologyError(f"matrix has {M.shape[-1]} columns, topology implies {width}")
    return M[:, column_indices(i, sizes, repeat)]
