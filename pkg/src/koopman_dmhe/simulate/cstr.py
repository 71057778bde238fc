"""Four interconnected CSTRs with three parallel exothermic reactions.

State ordering is ``(T1, CA1, T2, CA2, T3, CA3, T4, CA4)``; units are K,
kmol/m^3, hours, kJ. Reactor 1 receives recycles from reactors 2 and 4,
reactor 2 takes the effluent of reactor 1, reactor 3 takes the part of
reactor 2's effluent that is not recycled, and reactor 4 takes reactor 3's
effluent.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

STATE_NAMES = ("T1", "CA1", "T2", "CA2", "T3", "CA3", "T4", "CA4")
INPUT_NAMES = ("Q1", "Q2", "Q3", "Q4")


class IntegrationError(RuntimeError):
    pass


@dataclass
class CstrConfig:
    V: list[float]
    F0: list[float]
    F_r1: float
    F_r2: float
    T0: list[float]
    CA0: list[float]
    k0: list[float]
    E_over_R: list[float]
    dH: list[float]
    rho_cp: float
    Q_min: list[float]
    Q_max: list[float]
    hold_time: float = 1.5
    dt: float = 0.025
    substeps: int = 20
    x_init: list[float] = field(default_factory=list)

    def __post_init__(self):
        if min(self.V) <= 0 or min(self.F0) < 0 or self.F_r1 < 0 or self.F_r2 < 0:
            raise ValueError("volumes must be positive and flows non-negative")
        if any(lo > hi for lo, hi in zip(self.Q_min, self.Q_max)):
            raise ValueError("Q_min must not exceed Q_max")
        if self.dt <= 0 or self.substeps < 1:
            raise ValueError("dt must be positive and substeps >= 1")
        if self.F2 - self.F_r1 < 0:
            raise ValueError("recycle F_r1 exceeds reactor 2 outflow")

    @classmethod
    def from_dict(cls, d: dict) -> "CstrConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    # derived flows (m^3/h)
    @property
    def F1(self) -> float:
        return self.F0[0] + self.F_r1 + self.F_r2

    @property
    def F2(self) -> float:
        return self.F1 + self.F0[1]

    @property
    def F3(self) -> float:
        return self.F2 - self.F_r1 + self.F0[2]


def reaction_rate(T, config: CstrConfig):
    """Total first-order rate constant and heat-release coefficient at ``T``."""
    k = np.array(config.k0)[:, None] * np.exp(-np.array(config.E_over_R)[:, None] / np.atleast_1d(T)[None, :])
    heat = (np.array(config.dH)[:, None] * k).sum(axis=0) / config.rho_cp
    return k.sum(axis=0), heat


def rhs(x: np.ndarray, Q: np.ndarray, c: CstrConfig) -> np.ndarray:
    T = x[0::2]
    CA = x[1::2]
    ktot, heat = reaction_rate(T, c)
    V = c.V
    F01, F02, F03, F04 = c.F0
    dx = np.empty(8)
    # reactor 1: fresh feed plus recycles from reactors 2 and 4
    dx[0] = (F01 / V[0] * (c.T0[0] - T[0]) + c.F_r1 / V[0] * (T[1] - T[0])
             + c.F_r2 / V[0] * (T[3] - T[0]) - heat[0] * CA[0] + Q[0] / (c.rho_cp * V[0]))
    dx[1] = (F01 / V[0] * (c.CA0[0] - CA[0]) + c.F_r1 / V[0] * (CA[1] - CA[0])
             + c.F_r2 / V[0] * (CA[3] - CA[0]) - ktot[0] * CA[0])
    dx[2] = (c.F1 / V[1] * (T[0] - T[1]) + F02 / V[1] * (c.T0[1] - T[1])
             - heat[1] * CA[1] + Q[1] / (c.rho_cp * V[1]))
    dx[3] = c.F1 / V[1] * (CA[0] - CA[1]) + F02 / V[1] * (c.CA0[1] - CA[1]) - ktot[1] * CA[1]
    F23 = c.F2 - c.F_r1
    dx[4] = (F23 / V[2] * (T[1] - T[2]) + F03 / V[2] * (c.T0[2] - T[2])
             - heat[2] * CA[2] + Q[2] / (c.rho_cp * V[2]))
    dx[5] = F23 / V[2] * (CA[1] - CA[2]) + F03 / V[2] * (c.CA0[2] - CA[2]) - ktot[2] * CA[2]
    dx[6] = (c.F3 / V[3] * (T[2] - T[3]) + F04 / V[3] * (c.T0[3] - T[3])
             - heat[3] * CA[3] + Q[3] / (c.rho_cp * V[3]))
    dx[7] = c.F3 / V[3] * (CA[2] - CA[3]) + F04 / V[3] * (c.CA0[3] - CA[3]) - ktot[3] * CA[3]
    return dx


def rk4(f, x: np.ndarray, h: float, n: int) -> np.ndarray:
    for _ in range(n):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def step_cstr(x: np.ndarray, Q: np.ndarray, config: CstrConfig, *, substeps: int | None = None,
              dt: float | None = None, k: int | None = None) -> np.ndarray:
    """Advance the 8-state model over one sampling period with fixed-step RK4."""
    n = substeps or config.substeps
    dt = config.dt if dt is None else dt
    Q = np.asarray(Q, dtype=float)
    out = rk4(lambda s: rhs(s, Q, config), np.asarray(x, dtype=float), dt / n, n)
    if not np.all(np.isfinite(out)):
        where = "" if k is None else f" at step {k}"
        raise IntegrationError(f"non-finite CSTR state{where}")
    return out


def calibrate_feeds(config: CstrConfig, x_s, Q_s) -> CstrConfig:
    """Return a copy whose feed temperatures and concentrations make ``x_s``
    an exact equilibrium under constant heat inputs ``Q_s``.

    Every balance is affine in its own feed variable, so each one is solved
    in closed form with the remaining parameters held fixed.
    """
    x_s = np.asarray(x_s, dtype=float)
    Q_s = np.asarray(Q_s, dtype=float)
    c = CstrConfig.from_dict(config.to_dict())
    T0 = list(c.T0)
    CA0 = list(c.CA0)
    for r in range(4):
        c.T0 = list(T0)
        c.CA0 = list(CA0)
        base = rhs(x_s, Q_s, c)
        gain = c.F0[r] / c.V[r]
        T0[r] = T0[r] - base[2 * r] / gain
        CA0[r] = CA0[r] - base[2 * r + 1] / gain
    c.T0, c.CA0 = T0, CA0
    return c
