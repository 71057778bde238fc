"""One-dimensional Richards equation on a uniform column of compartments.

Node 0 is the top compartment. Fluxes are positive downwards:

    q_{i+1/2} = K_{i+1/2} * (1 - (h_{i+1} - h_i) / dz)

with the interface conductivity taken as the arithmetic mean of the two
nodal values. The top boundary carries the prescribed surface flux, the
bottom boundary drains freely (``q = K(h_bottom)``).

Time stepping is forward Euler applied to the water-content form
``d theta / dt = -d q / d depth``, which is the same equation as the
pressure-head form (``C(h) dh/dt = d theta/dt``) but keeps the discrete water
balance exact. Heads are recovered by inverting the retention curve.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np


class SoilStateError(RuntimeError):
    pass


@dataclass
class SoilConfig:
    depth: float = 1.2  # m
    n_cells: int = 96
    alpha: float = 3.6  # 1/m
    n: float = 1.56
    lam: float = 0.5
    theta_s: float = 0.43
    theta_r: float = 0.078
    K_sat: float = 2.889e-6  # m/s
    irrigation_rate: float = 1.944e-3  # m/h
    irrigation_hours: float = 8.0
    dt_minutes: float = 1.0
    stability: float = 0.4
    bottom: str = "free_drainage"

    def __post_init__(self):
        if not self.theta_r < self.theta_s:
            raise ValueError("theta_r must be below theta_s")
        if self.n <= 1:
            raise ValueError("van Genuchten n must exceed 1")
        if self.n_cells < 2 or self.depth <= 0:
            raise ValueError("column needs positive depth and at least two cells")
        if self.bottom not in ("free_drainage", "no_flux"):
            raise ValueError("bottom boundary must be 'free_drainage' or 'no_flux'")

    @classmethod
    def from_dict(cls, d: dict) -> "SoilConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def dz(self) -> float:
        return self.depth / self.n_cells

    @property
    def m(self) -> float:
        return 1.0 - 1.0 / self.n

    @property
    def K_sat_per_hour(self) -> float:
        return self.K_sat * 3600.0


def effective_saturation(h, c: SoilConfig):
    h = np.asarray(h, dtype=float)
    return (1.0 + (-c.alpha * np.minimum(h, 0.0)) ** c.n) ** (-c.m)


def water_content(h, c: SoilConfig):
    """van Genuchten retention curve theta(h)."""
    return c.theta_r + (c.theta_s - c.theta_r) * effective_saturation(h, c)


def head_from_content(theta, c: SoilConfig):
    se = (np.asarray(theta, dtype=float) - c.theta_r) / (c.theta_s - c.theta_r)
    if np.any(se <= 0) or np.any(se >= 1):
        raise SoilStateError("water content left the unsaturated range")
    return -((se ** (-1.0 / c.m) - 1.0) ** (1.0 / c.n)) / c.alpha


def conductivity(h, c: SoilConfig):
    """Mualem conductivity in m/h."""
    se = effective_saturation(h, c)
    return c.K_sat_per_hour * se ** c.lam * (1.0 - (1.0 - se ** (1.0 / c.m)) ** c.m) ** 2


def capacity(h, c: SoilConfig):
    """Capillary capacity dtheta/dh in 1/m."""
    a = -c.alpha * np.minimum(np.asarray(h, dtype=float), 0.0)
    return (c.n * c.alpha * (c.theta_s - c.theta_r) * c.m * a ** (c.n - 1)
            * (1.0 + a ** c.n) ** (-(2.0 - 1.0 / c.n)))


def fluxes(h: np.ndarray, surface_flux: float, c: SoilConfig) -> np.ndarray:
    """Downward fluxes (m/h) at the ``n_cells + 1`` faces, top face first."""
    K = conductivity(h, c)
    K_face = 0.5 * (K[:-1] + K[1:])
    q = np.empty(h.size + 1)
    q[0] = surface_flux
    q[1:-1] = K_face * (1.0 - (h[1:] - h[:-1]) / c.dz)
    q[-1] = K[-1] if c.bottom == "free_drainage" else 0.0
    return q


def stable_substeps(h: np.ndarray, dt_hours: float, c: SoilConfig) -> int:
    """Substep count keeping the explicit diffusion number below ``c.stability``."""
    D = conductivity(h, c) / np.maximum(capacity(h, c), 1e-12)
    dt_max = c.stability * c.dz ** 2 / D.max()
    return max(1, int(np.ceil(dt_hours / dt_max)))


def step_richards(h: np.ndarray, surface_flux: float, c: SoilConfig, dt_hours: float | None = None,
                  *, k: int | None = None, return_balance: bool = False):
    """Advance the head profile over one sampling period.

    With ``return_balance`` the function also returns the net water volume
    per unit area that crossed the boundaries, ``sum((q_top - q_bottom) * dt)``.
    """
    dt = c.dt_minutes / 60.0 if dt_hours is None else dt_hours
    h = np.asarray(h, dtype=float)
    where = "" if k is None else f" at step {k}"
    if not np.all(np.isfinite(h)) or np.any(h >= 0):
        raise SoilStateError(f"pressure head must be finite and negative{where}")
    n_sub = stable_substeps(h, dt, c)
    tau = dt / n_sub
    theta = water_content(h, c)
    net = 0.0
    for _ in range(n_sub):
        q = fluxes(h, surface_flux, c)
        theta = theta + tau * (q[:-1] - q[1:]) / c.dz
        net += tau * (q[0] - q[-1])
        try:
            h = head_from_content(theta, c)
        except SoilStateError as exc:
            raise SoilStateError(f"{exc}{where}") from None
    if not np.all(np.isfinite(h)) or np.any(h >= 0):
        raise SoilStateError(f"pressure head must be finite and negative{where}")
    return (h, net) if return_balance else h


def stored_water(h: np.ndarray, c: SoilConfig) -> float:
    return float(np.sum(water_content(h, c)) * c.dz)
