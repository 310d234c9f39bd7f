"""Closed-form constitutive laws.

Speed-density relation (revisited Kladek form), speed-dependent sensory
depth, the distance and angular weights used by the perception strategies,
and the corrective factor applied to walking speed on a moving deck.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

# Densities are allowed to exceed the jam value by this relative margin
# before being rejected; round-off from the solvers lands inside it.
_RANGE_SLACK = 1e-12


@njit(cache=True)
def kladek_speed(rho, v_max, rho_max, gamma):
    if rho <= 0.0:
        return v_max
    return v_max * (1.0 - math.exp(-gamma * (1.0 / rho - 1.0 / rho_max)))


@njit(cache=True)
def kladek_speed_derivative(rho, v_max, rho_max, gamma):
    if rho <= 0.0:
        return 0.0
    return -v_max * gamma * math.exp(-gamma * (1.0 / rho - 1.0 / rho_max)) / (rho * rho)


@dataclass(frozen=True)
class FundamentalDiagram:
    """Speed as a function of (perceived) density.

    ``v = v_max * (1 - exp(-gamma * (1/rho - 1/rho_max)))``
    """

    v_max: float
    rho_max: float
    gamma: float

    def __post_init__(self):
        for name in ("v_max", "rho_max", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    def _check(self, rho):
        arr = np.asarray(rho, dtype=float)
        if np.any(arr < 0.0) or np.any(arr > self.rho_max * (1.0 + _RANGE_SLACK)):
            raise ValueError("density out of range")
        return arr

    def speed(self, rho_p):
        arr = self._check(rho_p)
        with np.errstate(divide="ignore", over="ignore"):
            inv = np.where(arr > 0.0, 1.0 / np.where(arr > 0.0, arr, 1.0), np.inf)
            v = self.v_max * (1.0 - np.exp(-self.gamma * (inv - 1.0 / self.rho_max)))
        v = np.where(arr > 0.0, v, self.v_max)
        return float(v) if v.ndim == 0 else v

    def speed_derivative(self, rho_p):
        arr = self._check(rho_p)
        # below ~1e-3 the exponential underflows and the derivative is exactly 0
        safe = np.where(arr > 1e-3 * self.rho_max, arr, 1.0)
        d = -self.v_max * self.gamma * np.exp(-self.gamma * (1.0 / safe - 1.0 / self.rho_max)) / safe**2
        d = np.where(arr > 1e-3 * self.rho_max, d, 0.0)
        return float(d) if d.ndim == 0 else d

    def flow(self, rho):
        return np.asarray(rho, dtype=float) * self.speed(rho)

    def capacity_density(self) -> float:
        """Density of maximum flow, by golden-section search on the concave flow."""
        a, b = 0.0, self.rho_max
        inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
        c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
        for _ in range(200):
            if self.flow(c) > self.flow(d):
                b = d
            else:
                a = c
            c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
        return 0.5 * (a + b)

    def nondimensional(self) -> "FundamentalDiagram":
        """Same law with density scaled by rho_max and speed by v_max."""
        return FundamentalDiagram(1.0, 1.0, self.gamma / self.rho_max)

    @property
    def params(self) -> tuple[float, float, float]:
        return (self.v_max, self.rho_max, self.gamma)


PRESETS = {
    "europe-rush": FundamentalDiagram(1.69, 6.0, 0.273 * 6.0),
    "asia-rush": FundamentalDiagram(1.48, 7.7, 0.273 * 7.7),
}


def preset(name: str) -> FundamentalDiagram:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown fundamental-diagram preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class SensoryLaw:
    delta0: float = 0.05
    alpha_bar: float = math.radians(85.0)
    mu: float = 1.0
    tau1_steps: int = 0

    def __post_init__(self):
        if not self.delta0 > 0:
            raise ValueError(f"delta0 must be positive, got {self.delta0}")
        if not 0.0 < self.alpha_bar <= math.pi / 2 + 1e-12:
            raise ValueError("alpha_bar must lie in (0, 90] degrees")
        if self.mu < 0:
            raise ValueError(f"mu must be non-negative, got {self.mu}")
        if self.tau1_steps < 0:
            raise ValueError("tau1_steps must be non-negative")

    def depth(self, visual_depth, v_delayed, v_max: float = 1.0):
        """Sensory depth ``Delta_s / v_max * v + delta0``."""
        return visual_depth / v_max * v_delayed + self.delta0

    def angular_weight(self, alpha: float) -> float:
        return angular_weight(alpha, self.alpha_bar, self.mu)


def depth(law: SensoryLaw, visual_depth, v_delayed, v_max: float = 1.0):
    return law.depth(visual_depth, v_delayed, v_max)


def distance_weight(delta: float, r_p: float) -> float:
    """Linear weight from 1 at the observer down to 0.2 at the region edge."""
    if r_p < 0 or r_p > delta * (1.0 + 1e-12):
        raise ValueError("perception point outside region")
    return 1.0 - 0.8 * min(r_p, delta) / delta


def angular_weight(alpha: float, alpha_bar: float, mu: float = 1.0) -> float:
    a = abs(alpha)
    if a > alpha_bar * (1.0 + 1e-12):
        raise ValueError("outside visual field")
    return 1.0 - (min(a, alpha_bar) / alpha_bar) ** mu


@dataclass(frozen=True)
class MotionSensitivity:
    """Pedestrian reaction to lateral deck acceleration (m/s^2 and s)."""

    z_c: float = 0.1
    z_max: float = 2.1
    tau1: float = 1.0
    tau2: float = 5.0

    def __post_init__(self):
        if not 0.0 < self.z_c < self.z_max:
            raise ValueError("need 0 < z_c < z_max")
        if self.tau1 < 0 or self.tau2 < 0:
            raise ValueError("delays must be non-negative")


def motion_factor(ms: MotionSensitivity, z, t: float, t_s=None):
    """Speed reduction factor in [0, 1] for a (delayed) acceleration envelope.

    ``t_s`` is the last stop time per cell (``nan`` or ``None`` for never).
    While ``t_s < t < t_s + tau2`` the factor is 0 whatever ``z`` is.
    """
    z = np.asarray(z, dtype=float)
    g = np.clip((ms.z_max - z) / (ms.z_max - ms.z_c), 0.0, 1.0)
    g = np.where(z <= ms.z_c, 1.0, g)
    if t_s is not None:
        ts = np.asarray(t_s, dtype=float)
        hold = (ts < t) & (t < ts + ms.tau2)
        g = np.where(hold, 0.0, g)
    return float(g) if g.ndim == 0 else g


def update_stop_times(ms: MotionSensitivity, z, t: float, t_s: np.ndarray) -> np.ndarray:
    """Record ``t`` as the stop time where ``z >= z_max`` and no hold is running."""
    z = np.asarray(z, dtype=float)
    ts = np.array(t_s, dtype=float, copy=True)
    in_hold = (ts < t) & (t < ts + ms.tau2)
    new_stop = (z >= ms.z_max) & ~in_hold
    ts[new_stop] = t
    return ts
