"""Derived quantities: corridor fluxes, smoothing, integrals, test fields."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fundamental import FundamentalDiagram
from .geometry import Grid

PERCEPTION_TEST = dict(rho0=0.25, drho=0.3, width=1.0 / 35.0, centre=(0.4, 0.5))


@dataclass(frozen=True)
class Gate:
    """Straight line across a corridor, lying on a grid line.

    ``axis`` is the normal direction (0: a vertical line ``x1 = position``
    crossed in +x1; 1: a horizontal line crossed in +x2).  ``lo``/``hi``
    bound the gate along the other axis.
    """

    name: str
    axis: int
    position: float
    lo: float
    hi: float

    @property
    def length(self) -> float:
        return self.hi - self.lo


def corridor_flux(rho: np.ndarray, v: np.ndarray, grid: Grid, gate: Gate) -> float:
    """Midpoint-rule integral of ``rho v . n`` along ``gate``.

    The value on a face is the mean of ``rho v . n`` in the two adjacent
    cells (the inside cell alone on the domain boundary).
    """
    k = int(round(gate.position / grid.dx))
    if abs(k * grid.dx - gate.position) > 1e-9 * max(1.0, abs(gate.position)):
        raise ValueError(f"gate {gate.name!r} does not lie on a grid line")
    q = rho * v[..., gate.axis]
    if gate.axis == 1:
        q = q.T
    n_normal, n_along = q.shape
    centres = (np.arange(n_along) + 0.5) * grid.dx
    sel = (centres > gate.lo) & (centres < gate.hi)
    if k <= 0:
        face = q[0]
    elif k >= n_normal:
        face = q[n_normal - 1]
    else:
        face = 0.5 * (q[k - 1] + q[k])
    return float(np.sum(face[sel]) * grid.dx)


def inlet_flux(fd: FundamentalDiagram, rho_in: float, length: float) -> float:
    """Flux imposed through an inlet of the given length at density ``rho_in``."""
    return float(rho_in * fd.speed(rho_in) * length)


def lowpass(y, window: float, t=None) -> np.ndarray:
    """Centred moving average that shrinks near the ends.

    Without ``t`` the window is a number of samples; with ``t`` it is a time
    span and each output is the average over the samples within
    ``window / 2`` of it, each sample weighted by the time it represents
    (half the distance between its neighbours), so that uneven time steps
    do not bias the result.
    """
    y = np.asarray(y, dtype=float)
    if not window > 0:
        raise ValueError("window must be positive")
    n = len(y)
    if t is None:
        c = np.concatenate(([0.0], np.cumsum(y)))
        half = int(window) // 2
        idx = np.arange(n)
        lo = np.maximum(idx - half, 0)
        hi = np.minimum(idx + half + 1, n)
        return (c[hi] - c[lo]) / (hi - lo)
    t = np.asarray(t, dtype=float)
    if n < 2:
        return y.copy()
    w = np.empty(n)
    w[1:-1] = 0.5 * (t[2:] - t[:-2])
    w[0] = 0.5 * (t[1] - t[0])
    w[-1] = 0.5 * (t[-1] - t[-2])
    w = np.where(w > 0, w, 1e-300)
    cw = np.concatenate(([0.0], np.cumsum(w)))
    cy = np.concatenate(([0.0], np.cumsum(w * y)))
    lo = np.searchsorted(t, t - 0.5 * window, side="left")
    hi = np.searchsorted(t, t + 0.5 * window, side="right")
    return (cy[hi] - cy[lo]) / (cw[hi] - cw[lo])


def total_mass(rho: np.ndarray, dx: float) -> float:
    rho = np.asarray(rho, dtype=float)
    return float(rho.sum() * dx ** (2 if rho.ndim == 2 and min(rho.shape) > 1 else 1))


def l2_energy(rho: np.ndarray, dx: float) -> float:
    rho = np.asarray(rho, dtype=float)
    return float(np.sum(rho * rho) * dx ** (2 if rho.ndim == 2 and min(rho.shape) > 1 else 1))


def gaussian_bump(grid: Grid, rho0: float = 0.25, drho: float = 0.3, width: float = 1.0 / 35.0,
                  centre=(0.4, 0.5)) -> np.ndarray:
    """``rho0 + drho exp(-|x - x_c|^2 / width^2)`` at cell centres.

    On a one-row grid this is the cross-section through ``centre[1]``.
    """
    if rho0 < 0 or rho0 + drho > 1.0:
        raise ValueError("need rho0 >= 0 and rho0 + drho <= 1")
    if grid.is_1d:
        r2 = (grid.x1 - centre[0]) ** 2
        return (rho0 + drho * np.exp(-r2 / width**2)).reshape(grid.shape)
    X1, X2 = grid.centres()
    r2 = (X1 - centre[0]) ** 2 + (X2 - centre[1]) ** 2
    return rho0 + drho * np.exp(-r2 / width**2)


def emptying_time(t, mass, threshold: float = 0.01, after: float = 0.0) -> tuple[float, float]:
    """First time at or after ``after`` when ``mass <= threshold * peak``.

    The crossing is located by linear interpolation.  Returns
    ``(time, final_fraction)``; the time is ``inf`` when never reached.
    """
    t = np.asarray(t, dtype=float)
    m = np.asarray(mass, dtype=float)
    peak = float(m.max()) if m.size else 0.0
    frac = float(m[-1] / peak) if peak > 0 else 0.0
    level = threshold * peak
    if peak == 0.0:
        return float(max(t[0], after) if t.size else 0.0), 0.0
    start = int(np.searchsorted(t, after, side="left"))
    if start >= len(t):
        return math.inf, frac
    if m[start] <= level:
        if start == 0:
            return float(t[0]), frac
        # crossing before ``after``: the mass was already low when inflow ended
        return float(t[start]), frac
    below = np.flatnonzero(m[start:] <= level)
    if below.size == 0:
        return math.inf, frac
    k = start + int(below[0])
    t0, t1, m0, m1 = t[k - 1], t[k], m[k - 1], m[k]
    return float(t0 + (m0 - level) / (m0 - m1) * (t1 - t0)), frac


def first_local_max(t, y, span: float | None = None) -> tuple[float, float]:
    """Time and value of the first local maximum (global max if none).

    Without ``span`` a local maximum is a sample above its left neighbour
    and not below its right one.  With ``span`` it must be the largest
    sample within ``span / 2`` on either side and strictly above the
    smallest one there, which ignores ripples shorter than ``span``.
    """
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    if span is None:
        for k in range(1, len(y) - 1):
            if y[k] > y[k - 1] and y[k] >= y[k + 1]:
                return float(t[k]), float(y[k])
    else:
        lo = np.searchsorted(t, t - 0.5 * span, side="left")
        hi = np.searchsorted(t, t + 0.5 * span, side="right")
        for k in range(len(y)):
            if lo[k] == 0 or hi[k] == len(y):
                continue  # neighbourhood cut by the series ends
            seg = y[lo[k]:hi[k]]
            if y[k] >= seg.max() and y[k] > seg.min():
                return float(t[k]), float(y[k])
    k = int(np.argmax(y))
    return float(t[k]), float(y[k])


def crossings(x, a, b) -> np.ndarray:
    """Abscissae where curves ``a`` and ``b`` cross (linear interpolation)."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    s = np.sign(d)
    out = []
    for k in range(len(d) - 1):
        if s[k] == 0:
            out.append(x[k])
        elif s[k] * s[k + 1] < 0:
            out.append(x[k] + d[k] / (d[k] - d[k + 1]) * (x[k + 1] - x[k]))
    return np.asarray(out)
