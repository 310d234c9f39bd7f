"""Sensory regions and the four localisation strategies.

Every strategy picks a perception point ``x_p`` inside the sensory region of
a cell and derives a perceived density ``rho_p`` from the true density:

* ``s1`` looks at the far edge of the region along the desired direction,
* ``s2`` looks at the densest member cell (ties: nearest, then lowest index),
* ``s3`` locates like ``s2`` but blends ``rho(x)`` and ``rho(x_p)`` by distance,
* ``s4`` uses the angular-weighted centre of mass and mean density.

``local`` is the degenerate choice ``rho_p = rho`` used for comparison runs.

Two code paths exist: :func:`build_region` plus the ``strategy_*`` functions
work on one cell and are meant for inspection; :func:`perceive` evaluates a
whole field with compiled kernels.  Both use the same membership rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .fundamental import SensoryLaw, distance_weight
from .geometry import EXIT_BASE, WalkingDomain, angle_to

STRATEGIES = ("local", "s1", "s2", "s3", "s4")
_CODE = {name: k for k, name in enumerate(STRATEGIES)}

# slack on the radius test, in squared cell units
_R2_SLACK = 1e-9
_ALPHA_SLACK = 1e-12


@dataclass(frozen=True)
class PerceptionConfig:
    strategy: str = "s3"
    alpha_bar_deg: float = 85.0
    delta0: float = 0.05
    mu: float = 1.0
    theta: float = 0.7
    tau1_steps: int = 0
    epsilon: float = 1e-4
    degenerate: str = "avoid"

    def __post_init__(self):
        errors = self.problems()
        if errors:
            raise ValueError("; ".join(errors))

    def problems(self) -> list[str]:
        out = []
        if self.strategy not in STRATEGIES:
            out.append(f"strategy must be one of {', '.join(STRATEGIES)} (got {self.strategy!r})")
        if not 0.0 < self.alpha_bar_deg <= 90.0:
            out.append(f"alpha_bar_deg must lie in (0, 90] (got {self.alpha_bar_deg})")
        if not self.delta0 > 0:
            out.append(f"delta0 must be > 0 (got {self.delta0})")
        if not self.mu >= 0:
            out.append(f"mu must be >= 0 (got {self.mu})")
        if not 0.0 <= self.theta <= 1.0:
            out.append(f"theta must lie in [0, 1] (got {self.theta})")
        if not (isinstance(self.tau1_steps, int) and self.tau1_steps >= 0):
            out.append(f"tau1_steps must be a non-negative integer (got {self.tau1_steps})")
        if not self.epsilon > 0:
            out.append(f"epsilon must be > 0 (got {self.epsilon})")
        if self.degenerate not in ("avoid", "none"):
            out.append(f"degenerate must be 'avoid' or 'none' (got {self.degenerate!r})")
        return out

    @property
    def alpha_bar(self) -> float:
        return math.radians(self.alpha_bar_deg)

    @property
    def code(self) -> int:
        return _CODE[self.strategy]

    def sensory_law(self) -> SensoryLaw:
        return SensoryLaw(self.delta0, self.alpha_bar, self.mu, self.tau1_steps)


@dataclass
class SensoryRegion:
    centre: tuple[int, int]
    x: np.ndarray
    e_d: np.ndarray
    delta: float
    cells: np.ndarray       # (m, 2) member indices
    points: np.ndarray      # (m, 2) member centres
    distances: np.ndarray   # (m,)
    angles: np.ndarray      # (m,)
    weights: np.ndarray     # (m,) angular weight G
    virtual: np.ndarray     # (m,) True for empty cells beyond an exit

    def __len__(self):
        return len(self.cells)

    def values(self, rho: np.ndarray) -> np.ndarray:
        rho2 = rho.reshape(len(rho), -1) if rho.ndim == 1 else rho
        real = ~self.virtual
        out = np.zeros(len(self.cells))
        out[real] = rho2[self.cells[real, 0], self.cells[real, 1]]
        return out


def build_region(
    domain: WalkingDomain,
    cell: tuple[int, int],
    e_d,
    delta: float,
    alpha_bar: float,
    mu: float = 1.0,
) -> SensoryRegion:
    """Member cells of the sensory region of ``cell``.

    2D: centres within ``delta`` whose direction is within ``alpha_bar`` of
    ``e_d``; the observer's own cell is always a member.  1D: the cells of
    ``[x, x + delta]``.  Obstacle cells are dropped, and so are cells outside
    the grid unless they lie straight beyond an exit face, where they count
    as empty space.
    """
    g = domain.grid
    i, j = cell
    x = g.centre(i, j)
    e = np.asarray(e_d, dtype=float)
    rc = delta / g.dx
    R = int(math.floor(rc + 1e-9))
    members = []
    virtual = []
    exits = exit_faces(domain)
    if g.is_1d:
        e = np.array([1.0, 0.0])
        for k in range(0, R + 1):
            if i + k < g.n1 and not domain.obstacle[i + k, 0]:
                members.append((i + k, 0, 0.0))
                virtual.append(False)
    else:
        for di in range(-R, R + 1):
            for dj in range(-R, R + 1):
                ii, jj = i + di, j + dj
                out_i = not 0 <= ii < g.n1
                out_j = not 0 <= jj < g.n2
                if out_i and out_j:
                    continue
                if out_i:
                    ghost = exits[g.n1 - 1 if ii >= g.n1 else 0, jj, 0 if ii >= g.n1 else 1]
                elif out_j:
                    ghost = exits[ii, g.n2 - 1 if jj >= g.n2 else 0, 2 if jj >= g.n2 else 3]
                else:
                    ghost = False
                if (out_i or out_j) and not ghost:
                    continue
                if not ghost and domain.obstacle[ii, jj]:
                    continue
                if di * di + dj * dj > rc * rc + _R2_SLACK:
                    continue
                if di == 0 and dj == 0:
                    members.append((ii, jj, 0.0))
                    virtual.append(False)
                    continue
                a = angle_to(e, (di, dj))
                if a <= alpha_bar * (1.0 + _ALPHA_SLACK):
                    members.append((ii, jj, a))
                    virtual.append(bool(ghost))
    cells = np.array([(a, b) for a, b, _ in members], dtype=np.int64).reshape(-1, 2)
    angles = np.array([m[2] for m in members], dtype=float)
    points = (cells + 0.5) * g.dx
    if g.is_1d:
        points[:, 1] = 0.5 * g.dx
    dist = np.hypot(points[:, 0] - x[0], points[:, 1] - x[1])
    if g.is_1d:
        weights = np.ones(len(cells))
    else:
        weights = 1.0 - (np.minimum(angles, alpha_bar) / alpha_bar) ** mu
    return SensoryRegion((i, j), x, e, float(delta), cells, points, dist, angles, weights,
                         np.array(virtual, dtype=bool))


def _fallback(region: SensoryRegion, rho: np.ndarray):
    rho2 = rho.reshape(len(rho), -1) if rho.ndim == 1 else rho
    return region.x.copy(), float(rho2[region.centre])


def strategy_s1(region: SensoryRegion, rho: np.ndarray):
    """Perception point ``x + delta e_d``; density read in the nearest real
    member cell (the empty space beyond an exit carries no reading)."""
    real = np.flatnonzero(~region.virtual)
    if len(real) == 0:
        return _fallback(region, rho)
    target = region.x + region.delta * region.e_d
    d2 = np.sum((region.points[real] - target) ** 2, axis=1)
    k = real[int(np.argmin(d2))]  # first minimum = lowest linear index among ties
    return target, float(region.values(rho)[k])


def _argmax_member(region: SensoryRegion, rho: np.ndarray) -> int:
    vals = region.values(rho)
    # integer squared offsets make the distance tie-break exact
    off = region.cells - np.asarray(region.centre)
    d2 = off[:, 0] ** 2 + off[:, 1] ** 2
    order = np.lexsort((region.cells[:, 1], region.cells[:, 0], d2, -vals))
    return int(order[0])


def strategy_s2(region: SensoryRegion, rho: np.ndarray):
    if len(region) == 0:
        return _fallback(region, rho)
    k = _argmax_member(region, rho)
    return region.points[k].copy(), float(region.values(rho)[k])


def strategy_s3(region: SensoryRegion, rho: np.ndarray):
    if len(region) == 0:
        return _fallback(region, rho)
    k = _argmax_member(region, rho)
    rho2 = rho.reshape(len(rho), -1) if rho.ndim == 1 else rho
    g = distance_weight(region.delta, min(region.distances[k], region.delta))
    rho_p = (1.0 - g) * rho2[region.centre] + g * region.values(rho)[k]
    return region.points[k].copy(), float(rho_p)


def strategy_s4(region: SensoryRegion, rho: np.ndarray):
    """Angular-weighted centre of mass; ``x_p`` is ``None`` for an empty crowd."""
    if len(region) == 0:
        return _fallback(region, rho)
    w = region.weights
    vals = region.values(rho)
    mass = float(np.sum(vals * w))
    area = float(np.sum(w))
    if area == 0.0:
        return _fallback(region, rho)
    if mass == 0.0:
        return None, 0.0
    x_p = np.sum(region.points * (vals * w)[:, None], axis=0) / mass
    return x_p, mass / area


def interaction_direction(x, x_p, e_d, dx: float, degenerate: str = "avoid") -> np.ndarray:
    """Unit vector from ``x_p`` towards ``x``.

    When the perception point falls inside the observer's own cell the
    direction is undefined; ``degenerate='avoid'`` returns ``-e_d`` and
    ``'none'`` returns ``e_d`` (no interaction).
    """
    e_d = np.asarray(e_d, dtype=float)
    if x_p is None:
        return e_d.copy()
    d = np.asarray(x_p, dtype=float) - np.asarray(x, dtype=float)
    r = math.hypot(d[0], d[1])
    if r < 0.5 * dx:
        return -e_d if degenerate == "avoid" else e_d.copy()
    return -d / r


def walking_direction(e_d, e_i, theta: float, one_d: bool = False) -> np.ndarray:
    """Normalised ``theta e_d + (1 - theta) e_i``; ``e_d`` if the sum cancels."""
    if one_d:
        return np.array([1.0, 0.0])
    e_d = np.asarray(e_d, dtype=float)
    w = theta * e_d + (1.0 - theta) * np.asarray(e_i, dtype=float)
    n = math.hypot(w[0], w[1])
    if n < 1e-12:
        return e_d.copy()
    return w / n


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def _perceive_2d(rho, obstacle, exit_face, e_d, delta, dx, alpha_bar, mu, code, rho_p, x_p):
    n1, n2 = rho.shape
    rmax = 0
    for i in range(n1):
        for j in range(n2):
            if not obstacle[i, j]:
                r = int(math.floor(delta[i, j] / dx + 1e-9))
                if r > rmax:
                    rmax = r
    size = 2 * rmax + 1
    theta_off = np.empty((size, size))
    for a in range(size):
        for b in range(size):
            theta_off[a, b] = math.atan2(b - rmax, a - rmax)
    a_tol = alpha_bar * (1.0 + 1e-12)
    two_pi = 2.0 * math.pi
    for i in range(n1):
        for j in range(n2):
            if obstacle[i, j]:
                rho_p[i, j] = 0.0
                x_p[i, j, 0] = math.nan
                x_p[i, j, 1] = math.nan
                continue
            xi = (i + 0.5) * dx
            xj = (j + 0.5) * dx
            if code == 0:
                rho_p[i, j] = rho[i, j]
                x_p[i, j, 0] = xi
                x_p[i, j, 1] = xj
                continue
            e0 = e_d[i, j, 0]
            e1 = e_d[i, j, 1]
            th_e = math.atan2(e1, e0)
            rc = delta[i, j] / dx
            r2 = rc * rc + 1e-9
            R = int(math.floor(rc + 1e-9))
            p0 = rc * e0
            p1 = rc * e1
            best_val = -1.0
            best_d2 = 0
            best_i = i
            best_j = j
            best_t = 1e300
            msum = 0.0
            wsum = 0.0
            mx0 = 0.0
            mx1 = 0.0
            for di in range(-R, R + 1):
                ii = i + di
                # rows beyond an open exit face are empty, perceivable space
                if ii < 0 or ii >= n1:
                    if di == 0:
                        continue
                    d_out = 0 if ii >= n1 else 1
                    ib = n1 - 1 if ii >= n1 else 0
                else:
                    d_out = -1
                    ib = ii
                rem = r2 - di * di
                if rem < 0.0:
                    continue
                J = int(math.floor(math.sqrt(rem)))
                lo = -J
                hi = J
                # the cone lies in the half-plane dot(offset, e_d) >= 0
                if e1 > 1e-12:
                    b = int(math.ceil(-di * e0 / e1)) - 1
                    if b > lo:
                        lo = b
                elif e1 < -1e-12:
                    b = int(math.floor(-di * e0 / e1)) + 1
                    if b < hi:
                        hi = b
                elif di * e0 < 0.0:
                    lo = 1
                    hi = 0
                for dj in range(lo, hi + 1):
                    jj = j + dj
                    virtual = False
                    if jj < 0 or jj >= n2:
                        if d_out >= 0:
                            continue
                        if not exit_face[ii, n2 - 1 if jj >= n2 else 0, 2 if jj >= n2 else 3]:
                            continue
                        virtual = True
                    elif d_out >= 0:
                        if not exit_face[ib, jj, d_out]:
                            continue
                        virtual = True
                    elif obstacle[ii, jj]:
                        continue
                    d2 = di * di + dj * dj
                    if d2 == 0:
                        alpha = 0.0
                    else:
                        alpha = abs(theta_off[di + rmax, dj + rmax] - th_e)
                        if alpha > math.pi:
                            alpha = two_pi - alpha
                        if alpha > a_tol:
                            continue
                    val = 0.0 if virtual else rho[ii, jj]
                    if code == 1:
                        if virtual:
                            continue
                        t = (di - p0) * (di - p0) + (dj - p1) * (dj - p1)
                        if t < best_t:
                            best_t = t
                            best_val = val
                    elif code == 2 or code == 3:
                        if val > best_val or (val == best_val and d2 < best_d2):
                            best_val = val
                            best_d2 = d2
                            best_i = ii
                            best_j = jj
                    else:
                        ratio = alpha / alpha_bar
                        if ratio > 1.0:
                            ratio = 1.0
                        w = 1.0 - (ratio if mu == 1.0 else ratio**mu)
                        msum += val * w
                        wsum += w
                        mx0 += (ii + 0.5) * dx * val * w
                        mx1 += (jj + 0.5) * dx * val * w
            if code == 1:
                rho_p[i, j] = best_val
                x_p[i, j, 0] = xi + delta[i, j] * e0
                x_p[i, j, 1] = xj + delta[i, j] * e1
            elif code == 2:
                rho_p[i, j] = best_val
                x_p[i, j, 0] = (best_i + 0.5) * dx
                x_p[i, j, 1] = (best_j + 0.5) * dx
            elif code == 3:
                r_p = math.sqrt(best_d2) * dx
                if r_p > delta[i, j]:
                    r_p = delta[i, j]
                g = 1.0 - 0.8 * r_p / delta[i, j]
                rho_p[i, j] = (1.0 - g) * rho[i, j] + g * best_val
                x_p[i, j, 0] = (best_i + 0.5) * dx
                x_p[i, j, 1] = (best_j + 0.5) * dx
            else:
                if wsum == 0.0:
                    rho_p[i, j] = rho[i, j]
                    x_p[i, j, 0] = xi
                    x_p[i, j, 1] = xj
                elif msum == 0.0:
                    rho_p[i, j] = 0.0
                    x_p[i, j, 0] = math.nan
                    x_p[i, j, 1] = math.nan
                else:
                    rho_p[i, j] = msum / wsum
                    x_p[i, j, 0] = mx0 / msum
                    x_p[i, j, 1] = mx1 / msum


@njit(cache=True)
def _perceive_1d(rho, delta, dx, x0, code, periodic, rho_p, x_p):
    n = rho.shape[0]
    for i in range(n):
        xi = x0 + (i + 0.5) * dx
        if code == 0:
            rho_p[i] = rho[i]
            x_p[i] = xi
            continue
        K = int(math.floor(delta[i] / dx + 1e-9))
        if not periodic and i + K > n - 1:
            K = n - 1 - i
        if periodic and K > n - 1:
            K = n - 1
        if code == 1:
            jj = (i + K) % n
            rho_p[i] = rho[jj]
            x_p[i] = xi + delta[i]
        elif code == 2 or code == 3:
            best = -1.0
            bk = 0
            for k in range(K + 1):
                v = rho[(i + k) % n]
                if v > best:
                    best = v
                    bk = k
            x_p[i] = xi + bk * dx
            if code == 2:
                rho_p[i] = best
            else:
                r_p = bk * dx
                if r_p > delta[i]:
                    r_p = delta[i]
                g = 1.0 - 0.8 * r_p / delta[i]
                rho_p[i] = (1.0 - g) * rho[i] + g * best
        else:
            m = 0.0
            mx = 0.0
            for k in range(K + 1):
                v = rho[(i + k) % n]
                m += v
                mx += (xi + k * dx) * v
            rho_p[i] = m / (K + 1)
            x_p[i] = mx / m if m > 0.0 else math.nan


def perceive_1d(rho: np.ndarray, delta: np.ndarray, dx: float, strategy: str,
                periodic: bool = False, x0: float = 0.0):
    """Perceived density and perception points on a 1D row of cells.

    ``x0`` is the left coordinate of the first cell (negative when a ghost
    cell is prepended).
    """
    rho = np.ascontiguousarray(rho, dtype=float)
    delta = np.ascontiguousarray(np.broadcast_to(delta, rho.shape), dtype=float)
    rho_p = np.empty_like(rho)
    x_p = np.empty_like(rho)
    _perceive_1d(rho, delta, float(dx), float(x0), _CODE[strategy], bool(periodic), rho_p, x_p)
    return rho_p, x_p


def exit_faces(domain: WalkingDomain) -> np.ndarray:
    """``(n1, n2, 4)`` mask of cell faces that are open exits."""
    return domain.edge_kind() >= EXIT_BASE


@dataclass
class PerceptionResult:
    rho_p: np.ndarray
    x_p: np.ndarray                # (..., 2); nan where undefined
    e_i: np.ndarray | None = None  # 2D only


def interaction_field(domain: WalkingDomain, x_p: np.ndarray, rho_p: np.ndarray, e_d: np.ndarray,
                      degenerate: str = "avoid") -> np.ndarray:
    """Field version of :func:`interaction_direction`.

    Cells that perceive no crowd at all (``rho_p == 0``) do not interact and
    get ``e_i = e_d``.
    """
    g = domain.grid
    X1, X2 = g.centres()
    d0 = x_p[..., 0] - X1
    d1 = x_p[..., 1] - X2
    r = np.hypot(d0, d1)
    undefined = ~np.isfinite(r)
    degenerate_cells = undefined | (r < 0.5 * g.dx)
    safe = np.where(degenerate_cells, 1.0, r)
    e_i = np.stack([-d0 / safe, -d1 / safe], axis=-1)
    sign = -1.0 if degenerate == "avoid" else 1.0
    e_i = np.where(degenerate_cells[..., None], sign * e_d, e_i)
    e_i = np.where(((rho_p == 0.0) | undefined)[..., None], e_d, e_i)
    e_i[domain.obstacle] = 0.0
    return e_i


def perceive(domain: WalkingDomain, rho: np.ndarray, e_d: np.ndarray, delta: np.ndarray,
             config: PerceptionConfig) -> PerceptionResult:
    """Evaluate the configured strategy on every free cell of ``domain``."""
    g = domain.grid
    if g.is_1d:
        r = np.asarray(rho, dtype=float).reshape(g.n1)
        rho_p, xp = perceive_1d(r, np.asarray(delta, dtype=float).reshape(g.n1), g.dx, config.strategy)
        x_p = np.stack([xp, np.full_like(xp, 0.5 * g.dx)], axis=-1)
        return PerceptionResult(rho_p, x_p, None)
    rho = np.ascontiguousarray(rho, dtype=float)
    rho_p = np.empty_like(rho)
    x_p = np.empty(rho.shape + (2,))
    _perceive_2d(rho, np.ascontiguousarray(domain.obstacle), exit_faces(domain),
                 np.ascontiguousarray(e_d, dtype=float),
                 np.ascontiguousarray(delta, dtype=float), g.dx, config.alpha_bar, float(config.mu),
                 config.code, rho_p, x_p)
    e_i = interaction_field(domain, x_p, rho_p, e_d, config.degenerate)
    return PerceptionResult(rho_p, x_p, e_i)


def walking_direction_field(e_d: np.ndarray, e_i: np.ndarray, theta: float) -> np.ndarray:
    w = theta * e_d + (1.0 - theta) * e_i
    n = np.hypot(w[..., 0], w[..., 1])
    small = n < 1e-12
    out = w / np.where(small, 1.0, n)[..., None]
    return np.where(small[..., None], e_d, out)
