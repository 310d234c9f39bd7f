"""Independent reference implementations used by the tests.

Each oracle is written from the model definitions with plain loops or dense
numpy, without calling the code under test.
"""
import math

import numpy as np
from scipy.optimize import brentq

from crowdflow.geometry import BoundarySegment, Grid, WalkingDomain
from crowdflow.perception import PerceptionConfig, perceive



def brute_members(obstacle, exits, i, j, e, delta, dx, alpha_bar):
    """Exhaustive scan of every cell (plus the ring just outside the grid).

    ``exits[side]`` holds the boundary cells whose outer face on that side is
    open; the cell straight beyond such a face counts as empty space.
    Returns a list of (ii, jj, distance, angle, is_virtual).
    """
    n1, n2 = obstacle.shape
    x = np.array([(i + 0.5) * dx, (j + 0.5) * dx])
    R = int(delta / dx) + 2
    out = []
    for ii in range(-R, n1 + R):
        for jj in range(-R, n2 + R):
            inside = 0 <= ii < n1 and 0 <= jj < n2
            if inside:
                if obstacle[ii, jj]:
                    continue
                virt = False
            else:
                if not (0 <= ii < n1) and not (0 <= jj < n2):
                    continue
                if ii >= n1:
                    ok = (n1 - 1, jj) in exits["right"]
                elif ii < 0:
                    ok = (0, jj) in exits["left"]
                elif jj >= n2:
                    ok = (ii, n2 - 1) in exits["top"]
                else:
                    ok = (ii, 0) in exits["bottom"]
                if not ok:
                    continue
                virt = True
            p = np.array([(ii + 0.5) * dx, (jj + 0.5) * dx])
            off = p - x
            d = math.hypot(*off)
            if d > delta * (1 + 1e-12):
                continue
            if d == 0:
                out.append((ii, jj, 0.0, 0.0, False))
                continue
            a = math.acos(max(-1.0, min(1.0, float(off @ e) / d)))
            if a <= alpha_bar:
                out.append((ii, jj, d, a, virt))
    return out


def brute_strategy(code, members, rho, i, j, e, delta, dx, alpha_bar, mu=1.0):
    val = lambda m: 0.0 if m[4] else rho[m[0], m[1]]
    x = np.array([(i + 0.5) * dx, (j + 0.5) * dx])
    if code == "s1":
        target = x + delta * e
        real = [m for m in members if not m[4]]
        m = min(real, key=lambda m: (((m[0] + 0.5) * dx - target[0]) ** 2 + ((m[1] + 0.5) * dx - target[1]) ** 2))
        return val(m)
    if code in ("s2", "s3"):
        m = sorted(members, key=lambda m: (-val(m), (m[0] - i) ** 2 + (m[1] - j) ** 2, m[0], m[1]))[0]
        if code == "s2":
            return val(m), m
        g = 1 - 0.8 * min(m[2], delta) / delta
        return (1 - g) * rho[i, j] + g * val(m), m
    w = np.array([1 - (m[3] / alpha_bar) ** mu for m in members])
    v = np.array([val(m) for m in members])
    pts = np.array([[(m[0] + 0.5) * dx, (m[1] + 0.5) * dx] for m in members])
    mass = float(np.sum(w * v))
    if mass == 0:
        return 0.0, None
    return mass / float(np.sum(w)), (pts * (w * v)[:, None]).sum(0) / mass


def random_perception_instance(rng):
    n1, n2 = rng.integers(4, 9), rng.integers(4, 9)
    dx = 1.0 / 8
    g = Grid(int(n1), int(n2), dx)
    L1, L2 = g.length1, g.length2
    segs = [BoundarySegment("exit", "right", 0.0, L2 * rng.uniform(0.3, 1.0), "e1")]
    if rng.random() < 0.5:
        segs.append(BoundarySegment("exit", "top", L1 * rng.uniform(0.0, 0.5), L1, "e2"))
    obstacle = rng.random((n1, n2)) < 0.15
    dom = WalkingDomain(g, obstacle, segs)
    rho = rng.random((n1, n2)) * (rng.random((n1, n2)) < 0.7)
    rho[obstacle] = 0.0
    if rng.random() < 0.3:
        rho = np.round(rho * 4) / 4  # plenty of ties
    phi = rng.uniform(0, 2 * math.pi, (n1, n2))
    e_d = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    delta = rng.uniform(0.15, 0.6, (n1, n2))
    return dom, rho, e_d, delta


def exit_sets(dom):
    out = {"left": set(), "right": set(), "top": set(), "bottom": set()}
    for s in dom.exits:
        out[s.edge] |= set(s.cells(dom.grid))
    return out


def perception_oracle_worst_error(n_fields, seed=1234):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_fields):
        dom, rho, e_d, delta = random_perception_instance(rng)
        ab_deg = float(rng.choice([30.0, 60.0, 85.0]))
        ab = math.radians(ab_deg)
        ex = exit_sets(dom)
        for code in ("s2", "s3", "s4"):
            res = perceive(dom, rho, e_d, delta, PerceptionConfig(strategy=code, alpha_bar_deg=ab_deg))
            for i, j in zip(*np.nonzero(dom.free)):
                mem = brute_members(dom.obstacle, ex, i, j, e_d[i, j], delta[i, j], dom.grid.dx, ab)
                want, pt = brute_strategy(code, mem, rho, i, j, e_d[i, j], delta[i, j], dom.grid.dx, ab)
                worst = max(worst, abs(res.rho_p[i, j] - want))
                if code in ("s2", "s3"):
                    xp = ((pt[0] + 0.5) * dom.grid.dx, (pt[1] + 0.5) * dom.grid.dx)
                    worst = max(worst, abs(res.x_p[i, j, 0] - xp[0]), abs(res.x_p[i, j, 1] - xp[1]))
                elif pt is not None:
                    worst = max(worst, float(np.max(np.abs(res.x_p[i, j] - pt))))
                else:
                    assert np.isnan(res.x_p[i, j]).all()
    return worst




# ------------------------------------------------------------- 1D fluxes

def kladek(rho, gamma=0.273):
    """Nondimensional speed law written out directly."""
    rho = np.asarray(rho, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        v = 1.0 - np.exp(-gamma * (1.0 / rho - 1.0))
    return np.where(rho > 0, v, 1.0)


def gff_brute(rl, rr, pl, pr, n_eta=1_000_000, gamma=0.273):
    """Entropic flux by exhaustive sampling of eta on n_eta + 1 points."""
    eta = np.linspace(0.0, 1.0, n_eta + 1)
    r = rl + eta * (rr - rl)
    p = pl + eta * (pr - pl)
    q = r * kladek(p, gamma)
    return float(q.min() if rl <= rr else q.max())


def capacity_density(gamma=0.273):
    """Root of d(rho v)/d rho for the nondimensional law."""
    dq = lambda r: 1 - math.exp(-gamma * (1 / r - 1)) - gamma / r * math.exp(-gamma * (1 / r - 1))
    return brentq(dq, 1e-3, 1.0, xtol=1e-16, rtol=4 * np.finfo(float).eps)


def godunov_lwr_flux(rl, rr, gamma=0.273):
    """Textbook demand/supply Godunov flux for the concave flow rho v(rho)."""
    rc = capacity_density(gamma)
    q = lambda r: r * (1.0 - math.exp(-gamma * (1.0 / r - 1.0))) if r > 0 else 0.0
    demand = q(min(rl, rc))
    supply = q(max(rr, rc))
    return min(demand, supply)


def godunov_lwr_run(rho0, dts, dx, inflow=0.0, gamma=0.273):
    """Plain Godunov march with inlet ghost and zero-gradient outlet."""
    rho = np.array(rho0, dtype=float)
    for dt in dts:
        ext = np.concatenate(([inflow], rho, rho[-1:]))
        f = np.array([godunov_lwr_flux(ext[k], ext[k + 1], gamma) for k in range(len(ext) - 1)])
        rho = rho - dt / dx * (f[1:] - f[:-1])
    return rho


# ------------------------------------------------------------- 2D transport

def overlap_push(rho, disp, dx):
    """Rectangle-intersection transport of every cell on an open plane.

    Each cell square translated by ``disp[i, j]`` deposits mass in
    proportion to its intersection area with each destination cell.
    Returns a dict ``(i, j) -> mass / dx^2`` (keys may lie off-grid).
    """
    out = {}
    n1, n2 = rho.shape
    for i in range(n1):
        for j in range(n2):
            if rho[i, j] == 0:
                continue
            x0 = i * dx + disp[i, j, 0]
            y0 = j * dx + disp[i, j, 1]
            for a in range(int(math.floor(x0 / dx)), int(math.floor((x0 + dx) / dx)) + 1):
                ox = min(x0 + dx, (a + 1) * dx) - max(x0, a * dx)
                if ox <= 0:
                    continue
                for b in range(int(math.floor(y0 / dx)), int(math.floor((y0 + dx) / dx)) + 1):
                    oy = min(y0 + dx, (b + 1) * dx) - max(y0, b * dx)
                    if oy <= 0:
                        continue
                    out[(a, b)] = out.get((a, b), 0.0) + rho[i, j] * ox * oy / dx**2
    return out


# ------------------------------------------------------------- oscillator

def sdof_free_energy(m, k, s0, v0):
    """Mechanical energy of an undamped oscillator (conserved exactly)."""
    return 0.5 * m * v0**2 + 0.5 * k * s0**2
