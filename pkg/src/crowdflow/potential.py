"""Desired-direction field from a harmonic potential.

``u`` solves the 5-point Laplace equation on free cells with ``u = 1`` on
cells next to an exit, ``u = 0`` on cells next to an inlet, and mirror
(zero normal derivative) conditions on walls and obstacle faces.  The
desired direction is the normalised gradient of ``u``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from numba import njit

from .geometry import EXIT_BASE, FREE, WalkingDomain


class PotentialError(RuntimeError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


@dataclass
class PotentialField:
    u: np.ndarray
    e_d: np.ndarray
    iterations: int
    residual: float


@njit(cache=True)
def _sor(u, free, fixed, omega, tol, max_iters):
    n1, n2 = u.shape
    res = 0.0
    for it in range(1, max_iters + 1):
        res = 0.0
        for i in range(n1):
            for j in range(n2):
                if not free[i, j] or fixed[i, j]:
                    continue
                s = 0.0
                k = 0
                if i > 0 and free[i - 1, j]:
                    s += u[i - 1, j]
                    k += 1
                if i < n1 - 1 and free[i + 1, j]:
                    s += u[i + 1, j]
                    k += 1
                if j > 0 and free[i, j - 1]:
                    s += u[i, j - 1]
                    k += 1
                if j < n2 - 1 and free[i, j + 1]:
                    s += u[i, j + 1]
                    k += 1
                if k == 0:
                    continue
                r = s - k * u[i, j]
                if abs(r) > res:
                    res = abs(r)
                u[i, j] += omega * r / k
        if res < tol:
            return it, res
    return max_iters + 1, res


def laplace_residual(u: np.ndarray, domain: WalkingDomain, fixed: np.ndarray) -> np.ndarray:
    """Mirror-condition 5-point residual on free, non-Dirichlet cells."""
    free = domain.free
    pad_u = np.pad(u, 1)
    pad_f = np.pad(free, 1)
    s = np.zeros_like(u)
    k = np.zeros_like(u)
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb_f = pad_f[1 + di:1 + di + u.shape[0], 1 + dj:1 + dj + u.shape[1]]
        nb_u = pad_u[1 + di:1 + di + u.shape[0], 1 + dj:1 + dj + u.shape[1]]
        s += np.where(nb_f, nb_u, 0.0)
        k += nb_f
    r = s - k * u
    r[~free | fixed] = 0.0
    return r


def dirichlet_masks(domain: WalkingDomain) -> tuple[np.ndarray, np.ndarray]:
    exit_cells = domain.segment_mask("exit")
    inlet_cells = domain.segment_mask("inlet") & ~exit_cells
    return exit_cells, inlet_cells


def solve_potential(domain: WalkingDomain, tol: float = 1e-8, max_iters: int = 100_000,
                    omega: float = 1.8) -> PotentialField:
    exit_cells, inlet_cells = dirichlet_masks(domain)
    if not exit_cells.any():
        raise PotentialError("no exit: the potential needs at least one exit cell")
    fixed = exit_cells | inlet_cells
    u = np.where(exit_cells, 1.0, 0.0)
    u[~domain.free] = 0.0
    free = np.ascontiguousarray(domain.free)
    fixed = np.ascontiguousarray(fixed)
    its = 0
    while True:
        # the sweep measures residuals mid-update; confirm on the final field
        n, _ = _sor(u, free, fixed, float(omega), float(tol), int(max_iters - its))
        its += min(n, max_iters - its)
        res = float(np.abs(laplace_residual(u, domain, fixed)).max())
        if res <= tol:
            break
        if its >= max_iters:
            raise PotentialError(f"SOR did not converge in {max_iters} iterations (residual {res:.3e})", res)
    return PotentialField(u, gradient_direction(u, domain), its, res)


def gradient_direction(u: np.ndarray, domain: WalkingDomain) -> np.ndarray:
    """Unit gradient of ``u`` on free cells; zeros on obstacles.

    Central differences where both neighbours are free, one-sided where only
    one is.  A component pointing into a wall or obstacle face is dropped,
    so the direction slides along walls; exit faces stay open.  Cells with a
    vanishing gradient copy the direction of the nearest cell that has one
    (breadth-first over free neighbours).
    """
    g = domain.grid
    free = domain.free
    edge = domain.edge_kind()
    grad = np.zeros(g.shape + (2,))
    for axis in (0, 1):
        n = g.shape[axis]
        if n == 1:
            continue
        plus = np.zeros(g.shape, dtype=bool)
        minus = np.zeros(g.shape, dtype=bool)
        up = np.zeros(g.shape)
        um = np.zeros(g.shape)
        sl_hi = [slice(None)] * 2
        sl_lo = [slice(None)] * 2
        sl_hi[axis] = slice(0, n - 1)
        sl_lo[axis] = slice(1, n)
        plus[tuple(sl_hi)] = free[tuple(sl_lo)]
        up[tuple(sl_hi)] = u[tuple(sl_lo)]
        minus[tuple(sl_lo)] = free[tuple(sl_hi)]
        um[tuple(sl_lo)] = u[tuple(sl_hi)]
        d = np.where(plus & minus, (up - um) / (2 * g.dx),
                     np.where(plus, (up - u) / g.dx, np.where(minus, (u - um) / g.dx, 0.0)))
        open_hi = (edge[..., 2 * axis] == FREE) | (edge[..., 2 * axis] >= EXIT_BASE)
        open_lo = (edge[..., 2 * axis + 1] == FREE) | (edge[..., 2 * axis + 1] >= EXIT_BASE)
        d = np.where(((d > 0) & ~open_hi) | ((d < 0) & ~open_lo), 0.0, d)
        grad[..., axis] = d
    norm = np.hypot(grad[..., 0], grad[..., 1])
    good = free & (norm >= 1e-12)
    e_d = np.zeros_like(grad)
    e_d[good] = grad[good] / norm[good][:, None]
    missing = free & ~good
    if missing.any():
        if not good.any():
            e_d[free] = (1.0, 0.0)
        else:
            _fill_nearest(e_d, good, free)
    return e_d


def _fill_nearest(e_d: np.ndarray, good: np.ndarray, free: np.ndarray) -> None:
    n1, n2 = good.shape
    done = good.copy()
    queue = deque(zip(*np.nonzero(good)))
    while queue:
        i, j = queue.popleft()
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ii, jj = i + di, j + dj
            if 0 <= ii < n1 and 0 <= jj < n2 and free[ii, jj] and not done[ii, jj]:
                e_d[ii, jj] = e_d[i, j]
                done[ii, jj] = True
                queue.append((ii, jj))
    # cells in components with no usable gradient at all
    rest = free & ~done
    e_d[rest] = (1.0, 0.0)
