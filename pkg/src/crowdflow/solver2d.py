"""2D crowd transport by push-forward of cell-wise translations.

Each cell's square is translated by ``v dt`` and its mass shared among the
(at most four) cells it overlaps, in proportion to the overlap areas.  The
velocity field comes from perception (magnitude and interaction direction)
and the potential (desired direction).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from .fundamental import FundamentalDiagram
from .geometry import EXIT_BASE, INLET, OBSTACLE, WALL, WalkingDomain, visual_depth_field
from .perception import PerceptionConfig, perceive, walking_direction_field
from .potential import PotentialField, solve_potential

_CFL_SLACK = 1e-12


class CFLError(ValueError):
    pass


class SolverAbort(RuntimeError):
    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state


@njit(cache=True)
def _transfers(rho, vx, vy, obstacle, edge, dt, dx, dest, amount, exited):
    """Split every cell's mass into (at most four) overlap shares.

    ``dest[i, j, k]`` is the linear index of the k-th destination, -1 when the
    share is empty, and ``-2 - e`` when it leaves through exit ``e``.
    """
    n1, n2 = rho.shape
    di_ = np.empty(4, np.int64)
    dj_ = np.empty(4, np.int64)
    w_ = np.empty(4)
    ok = np.empty(4, np.bool_)
    sink = np.empty(4, np.int64)
    for i in range(n1):
        for j in range(n2):
            for k in range(4):
                dest[i, j, k] = -1
                amount[i, j, k] = 0.0
            m = rho[i, j]
            if obstacle[i, j] or m == 0.0:
                continue
            ax = abs(vx[i, j]) * dt / dx
            ay = abs(vy[i, j]) * dt / dx
            sx = 1 if vx[i, j] > 0.0 else -1
            sy = 1 if vy[i, j] > 0.0 else -1
            ex = edge[i, j, 0] if sx > 0 else edge[i, j, 1]
            ey = edge[i, j, 2] if sy > 0 else edge[i, j, 3]
            # walls (and inlet faces) stop the normal component
            if ex == WALL or ex == INLET:
                ax = 0.0
            if ey == WALL or ey == INLET:
                ay = 0.0
            if ax > 1.0:
                ax = 1.0
            if ay > 1.0:
                ay = 1.0
            di_[0] = 0
            dj_[0] = 0
            w_[0] = (1.0 - ax) * (1.0 - ay)
            di_[1] = sx
            dj_[1] = 0
            w_[1] = ax * (1.0 - ay)
            di_[2] = 0
            dj_[2] = sy
            w_[2] = (1.0 - ax) * ay
            di_[3] = sx
            dj_[3] = sy
            w_[3] = ax * ay
            total = 0.0
            dropped = False
            for k in range(4):
                ii = i + di_[k]
                jj = j + dj_[k]
                sink[k] = -1
                if w_[k] == 0.0:
                    ok[k] = False
                    continue
                if 0 <= ii < n1 and 0 <= jj < n2:
                    ok[k] = not obstacle[ii, jj]
                elif not (0 <= ii < n1):
                    ok[k] = ex >= EXIT_BASE
                    sink[k] = ex - EXIT_BASE
                else:
                    ok[k] = ey >= EXIT_BASE
                    sink[k] = ey - EXIT_BASE
                if ok[k]:
                    total += w_[k]
                else:
                    dropped = True
            if total == 0.0:
                dest[i, j, 0] = i * n2 + j
                amount[i, j, 0] = m
                continue
            for k in range(4):
                if not ok[k]:
                    continue
                w = w_[k] / total if dropped else w_[k]
                if sink[k] >= 0:
                    exited[sink[k]] += m * w
                    dest[i, j, k] = -2 - sink[k]
                else:
                    dest[i, j, k] = (i + di_[k]) * n2 + j + dj_[k]
                    amount[i, j, k] = m * w


@njit(cache=True)
def _accumulate(dest, amount, lam, out):
    """Deposit shares; a fraction ``1 - lam[d]`` of what is sent to a cell
    ``d`` from elsewhere is refused and stays in the sending cell."""
    n1, n2 = out.shape
    flat = out.reshape(-1)
    lamf = lam.reshape(-1)
    for i in range(n1):
        for j in range(n2):
            src = i * n2 + j
            for k in range(4):
                d = dest[i, j, k]
                if d < 0:
                    continue
                a = amount[i, j, k]
                if d == src or lamf[d] == 1.0:
                    flat[d] += a
                else:
                    taken = a * lamf[d]
                    flat[d] += taken
                    flat[src] += a - taken


@njit(cache=True)
def _incoming(dest, amount, lam, n1, n2):
    """Accepted and requested inflow from other cells, per destination."""
    acc = np.zeros(n1 * n2)
    req = np.zeros(n1 * n2)
    for i in range(n1):
        for j in range(n2):
            src = i * n2 + j
            for k in range(4):
                d = dest[i, j, k]
                if d < 0 or d == src:
                    continue
                req[d] += amount[i, j, k]
                acc[d] += amount[i, j, k] * lam.reshape(-1)[d]
    return acc, req


def _limit(dest, amount, shape, cap, max_rounds=10_000):
    """Per-cell acceptance ratios keeping every cell at or below ``cap``.

    Refused mass stays upstream, which can push the sender over the cap in
    turn; the ratios are lowered until no cell exceeds it.  Ratios only
    decrease, and refusing everything leaves the old (admissible) field.
    Targets aim a hair below the cap so that summation round-off cannot
    lift a cell above it.
    """
    n1, n2 = shape
    lam = np.ones(shape)
    out = np.zeros(shape)
    _accumulate(dest, amount, lam, out)
    aim = cap * (1.0 - 1e-14)
    rounds = 0
    while True:
        over = out > cap
        if not over.any():
            return lam, out
        rounds += 1
        if rounds > max_rounds:
            # refuse all inflow of the stubborn cells and stop
            lam[over] = 0.0
            out = np.zeros(shape)
            _accumulate(dest, amount, lam, out)
            return lam, out
        acc, req = _incoming(dest, amount, lam, n1, n2)
        acc = acc.reshape(shape)
        req = req.reshape(shape)
        base = out - acc
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            target = np.where(req > 0, np.clip((aim - base) / req, 0.0, 1.0), 1.0)
        lam = np.where(over, np.minimum(lam, target), lam)
        out = np.zeros(shape)
        _accumulate(dest, amount, lam, out)


def push_forward(rho: np.ndarray, v: np.ndarray, dt: float, domain: WalkingDomain,
                 check_cfl: bool = True, capacity: float | None = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Transport ``rho`` by the piecewise translation ``x + v dt``.

    With ``capacity`` set, a cell refuses the part of its inflow that would
    lift it above the capacity (or above the current maximum, if larger) and
    the refused mass stays where it was.  When no cell would overflow the
    result is the plain overlap split.

    Returns the new density and the mass (density times cell count, i.e. not
    yet multiplied by the cell area) that left through each exit.
    """
    g = domain.grid
    speed = np.hypot(v[..., 0], v[..., 1])
    courant = float(speed.max()) * dt / g.dx if speed.size else 0.0
    if check_cfl and courant > 1.0 + _CFL_SLACK:
        raise CFLError(f"CFL condition violated: max |v| dt / dx = {courant:.6g} > 1")
    exited = np.zeros(max(len(domain.exits), 1))
    dest = np.empty(g.shape + (4,), dtype=np.int64)
    amount = np.empty(g.shape + (4,))
    _transfers(np.ascontiguousarray(rho, dtype=float), np.ascontiguousarray(v[..., 0]),
               np.ascontiguousarray(v[..., 1]), np.ascontiguousarray(domain.obstacle),
               domain.edge_kind(), float(dt), g.dx, dest, amount, exited)
    if capacity is None:
        out = np.zeros(g.shape)
        _accumulate(dest, amount, np.ones(g.shape), out)
    else:
        cap = max(float(capacity), float(np.max(rho)) if rho.size else 0.0)
        _, out = _limit(dest, amount, g.shape, cap)
    return out, exited[: len(domain.exits)]


@dataclass
class Model2D:
    domain: WalkingDomain
    fd: FundamentalDiagram
    perception: PerceptionConfig
    inflow: Callable[[float], float] = lambda t: 0.0
    cfl: float = 0.9
    potential: PotentialField | None = None
    visual_depth: np.ndarray | None = None
    dt_max: float | None = None

    def __post_init__(self):
        if not 0.0 < self.cfl <= 1.0:
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.potential is None:
            self.potential = solve_potential(self.domain)
        if self.visual_depth is None:
            self.visual_depth = visual_depth_field(self.domain, self.potential.e_d)
        if self.dt_max is None:
            self.dt_max = self.cfl * self.domain.grid.dx / self.fd.v_max
        self.inlet_cells = self.domain.segment_mask("inlet")

    @property
    def e_d(self) -> np.ndarray:
        return self.potential.e_d


@dataclass
class State2D:
    rho: np.ndarray
    t: float = 0.0
    dt: float = 0.0
    v: np.ndarray | None = None
    rho_p: np.ndarray | None = None
    x_p: np.ndarray | None = None
    e_i: np.ndarray | None = None
    speed_history: deque = field(default_factory=deque)
    exited: np.ndarray | None = None      # cumulative mass per exit
    inlet_mass: float = 0.0               # cumulative mass injected
    initial_mass: float = 0.0


@dataclass
class StepInfo2D:
    dt: float
    exited: np.ndarray   # mass through each exit during the step
    inlet_mass: float


def assemble_velocity(model: Model2D, rho: np.ndarray, speed_delayed: np.ndarray | None = None):
    """Walking velocity per cell; returns ``(v, perception_result)``."""
    fd = model.fd
    dom = model.domain
    cfg = model.perception
    if speed_delayed is None:
        speed_delayed = np.where(dom.free, fd.speed(np.clip(rho, 0.0, fd.rho_max)), 0.0)
    delta = cfg.sensory_law().depth(model.visual_depth, speed_delayed, fd.v_max)
    res = perceive(dom, rho, model.e_d, delta, cfg)
    e_v = walking_direction_field(model.e_d, res.e_i, cfg.theta)
    mag = fd.speed(np.clip(res.rho_p, 0.0, fd.rho_max))
    v = mag[..., None] * e_v
    v[dom.obstacle] = 0.0
    return v, res


def initial_state(model: Model2D, rho0) -> State2D:
    g = model.domain.grid
    rho = np.array(np.broadcast_to(rho0, g.shape), dtype=float)
    rho[model.domain.obstacle] = 0.0
    rho[model.inlet_cells] = model.inflow(0.0)
    return State2D(rho, exited=np.zeros(len(model.domain.exits)),
                   initial_mass=float(rho.sum() * g.cell_measure))


def step2d(model: Model2D, state: State2D, dt_cap: float | None = None) -> tuple[State2D, StepInfo2D]:
    g = model.domain.grid
    k = model.perception.tau1_steps
    delayed = state.speed_history[0] if k > 0 and len(state.speed_history) >= k else None
    v, res = assemble_velocity(model, state.rho, delayed)
    vmax = float(np.hypot(v[..., 0], v[..., 1]).max())
    dt = model.cfl * g.dx / vmax if vmax > 0 else model.dt_max
    dt = min(dt, model.dt_max)
    if dt_cap is not None:
        dt = min(dt, dt_cap)
    rho_new, out = push_forward(state.rho, v, dt, model.domain)
    exited = out * g.cell_measure
    t_new = state.t + dt
    prescribed = float(model.inflow(t_new))
    added = float(np.sum(prescribed - rho_new[model.inlet_cells]) * g.cell_measure)
    rho_new[model.inlet_cells] = prescribed
    if not np.all(np.isfinite(rho_new)):
        raise SolverAbort(f"non-finite density at t={t_new:.6g}", state)
    if np.any(rho_new < 0.0):
        raise SolverAbort(f"negative density {rho_new.min():.3e} at t={t_new:.6g}", state)
    hist = deque(state.speed_history, maxlen=max(k, 1))
    if k > 0:
        hist.append(np.hypot(v[..., 0], v[..., 1]))
    new = State2D(rho_new, t_new, dt, v, res.rho_p, res.x_p, res.e_i, hist,
                  state.exited + exited, state.inlet_mass + added, state.initial_mass)
    return new, StepInfo2D(dt, exited, added)


def mass_audit(state: State2D, cell_measure: float) -> float:
    """``initial + injected - (current + exited)``; zero up to round-off."""
    current = float(state.rho.sum() * cell_measure)
    return state.initial_mass + state.inlet_mass - current - float(state.exited.sum())


def run(model: Model2D, state: State2D, t_end: float,
        callback: Callable[[State2D, StepInfo2D], None] | None = None,
        max_steps: int = 10_000_000) -> State2D:
    for _ in range(max_steps):
        if state.t >= t_end - 1e-14:
            return state
        state, info = step2d(model, state, dt_cap=t_end - state.t)
        if callback is not None:
            callback(state, info)
    raise SolverAbort(f"step budget exhausted before t_end={t_end}", state)
