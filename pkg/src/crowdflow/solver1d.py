"""Godunov finite-volume solver for the 1D non-local conservation law.

    rho_t + (rho v)_x = 0,    v = v(rho_p) g

All quantities are nondimensional (length by L, density by rho_max, speed by
v_max).  The inlet is a ghost cell carrying the boundary density; the outlet
ghost copies the last cell (free outflow).
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from numba import njit

from .fundamental import FundamentalDiagram, kladek_speed, kladek_speed_derivative
from .perception import PerceptionConfig, perceive_1d

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class SolverAbort(RuntimeError):
    """Raised when a step produces invalid values; carries the last valid state."""

    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state


# ------------------------------------------------------------ interface terms


def convection_velocity(rho_l, rho_r, rp_l, rp_r, fd: FundamentalDiagram, eps: float = 1e-4):
    """Discrete convection velocity at the interface between two cells.

    ``v(rp_mid) + rho_mid v'(rp_mid) d_rp / d_rho`` with midpoint interpolants
    and half-cell differences; ``|d_rho|`` is floored at ``eps`` keeping its
    sign (zero counts as positive).
    """
    rho_l, rho_r, rp_l, rp_r = (np.asarray(a, dtype=float) for a in (rho_l, rho_r, rp_l, rp_r))
    rho_m = 0.5 * (rho_l + rho_r)
    rp_m = 0.5 * (rp_l + rp_r)
    d_rho = rho_m - rho_l
    d_rp = rp_m - rp_l
    d_rho = np.where(np.abs(d_rho) <= eps, np.where(d_rho < 0.0, -eps, eps), d_rho)
    vc = fd.speed(rp_m) + rho_m * fd.speed_derivative(rp_m) * d_rp / d_rho
    return float(vc) if vc.ndim == 0 else vc


@njit(cache=True)
def _q(eta, rl, rr, pl, pr, gl, gr, vm, rm, gam):
    if eta <= 0.0:
        return rl * kladek_speed(pl, vm, rm, gam) * gl
    if eta >= 1.0:
        return rr * kladek_speed(pr, vm, rm, gam) * gr
    r = rl + eta * (rr - rl)
    p = pl + eta * (pr - pl)
    g = gl + eta * (gr - gl)
    return r * kladek_speed(p, vm, rm, gam) * g


@njit(cache=True)
def _gff(rl, rr, pl, pr, gl, gr, vm, rm, gam, n_eta, refine, out):
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    for k in range(rl.shape[0]):
        a_l, a_r, b_l, b_r, c_l, c_r = rl[k], rr[k], pl[k], pr[k], gl[k], gr[k]
        sgn = 1.0 if a_l <= a_r else -1.0  # minimise sgn * q
        best = sgn * _q(0.0, a_l, a_r, b_l, b_r, c_l, c_r, vm, rm, gam)
        bi = 0
        for s in range(1, n_eta + 1):
            val = sgn * _q(s / n_eta, a_l, a_r, b_l, b_r, c_l, c_r, vm, rm, gam)
            if val < best:
                best = val
                bi = s
        if refine:
            # the extremum may also sit between an end point and its neighbour
            lo = max(bi - 1, 0) / n_eta
            hi = min(bi + 1, n_eta) / n_eta
            c = hi - inv_phi * (hi - lo)
            d = lo + inv_phi * (hi - lo)
            fc = sgn * _q(c, a_l, a_r, b_l, b_r, c_l, c_r, vm, rm, gam)
            fd_ = sgn * _q(d, a_l, a_r, b_l, b_r, c_l, c_r, vm, rm, gam)
            for _ in range(80):
                if hi - lo < 1e-15:
                    break
                if fc < fd_:
                    hi = d
                    d = c
                    fd_ = fc
                    c = hi - inv_phi * (hi - lo)
                    fc = sgn * _q(c, a_l, a_r, b_l, b_r, c_l, c_r, vm, rm, gam)
                else:
                    lo = c
                    c = d
                    fc = fd_
                    d = lo + inv_phi * (hi - lo)
                    fd_ = sgn * _q(d, a_l, a_r, b_l, b_r, c_l, c_r, vm, rm, gam)
            # keep a sampled value unless refinement beats it by more than
            # rounding noise, so exact end-point extrema stay exact
            noise = 4.0 * 2.220446049250313e-16 * abs(best) if bi == 0 or bi == n_eta else 0.0
            if fc < best - noise:
                best = fc
            if fd_ < best - noise:
                best = fd_
        out[k] = sgn * best


def interface_fluxes(rho_l, rho_r, rp_l, rp_r, fd: FundamentalDiagram, n_eta: int = 64,
                     g_l=1.0, g_r=1.0, refine: bool = True) -> np.ndarray:
    """Entropic interface flux, vectorised over interfaces.

    ``min`` over eta in [0, 1] of ``q(rho^eta, rho_p^eta)`` when
    ``rho_l <= rho_r``, ``max`` otherwise, with linear interpolants of
    ``rho``, ``rho_p`` (and the motion factor ``g``).  The extremum is
    located on ``n_eta + 1`` equispaced samples and, when it is interior,
    polished by golden-section search between the neighbouring samples
    (the end points included).
    """
    if n_eta < 2:
        raise ValueError("n_eta must be at least 2")
    arrs = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (rho_l, rho_r, rp_l, rp_r, g_l, g_r)))
    shape = arrs[0].shape
    flat = [np.ascontiguousarray(a.reshape(-1)) for a in arrs]
    out = np.empty(flat[0].shape[0])
    _gff(*flat, fd.v_max, fd.rho_max, fd.gamma, int(n_eta), bool(refine), out)
    return out.reshape(shape)


def interface_flux(rho_l, rho_r, rp_l, rp_r, fd: FundamentalDiagram, n_eta: int = 64,
                   g_l: float = 1.0, g_r: float = 1.0, refine: bool = True) -> float:
    return float(interface_fluxes(rho_l, rho_r, rp_l, rp_r, fd, n_eta, g_l, g_r, refine))


# ----------------------------------------------------------------- the model


@dataclass
class Model1D:
    """Static description of a 1D run.

    ``visual_depth`` is the free depth ahead of every cell (defaults to the
    distance to the outlet).  ``inflow`` maps time to the inlet density.
    """

    n: int
    fd: FundamentalDiagram
    perception: PerceptionConfig
    inflow: Callable[[float], float] = lambda t: 0.0
    length: float = 1.0
    cfl: float = 0.9
    n_eta: int = 64
    dt_max: float | None = None
    periodic: bool = False
    visual_depth: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.cfl <= 1.0:
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.visual_depth is None:
            self.visual_depth = self.length - self.x
        self.visual_depth = np.asarray(self.visual_depth, dtype=float)
        if self.dt_max is None:
            self.dt_max = self.cfl * self.dx / self.fd.v_max

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.dx


@dataclass
class State1D:
    rho: np.ndarray
    t: float = 0.0
    dt: float = 0.0
    rho_p: np.ndarray | None = None
    v: np.ndarray | None = None
    speed_history: deque = field(default_factory=deque)


@dataclass
class StepInfo:
    dt: float
    q_in: float
    q_out: float
    max_vc: float


def _speed(fd: FundamentalDiagram, rho):
    return fd.speed(np.clip(rho, 0.0, fd.rho_max))


def perceived(model: Model1D, state: State1D, motion: np.ndarray | None = None):
    """Perceived density on the ghost-extended row ``[inlet, cells...]``.

    Returns ``(rho_ext, rho_p_ext)``; in periodic mode there is no ghost.
    """
    cfg = model.perception
    g = np.ones(model.n) if motion is None else motion
    rho = state.rho
    law = cfg.sensory_law()
    k = cfg.tau1_steps
    if k > 0 and len(state.speed_history) >= k:
        v_del = state.speed_history[0]
    else:
        v_del = _speed(model.fd, rho) * g
    if model.periodic:
        delta = law.depth(model.visual_depth, v_del, model.fd.v_max)
        rho_p, _ = perceive_1d(rho, delta, model.dx, cfg.strategy, periodic=True)
        return rho, rho_p
    rho_in = float(model.inflow(state.t))
    rho_ext = np.concatenate(([rho_in], rho))
    depth_ext = np.concatenate(([model.visual_depth[0] + model.dx], model.visual_depth))
    v_ext = np.concatenate(([_speed(model.fd, rho_in) * g[0]], v_del))
    delta = law.depth(depth_ext, v_ext, model.fd.v_max)
    rho_p, _ = perceive_1d(rho_ext, delta, model.dx, cfg.strategy, x0=-model.dx)
    return rho_ext, rho_p


def step(model: Model1D, state: State1D, motion: np.ndarray | None = None,
         dt_cap: float | None = None) -> tuple[State1D, StepInfo]:
    """Advance one adaptive explicit-Euler/Godunov step.

    ``motion`` is the per-cell speed factor (1 on a motionless deck).
    """
    fd = model.fd
    n = model.n
    g = np.ones(n) if motion is None else np.asarray(motion, dtype=float)
    rho_ext, rp_ext = perceived(model, state, g)
    if model.periodic:
        rl, rr = rho_ext, np.roll(rho_ext, -1)
        pl, pr = rp_ext, np.roll(rp_ext, -1)
        gl, gr = g, np.roll(g, -1)
        rho_p = rp_ext
    else:
        rl = rho_ext
        rr = np.concatenate((rho_ext[1:], rho_ext[-1:]))
        pl = rp_ext
        pr = np.concatenate((rp_ext[1:], rp_ext[-1:]))
        g_ext = np.concatenate((g[:1], g))
        gl, gr = g_ext, np.concatenate((g_ext[1:], g_ext[-1:]))
        rho_p = rp_ext[1:]
    v = _speed(fd, rho_p) * g
    vc = convection_velocity(np.clip(rl, 0, 1), np.clip(rr, 0, 1), np.clip(pl, 0, 1), np.clip(pr, 0, 1),
                             fd, model.perception.epsilon) * 0.5 * (gl + gr)
    vmax = max(float(np.max(np.abs(vc))), float(np.max(np.abs(v))))
    dt = model.cfl * model.dx / vmax if vmax > 0 else model.dt_max
    dt = min(dt, model.dt_max)
    if dt_cap is not None:
        dt = min(dt, dt_cap)
    flux = interface_fluxes(rl, rr, pl, pr, fd, model.n_eta, gl, gr)
    if model.periodic:
        div = flux - np.roll(flux, 1)
        q_in = q_out = 0.0
    else:
        div = flux[1:] - flux[:-1]
        q_in, q_out = float(flux[0]), float(flux[-1])
    rho_new = state.rho - dt / model.dx * div
    if not np.all(np.isfinite(rho_new)):
        raise SolverAbort(f"non-finite density at t={state.t + dt:.6g}", state)
    if np.any(rho_new < -1e-12):
        raise SolverAbort(f"negative density {rho_new.min():.3e} at t={state.t + dt:.6g}", state)
    hist = deque(state.speed_history, maxlen=max(model.perception.tau1_steps, 1))
    if model.perception.tau1_steps > 0:
        hist.append(v.copy())
    new = State1D(rho_new, state.t + dt, dt, rho_p, v, hist)
    return new, StepInfo(dt, q_in, q_out, vmax)


def run(model: Model1D, state: State1D, t_end: float,
        callback: Callable[[State1D, StepInfo], None] | None = None,
        max_steps: int = 10_000_000) -> State1D:
    """March to ``t_end`` (landing on it exactly)."""
    for _ in range(max_steps):
        if state.t >= t_end - 1e-14:
            return state
        state, info = step(model, state, dt_cap=t_end - state.t)
        if callback is not None:
            callback(state, info)
    raise SolverAbort(f"step budget exhausted before t_end={t_end}", state)


def initial_state(model: Model1D, rho0) -> State1D:
    rho = np.array(np.broadcast_to(rho0, (model.n,)), dtype=float)
    return State1D(rho, 0.0, 0.0, rho.copy(), _speed(model.fd, rho))


def with_strategy(model: Model1D, strategy: str) -> Model1D:
    return replace(model, perception=replace(model.perception, strategy=strategy))
