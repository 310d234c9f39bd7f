"""Lateral deck dynamics and the partitioned crowd-structure loop.

The deck is reduced to its first lateral mode:

    (m_s + m_c) s'' + 2 zeta omega (m_s + m_c) s' + omega^2 (m_s + m_c) s = F

with the pedestrian mass ``m_c`` projected on the mode and refreshed every
crowd step.  The crowd reacts to a delayed envelope of the lateral
acceleration through :func:`crowdflow.fundamental.motion_factor`.

Crowd time is nondimensional; the structure works in seconds.  The factor
``time_scale = L / v_max`` converts between the two.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fundamental import MotionSensitivity, motion_factor, update_stop_times
from .history import DelayLine
from . import solver1d

SETUPS = ("motionless", "imposed-motion", "two-way")

ForceHook = Callable[[float, np.ndarray, np.ndarray, np.ndarray], float]


def zero_force(t, rho, v, envelope) -> float:
    return 0.0


def default_mode_shape(x: np.ndarray) -> np.ndarray:
    """Two-span-like lateral mode: a main lobe on [0, 0.6] and a smaller
    opposite lobe on the short span, normalised to max |phi| = 1."""
    x = np.asarray(x, dtype=float)
    phi = np.where(x <= 0.6, np.sin(np.pi * x / 0.6), -0.3 * np.sin(np.pi * (x - 0.6) / 0.4))
    return phi / np.max(np.abs(phi))


@dataclass
class ModalStructure:
    """Single-mode surrogate of the deck.

    ``mode_shape`` holds per-cell values on the crowd grid (nondimensional
    cells of width ``1 / n``).  When ``modal_mass`` is not given it is the
    deck mass projected on the mode.
    """

    mode_shape: np.ndarray
    frequency: float = 0.9          # Hz
    damping: float = 0.007
    deck_width: float = 5.25        # m
    deck_mass_per_area: float = 800.0  # kg/m^2
    length: float = 180.0           # m
    pedestrian_mass: float = 75.0   # kg per pedestrian
    modal_mass: float | None = None  # kg

    def __post_init__(self):
        self.mode_shape = np.asarray(self.mode_shape, dtype=float)
        peak = np.max(np.abs(self.mode_shape)) if self.mode_shape.size else 0.0
        if not peak > 0:
            raise ValueError("mode shape must not vanish identically")
        self.mode_shape = self.mode_shape / peak
        if not self.frequency > 0:
            raise ValueError(f"frequency must be positive (got {self.frequency})")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError(f"damping ratio must lie in [0, 1) (got {self.damping})")
        if self.modal_mass is None:
            self.modal_mass = (self.deck_mass_per_area * self.deck_width * self.length
                               * float(np.mean(self.mode_shape**2)))
        if not self.modal_mass > 0:
            raise ValueError(f"modal mass must be positive (got {self.modal_mass})")

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.frequency

    @property
    def period(self) -> float:
        return 1.0 / self.frequency

    def added_mass(self, rho: np.ndarray, rho_max: float) -> float:
        """Modal mass of the crowd (kg) for nondimensional density ``rho``."""
        dx = 1.0 / len(self.mode_shape)
        ped_per_len = np.asarray(rho) * rho_max * self.deck_width  # pedestrians per metre
        return float(np.sum(ped_per_len * self.mode_shape**2) * dx * self.length * self.pedestrian_mass)


@dataclass
class ModalState:
    s: float = 0.0
    v: float = 0.0
    a: float = 0.0


def newmark_step(structure: ModalStructure, state: ModalState, force: float, added_mass: float,
                 dt: float, beta: float = 0.25, gamma: float = 0.5) -> ModalState:
    """One Newmark step for the modal equation (average acceleration by default)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    m = structure.modal_mass + added_mass
    w = structure.omega
    c = 2.0 * structure.damping * w * m
    k = w * w * m
    s_pred = state.s + dt * state.v + (0.5 - beta) * dt * dt * state.a
    v_pred = state.v + (1.0 - gamma) * dt * state.a
    a_new = (force - c * v_pred - k * s_pred) / (m + gamma * dt * c + beta * dt * dt * k)
    return ModalState(s_pred + beta * dt * dt * a_new, v_pred + gamma * dt * a_new, a_new)


def initial_acceleration(structure: ModalStructure, state: ModalState, force: float,
                         added_mass: float) -> ModalState:
    m = structure.modal_mass + added_mass
    w = structure.omega
    a = force / m - 2.0 * structure.damping * w * state.v - w * w * state.s
    return ModalState(state.s, state.v, a)


class EnvelopeTracker:
    """Running maximum of ``|modal acceleration|`` over a trailing window."""

    def __init__(self, window: float):
        if not window > 0:
            raise ValueError("envelope window must be positive")
        self.window = float(window)
        self._q: deque[tuple[float, float]] = deque()  # decreasing in value

    def push(self, t: float, a: float) -> float:
        a = abs(a)
        while self._q and self._q[-1][1] <= a:
            self._q.pop()
        self._q.append((t, a))
        while self._q[0][0] < t - self.window:
            self._q.popleft()
        return self._q[0][1]

    @property
    def value(self) -> float:
        return self._q[0][1] if self._q else 0.0


def acceleration_envelope(t: np.ndarray, modal_acc: np.ndarray, mode_shape: np.ndarray,
                          window: float) -> np.ndarray:
    """Envelope at the last sample time: trailing-window max of ``|a|`` times ``|phi|``."""
    t = np.asarray(t, dtype=float)
    a = np.abs(np.asarray(modal_acc, dtype=float))
    if a.size == 0:
        return np.zeros_like(np.asarray(mode_shape, dtype=float))
    recent = t >= t[-1] - window
    return float(np.max(a[recent])) * np.abs(mode_shape)


def imposed_envelope(t: float, peak: float, rate: float, mode_shape: np.ndarray) -> np.ndarray:
    """Prescribed envelope ``peak (1 - exp(-rate t)) |phi|`` (t in seconds)."""
    return peak * (1.0 - math.exp(-rate * max(t, 0.0))) * np.abs(mode_shape)


@dataclass
class CouplingConfig:
    setup: str = "motionless"
    sensitivity: MotionSensitivity = field(default_factory=MotionSensitivity)
    imposed_peak: float = 0.25   # m/s^2
    imposed_rate: float = 0.02   # 1/s
    time_scale: float = 180.0 / 1.48  # seconds per nondimensional time unit
    force: ForceHook = zero_force
    substeps_per_period: int = 20

    def __post_init__(self):
        if self.setup not in SETUPS:
            raise ValueError(f"setup must be one of {', '.join(SETUPS)} (got {self.setup!r})")
        if not self.time_scale > 0:
            raise ValueError("time_scale must be positive")


@dataclass
class CouplingState:
    crowd: solver1d.State1D
    modal: ModalState
    envelope: np.ndarray
    stop_times: np.ndarray
    tracker: EnvelopeTracker | None = None
    delay: DelayLine | None = None
    motion: np.ndarray | None = None


@dataclass
class CoupledResult:
    t: np.ndarray
    probes: dict                 # x -> dict of series rho, v, acc
    snapshots: list              # dicts with t, rho, rho_p, v, g, envelope
    final: CouplingState
    q_in: np.ndarray
    q_out: np.ndarray
    dt: np.ndarray
    mass: np.ndarray
    energy: np.ndarray


def _probe_index(model: solver1d.Model1D, x: float) -> int:
    return int(min(max(int(x / model.dx), 0), model.n - 1))


def coupled_run(model: solver1d.Model1D, rho0, t_end: float, config: CouplingConfig,
                structure: ModalStructure | None = None, probes=(0.3,), snapshot_times=(),
                max_steps: int = 5_000_000) -> CoupledResult:
    """Advance crowd and deck in lockstep until ``t_end`` (nondimensional)."""
    setup = config.setup
    ms = config.sensitivity
    if structure is None:
        structure = ModalStructure(default_mode_shape(model.x))
    if len(structure.mode_shape) != model.n:
        raise ValueError(f"mode shape has {len(structure.mode_shape)} values but the crowd grid has {model.n} cells")
    phi = structure.mode_shape
    rho_max = model.fd.rho_max
    crowd = solver1d.initial_state(model, rho0)
    n = model.n
    state = CouplingState(crowd, ModalState(), np.zeros(n), np.full(n, np.nan))
    if setup == "two-way":
        state.tracker = EnvelopeTracker(structure.period)
        state.delay = DelayLine(ms.tau1 + structure.period, np.zeros(n))
        f0 = config.force(0.0, crowd.rho, crowd.v, state.envelope)
        state.modal = initial_acceleration(structure, state.modal, f0,
                                           structure.added_mass(crowd.rho, rho_max))
        state.delay.push(0.0, state.envelope)
    scale = config.time_scale
    idx = {float(x): _probe_index(model, x) for x in probes}
    snaps_due = sorted(float(s) for s in snapshot_times if 0 <= s <= t_end)
    ts, qi, qo, dts = [0.0], [], [], []
    mass = [float(np.sum(crowd.rho) * model.dx)]
    energy = [float(np.sum(crowd.rho**2) * model.dx)]
    rec = {x: {"rho": [crowd.rho[k]], "v": [crowd.v[k]], "acc": [0.0]} for x, k in idx.items()}
    snapshots = []

    def take_snapshot(g):
        snapshots.append({"t": state.crowd.t, "rho": state.crowd.rho.copy(),
                          "rho_p": state.crowd.rho_p.copy(), "v": state.crowd.v.copy(),
                          "g": np.ones(n) if g is None else g.copy(), "envelope": state.envelope.copy()})

    while snaps_due and snaps_due[0] <= 0.0:
        take_snapshot(None)
        snaps_due.pop(0)

    for _ in range(max_steps):
        t = state.crowd.t
        if t >= t_end - 1e-14:
            break
        t_phys = t * scale
        g = None
        cap = t_end - t
        if snaps_due:
            cap = min(cap, snaps_due[0] - t)
        if setup != "motionless":
            if setup == "imposed-motion":
                z = imposed_envelope(t_phys - ms.tau1, config.imposed_peak, config.imposed_rate, phi)
            else:
                z = state.delay.at(t_phys - ms.tau1)
            state.stop_times = update_stop_times(ms, z, t_phys, state.stop_times)
            g = motion_factor(ms, z, t_phys, state.stop_times)
            ends = state.stop_times + ms.tau2 - t_phys
            ends = ends[np.isfinite(ends) & (ends > 0)]
            if ends.size:
                cap = min(cap, float(ends.min()) / scale)
        state.motion = g
        crowd, info = solver1d.step(model, state.crowd, motion=g, dt_cap=cap)
        state.crowd = crowd
        if setup == "imposed-motion":
            state.envelope = imposed_envelope(crowd.t * scale, config.imposed_peak, config.imposed_rate, phi)
        elif setup == "two-way":
            dt_phys = info.dt * scale
            nsub = max(1, math.ceil(dt_phys * config.substeps_per_period / structure.period))
            h = dt_phys / nsub
            m_c = structure.added_mass(crowd.rho, rho_max)
            for k in range(nsub):
                f = config.force(t_phys + k * h, crowd.rho, crowd.v, state.envelope)
                state.modal = newmark_step(structure, state.modal, f, m_c, h)
                state.tracker.push(t_phys + (k + 1) * h, state.modal.a)
            state.envelope = state.tracker.value * np.abs(phi)
            state.delay.push(crowd.t * scale, state.envelope)
        ts.append(crowd.t)
        qi.append(info.q_in)
        qo.append(info.q_out)
        dts.append(info.dt)
        mass.append(float(np.sum(crowd.rho) * model.dx))
        energy.append(float(np.sum(crowd.rho**2) * model.dx))
        for x, k in idx.items():
            rec[x]["rho"].append(crowd.rho[k])
            rec[x]["v"].append(crowd.v[k])
            acc = state.modal.a * phi[k] if setup == "two-way" else state.envelope[k]
            rec[x]["acc"].append(acc)
        while snaps_due and snaps_due[0] <= crowd.t + 1e-14:
            take_snapshot(g)
            snaps_due.pop(0)
    else:
        raise solver1d.SolverAbort(f"step budget exhausted before t_end={t_end}", state.crowd)

    probes_out = {x: {k: np.asarray(v) for k, v in r.items()} for x, r in rec.items()}
    return CoupledResult(np.asarray(ts), probes_out, snapshots, state,
                         np.asarray(qi), np.asarray(qo), np.asarray(dts), np.asarray(mass),
                         np.asarray(energy))
