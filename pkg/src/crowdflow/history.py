"""Small time-series helpers shared by the solvers."""
from __future__ import annotations

from collections import deque
from typing import Sequence

import numpy as np


class PiecewiseLinear:
    """Piecewise-linear function of time given by ``(t, value)`` knots.

    Constant extrapolation outside the knot range.
    """

    def __init__(self, knots: Sequence[Sequence[float]]):
        arr = np.asarray(knots, dtype=float).reshape(-1, 2)
        if len(arr) == 0:
            raise ValueError("a time history needs at least one (t, value) knot")
        if np.any(np.diff(arr[:, 0]) < 0):
            raise ValueError("time history knots must be sorted by time")
        self.t = arr[:, 0]
        self.values = arr[:, 1]

    def __call__(self, t):
        return np.interp(t, self.t, self.values) if np.ndim(t) else float(np.interp(t, self.t, self.values))

    @property
    def knots(self) -> list[list[float]]:
        return [[float(a), float(b)] for a, b in zip(self.t, self.values)]

    def last_nonzero_time(self) -> float:
        """End of the support: the time after which the history stays at zero."""
        nz = np.flatnonzero(self.values != 0.0)
        if len(nz) == 0:
            return float(self.t[0])
        k = nz[-1]
        return float(self.t[min(k + 1, len(self.t) - 1)]) if k + 1 < len(self.t) else float("inf")


class DelayLine:
    """Ring buffer of field samples indexed by time.

    ``at(t)`` linearly interpolates between stored samples; requests before
    the first sample return ``initial``.
    """

    def __init__(self, horizon: float, initial: np.ndarray):
        self.horizon = float(horizon)
        self.initial = np.asarray(initial, dtype=float)
        self._t: deque[float] = deque()
        self._v: deque[np.ndarray] = deque()

    def push(self, t: float, value: np.ndarray) -> None:
        if self._t and t < self._t[-1]:
            raise ValueError("delay line samples must be pushed in time order")
        self._t.append(float(t))
        self._v.append(np.array(value, dtype=float, copy=True))
        # keep one sample older than the horizon for interpolation
        while len(self._t) > 2 and self._t[1] <= t - self.horizon:
            self._t.popleft()
            self._v.popleft()

    def at(self, t: float) -> np.ndarray:
        if not self._t or t < self._t[0]:
            return self.initial.copy()
        if t >= self._t[-1]:
            return self._v[-1].copy()
        ts = np.fromiter(self._t, float, len(self._t))
        k = int(np.searchsorted(ts, t, side="right")) - 1
        t0, t1 = ts[k], ts[k + 1]
        w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        return (1.0 - w) * self._v[k] + w * self._v[k + 1]
