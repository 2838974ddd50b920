"""Path containers shared by the solver, the simulator and the functionals."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class PathGrid:
    """Piecewise-linear path on the uniform grid t_i = i*T/n."""

    T: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size < 3:
            raise ValueError("a PathGrid needs at least two intervals")

    @property
    def n(self) -> int:
        return self.values.size - 1

    @property
    def t(self) -> np.ndarray:
        return self.T * np.arange(self.n + 1) / self.n

    @property
    def dt(self) -> float:
        return self.T / self.n

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / self.dt

    @property
    def t_mid(self) -> np.ndarray:
        return self.T * (np.arange(self.n) + 0.5) / self.n

    @property
    def mid_values(self) -> np.ndarray:
        return 0.5 * (self.values[1:] + self.values[:-1])

    def __call__(self, s):
        return np.interp(s, self.t, self.values)

    def derivative(self, s):
        """Slope of the interval containing s (right-continuous)."""
        s = np.asarray(s, dtype=float)
        i = np.clip(np.floor(s / self.dt).astype(int), 0, self.n - 1)
        return self.slopes[i]

    @classmethod
    def from_function(cls, f, T: float, n: int) -> "PathGrid":
        t = T * np.arange(n + 1) / n
        return cls(T, np.asarray(f(t), dtype=float) + np.zeros(n + 1))

    @classmethod
    def zeros(cls, T: float, n: int) -> "PathGrid":
        return cls(T, np.zeros(n + 1))


@dataclass
class TiltPath:
    """Tilt z0(t): per-interval midpoint values plus node values for interpolation."""

    t_nodes: np.ndarray
    z_nodes: np.ndarray
    t_mid: np.ndarray
    z_mid: np.ndarray

    def __call__(self, s):
        return np.interp(s, self.t_nodes, self.z_nodes)

    @property
    def T(self) -> float:
        return float(self.t_nodes[-1])

    @classmethod
    def constant(cls, value: float, T: float, n: int = 2) -> "TiltPath":
        t = T * np.arange(n + 1) / n
        tm = T * (np.arange(n) + 0.5) / n
        return cls(t, np.full(n + 1, float(value)), tm, np.full(n, float(value)))

    @classmethod
    def from_function(cls, f, T: float, n: int = 2000) -> "TiltPath":
        t = T * np.arange(n + 1) / n
        tm = T * (np.arange(n) + 0.5) / n
        return cls(t, np.asarray(f(t), dtype=float) + np.zeros(n + 1), tm, np.asarray(f(tm), dtype=float) + np.zeros(n))


@dataclass
class SamplePath:
    """Cadlag path on a skeleton of mesh points, jump times and thinning candidates.

    ``x[i]`` is the value at ``t[i]`` (post-jump), ``x_left[i]`` the left
    limit.  Between skeleton points the path moves linearly (drift/diffusion
    increment only).
    """

    t: np.ndarray
    x: np.ndarray
    x_left: np.ndarray
    is_jump: np.ndarray
    jump_size: np.ndarray
    eps: float = 1.0
    int_z_dxi: float = 0.0
    int_g0_dt: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @property
    def values(self) -> np.ndarray:
        return self.x

    @property
    def jump_times(self) -> np.ndarray:
        return self.t[self.is_jump]

    @property
    def n_jumps(self) -> int:
        return int(np.sum(self.is_jump))

    def __call__(self, s):
        """Value at time s (right-continuous)."""
        s = np.asarray(s, dtype=float)
        i = np.searchsorted(self.t, s, side="right") - 1
        i = np.clip(i, 0, self.t.size - 2)
        t0, t1 = self.t[i], self.t[i + 1]
        w = np.where(t1 > t0, (s - t0) / np.where(t1 > t0, t1 - t0, 1.0), 0.0)
        val = self.x[i] + w * (self.x_left[i + 1] - self.x[i])
        return np.where(s >= self.t[-1], self.x[-1], val)


def segments(path):
    """(t0, t1, v0, v1) per linear piece; v1 is the left limit at t1."""
    if isinstance(path, SamplePath):
        return path.t[:-1], path.t[1:], path.x[:-1], path.x_left[1:]
    if isinstance(path, PathGrid):
        t = path.t
        return t[:-1], t[1:], path.values[:-1], path.values[1:]
    raise TypeError(f"not a path: {type(path).__name__}")


def terminal_value(path) -> float:
    if isinstance(path, SamplePath):
        return float(path.x[-1])
    return float(path.values[-1])


def sup_norm(path) -> float:
    """sup |path| over the skeleton, both sides of every jump included."""
    if isinstance(path, SamplePath):
        return float(max(np.max(np.abs(path.x)), np.max(np.abs(path.x_left))))
    if isinstance(path, PathGrid):
        return float(np.max(np.abs(path.values)))
    return float(np.max(np.abs(np.asarray(path, dtype=float))))


def path_values_like(direction, base):
    """Segment endpoint values of ``direction`` on the segments of ``base``."""
    t0, t1, _, _ = segments(base)
    if isinstance(direction, type(base)) and np.array_equal(segments(direction)[0], t0) \
            and np.array_equal(segments(direction)[1], t1):
        _, _, d0, d1 = segments(direction)
        return d0, d1
    if callable(direction):
        return np.asarray(direction(t0), dtype=float) + 0 * t0, np.asarray(direction(t1), dtype=float) + 0 * t1
    arr = np.asarray(direction, dtype=float)
    if isinstance(base, PathGrid) and arr.shape == (base.n + 1,):
        return arr[:-1], arr[1:]
    raise ValueError("direction incompatible with the base path")
