"""Separable arc travel-time functions.

Two families are supported: linear ``phi * x + beta`` and the BPR curve
``t0 * (1 + alpha * (x / cap)**4)``.  Each provides its value, derivative
and Beckmann potential (the integral of the cost from 0 to ``x``), which is
the objective minimized by a user equilibrium.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

BPR_EXPONENT = 4


def _vec(v, name):
    a = np.atleast_1d(np.asarray(v, dtype=float)).copy()
    if a.ndim != 1:
        raise ValueError("%s must be a vector" % name)
    a.setflags(write=False)
    return a


def _flow(cost, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != cost.m:
        raise ValueError("flow has length %d, expected %d" % (x.shape[-1], cost.m))
    if np.any(x < 0):
        raise ValueError("negative flow")
    return x


@dataclass(frozen=True)
class LinearCost:
    phi: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        phi, beta = _vec(self.phi, "phi"), _vec(self.beta, "beta")
        if phi.shape != beta.shape:
            raise ValueError("phi and beta lengths differ")
        if np.any(phi < 0) or np.any(beta < 0):
            raise ValueError("linear cost coefficients must be nonnegative")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "beta", beta)

    @property
    def m(self) -> int:
        return self.phi.size

    def evaluate(self, x):
        return self.phi * _flow(self, x) + self.beta

    def derivative(self, x):
        _flow(self, x)
        return np.broadcast_to(self.phi, np.shape(x)).copy()

    def integral(self, x):
        """Per-arc Beckmann terms."""
        x = _flow(self, x)
        return 0.5 * self.phi * x ** 2 + self.beta * x

    def to_dict(self) -> dict:
        return {"family": "linear", "phi": self.phi.tolist(), "beta": self.beta.tolist()}


@dataclass(frozen=True)
class BprCost:
    t0: np.ndarray
    capacity: np.ndarray
    alpha: np.ndarray
    exponent: int = BPR_EXPONENT

    def __post_init__(self):
        t0, cap, alpha = _vec(self.t0, "t0"), _vec(self.capacity, "capacity"), _vec(self.alpha, "alpha")
        m = max(t0.size, cap.size, alpha.size)
        t0, cap, alpha = (np.broadcast_to(v, (m,)).copy() for v in (t0, cap, alpha))
        if self.exponent != BPR_EXPONENT:
            raise ValueError("BPR exponent is fixed at 4")
        if np.any(t0 <= 0) or np.any(cap <= 0) or np.any(alpha < 0):
            raise ValueError("BPR requires t0 > 0, capacity > 0, alpha >= 0")
        for name, v in (("t0", t0), ("capacity", cap), ("alpha", alpha)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def m(self) -> int:
        return self.t0.size

    def evaluate(self, x):
        x = _flow(self, x)
        return self.t0 * (1.0 + self.alpha * (x / self.capacity) ** 4)

    def derivative(self, x):
        x = _flow(self, x)
        return 4.0 * self.t0 * self.alpha * x ** 3 / self.capacity ** 4

    def integral(self, x):
        x = _flow(self, x)
        return self.t0 * x + self.t0 * self.alpha * x ** 5 / (5.0 * self.capacity ** 4)

    def to_dict(self) -> dict:
        return {"family": "bpr", "t0": self.t0.tolist(), "capacity": self.capacity.tolist(),
                "alpha": self.alpha.tolist()}


def cost_from_dict(data: dict):
    if data.get("family") == "linear":
        return LinearCost(data["phi"], data["beta"])
    if data.get("family") == "bpr":
        return BprCost(data["t0"], data["capacity"], data["alpha"])
    raise ValueError("unknown cost family %r" % data.get("family"))


def cost_to_json(cost) -> str:
    return json.dumps(cost.to_dict())


def eval_cost(cost, flow) -> np.ndarray:
    """Per-arc travel time at ``flow``."""
    return cost.evaluate(flow)


def beckmann_potential(cost, flow) -> float:
    """Sum over arcs of the integral of the arc cost from 0 to its flow."""
    return float(np.sum(cost.integral(flow)))


@dataclass(frozen=True)
class PiecewiseLinearCost:
    """Interpolant of a cost on per-arc breakpoints.

    ``breakpoints`` and ``values`` have shape ``(m, segments + 1)``.
    ``error_bound[a]`` is the largest rise of the cost over one segment,
    which bounds the interpolation error of a nondecreasing cost.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    error_bound: np.ndarray

    @property
    def m(self) -> int:
        return self.breakpoints.shape[0]

    @property
    def segments(self) -> int:
        return self.breakpoints.shape[1] - 1

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values, axis=1) / np.diff(self.breakpoints, axis=1)

    def _segment(self, x):
        # segment index per arc; the last segment extends past the top breakpoint
        k = (self.breakpoints[:, 1:-1] <= x[:, None]).sum(axis=1)
        return np.arange(self.m), k

    def evaluate(self, x):
        """Interpolated value; extrapolates linearly past the last breakpoint."""
        x = _flow(self, x)
        rows, k = self._segment(x)
        return self.values[rows, k] + self.slopes[rows, k] * (x - self.breakpoints[rows, k])

    def derivative(self, x):
        x = _flow(self, x)
        rows, k = self._segment(x)
        return self.slopes[rows, k]

    def integral(self, x):
        x = _flow(self, x)
        rows, k = self._segment(x)
        seg = 0.5 * (self.values[:, 1:] + self.values[:, :-1]) * np.diff(self.breakpoints, axis=1)
        done = np.concatenate([np.zeros((self.m, 1)), np.cumsum(seg, axis=1)], axis=1)[rows, k]
        v0 = self.values[rows, k]
        dx = x - self.breakpoints[rows, k]
        return done + v0 * dx + 0.5 * self.slopes[rows, k] * dx ** 2

    def product_values(self) -> np.ndarray:
        """``x * t(x)`` at the breakpoints."""
        return self.breakpoints * self.values


def linearize(cost: BprCost, segments: int, upper=None) -> PiecewiseLinearCost:
    """Interpolate ``cost`` on ``segments`` uniform pieces of ``[0, upper]``.

    ``upper`` defaults to the practical capacity of each arc.
    """
    if segments < 1:
        raise ValueError("segments must be at least 1")
    top = cost.capacity if upper is None else np.broadcast_to(np.asarray(upper, dtype=float), (cost.m,))
    frac = np.linspace(0.0, 1.0, segments + 1)
    bp = top[:, None] * frac[None, :]
    vals = np.column_stack([cost.evaluate(bp[:, k]) for k in range(segments + 1)])
    rise = np.diff(vals, axis=1).max(axis=1)
    return PiecewiseLinearCost(bp, vals, rise)
