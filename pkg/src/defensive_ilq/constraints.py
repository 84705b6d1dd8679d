"""Inequality constraints ``g(x) <= 0`` and their augmented-Lagrangian (PHR) treatment."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import LaneCenterline

DEFAULT_MU = 10.0
MU_GROWTH = 10.0
MU_MAX = 1e6


class Constraint:
    """Base class.  ``owner`` is the player whose cost absorbs the penalty."""

    kind = "abstract"
    owner: int

    def evaluate(self, xs) -> np.ndarray:
        raise NotImplementedError

    def linearize(self, xs):
        """Return ``(g, idx, J)``: values (T,), state indices, Jacobian (T, len(idx))."""
        raise NotImplementedError


class ProximityConstraint(Constraint):
    """``d_prox - |p_owner - p_other| <= 0``; only the ego may own it."""

    kind = "proximity"

    def __init__(self, other, d_prox, pos_owner, pos_other, owner=0):
        if owner != 0:
            raise ValueError("proximity constraints are owned by the ego (player 0) only")
        if not d_prox > 0:
            raise ValueError("d_prox must be positive")
        self.owner = owner
        self.other = int(other)
        self.d_prox = float(d_prox)
        self.pos_owner = tuple(pos_owner)
        self.pos_other = tuple(pos_other)

    def __repr__(self):
        return f"ProximityConstraint(owner={self.owner}, other={self.other}, d_prox={self.d_prox})"

    def _diff(self, xs):
        diff = xs[:, self.pos_owner] - xs[:, self.pos_other]
        return diff, np.hypot(diff[:, 0], diff[:, 1])

    def evaluate(self, xs):
        _, d = self._diff(np.atleast_2d(xs))
        return self.d_prox - d

    def linearize(self, xs):
        diff, d = self._diff(xs)
        e = diff / np.where(d > 0, d, 1.0)[:, None]
        return self.d_prox - d, list(self.pos_owner) + list(self.pos_other), np.concatenate([-e, e], axis=1)


class LaneConstraint(Constraint):
    """``|d_lane(p)| - d_lane <= 0`` (stay within the lane half-width)."""

    kind = "lane"

    def __init__(self, owner, lane: LaneCenterline, d_lane, pos):
        if not d_lane > 0:
            raise ValueError("d_lane must be positive")
        self.owner = int(owner)
        self.lane = lane
        self.d_lane = float(d_lane)
        self.pos = tuple(pos)

    def __repr__(self):
        return f"LaneConstraint(owner={self.owner}, lane={self.lane.name!r}, d_lane={self.d_lane})"

    def evaluate(self, xs):
        proj = self.lane.project(np.atleast_2d(xs)[:, self.pos])
        return np.abs(proj.distance) - self.d_lane

    def linearize(self, xs):
        p = xs[:, self.pos]
        proj = self.lane.project(p)
        d = proj.distance
        J = (p - proj.foot) / np.where(d > 0, d, 1.0)[:, None]
        return d - self.d_lane, list(self.pos), J


class SpeedConstraint(Constraint):
    """``max(v_lo - v, v - v_hi) <= 0``."""

    kind = "speed"

    def __init__(self, owner, v_lo, v_hi, v_index):
        if not v_lo < v_hi:
            raise ValueError("need v_lo < v_hi")
        self.owner = int(owner)
        self.v_lo = float(v_lo)
        self.v_hi = float(v_hi)
        self.v_index = int(v_index)

    def __repr__(self):
        return f"SpeedConstraint(owner={self.owner}, v_lo={self.v_lo}, v_hi={self.v_hi})"

    def evaluate(self, xs):
        v = np.atleast_2d(xs)[:, self.v_index]
        return np.maximum(self.v_lo - v, v - self.v_hi)

    def linearize(self, xs):
        v = xs[:, self.v_index]
        lo, hi = self.v_lo - v, v - self.v_hi
        J = np.where(lo > hi, -1.0, 1.0)[:, None]
        return np.maximum(lo, hi), [self.v_index], J


def violation(c: Constraint, t, x) -> float:
    """Constraint value at one state; feasible iff ``<= 0``.  ``t`` is unused."""
    return float(c.evaluate(np.asarray(x, dtype=float)[None])[0])


def phr(lam, mu, g):
    """PHR inequality penalty and its first/second derivatives with respect to g."""
    lam = np.asarray(lam, dtype=float)
    g = np.asarray(g, dtype=float)
    shifted = lam + mu * g
    active = shifted > 0
    value = np.where(active, lam * g + 0.5 * mu * g**2, -(lam**2) / (2.0 * mu))
    d1 = np.where(active, shifted, 0.0)
    d2 = np.where(active, mu, 0.0)
    return value, d1, d2


def al_penalty(c: Constraint, lam, mu, x):
    """Penalty value, state gradient and Gauss-Newton Hessian at one state."""
    x = np.asarray(x, dtype=float)
    g, idx, J = c.linearize(x[None])
    value, d1, d2 = phr(lam, mu, g[0])
    grad = np.zeros(len(x))
    hess = np.zeros((len(x), len(x)))
    grad[idx] = d1 * J[0]
    hess[np.ix_(idx, idx)] = d2 * np.outer(J[0], J[0])
    return float(value), grad, hess


def accumulate_penalty(c: Constraint, lam, mu, xs, lx, Hx):
    """Add the penalty's gradient/Hessian along a trajectory; returns penalty values."""
    g, idx, J = c.linearize(xs)
    value, d1, d2 = phr(lam, mu, g)
    if np.any(d2 > 0):
        lx[:, idx] += d1[:, None] * J
        ii, jj = np.ix_(idx, idx)
        Hx[:, ii, jj] += d2[:, None, None] * J[:, :, None] * J[:, None, :]
    return value


@dataclass(frozen=True)
class MultiplierState:
    """Per-constraint, per-timestep multipliers ``lam`` (C, K+1) and penalty ``mu``."""

    lam: np.ndarray
    mu: float = DEFAULT_MU
    last_max_violation: float = np.inf

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if np.any(self.lam < 0):
            raise ValueError("multipliers must be nonnegative")

    @classmethod
    def zeros(cls, num_constraints, num_points, mu=DEFAULT_MU):
        return cls(np.zeros((num_constraints, num_points)), mu)


def update_multipliers(state: MultiplierState, violations, growth=MU_GROWTH, mu_max=MU_MAX) -> MultiplierState:
    """``lam <- max(0, lam + mu g)``; grow ``mu`` when the max violation failed to halve."""
    g = np.asarray(violations, dtype=float)
    lam = np.maximum(0.0, state.lam + state.mu * g)
    worst = float(max(0.0, np.max(g))) if g.size else 0.0
    mu = state.mu
    if worst > 0.5 * state.last_max_violation:
        mu = min(mu * growth, mu_max)
    return replace(state, lam=lam, mu=mu, last_max_violation=worst)
