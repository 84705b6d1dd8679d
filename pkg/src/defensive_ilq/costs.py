"""Running-cost terms, split-horizon player costs, and their quadraticization.

Every term is evaluated in batch over a trajectory: ``xs`` has shape (T, n)
and ``us`` has shape (T, m).  ``accumulate`` adds the term's gradient and a
positive-semidefinite (Gauss-Newton or eigenvalue-clamped) Hessian into
caller-owned arrays.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import LaneCenterline, squared_distance_hessian

logger = logging.getLogger(__name__)

ADVERSARIAL_FORMS = ("attract", "repel")


def project_psd(H, floor=0.0):
    """Clamp eigenvalues of symmetric matrices (batched over leading axes) at ``floor``."""
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    w, V = np.linalg.eigh(H)
    w = np.maximum(w, floor)
    return (V * w[..., None, :]) @ np.swapaxes(V, -1, -2)


class CostTerm:
    kind = "abstract"

    def evaluate(self, xs, us):
        raise NotImplementedError

    def accumulate(self, xs, us, lx, Hx, lu, Hu, scale=1.0):
        raise NotImplementedError


class LaneCenterTerm(CostTerm):
    """``weight * d_lane(p)^2`` for the player whose position lives at ``pos``."""

    kind = "lane"

    def __init__(self, weight, lane: LaneCenterline, pos):
        self.weight = _nonneg(weight)
        self.lane = lane
        self.pos = tuple(pos)

    def evaluate(self, xs, us):
        proj = self.lane.project(xs[:, self.pos])
        return self.weight * proj.distance**2

    def accumulate(self, xs, us, lx, Hx, lu, Hu, scale=1.0):
        p = xs[:, self.pos]
        proj = self.lane.project(p)
        w = scale * self.weight
        lx[:, self.pos] += 2.0 * w * (p - proj.foot)
        ii, jj = np.ix_(self.pos, self.pos)
        Hx[:, ii, jj] += w * squared_distance_hessian(proj)


class IdealSpeedTerm(CostTerm):
    kind = "speed"

    def __init__(self, weight, v_ref, v_index):
        self.weight = _nonneg(weight)
        self.v_ref = float(v_ref)
        self.v_index = int(v_index)

    def evaluate(self, xs, us):
        return self.weight * (xs[:, self.v_index] - self.v_ref) ** 2

    def accumulate(self, xs, us, lx, Hx, lu, Hu, scale=1.0):
        w = scale * self.weight
        k = self.v_index
        lx[:, k] += 2.0 * w * (xs[:, k] - self.v_ref)
        Hx[:, k, k] += 2.0 * w


def _pair_geometry(xs, pos_i, pos_j):
    diff = xs[:, pos_i] - xs[:, pos_j]
    d = np.hypot(diff[:, 0], diff[:, 1])
    return diff, d


class CooperativeProximityTerm(CostTerm):
    """``weight * 1{d < d_prox} (d_prox - d)^2`` with ``d = |p_i - p_j|``."""

    kind = "proximity"

    def __init__(self, weight, d_prox, pos_i, pos_j):
        self.weight = _nonneg(weight)
        if not d_prox > 0:
            raise ValueError("d_prox must be positive")
        self.d_prox = float(d_prox)
        self.pos_i = tuple(pos_i)
        self.pos_j = tuple(pos_j)

    def evaluate(self, xs, us):
        _, d = _pair_geometry(xs, self.pos_i, self.pos_j)
        gap = np.where(d < self.d_prox, self.d_prox - d, 0.0)
        return self.weight * gap**2

    def accumulate(self, xs, us, lx, Hx, lu, Hu, scale=1.0):
        diff, d = _pair_geometry(xs, self.pos_i, self.pos_j)
        active = d < self.d_prox
        if not np.any(active):
            return
        w = scale * self.weight
        safe = np.where(d > 0, d, 1.0)
        e = np.where(active[:, None] & (d[:, None] > 0), diff / safe[:, None], 0.0)
        gap = np.where(active, self.d_prox - d, 0.0)
        g = -2.0 * w * gap[:, None] * e
        idx = list(self.pos_i) + list(self.pos_j)
        lx[:, self.pos_i] += g
        lx[:, self.pos_j] -= g
        J = np.concatenate([e, -e], axis=1)
        H = 2.0 * w * J[:, :, None] * J[:, None, :] * active[:, None, None]
        Hx[:, np.ix_(idx, idx)[0], np.ix_(idx, idx)[1]] += H


class AdversarialTerm(CostTerm):
    """Collision-seeking pull of player i toward player j.

    ``form="attract"`` is ``weight * min(|p_i - p_j|^2, clip^2)``, which a
    minimizing player drives toward zero distance.  ``form="repel"`` negates
    it; its Hessian is indefinite and is clamped to PSD.
    """

    kind = "adversarial"

    def __init__(self, weight, pos_i, pos_j, clip_distance=30.0, form="attract"):
        self.weight = _nonneg(weight)
        if form not in ADVERSARIAL_FORMS:
            raise ValueError(f"form must be one of {ADVERSARIAL_FORMS}")
        if not clip_distance > 0:
            raise ValueError("clip_distance must be positive")
        self.form = form
        self.clip_distance = float(clip_distance)
        self.pos_i = tuple(pos_i)
        self.pos_j = tuple(pos_j)
        self._sign = 1.0 if form == "attract" else -1.0

    def evaluate(self, xs, us):
        _, d = _pair_geometry(xs, self.pos_i, self.pos_j)
        return self._sign * self.weight * np.minimum(d**2, self.clip_distance**2)

    def accumulate(self, xs, us, lx, Hx, lu, Hu, scale=1.0):
        diff, d = _pair_geometry(xs, self.pos_i, self.pos_j)
        inside = d < self.clip_distance
        if not np.any(inside):
            return
        w = scale * self.weight * self._sign
        g = 2.0 * w * diff * inside[:, None]
        lx[:, self.pos_i] += g
        lx[:, self.pos_j] -= g
        if self._sign > 0:
            idx = list(self.pos_i) + list(self.pos_j)
            block = np.block([[np.eye(2), -np.eye(2)], [-np.eye(2), np.eye(2)]])
            H = 2.0 * w * block[None] * inside[:, None, None]
            Hx[:, np.ix_(idx, idx)[0], np.ix_(idx, idx)[1]] += H
        # repel: Hessian is -2w * block, negative semidefinite, clamps to zero


class InputQuadraticTerm(CostTerm):
    """``weight * u_j^T R u_j`` on the control block ``controls`` (a slice)."""

    kind = "input"

    def __init__(self, R, controls: slice, weight=1.0):
        R = np.atleast_2d(np.asarray(R, dtype=float))
        if R.shape[0] != R.shape[1] or not np.allclose(R, R.T):
            raise ValueError("R must be square and symmetric")
        if np.min(np.linalg.eigvalsh(R)) < -1e-12:
            raise ValueError("R must be positive semidefinite")
        self.R = R
        self.controls = controls
        self.weight = _nonneg(weight)

    def evaluate(self, xs, us):
        u = us[:, self.controls]
        return self.weight * np.einsum("ti,ij,tj->t", u, self.R, u)

    def accumulate(self, xs, us, lx, Hx, lu, Hu, scale=1.0):
        w = scale * self.weight
        u = us[:, self.controls]
        c = self.controls
        lu[:, c] += 2.0 * w * u @ self.R
        Hu[:, c, c] += 2.0 * w * self.R


class QuadraticStateTerm(CostTerm):
    """Generic ``weight * (0.5 x^T Q x + q^T x)``; used for linear-quadratic games."""

    kind = "state_quadratic"

    def __init__(self, Q, q=None, weight=1.0):
        self.Q = np.asarray(Q, dtype=float)
        self.q = np.zeros(self.Q.shape[0]) if q is None else np.asarray(q, dtype=float)
        self.weight = _nonneg(weight)

    def evaluate(self, xs, us):
        return self.weight * (0.5 * np.einsum("ti,ij,tj->t", xs, self.Q, xs) + xs @ self.q)

    def accumulate(self, xs, us, lx, Hx, lu, Hu, scale=1.0):
        w = scale * self.weight
        lx += w * (xs @ self.Q + self.q)
        Hx += w * self.Q


def _nonneg(w):
    w = float(w)
    if not w >= 0:
        raise ValueError(f"cost weight must be nonnegative, got {w}")
    return w


def adversarial_steps(T_adv: float, dt: float) -> int:
    """Number of grid steps in the adversarial window, warning on misalignment."""
    ratio = T_adv / dt
    k = int(round(ratio))
    if not math.isclose(ratio, k, rel_tol=0.0, abs_tol=1e-9):
        warnings.warn(f"T_adv={T_adv} is not a multiple of dt={dt}; rounding to {k * dt:g} s", stacklevel=2)
        logger.warning("T_adv=%s not a multiple of dt=%s; split at step %d", T_adv, dt, k)
    return k


@dataclass
class SplitHorizonCost:
    """Player cost: ``adversarial`` terms on [0, T_adv), ``cooperative`` terms after.

    The ego uses a single term list (``cooperative``) for the whole horizon.
    """

    player: int
    cooperative: list = field(default_factory=list)
    adversarial: list = field(default_factory=list)
    T_adv: float = 0.0

    def __post_init__(self):
        if self.T_adv < 0:
            raise ValueError("T_adv must be nonnegative")
        if self.player == 0 and self.adversarial:
            raise ValueError("the ego's cost is not split; it takes no adversarial terms")

    def terms_at(self, t: float) -> list:
        return self.adversarial if t < self.T_adv else self.cooperative


def _sum_terms(terms, xs, us):
    out = np.zeros(len(xs))
    for term in terms:
        out += term.evaluate(xs, us)
    return out


def running_cost(cost: SplitHorizonCost, t, x, u) -> float:
    x = np.asarray(x, dtype=float)[None]
    u = np.asarray(u, dtype=float)[None]
    return float(_sum_terms(cost.terms_at(t), x, u)[0])


def stage_costs(cost: SplitHorizonCost, xs, us, dt) -> np.ndarray:
    """Running cost at each control step k = 0..K-1 (unscaled by dt)."""
    xs = np.asarray(xs, dtype=float)[: len(us)]
    us = np.asarray(us, dtype=float)
    k_adv = min(adversarial_steps(cost.T_adv, dt), len(us)) if cost.adversarial else 0
    out = np.empty(len(us))
    if k_adv > 0:
        out[:k_adv] = _sum_terms(cost.adversarial, xs[:k_adv], us[:k_adv])
    if k_adv < len(us):
        out[k_adv:] = _sum_terms(cost.cooperative, xs[k_adv:], us[k_adv:])
    return out


def total_cost(cost: SplitHorizonCost, xs, us, dt) -> float:
    """Left-endpoint Riemann sum ``dt * sum_k g(t_k, x_k, u_k)`` over k < K."""
    if len(xs) != len(us) + 1:
        raise ValueError("state trajectory must be one longer than the control trajectory")
    return math.fsum(dt * stage_costs(cost, xs, us, dt))


@dataclass
class QuadraticModel:
    """Second-order model of one player's cost about an operating point.

    ``Q`` (T, n, n), ``l`` (T, n), ``R`` (T, m, m) over the joint control and
    ``r`` (T, m).  ``R[:, s_j, s_j]`` is the block R_ij for player j's slice.
    """

    Q: np.ndarray
    l: np.ndarray
    R: np.ndarray
    r: np.ndarray


def quadraticize_terms(terms, xs, us, scale=1.0, out: QuadraticModel | None = None) -> QuadraticModel:
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    T, n = xs.shape
    m = us.shape[1]
    if out is None:
        out = QuadraticModel(np.zeros((T, n, n)), np.zeros((T, n)), np.zeros((T, m, m)), np.zeros((T, m)))
    for term in terms:
        term.accumulate(xs, us, out.l, out.Q, out.r, out.R, scale)
    return out


def quadraticize(cost: SplitHorizonCost, t, x, u) -> QuadraticModel:
    """Gradient and PSD Hessian of the running cost at a single point."""
    x = np.asarray(x, dtype=float)[None]
    u = np.asarray(u, dtype=float)[None]
    model = quadraticize_terms(cost.terms_at(t), x, u)
    if not all(np.all(np.isfinite(a)) for a in (model.Q, model.l, model.R, model.r)):
        raise FloatingPointError("non-finite cost derivatives")
    return QuadraticModel(model.Q[0], model.l[0], model.R[0], model.r[0])


def quadraticize_trajectory(cost: SplitHorizonCost, xs, us, dt, scale=1.0) -> QuadraticModel:
    """Stage models for k = 0..K-1 plus a zero terminal row k = K.

    Returns arrays with K+1 leading rows; the control arrays have a row for
    k = K too (zero), which keeps indexing uniform.
    """
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    K = len(us)
    n, m = xs.shape[1], us.shape[1]
    out = QuadraticModel(np.zeros((K + 1, n, n)), np.zeros((K + 1, n)), np.zeros((K + 1, m, m)), np.zeros((K + 1, m)))
    k_adv = min(adversarial_steps(cost.T_adv, dt), K) if cost.adversarial else 0
    if k_adv > 0:
        part = QuadraticModel(out.Q[:k_adv], out.l[:k_adv], out.R[:k_adv], out.r[:k_adv])
        quadraticize_terms(cost.adversarial, xs[:k_adv], us[:k_adv], scale, part)
    if k_adv < K:
        part = QuadraticModel(out.Q[k_adv:K], out.l[k_adv:K], out.R[k_adv:K], out.r[k_adv:K])
        quadraticize_terms(cost.cooperative, xs[k_adv:K], us[k_adv:K], scale, part)
    return out
