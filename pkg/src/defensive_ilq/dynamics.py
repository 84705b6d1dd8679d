"""Multi-player dynamics: augmented bicycle and unicycle models.

The joint state is the concatenation of every player's state block and the
joint control is the concatenation of every player's control block.  Players
are dynamically decoupled; all interaction happens through costs and
constraints.

Heading convention: ``theta = 0`` points along +y (North), so
``px' = v sin(theta)`` and ``py' = v cos(theta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import DimensionError, DivergenceError, NonFiniteError, SingularLinearizationError

# |phi| at or above this is rejected at linearization time.
PHI_SINGULARITY_GUARD = 1.3


@dataclass(frozen=True)
class PlayerStateLayout:
    """Offsets of each player's block inside the joint state/control vectors."""

    state_dims: tuple[int, ...]
    control_dims: tuple[int, ...]
    state_offsets: tuple[int, ...] = field(init=False)
    control_offsets: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if len(self.state_dims) != len(self.control_dims):
            raise DimensionError("state_dims and control_dims must have one entry per player")
        if any(d <= 0 for d in self.state_dims) or any(d <= 0 for d in self.control_dims):
            raise DimensionError("block widths must be positive")
        object.__setattr__(self, "state_offsets", tuple(np.cumsum((0,) + self.state_dims[:-1]).tolist()))
        object.__setattr__(self, "control_offsets", tuple(np.cumsum((0,) + self.control_dims[:-1]).tolist()))

    @property
    def num_players(self) -> int:
        return len(self.state_dims)

    @property
    def n(self) -> int:
        return int(sum(self.state_dims))

    @property
    def m(self) -> int:
        return int(sum(self.control_dims))

    def state_slice(self, i: int) -> slice:
        return slice(self.state_offsets[i], self.state_offsets[i] + self.state_dims[i])

    def control_slice(self, i: int) -> slice:
        return slice(self.control_offsets[i], self.control_offsets[i] + self.control_dims[i])


@dataclass
class LinearizedDynamics:
    """Discrete-time linearization ``dx' = A dx + sum_i B_i du_i``."""

    A: np.ndarray
    B: list[np.ndarray]


class BicycleModel:
    """Augmented kinematic bicycle: state (px, py, theta, v, phi, a), control (omega, jerk)."""

    kind = "bicycle"
    state_dim = 6
    control_dim = 2
    state_names = ("px", "py", "theta", "v", "phi", "a")

    def __init__(self, wheelbase: float):
        if not wheelbase > 0:
            raise ValueError(f"wheelbase must be positive, got {wheelbase}")
        self.wheelbase = float(wheelbase)

    def __repr__(self):
        return f"BicycleModel(wheelbase={self.wheelbase})"

    def __eq__(self, other):
        return isinstance(other, BicycleModel) and other.wheelbase == self.wheelbase

    def derivative(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        theta, v, phi, a = x[..., 2], x[..., 3], x[..., 4], x[..., 5]
        return np.stack(
            [
                v * np.sin(theta),
                v * np.cos(theta),
                v / self.wheelbase * np.tan(phi),
                a,
                u[..., 0],
                u[..., 1],
            ],
            axis=-1,
        )

    def jacobians(self, x, u):
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        theta, v, phi = x[..., 2], x[..., 3], x[..., 4]
        s, c = np.sin(theta), np.cos(theta)
        L = self.wheelbase
        fx = np.zeros(batch + (6, 6))
        fx[..., 0, 2] = v * c
        fx[..., 0, 3] = s
        fx[..., 1, 2] = -v * s
        fx[..., 1, 3] = c
        fx[..., 2, 3] = np.tan(phi) / L
        fx[..., 2, 4] = v / (L * np.cos(phi) ** 2)
        fx[..., 3, 5] = 1.0
        fu = np.zeros(batch + (6, 2))
        fu[..., 4, 0] = 1.0
        fu[..., 5, 1] = 1.0
        return fx, fu

    def rk4_step(self, x, u, dt):
        """Scalar RK4 step on plain floats; the rollout hot path."""
        L = self.wheelbase
        w, j = float(u[0]), float(u[1])
        px, py, th, v, phi, a = (float(s) for s in x)

        def f(th, v, phi, a):
            return v * math.sin(th), v * math.cos(th), v / L * math.tan(phi), a, w, j

        h = dt
        k1 = f(th, v, phi, a)
        k2 = f(th + 0.5 * h * k1[2], v + 0.5 * h * k1[3], phi + 0.5 * h * k1[4], a + 0.5 * h * k1[5])
        k3 = f(th + 0.5 * h * k2[2], v + 0.5 * h * k2[3], phi + 0.5 * h * k2[4], a + 0.5 * h * k2[5])
        k4 = f(th + h * k3[2], v + h * k3[3], phi + h * k3[4], a + h * k3[5])
        s = h / 6.0
        return [
            xi + s * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
            for xi, d1, d2, d3, d4 in zip((px, py, th, v, phi, a), k1, k2, k3, k4)
        ]

    def check_linearizable(self, x):
        phi = np.asarray(x)[..., 4]
        if np.any(np.abs(phi) >= PHI_SINGULARITY_GUARD):
            raise SingularLinearizationError(
                f"front-wheel angle {float(np.max(np.abs(phi))):.3f} rad exceeds guard {PHI_SINGULARITY_GUARD}"
            )


class UnicycleModel:
    """Pedestrian model: state (px, py, theta, v), control (yaw rate, acceleration)."""

    kind = "unicycle"
    state_dim = 4
    control_dim = 2
    state_names = ("px", "py", "theta", "v")

    def __repr__(self):
        return "UnicycleModel()"

    def __eq__(self, other):
        return isinstance(other, UnicycleModel)

    def derivative(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        theta, v = x[..., 2], x[..., 3]
        return np.stack([v * np.sin(theta), v * np.cos(theta), u[..., 0], u[..., 1]], axis=-1)

    def jacobians(self, x, u):
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        theta, v = x[..., 2], x[..., 3]
        s, c = np.sin(theta), np.cos(theta)
        fx = np.zeros(batch + (4, 4))
        fx[..., 0, 2] = v * c
        fx[..., 0, 3] = s
        fx[..., 1, 2] = -v * s
        fx[..., 1, 3] = c
        fu = np.zeros(batch + (4, 2))
        fu[..., 2, 0] = 1.0
        fu[..., 3, 1] = 1.0
        return fx, fu

    def rk4_step(self, x, u, dt):
        w, acc = float(u[0]), float(u[1])
        px, py, th, v = (float(s) for s in x)
        h = dt
        # heading and speed are linear in time under constant controls
        k_th = (th, th + 0.5 * h * w, th + 0.5 * h * w, th + h * w)
        k_v = (v, v + 0.5 * h * acc, v + 0.5 * h * acc, v + h * acc)
        dx = [vv * math.sin(tt) for tt, vv in zip(k_th, k_v)]
        dy = [vv * math.cos(tt) for tt, vv in zip(k_th, k_v)]
        s = h / 6.0
        return [
            px + s * (dx[0] + 2.0 * dx[1] + 2.0 * dx[2] + dx[3]),
            py + s * (dy[0] + 2.0 * dy[1] + 2.0 * dy[2] + dy[3]),
            th + s * 6.0 * w,
            v + s * 6.0 * acc,
        ]

    def check_linearizable(self, x):
        pass


def _rk4_jacobians(model, x, u, h):
    """Exact Jacobians of one RK4 step, batched over leading axes."""
    d = model.state_dim
    eye = np.eye(d)
    k1 = model.derivative(x, u)
    J1x, J1u = model.jacobians(x, u)
    x2 = x + 0.5 * h * k1
    k2 = model.derivative(x2, u)
    J2x, J2u = model.jacobians(x2, u)
    x3 = x + 0.5 * h * k2
    k3 = model.derivative(x3, u)
    J3x, J3u = model.jacobians(x3, u)
    x4 = x + h * k3
    J4x, J4u = model.jacobians(x4, u)

    dk1x = J1x
    dk2x = J2x @ (eye + 0.5 * h * dk1x)
    dk3x = J3x @ (eye + 0.5 * h * dk2x)
    dk4x = J4x @ (eye + h * dk3x)
    dk1u = J1u
    dk2u = J2x @ (0.5 * h * dk1u) + J2u
    dk3u = J3x @ (0.5 * h * dk2u) + J3u
    dk4u = J4x @ (h * dk3u) + J4u
    A = eye + h / 6.0 * (dk1x + 2.0 * dk2x + 2.0 * dk3x + dk4x)
    B = h / 6.0 * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u)
    return A, B


class MultiPlayerDynamics:
    """Block-decoupled continuous-time dynamics for N players.

    Args:
        models: one model object per player (``BicycleModel`` or
            ``UnicycleModel``), in player order.  Player 0 is the ego.
    """

    def __init__(self, models: Sequence):
        if len(models) == 0:
            raise DimensionError("need at least one player")
        self.models = list(models)
        self.layout = PlayerStateLayout(
            tuple(mdl.state_dim for mdl in self.models),
            tuple(mdl.control_dim for mdl in self.models),
        )

    def __repr__(self):
        return f"MultiPlayerDynamics({self.models!r})"

    @property
    def num_players(self):
        return self.layout.num_players

    def _check(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.shape[-1] != self.layout.n or u.shape[-1] != self.layout.m:
            raise DimensionError(
                f"expected state dim {self.layout.n} and control dim {self.layout.m}, "
                f"got {x.shape[-1]} and {u.shape[-1]}"
            )
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
            raise NonFiniteError("non-finite state or control")
        return x, u

    def evaluate(self, t, x, u):
        """Joint state derivative; ``t`` is accepted but unused (time-invariant models)."""
        x, u = self._check(x, u)
        out = np.empty_like(x)
        lay = self.layout
        for i, mdl in enumerate(self.models):
            out[..., lay.state_slice(i)] = mdl.derivative(x[..., lay.state_slice(i)], u[..., lay.control_slice(i)])
        return out

    def step(self, x, u, dt):
        """RK4 step without validation; may return non-finite values."""
        lay = self.layout
        out = []
        for i, mdl in enumerate(self.models):
            out.extend(mdl.rk4_step(x[lay.state_slice(i)], u[lay.control_slice(i)], dt))
        return np.array(out)

    def integrate_step(self, x, u, dt):
        """Explicit RK4 step holding ``u`` constant over ``dt``."""
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        x, u = self._check(x, u)
        if x.ndim != 1:
            raise DimensionError("integrate_step takes a single state vector")
        out = self.step(x, u, dt)
        if not np.all(np.isfinite(out)):
            raise DivergenceError("integration produced non-finite state")
        return out

    def euler_step(self, x, u, dt):
        x, u = self._check(x, u)
        return x + dt * self.evaluate(0.0, x, u)

    def linearize_trajectory(self, xs, us, dt, scheme="euler"):
        """Batched discrete Jacobians along a trajectory.

        Returns ``A`` of shape (K, n, n) and ``B`` of shape (K, n, m); player
        ``i``'s control Jacobian is ``B[..., layout.control_slice(i)]``.
        ``scheme="euler"`` gives ``I + dt f_x`` / ``dt f_u``; ``scheme="rk4"``
        gives the exact Jacobians of :meth:`integrate_step`.
        """
        xs, us = self._check(xs, us)
        lay = self.layout
        batch = xs.shape[:-1]
        A = np.zeros(batch + (lay.n, lay.n))
        B = np.zeros(batch + (lay.n, lay.m))
        for i, mdl in enumerate(self.models):
            sx, su = lay.state_slice(i), lay.control_slice(i)
            xi, ui = xs[..., sx], us[..., su]
            mdl.check_linearizable(xi)
            if scheme == "euler":
                fx, fu = mdl.jacobians(xi, ui)
                A[..., sx, sx] = np.eye(mdl.state_dim) + dt * fx
                B[..., sx, su] = dt * fu
            elif scheme == "rk4":
                Ai, Bi = _rk4_jacobians(mdl, xi, ui, dt)
                A[..., sx, sx] = Ai
                B[..., sx, su] = Bi
            else:
                raise ValueError(f"unknown discretization scheme {scheme!r}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise NonFiniteError("non-finite Jacobian")
        return A, B

    def linearize_discretize(self, t, x, u, dt, scheme="euler") -> LinearizedDynamics:
        if dt < 0:
            raise ValueError(f"dt must be nonnegative, got {dt}")
        A, B = self.linearize_trajectory(np.asarray(x, float)[None], np.asarray(u, float)[None], dt, scheme)
        lay = self.layout
        return LinearizedDynamics(A[0], [B[0][:, lay.control_slice(i)] for i in range(lay.num_players)])

    def is_admissible(self, xs) -> bool:
        """True when every state is finite and linearizable."""
        xs = np.asarray(xs)
        if not np.all(np.isfinite(xs)):
            return False
        lay = self.layout
        for i, mdl in enumerate(self.models):
            if isinstance(mdl, BicycleModel):
                phi = xs[..., lay.state_offsets[i] + 4]
                if np.any(np.abs(phi) >= PHI_SINGULARITY_GUARD):
                    return False
        return True

    def position_index(self, i: int) -> tuple[int, int]:
        off = self.layout.state_offsets[i]
        return off, off + 1

    def speed_index(self, i: int) -> int:
        return self.layout.state_offsets[i] + 3


class LinearDynamics:
    """Discrete-time linear game dynamics ``x' = A x + sum_i B_i u_i``.

    Used for LQ test problems; its Jacobians are exact regardless of scheme.
    """

    def __init__(self, A, Bs, position_indices=None):
        self.A = np.asarray(A, dtype=float)
        self.Bs = [np.asarray(B, dtype=float) for B in Bs]
        n = self.A.shape[0]
        if self.A.shape != (n, n) or any(B.shape[0] != n for B in self.Bs):
            raise DimensionError("inconsistent A/B shapes")
        # no per-player state blocks: one shared state, per-player controls
        self.layout = _LinearLayout(n, tuple(B.shape[1] for B in self.Bs))
        self.B = np.concatenate(self.Bs, axis=1)
        self._positions = position_indices

    @property
    def num_players(self):
        return len(self.Bs)

    def step(self, x, u, dt=None):
        return self.A @ x + self.B @ u

    def integrate_step(self, x, u, dt=None):
        out = self.step(np.asarray(x, float), np.asarray(u, float))
        if not np.all(np.isfinite(out)):
            raise DivergenceError("integration produced non-finite state")
        return out

    def linearize_trajectory(self, xs, us, dt=None, scheme=None):
        batch = np.asarray(xs).shape[:-1]
        return (np.broadcast_to(self.A, batch + self.A.shape).copy(),
                np.broadcast_to(self.B, batch + self.B.shape).copy())

    def is_admissible(self, xs):
        return bool(np.all(np.isfinite(xs)))

    def position_index(self, i):
        if self._positions is None:
            raise DimensionError("no position indices registered for this linear system")
        return self._positions[i]


class _LinearLayout:
    """Layout for a joint linear system: one shared state, per-player controls."""

    def __init__(self, n, control_dims):
        self.state_dims = (n,)
        self.control_dims = control_dims
        self.control_offsets = tuple(np.cumsum((0,) + control_dims[:-1]).tolist())
        self._n = n

    @property
    def num_players(self):
        return len(self.control_dims)

    @property
    def n(self):
        return self._n

    @property
    def m(self):
        return int(sum(self.control_dims))

    def control_slice(self, i):
        return slice(self.control_offsets[i], self.control_offsets[i] + self.control_dims[i])
