"""Iterative LQ game solver with augmented-Lagrangian constraint handling.

Inner loop: roll out the current strategies, linearize the dynamics and
quadraticize every player's cost (plus constraint penalties) along the
operating point, solve the LQ game, then take a damped step on the
feedforward terms.  Outer loop: update the multipliers until the constraint
violation falls below tolerance.
"""

from __future__ import annotations

import json
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .constraints import MultiplierState, accumulate_penalty, phr, update_multipliers
from .costs import SplitHorizonCost, adversarial_steps, quadraticize_trajectory, total_cost
from .exceptions import DivergenceError, NonFiniteError
from .lq_game import AffineStrategy, LqGameArrays, closed_loop_game, solve_lq_arrays

logger = logging.getLogger(__name__)

DEFAULT_STEP_SIZES = tuple(0.5**k for k in range(7))
# iterates remembered for cycle detection (catches periods up to CYCLE_MEMORY + 1)
CYCLE_MEMORY = 3


@dataclass
class OperatingPoint:
    """States ``xs`` (K+1, n) and joint controls ``us`` (K, m)."""

    xs: np.ndarray
    us: np.ndarray

    @property
    def horizon(self):
        return len(self.us)

    def copy(self):
        return OperatingPoint(self.xs.copy(), self.us.copy())


@dataclass
class GameProblem:
    """A full game instance.  Player 0 is the ego."""

    dynamics: object
    costs: list
    constraints: list
    x0: np.ndarray
    T: float = 15.0
    dt: float = 0.1
    T_adv: float = 0.0
    player_names: list | None = None
    lanes: dict = field(default_factory=dict)
    config: dict | None = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        if len(self.costs) != self.dynamics.layout.num_players:
            raise ValueError("need exactly one cost per player")
        for i, c in enumerate(self.costs):
            if isinstance(c, SplitHorizonCost) and c.player != i:
                raise ValueError(f"cost {i} is labelled for player {c.player}")
        if self.x0.shape != (self.dynamics.layout.n,):
            raise ValueError("x0 has the wrong dimension")
        if not (self.dt > 0 and self.T > 0):
            raise ValueError("T and dt must be positive")
        if not 0 <= self.T_adv <= self.T:
            raise ValueError("need 0 <= T_adv <= T")
        if not math.isclose(self.T / self.dt, round(self.T / self.dt), abs_tol=1e-9):
            raise ValueError("dt must divide T")

    @property
    def horizon(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def num_players(self) -> int:
        return self.dynamics.layout.num_players


@dataclass
class SolverConfig:
    max_inner_iterations: int = 100
    max_outer_iterations: int = 10
    convergence_tol: float = 1e-4
    step_sizes: tuple = DEFAULT_STEP_SIZES
    trust_region: float = 10.0
    regularization: float = 1e-4
    constraint_tol: float = 1e-2
    mu0: float = 10.0
    mu_growth: float = 10.0
    mu_max: float = 1e6
    linearization: str = "rk4"
    verbose: bool = False

    def __post_init__(self):
        if self.max_inner_iterations < 1 or self.max_outer_iterations < 1:
            raise ValueError("iteration budgets must be positive")
        if not (self.convergence_tol > 0 and self.trust_region > 0 and self.constraint_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.regularization < 0:
            raise ValueError("regularization must be nonnegative")


@dataclass
class GameSolution:
    operating_point: OperatingPoint
    strategies: list
    costs: np.ndarray
    max_violation: float
    inner_iterations: int
    outer_iterations: int
    solve_time: float
    converged: bool
    feasible: bool
    multipliers: MultiplierState
    history: list = field(default_factory=list)

    @property
    def xs(self):
        return self.operating_point.xs

    @property
    def us(self):
        return self.operating_point.us


# ---------------------------------------------------------------------------
# rollout


@dataclass
class _FeedbackBlock:
    controls: slice
    P: np.ndarray
    alpha: np.ndarray
    u_ref: np.ndarray
    x_ref: np.ndarray
    damped: bool = True


class _OutsideTrustRegion(Exception):
    pass


def _rollout_blocks(dynamics, blocks, x0, horizon, dt, eta, bound=None):
    """Closed-loop simulation.  ``bound=(xs_ref, radius)`` aborts early with
    :class:`_OutsideTrustRegion` once the state leaves the trust region."""
    m = dynamics.layout.m
    xs = np.empty((horizon + 1, len(x0)))
    us = np.empty((horizon, m))
    x = np.asarray(x0, dtype=float)
    xs[0] = x
    for k in range(horizon):
        u = us[k]
        for b in blocks:
            ff = b.alpha[k] * eta if b.damped else b.alpha[k]
            u[b.controls] = b.u_ref[k] - b.P[k] @ (x - b.x_ref[k]) - ff
        x = dynamics.step(x, u, dt)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"rollout diverged at step {k}")
        if bound is not None and np.max(np.abs(x - bound[0][k + 1])) > bound[1]:
            raise _OutsideTrustRegion
        xs[k + 1] = x
    return OperatingPoint(xs, us)


def _player_blocks(layout, strategies, reference, players=None):
    players = range(layout.num_players) if players is None else players
    return [
        _FeedbackBlock(
            layout.control_slice(i), strategies[i].P, strategies[i].alpha,
            reference.us[:, layout.control_slice(i)], reference.xs,
        )
        for i in players
    ]


def rollout(dynamics, strategies, reference: OperatingPoint, eta=1.0, dt=0.1, x0=None) -> OperatingPoint:
    """Simulate ``u_i = u_i^ref - P_i (x - x^ref) - eta alpha_i`` through the integrator."""
    x0 = reference.xs[0] if x0 is None else x0
    blocks = _player_blocks(dynamics.layout, strategies, reference)
    return _rollout_blocks(dynamics, blocks, x0, reference.horizon, dt, eta)


def zero_control_rollout(problem: GameProblem) -> OperatingPoint:
    K = problem.horizon
    us = np.zeros((K, problem.dynamics.layout.m))
    xs = np.empty((K + 1, len(problem.x0)))
    xs[0] = problem.x0
    for k in range(K):
        xs[k + 1] = problem.dynamics.step(xs[k], us[k], problem.dt)
    if not np.all(np.isfinite(xs)):
        raise DivergenceError("initial rollout diverged")
    return OperatingPoint(xs, us)


# ---------------------------------------------------------------------------
# approximation


def constraint_values(problem: GameProblem, xs) -> np.ndarray:
    if not problem.constraints:
        return np.zeros((0, len(xs)))
    return np.stack([c.evaluate(xs) for c in problem.constraints])


def _player_model(problem, i, op, mult, config):
    """Quadratic model of player i's augmented cost; K+1 rows (last = terminal)."""
    model = quadraticize_trajectory(problem.costs[i], op.xs, op.us, problem.dt, scale=problem.dt)
    for c_idx, con in enumerate(problem.constraints):
        if con.owner == i:
            accumulate_penalty(con, mult.lam[c_idx], mult.mu, op.xs, model.l, model.Q)
    if config.regularization:
        idx = np.arange(op.xs.shape[1])
        model.Q[:, idx, idx] += config.regularization
    return model


def approximate_game(problem: GameProblem, op: OperatingPoint, mult: MultiplierState, config: SolverConfig) -> LqGameArrays:
    layout = problem.dynamics.layout
    N = layout.num_players
    K = op.horizon
    A, B = problem.dynamics.linearize_trajectory(op.xs[:K], op.us, problem.dt, config.linearization)
    Q, l, R, r = [], [], [], []
    for i in range(N):
        model = _player_model(problem, i, op, mult, config)
        Q.append(model.Q)
        l.append(model.l)
        Ri, ri = [], []
        for j in range(N):
            s = layout.control_slice(j)
            Rij = model.R[:K, s, s]
            rij = model.r[:K, s]
            Ri.append(Rij if (j == i or np.any(Rij)) else None)
            ri.append(rij if np.any(rij) else None)
        R.append(Ri)
        r.append(ri)
    for arr in (A, B):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("non-finite linearization")
    return LqGameArrays(A, B, tuple(layout.control_dims), Q, l, R, r)


def augmented_cost(problem: GameProblem, i, op: OperatingPoint, mult: MultiplierState) -> float:
    """Player i's total cost plus the PHR penalties of the constraints it owns."""
    value = total_cost(problem.costs[i], op.xs, op.us, problem.dt)
    for c_idx, con in enumerate(problem.constraints):
        if con.owner == i:
            pen, _, _ = phr(mult.lam[c_idx], mult.mu, con.evaluate(op.xs))
            value += math.fsum(pen)
    return value


# ---------------------------------------------------------------------------
# inner loop


def _max_change(a: OperatingPoint, b: OperatingPoint) -> float:
    return float(np.max(np.abs(a.xs - b.xs)))


def _log(config, record):
    if config.verbose:
        logger.info(json.dumps(record, sort_keys=True))


def _inner_loop(problem, op, mult, config, history, outer):
    """Damped ILQ iterations at fixed multipliers.  Returns (op, strategies, iterations, converged)."""
    layout = problem.dynamics.layout
    strategies = None
    steps = config.step_sizes
    first = cap = 0
    recent = deque(maxlen=CYCLE_MEMORY)
    for it in range(1, config.max_inner_iterations + 1):
        game = approximate_game(problem, op, mult, config)
        strategies = solve_lq_arrays(game)
        blocks = _player_blocks(layout, strategies, op)
        new, step = None, None
        # backtracking line search from the current starting notch
        for idx in range(first, len(steps)):
            try:
                cand = _rollout_blocks(problem.dynamics, blocks, op.xs[0], op.horizon, problem.dt, steps[idx],
                                       bound=(op.xs, config.trust_region))
            except (DivergenceError, _OutsideTrustRegion):
                continue
            if problem.dynamics.is_admissible(cand.xs):
                new, step, accepted = cand, steps[idx], idx
                break
        if new is None:
            # nothing inside the trust region: take the smallest admissible step
            for idx in reversed(range(len(steps))):
                try:
                    cand = _rollout_blocks(problem.dynamics, blocks, op.xs[0], op.horizon, problem.dt, steps[idx])
                except DivergenceError:
                    continue
                if problem.dynamics.is_admissible(cand.xs):
                    new, step, accepted = cand, steps[idx], idx
                    break
        if new is None:
            raise DivergenceError(f"rollout non-finite at every step size (outer {outer}, inner {it})")
        change = _max_change(new, op)
        # start one notch above the last accepted step; a return to a recent
        # iterate is a short cycle (kinks in the costs cause these), so cap
        # the step size from then on
        if any(_max_change(new, old) < 0.1 * change for old in recent):
            cap = min(cap + 1, len(steps) - 1)
        first = max(accepted - 1, cap)
        recent.append(op)
        op = new
        record = {"outer": outer, "inner": it, "step": step, "change": change}
        if config.verbose:
            record["costs"] = [total_cost(c, op.xs, op.us, problem.dt) for c in problem.costs]
            viol = constraint_values(problem, op.xs)
            record["max_violation"] = float(max(0.0, viol.max())) if viol.size else 0.0
        history.append(record)
        _log(config, record)
        if change < config.convergence_tol:
            return op, strategies, it, True
    return op, strategies, config.max_inner_iterations, False


def _shift_free_strategies(strategies):
    """Strategies about the final operating point: keep gains, drop feedforward."""
    return [AffineStrategy(s.P.copy(), np.zeros_like(s.alpha)) for s in strategies]


def _initial_operating_point(problem, warm_start, config):
    """Rollout of the warm start, falling back to its controls open loop and
    then to zero controls.  Feedback gains from an earlier plan can be wild
    when the executed state has drifted from that plan, so the closed-loop
    rollout must stay inside the trust region around the reference."""
    if warm_start is not None:
        strategies, reference = warm_start
        layout = problem.dynamics.layout
        blocks = _player_blocks(layout, strategies, reference)
        open_loop = [_FeedbackBlock(b.controls, np.zeros_like(b.P), np.zeros_like(b.alpha), b.u_ref, b.x_ref)
                     for b in blocks]
        for cand_blocks, bound in ((blocks, (reference.xs, config.trust_region)), (open_loop, None)):
            try:
                op = _rollout_blocks(problem.dynamics, cand_blocks, problem.x0, reference.horizon, problem.dt, 1.0,
                                     bound=bound)
            except (DivergenceError, _OutsideTrustRegion):
                continue
            if problem.dynamics.is_admissible(op.xs):
                return op
    return zero_control_rollout(problem)


def solve(problem: GameProblem, warm_start=None, config: SolverConfig | None = None) -> GameSolution:
    """Approximate local feedback Nash equilibrium of ``problem``.

    Args:
        problem: the game.
        warm_start: optional ``(strategies, reference OperatingPoint)``; the
            initial operating point is their rollout from ``problem.x0``.
            Defaults to a zero-control rollout.
        config: solver settings.

    The returned strategies are expressed about the returned operating point
    (zero feedforward), so executing them from ``x0`` reproduces it exactly.
    Runs that exhaust the outer budget above tolerance come back with
    ``feasible=False`` rather than raising.
    """
    config = config or SolverConfig()
    start = time.perf_counter()
    K = problem.horizon
    op = _initial_operating_point(problem, warm_start, config)

    mult = MultiplierState.zeros(len(problem.constraints), K + 1, config.mu0)
    history = []
    total_inner = 0
    converged = False
    strategies = None
    max_violation = np.inf
    outer = 0
    for outer in range(1, config.max_outer_iterations + 1):
        op, strategies, its, converged = _inner_loop(problem, op, mult, config, history, outer)
        total_inner += its
        viol = constraint_values(problem, op.xs)
        max_violation = float(max(0.0, viol.max())) if viol.size else 0.0
        _log(config, {"outer": outer, "max_violation": max_violation, "mu": mult.mu})
        if max_violation < config.constraint_tol:
            break
        if outer < config.max_outer_iterations:
            mult = update_multipliers(mult, viol, config.mu_growth, config.mu_max)

    costs = np.array([total_cost(c, op.xs, op.us, problem.dt) for c in problem.costs])
    feasible = max_violation < config.constraint_tol
    if not feasible:
        logger.warning("solve finished with max violation %.3g above tolerance", max_violation)
    return GameSolution(
        operating_point=op,
        strategies=_shift_free_strategies(strategies),
        costs=costs,
        max_violation=max_violation,
        inner_iterations=total_inner,
        outer_iterations=outer,
        solve_time=time.perf_counter() - start,
        converged=converged,
        feasible=feasible,
        multipliers=mult,
        history=history,
    )


# ---------------------------------------------------------------------------
# local Nash verification


def best_response(problem: GameProblem, solution: GameSolution, player: int, config: SolverConfig | None = None,
                  max_iterations: int = 100):
    """Single-player iterative LQR for ``player`` against the others' fixed feedback laws.

    Other players keep ``u_j = u_j* - P_j (x - x*)`` from the solution.  The
    objective is the player's augmented cost with the solution's multipliers
    held fixed.  Returns ``(operating point, augmented cost)``.
    """
    config = config or SolverConfig()
    layout = problem.dynamics.layout
    ref = solution.operating_point
    others = [j for j in range(layout.num_players) if j != player]
    fixed = _player_blocks(layout, solution.strategies, ref, others)
    for b in fixed:
        b.damped = False
    mult = solution.multipliers
    op = ref.copy()
    best = augmented_cost(problem, player, op, mult)
    for _ in range(max_iterations):
        game = approximate_game(problem, op, mult, config)
        single = closed_loop_game(game, solution.strategies, player)
        strat = solve_lq_arrays(single)[0]
        s = layout.control_slice(player)
        own = _FeedbackBlock(s, strat.P, strat.alpha, op.us[:, s], op.xs)
        improved = False
        for eta in config.step_sizes:
            try:
                cand = _rollout_blocks(problem.dynamics, fixed + [own], op.xs[0], op.horizon, problem.dt, eta)
            except DivergenceError:
                continue
            if not problem.dynamics.is_admissible(cand.xs):
                continue
            value = augmented_cost(problem, player, cand, mult)
            if value < best:
                change = _max_change(cand, op)
                op, best, improved = cand, value, True
                break
        if not improved or change < config.convergence_tol:
            break
    return op, best


def nash_residual(problem: GameProblem, solution: GameSolution, config: SolverConfig | None = None) -> np.ndarray:
    """Per-player local Nash gap ``J_i(solution) - J_i(best response)`` on augmented costs."""
    gaps = []
    for i in range(problem.num_players):
        base = augmented_cost(problem, i, solution.operating_point, solution.multipliers)
        _, br = best_response(problem, solution, i, config)
        gaps.append(base - br)
    return np.array(gaps)


def phase_labels(problem: GameProblem):
    """'adversarial' for steps with t < T_adv, 'cooperative' otherwise (K+1 entries)."""
    k_adv = adversarial_steps(problem.T_adv, problem.dt)
    return ["adversarial" if k < k_adv else "cooperative" for k in range(problem.horizon + 1)]
