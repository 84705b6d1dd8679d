"""Command-line simulator: single solves, T_adv sweeps and receding-horizon runs.

Outputs are plain files in ``--out``:

* ``<scenario>_tadv<T>.csv`` / ``.json``      planned trajectory and summary
* ``<scenario>_sweep.csv`` / ``.json``        sweep table
* ``<scenario>_receding_tadv<T>.csv`` / ``.json``  executed trajectory

The CSV is long format with one row per (timestep, player) and the header
``t, player, px, py, theta, v, phi, a, u1, u2, phase, min_dist, max_violation``.
Fields a model does not have (a pedestrian's ``phi`` and ``a``) and the
controls of the final timestep are left empty.  Floats are written with
``repr`` so a file reproduces the arrays exactly.

Exit codes: 0 success, 2 infeasible or failed solve, 3 config error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .costs import adversarial_steps
from .exceptions import ConfigError, GameError
from .ilq import (
    GameProblem,
    GameSolution,
    OperatingPoint,
    SolverConfig,
    _FeedbackBlock,
    _rollout_blocks,
    constraint_values,
    phase_labels,
    solve,
)
from .lq_game import AffineStrategy
from .scenarios import build_scenario, load_named

logger = logging.getLogger(__name__)

CSV_HEADER = ("t", "player", "px", "py", "theta", "v", "phi", "a", "u1", "u2", "phase", "min_dist", "max_violation")
STATE_COLUMNS = ("px", "py", "theta", "v", "phi", "a")
WORLD_MODELS = ("cooperative", "planned")

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_CONFIG = 3


@dataclass
class RecedingHorizonConfig:
    replan_interval: float = 0.5
    duration: float = 5.0
    world_model: str = "cooperative"

    def steps(self, dt):
        """(steps per replan, total steps); both must be whole multiples of dt."""
        out = []
        for name, value in (("replan interval", self.replan_interval), ("duration", self.duration)):
            ratio = value / dt
            if not value > 0 or abs(ratio - round(ratio)) > 1e-9:
                raise ConfigError(f"{name} must be a positive multiple of dt={dt}")
            out.append(int(round(ratio)))
        if self.world_model not in WORLD_MODELS:
            raise ConfigError(f"world model must be one of {WORLD_MODELS}")
        return tuple(out)


@dataclass
class TrajectoryRecord:
    """Per-timestep joint trajectory; ``controls`` has one row fewer than ``states``."""

    t: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    phases: list
    min_dist: np.ndarray
    max_violation: np.ndarray
    player_names: list
    state_offsets: tuple
    state_dims: tuple
    control_offsets: tuple

    def __len__(self):
        return len(self.t)

    def player_states(self, i):
        o = self.state_offsets[i]
        return self.states[:, o:o + self.state_dims[i]]

    def rows(self):
        K = len(self.controls)
        for k in range(len(self.t)):
            for i, name in enumerate(self.player_names):
                x = self.player_states(i)[k]
                cols = [_fmt(v) for v in x] + [""] * (len(STATE_COLUMNS) - len(x))
                if k < K:
                    c = self.control_offsets[i]
                    u = [_fmt(v) for v in self.controls[k, c:c + 2]]
                else:
                    u = ["", ""]
                yield [_fmt(self.t[k]), name, *cols, *u, self.phases[k],
                       _fmt(self.min_dist[k, i]), _fmt(self.max_violation[k, i])]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows(self.rows())
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _fmt(v) -> str:
    return repr(float(v))


def pairwise_min_distance(problem: GameProblem, xs) -> np.ndarray:
    """(T, N): each player's distance to its nearest other player."""
    N = problem.num_players
    pos = np.stack([xs[:, list(problem.dynamics.position_index(i))] for i in range(N)], axis=1)
    d = np.linalg.norm(pos[:, :, None, :] - pos[:, None, :, :], axis=-1)
    d[:, np.arange(N), np.arange(N)] = np.inf
    return d.min(axis=2) if N > 1 else np.full((len(xs), 1), np.inf)


def player_violations(problem: GameProblem, xs) -> np.ndarray:
    """(T, N): worst violation of the constraints each player owns, clipped at 0."""
    out = np.zeros((len(xs), problem.num_players))
    g = constraint_values(problem, xs)
    for c, row in zip(problem.constraints, g):
        out[:, c.owner] = np.maximum(out[:, c.owner], row)
    return out


def make_record(problem: GameProblem, xs, us, phases, t0=0.0) -> TrajectoryRecord:
    lay = problem.dynamics.layout
    names = problem.player_names or [f"player{i}" for i in range(problem.num_players)]
    t = t0 + problem.dt * np.arange(len(xs))
    return TrajectoryRecord(
        t=t, states=np.asarray(xs), controls=np.asarray(us), phases=list(phases),
        min_dist=pairwise_min_distance(problem, xs), max_violation=player_violations(problem, xs),
        player_names=list(names), state_offsets=tuple(lay.state_offsets), state_dims=tuple(lay.state_dims),
        control_offsets=tuple(lay.control_offsets),
    )


def ego_lateral_deviation(problem: GameProblem, xs) -> np.ndarray:
    lane = problem.lanes[problem.config["players"][0]["lane"]]
    return lane.project(xs[:, list(problem.dynamics.position_index(0))]).distance


def summarize(problem: GameProblem, solution: GameSolution, xs=None, timing=False) -> dict:
    xs = solution.xs if xs is None else xs
    lay = problem.dynamics.layout
    speeds = [float(xs[:, problem.dynamics.speed_index(i)].min()) for i in range(problem.num_players)]
    out = {
        "scenario": problem.config["name"] if problem.config else None,
        "T_adv": problem.T_adv,
        "T": problem.T,
        "dt": problem.dt,
        "players": problem.player_names,
        "converged": solution.converged,
        "feasible": solution.feasible,
        "max_violation": solution.max_violation,
        "costs": [float(c) for c in solution.costs],
        "inner_iterations": solution.inner_iterations,
        "outer_iterations": solution.outer_iterations,
        "max_ego_lateral_deviation": float(ego_lateral_deviation(problem, xs).max()),
        "min_distance": float(pairwise_min_distance(problem, xs).min()),
        "min_speed": speeds,
        "rows": len(xs),
        "state_dim": lay.n,
    }
    if timing:
        out["solve_time"] = solution.solve_time
    return out


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _tag(T_adv):
    return f"{float(T_adv):g}"


def _scenario_name(scenario):
    if isinstance(scenario, dict):
        return scenario.get("name", "custom")
    return load_named(scenario)["name"]


# ---------------------------------------------------------------------------
# operations


def run_single(scenario, T_adv=None, out_dir=None, config: SolverConfig | None = None,
               cooperative_only=False, timing=False):
    """Solve once over the full horizon; returns ``(problem, solution, record, summary)``."""
    problem = build_scenario(scenario, T_adv, cooperative_only=cooperative_only)
    solution = solve(problem, config=config)
    logger.info("solved %s T_adv=%g in %.3f s", problem.config["name"], problem.T_adv, solution.solve_time)
    record = make_record(problem, solution.xs, solution.us, phase_labels(problem))
    summary = summarize(problem, solution, timing=timing)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{problem.config['name']}_tadv{_tag(problem.T_adv)}"
        record.to_csv(out / f"{stem}.csv")
        _write_json(out / f"{stem}.json", summary)
    return problem, solution, record, summary


def _sweep_one(args):
    scenario, T_adv, out_dir, config, timing = args
    try:
        _, solution, _, summary = run_single(scenario, T_adv, out_dir, config, timing=timing)
        return summary
    except GameError as exc:
        return {"T_adv": float(T_adv), "error": f"{type(exc).__name__}: {exc}"}


SWEEP_COLUMNS = ("T_adv", "max_ego_lateral_deviation", "min_distance", "inner_iterations", "converged", "feasible")


def run_sweep(scenario, T_advs, out_dir=None, config: SolverConfig | None = None, jobs=1, timing=False):
    """Independent solves over ``T_advs``; failures are recorded and the sweep continues."""
    T_advs = [float(t) for t in T_advs]
    if not T_advs:
        raise ConfigError("sweep needs at least one T_adv value")
    name = _scenario_name(scenario)
    tasks = [(scenario, t, out_dir, config, timing) for t in T_advs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    table = {"scenario": name, "runs": results}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / f"{name}_sweep.json", table)
        cols = SWEEP_COLUMNS + (("solve_time",) if timing else ())
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols + ("error",))
        for r in results:
            writer.writerow([r.get(c, "") for c in cols] + [r.get("error", "")])
        (out / f"{name}_sweep.csv").write_text(buf.getvalue())
    return table


def shift_warm_start(strategies, op: OperatingPoint, steps: int):
    """Drop the first ``steps`` stages; pad gains, feedforward and controls with zeros."""
    K = op.horizon
    shifted = []
    for s in strategies:
        P = np.zeros_like(s.P)
        alpha = np.zeros_like(s.alpha)
        P[:K - steps] = s.P[steps:]
        alpha[:K - steps] = s.alpha[steps:]
        shifted.append(AffineStrategy(P, alpha))
    xs = np.concatenate([op.xs[steps:], np.repeat(op.xs[-1:], steps, axis=0)])
    us = np.concatenate([op.us[steps:], np.zeros((steps, op.us.shape[1]))])
    return shifted, OperatingPoint(xs, us)


def _blocks(problem, solution, players):
    lay = problem.dynamics.layout
    op = solution.operating_point
    return [
        _FeedbackBlock(lay.control_slice(i), solution.strategies[i].P, solution.strategies[i].alpha,
                       op.us[:, lay.control_slice(i)], op.xs, damped=False)
        for i in players
    ]


@dataclass
class RecedingResult:
    record: TrajectoryRecord
    summary: dict
    plans: list
    junctions: list
    status: int


def run_receding(scenario, T_adv=None, rh: RecedingHorizonConfig | None = None, out_dir=None,
                 config: SolverConfig | None = None, timing=False) -> RecedingResult:
    """Replan from the carried world state every ``replan_interval`` seconds.

    Each replan solves the ego's split-horizon game from the current joint
    state.  The ego executes its equilibrium feedback law; the other agents
    follow either the equilibrium of a separate all-cooperative solve
    (``world_model="cooperative"``) or the ego's own planned equilibrium
    (``"planned"``).  The adversarial window is measured from each replan.
    """
    rh = rh or RecedingHorizonConfig()
    base = build_scenario(scenario, T_adv)
    coop_base = build_scenario(scenario, T_adv, cooperative_only=True)
    interval, total = rh.steps(base.dt)
    N = base.num_players
    x = base.x0.copy()
    xs, us = [x[None]], []
    plans, junctions, solve_times = [], [], []
    warm = warm_coop = None
    status = EXIT_OK
    done = 0
    while done < total:
        steps = min(interval, total - done)
        problem = dataclasses.replace(base, x0=x)
        try:
            plan = solve(problem, warm_start=warm, config=config)
            world = plan
            if rh.world_model == "cooperative":
                world = solve(dataclasses.replace(coop_base, x0=x), warm_start=warm_coop, config=config)
                warm_coop = shift_warm_start(world.strategies, world.operating_point, steps)
        except GameError as exc:
            logger.error("replan at t=%.2f failed: %s", done * base.dt, exc)
            status = EXIT_INFEASIBLE
            break
        solve_times.append(plan.solve_time)
        logger.info("replan t=%.2f solve %.3f s", done * base.dt, plan.solve_time)
        plans.append({"start_step": done, "x0": plan.xs[0].copy(), "feasible": plan.feasible})
        blocks = _blocks(problem, plan, [0]) + _blocks(problem, world, range(1, N))
        seg = _rollout_blocks(problem.dynamics, blocks, x, steps, problem.dt, 1.0)
        xs.append(seg.xs[1:])
        us.append(seg.us)
        x = seg.xs[-1]
        done += steps
        junctions.append(x.copy())
        warm = shift_warm_start(plan.strategies, plan.operating_point, steps)
        if not (plan.feasible and world.feasible):
            status = EXIT_INFEASIBLE
            break

    xs = np.concatenate(xs)
    us = np.concatenate(us) if us else np.zeros((0, base.dynamics.layout.m))
    k_adv = adversarial_steps(base.T_adv, base.dt)
    phases = ["adversarial" if k < k_adv else "cooperative" for k in range(len(xs))]
    record = make_record(base, xs, us, phases)
    summary = {
        "scenario": base.config["name"],
        "T_adv": base.T_adv,
        "dt": base.dt,
        "replan_interval": rh.replan_interval,
        "duration": rh.duration,
        "world_model": rh.world_model,
        "players": base.player_names,
        "replans": len(plans),
        "completed": done == total and status == EXIT_OK,
        "status": status,
        "rows": len(xs),
        "min_distance": float(pairwise_min_distance(base, xs).min()),
        "max_violation": float(player_violations(base, xs).max()),
        "max_ego_lateral_deviation": float(ego_lateral_deviation(base, xs).max()),
    }
    if timing:
        summary["solve_times"] = solve_times
        summary["median_solve_time"] = statistics.median(solve_times) if solve_times else None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{base.config['name']}_receding_tadv{_tag(base.T_adv)}"
        record.to_csv(out / f"{stem}.csv")
        _write_json(out / f"{stem}.json", summary)
    return RecedingResult(record, summary, plans, junctions, status)


# ---------------------------------------------------------------------------
# CLI


def _parse_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad T_adv list {text!r}") from exc


def build_parser():
    p = argparse.ArgumentParser(prog="defensive-ilq", description=__doc__.split("\n")[0])
    p.add_argument("--scenario", default="oncoming", help="shipped scenario name or config path")
    p.add_argument("--t-adv", type=float, default=None, help="adversarial horizon in seconds")
    p.add_argument("--sweep", type=_parse_list, default=None, help="comma-separated T_adv values")
    p.add_argument("--receding", action="store_true", help="receding-horizon simulation")
    p.add_argument("--replan-interval", type=float, default=0.5)
    p.add_argument("--duration", type=float, default=5.0)
    p.add_argument("--world-model", choices=WORLD_MODELS, default="cooperative")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="reserved; the solver is deterministic")
    p.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    p.add_argument("--timing", action="store_true", help="include wall-clock times in JSON output")
    p.add_argument("--verbose", action="store_true", help="log per-iteration diagnostics as JSON lines")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    config = SolverConfig(verbose=args.verbose)
    try:
        if args.sweep is not None and args.receding:
            raise ConfigError("--sweep and --receding are mutually exclusive")
        if args.sweep is not None:
            table = run_sweep(args.scenario, args.sweep, args.out, config, jobs=args.jobs, timing=args.timing)
            for r in table["runs"]:
                print(json.dumps({k: r.get(k) for k in SWEEP_COLUMNS + ("error",) if k in r}, sort_keys=True))
            failed = [r for r in table["runs"] if "error" in r or not r.get("feasible", False)]
            return EXIT_INFEASIBLE if failed else EXIT_OK
        if args.receding:
            rh = RecedingHorizonConfig(args.replan_interval, args.duration, args.world_model)
            result = run_receding(args.scenario, args.t_adv, rh, args.out, config, timing=args.timing)
            print(json.dumps(result.summary, sort_keys=True))
            return result.status
        _, solution, _, summary = run_single(args.scenario, args.t_adv, args.out, config, timing=args.timing)
        print(json.dumps(summary, sort_keys=True))
        print(f"solve time {solution.solve_time:.3f} s", file=sys.stderr)
        return EXIT_OK if solution.feasible else EXIT_INFEASIBLE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GameError as exc:
        print(f"solve failed: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
