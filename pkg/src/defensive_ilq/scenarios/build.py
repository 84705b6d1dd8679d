"""Turn a validated scenario config into a :class:`GameProblem`."""

from __future__ import annotations

import numpy as np

from ..constraints import LaneConstraint, ProximityConstraint, SpeedConstraint
from ..costs import (
    AdversarialTerm,
    CooperativeProximityTerm,
    IdealSpeedTerm,
    InputQuadraticTerm,
    LaneCenterTerm,
    QuadraticStateTerm,
    SplitHorizonCost,
)
from ..dynamics import BicycleModel, MultiPlayerDynamics, UnicycleModel
from ..exceptions import ConfigError
from ..geometry import LaneCenterline
from ..ilq import GameProblem
from .config import lane_waypoints, load_named, validate_config


def _phase_weights(cfg, player, phase):
    weights = dict(cfg["costs"][phase])
    weights.update(player.get("costs", {}).get(phase, {}))
    return weights


def _input_matrix(spec):
    R = np.asarray(spec, dtype=float)
    return np.diag(R) if R.ndim == 1 else R


def _terms(weights, i, dyn, lane, v_ref, others, d_prox):
    """Running-cost terms for player i from one phase's weight table."""
    pos = dyn.position_index(i)
    terms = []
    if weights.get("lane", 0.0) > 0:
        terms.append(LaneCenterTerm(weights["lane"], lane, pos))
    if weights.get("speed", 0.0) > 0:
        terms.append(IdealSpeedTerm(weights["speed"], v_ref, dyn.speed_index(i)))
    if weights.get("proximity", 0.0) > 0:
        for j in others:
            terms.append(CooperativeProximityTerm(weights["proximity"], d_prox, pos, dyn.position_index(j)))
    if weights.get("adversarial", 0.0) > 0 and i != 0:
        terms.append(AdversarialTerm(
            weights["adversarial"], pos, dyn.position_index(0),
            clip_distance=weights.get("clip_distance", 30.0), form=weights.get("form", "attract"),
        ))
    if "input" in weights:
        R = _input_matrix(weights["input"])
        if R.shape != (dyn.layout.control_dims[i],) * 2:
            raise ConfigError(f"input weight for player {i} has the wrong size")
        terms.append(InputQuadraticTerm(R, dyn.layout.control_slice(i)))
    return terms


def build_game(cfg: dict, T_adv: float | None = None, cooperative_only: bool = False) -> GameProblem:
    """Generic builder shared by every scenario.

    ``cooperative_only`` drops all adversarial terms, giving the plain
    cooperative game used as the T_adv = 0 reference.
    """
    cfg = validate_config(cfg)
    if T_adv is not None:
        if not 0 <= T_adv <= cfg["horizon"]["T"]:
            raise ConfigError("T_adv must lie in [0, T]")
        cfg["horizon"]["T_adv"] = float(T_adv)
    horizon = cfg["horizon"]
    lanes = {lane["name"]: LaneCenterline(lane_waypoints(lane), lane["name"]) for lane in cfg["lanes"]}
    players = cfg["players"]
    models = [BicycleModel(p["wheelbase"]) if p["model"] == "bicycle" else UnicycleModel() for p in players]
    dyn = MultiPlayerDynamics(models)
    con = cfg["constraints"]
    d_prox = con["d_prox"]
    N = len(players)

    costs = []
    for i, p in enumerate(players):
        lane = lanes[p["lane"]]
        others = [j for j in range(N) if j != i]
        if i == 0:
            terms = _terms(_phase_weights(cfg, p, "ego"), i, dyn, lane, p["v_ref"], others, d_prox)
            costs.append(SplitHorizonCost(0, cooperative=terms))
            continue
        coop = _terms(_phase_weights(cfg, p, "cooperative"), i, dyn, lane, p["v_ref"], others, d_prox)
        adv = [] if cooperative_only else _terms(
            _phase_weights(cfg, p, "adversarial"), i, dyn, lane, p["v_ref"], others, d_prox)
        costs.append(SplitHorizonCost(i, cooperative=coop, adversarial=adv, T_adv=horizon["T_adv"]))

    constraints = []
    if con["proximity"]:
        for j in range(1, N):
            constraints.append(ProximityConstraint(j, d_prox, dyn.position_index(0), dyn.position_index(j)))
    for i, p in enumerate(players):
        if con["lane"]:
            constraints.append(LaneConstraint(i, lanes[p["lane"]], p.get("d_lane", con["d_lane"]), dyn.position_index(i)))
        if con["speed"]:
            constraints.append(SpeedConstraint(i, p["v_lo"], p["v_hi"], dyn.speed_index(i)))

    x0 = np.concatenate([np.asarray(p["initial_state"], dtype=float) for p in players])
    problem = GameProblem(
        dynamics=dyn,
        costs=costs,
        constraints=constraints,
        x0=x0,
        T=horizon["T"],
        dt=horizon["dt"],
        T_adv=horizon["T_adv"],
        player_names=[p["name"] for p in players],
        lanes=lanes,
        config=cfg,
    )
    infeasible = [c for c in constraints if c.evaluate(x0[None])[0] > 0]
    if infeasible:
        raise ConfigError(f"initial state violates {infeasible}")
    return problem


def _require_models(cfg, expected, scenario):
    got = [p["model"] for p in cfg["players"]]
    if got != expected:
        raise ConfigError(f"{scenario} scenario needs players {expected}, got {got}")


def build_oncoming(cfg: dict | None = None, T_adv=None, cooperative_only=False) -> GameProblem:
    """Two cars on a straight two-lane road, ego northbound, the other southbound."""
    cfg = validate_config(cfg) if cfg is not None else load_named("oncoming")
    _require_models(cfg, ["bicycle", "bicycle"], "oncoming")
    return build_game(cfg, T_adv, cooperative_only)


def build_three_player_intersection(cfg: dict | None = None, T_adv=None, cooperative_only=False) -> GameProblem:
    """Ego straight through, oncoming car turning left, pedestrian on the crosswalk."""
    cfg = validate_config(cfg) if cfg is not None else load_named("intersection")
    _require_models(cfg, ["bicycle", "bicycle", "unicycle"], "intersection")
    return build_game(cfg, T_adv, cooperative_only)


BUILDERS = {"oncoming": build_oncoming, "intersection": build_three_player_intersection}


def build_scenario(scenario, T_adv=None, cooperative_only=False) -> GameProblem:
    """Build from a shipped name, a config path, or an already-loaded config dict."""
    if isinstance(scenario, dict):
        return build_game(scenario, T_adv, cooperative_only)
    if scenario in BUILDERS:
        return BUILDERS[scenario](None, T_adv, cooperative_only)
    return build_game(load_named(scenario), T_adv, cooperative_only)


def _describe_term(term):
    out = {"kind": term.kind, "weight": term.weight}
    for attr in ("pos", "pos_i", "pos_j", "v_ref", "v_index", "d_prox", "clip_distance", "form"):
        if hasattr(term, attr):
            out[attr] = getattr(term, attr)
    if isinstance(term, LaneCenterTerm):
        out["lane"] = (term.lane.name, term.lane.waypoints.tolist())
    if isinstance(term, InputQuadraticTerm):
        out["R"] = term.R.tolist()
        out["controls"] = (term.controls.start, term.controls.stop)
    if isinstance(term, QuadraticStateTerm):
        out["Q"] = term.Q.tolist()
        out["q"] = term.q.tolist()
    return out


def _describe_constraint(c):
    out = {"kind": c.kind, "owner": c.owner}
    for attr in ("other", "d_prox", "d_lane", "v_lo", "v_hi", "v_index", "pos", "pos_owner", "pos_other"):
        if hasattr(c, attr):
            out[attr] = getattr(c, attr)
    if isinstance(c, LaneConstraint):
        out["lane"] = (c.lane.name, c.lane.waypoints.tolist())
    return out


def describe_problem(problem: GameProblem) -> dict:
    """Plain-data description of a problem; equal descriptions mean equal games."""
    return {
        "models": [repr(m) for m in problem.dynamics.models],
        "x0": problem.x0.tolist(),
        "horizon": (problem.T, problem.dt, problem.T_adv),
        "costs": [
            {
                "player": c.player,
                "T_adv": c.T_adv,
                "cooperative": [_describe_term(t) for t in c.cooperative],
                "adversarial": [_describe_term(t) for t in c.adversarial],
            }
            for c in problem.costs
        ],
        "constraints": [_describe_constraint(c) for c in problem.constraints],
    }


def validate_problem(problem: GameProblem, require_split=True) -> list[str]:
    """Structural checks; returns a list of problems found (empty when valid)."""
    issues = []
    if problem.costs[0].adversarial:
        issues.append("ego cost must not be split")
    for c in problem.constraints:
        if isinstance(c, ProximityConstraint) and c.owner != 0:
            issues.append(f"proximity constraint owned by player {c.owner}")
    for c in problem.costs[1:]:
        if not c.cooperative:
            issues.append(f"player {c.player} has no cooperative terms")
        if require_split and not c.adversarial:
            issues.append(f"player {c.player} has no adversarial terms")
    n = problem.dynamics.layout.n
    if problem.x0.shape != (n,):
        issues.append("x0 dimension mismatch")
    for c in problem.constraints:
        idx = [i for attr in ("pos", "pos_owner", "pos_other") for i in getattr(c, attr, ())]
        idx += [getattr(c, "v_index")] if hasattr(c, "v_index") else []
        if any(not 0 <= i < n for i in idx):
            issues.append(f"{c!r} indexes outside the state")
    return issues
