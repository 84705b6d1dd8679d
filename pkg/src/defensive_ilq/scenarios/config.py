"""Scenario config schema: strict JSON parsing, defaults, and serialization.

Top-level keys::

    name, description        free text
    horizon                  {T, dt, T_adv}
    lanes[]                  {name, waypoints: [[x, y], ...]} or {name, path: [...]}
    players[]                {name, model, initial_state, lane, v_ref, v_lo, v_hi,
                              wheelbase (bicycle), d_lane?, costs?}
    costs                    {ego, cooperative, adversarial}: per-phase term weights
    constraints              {d_prox, d_lane, proximity, lane, speed}

A lane ``path`` is a list of ``{"line": [[x0, y0], [x1, y1]]}`` and
``{"arc": {center, radius, start_deg, end_deg, points}}`` pieces joined in
order (duplicate joints are dropped).  Player 0 is the ego.
"""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import numpy as np

from ..exceptions import ConfigError
from ..geometry import arc_waypoints

SCENARIO_NAMES = ("oncoming", "intersection")

TOP_KEYS = {"name", "description", "horizon", "lanes", "players", "costs", "constraints"}
HORIZON_KEYS = {"T", "dt", "T_adv"}
PLAYER_KEYS = {"name", "model", "initial_state", "lane", "v_ref", "v_lo", "v_hi", "wheelbase", "d_lane", "costs"}
PHASES = ("ego", "cooperative", "adversarial")
PHASE_KEYS = {"lane", "speed", "proximity", "adversarial", "input", "form", "clip_distance"}
CONSTRAINT_KEYS = {"d_prox", "d_lane", "proximity", "lane", "speed"}
MODELS = {"bicycle": 6, "unicycle": 4}

# Calibration defaults, not published values.
DEFAULT_PHASES = {
    "ego": {"lane": 1.0, "speed": 0.5, "input": [1.0, 1.0]},
    "cooperative": {"lane": 1.0, "speed": 0.5, "proximity": 50.0, "input": [1.0, 1.0]},
    "adversarial": {"adversarial": 0.3, "input": [10.0, 1.0], "form": "attract", "clip_distance": 12.0},
}
DEFAULT_CONSTRAINTS = {"d_prox": 3.0, "d_lane": 4.0, "proximity": True, "lane": True, "speed": True}
DEFAULT_HORIZON = {"T": 15.0, "dt": 0.1, "T_adv": 0.0}


def _strict(section, allowed, where):
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def _number(value, where, positive=False, nonneg=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
        raise ConfigError(f"{where} must be a finite number")
    if positive and not value > 0:
        raise ConfigError(f"{where} must be positive")
    if nonneg and not value >= 0:
        raise ConfigError(f"{where} must be nonnegative")
    return float(value)


def _phase(section, where):
    _strict(section, PHASE_KEYS, where)
    out = {}
    for key, value in section.items():
        if key == "input":
            R = np.asarray(value, dtype=float)
            if R.ndim not in (1, 2) or not np.all(np.isfinite(R)):
                raise ConfigError(f"{where}.input must be a list or matrix")
            out[key] = R.tolist()
        elif key == "form":
            if value not in ("attract", "repel"):
                raise ConfigError(f"{where}.form must be 'attract' or 'repel'")
            out[key] = value
        elif key == "clip_distance":
            out[key] = _number(value, f"{where}.{key}", positive=True)
        else:
            out[key] = _number(value, f"{where}.{key}", nonneg=True)
    return out


def lane_waypoints(lane: dict) -> np.ndarray:
    if "waypoints" in lane:
        return np.asarray(lane["waypoints"], dtype=float)
    pieces = []
    for piece in lane["path"]:
        if "line" in piece:
            pts = np.asarray(piece["line"], dtype=float)
        else:
            arc = piece["arc"]
            pts = arc_waypoints(
                arc["center"], arc["radius"], np.deg2rad(arc["start_deg"]), np.deg2rad(arc["end_deg"]),
                int(arc.get("points", 24)),
            )
        if pieces and np.allclose(pieces[-1][-1], pts[0]):
            pts = pts[1:]
        pieces.append(pts)
    return np.concatenate(pieces, axis=0)


def validate_config(raw: dict) -> dict:
    """Check a raw config against the schema and fill defaults; returns a new dict."""
    _strict(raw, TOP_KEYS, "config")
    for key in ("players", "lanes"):
        if key not in raw:
            raise ConfigError(f"config is missing '{key}'")
    cfg = {"name": str(raw.get("name", "custom"))}
    if "description" in raw:
        cfg["description"] = str(raw["description"])

    horizon = dict(DEFAULT_HORIZON)
    h = raw.get("horizon", {})
    _strict(h, HORIZON_KEYS, "horizon")
    for key, value in h.items():
        horizon[key] = _number(value, f"horizon.{key}", nonneg=True)
    if not (horizon["T"] > 0 and horizon["dt"] > 0):
        raise ConfigError("horizon.T and horizon.dt must be positive")
    if not horizon["T_adv"] <= horizon["T"]:
        raise ConfigError("horizon.T_adv must not exceed horizon.T")
    ratio = horizon["T"] / horizon["dt"]
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigError("horizon.dt must divide horizon.T")
    cfg["horizon"] = horizon

    lanes = []
    names = set()
    if not isinstance(raw["lanes"], list) or not raw["lanes"]:
        raise ConfigError("lanes must be a non-empty list")
    for k, lane in enumerate(raw["lanes"]):
        _strict(lane, {"name", "waypoints", "path"}, f"lanes[{k}]")
        if "name" not in lane or ("waypoints" in lane) == ("path" in lane):
            raise ConfigError(f"lanes[{k}] needs a name and exactly one of waypoints/path")
        if lane["name"] in names:
            raise ConfigError(f"duplicate lane name {lane['name']!r}")
        names.add(lane["name"])
        try:
            pts = lane_waypoints(lane)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"lanes[{k}] is malformed: {exc}") from exc
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ConfigError(f"lanes[{k}] needs at least two 2-D points")
        lanes.append(copy.deepcopy(lane))
    cfg["lanes"] = lanes

    costs = {}
    rc = raw.get("costs", {})
    _strict(rc, set(PHASES), "costs")
    for phase in PHASES:
        costs[phase] = _phase(rc[phase], f"costs.{phase}") if phase in rc else copy.deepcopy(DEFAULT_PHASES[phase])
    cfg["costs"] = costs

    constraints = dict(DEFAULT_CONSTRAINTS)
    rcon = raw.get("constraints", {})
    _strict(rcon, CONSTRAINT_KEYS, "constraints")
    for key, value in rcon.items():
        if key in ("proximity", "lane", "speed"):
            if not isinstance(value, bool):
                raise ConfigError(f"constraints.{key} must be true/false")
            constraints[key] = value
        else:
            constraints[key] = _number(value, f"constraints.{key}", positive=True)
    cfg["constraints"] = constraints

    players = []
    if not isinstance(raw["players"], list) or not raw["players"]:
        raise ConfigError("players must be a non-empty list")
    for k, p in enumerate(raw["players"]):
        where = f"players[{k}]"
        _strict(p, PLAYER_KEYS, where)
        for key in ("model", "initial_state", "lane", "v_ref", "v_lo", "v_hi"):
            if key not in p:
                raise ConfigError(f"{where} is missing '{key}'")
        if p["model"] not in MODELS:
            raise ConfigError(f"{where}.model must be one of {sorted(MODELS)}")
        x0 = p["initial_state"]
        if not isinstance(x0, list) or len(x0) != MODELS[p["model"]]:
            raise ConfigError(f"{where}.initial_state must have {MODELS[p['model']]} entries")
        if p["lane"] not in names:
            raise ConfigError(f"{where} references unknown lane {p['lane']!r}")
        out = {
            "name": str(p.get("name", f"player{k}")),
            "model": p["model"],
            "initial_state": [_number(v, f"{where}.initial_state") for v in x0],
            "lane": p["lane"],
            "v_ref": _number(p["v_ref"], f"{where}.v_ref", nonneg=True),
            "v_lo": _number(p["v_lo"], f"{where}.v_lo"),
            "v_hi": _number(p["v_hi"], f"{where}.v_hi"),
        }
        if not out["v_lo"] < out["v_hi"]:
            raise ConfigError(f"{where}: need v_lo < v_hi")
        if p["model"] == "bicycle":
            if "wheelbase" not in p:
                raise ConfigError(f"{where} (bicycle) needs a wheelbase")
            out["wheelbase"] = _number(p["wheelbase"], f"{where}.wheelbase", positive=True)
        elif "wheelbase" in p:
            raise ConfigError(f"{where}: wheelbase only applies to bicycle players")
        if "d_lane" in p:
            out["d_lane"] = _number(p["d_lane"], f"{where}.d_lane", positive=True)
        if "costs" in p:
            _strict(p["costs"], set(PHASES), f"{where}.costs")
            out["costs"] = {ph: _phase(v, f"{where}.costs.{ph}") for ph, v in p["costs"].items()}
        players.append(out)
    cfg["players"] = players
    return cfg


def load_config(path) -> dict:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return validate_config(raw)


def load_named(name: str) -> dict:
    """Load a shipped scenario by name, or a config file by path."""
    if name in SCENARIO_NAMES:
        text = resources.files("defensive_ilq.scenarios").joinpath("data", f"{name}.json").read_text()
        return validate_config(json.loads(text))
    if Path(name).is_file():
        return load_config(name)
    raise ConfigError(f"unknown scenario {name!r}; expected one of {SCENARIO_NAMES} or a file path")


def dump_config(cfg: dict, path=None) -> str:
    text = json.dumps(cfg, indent=2, sort_keys=True)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def problem_to_config(problem) -> dict:
    """Config dict that rebuilds ``problem`` (horizon synced from the problem)."""
    if problem.config is None:
        raise ConfigError("problem was not built from a scenario config")
    cfg = copy.deepcopy(problem.config)
    cfg["horizon"] = {"T": float(problem.T), "dt": float(problem.dt), "T_adv": float(problem.T_adv)}
    return cfg
