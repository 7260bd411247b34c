"""Strict TOML run configurations for the command-line front end.

A config names one model, its parameter block, the states to compare and,
optionally, a one-parameter sweep::

    model = "photon_counting"

    [params]
    gamma = 1.0
    t = 0.6931471805599453
    N = 20

    [[states]]
    name = "coh"
    kind = "coherent"
    alpha = [1.0, 0.5]

    [[states]]
    name = "hot"
    kind = "thermal"
    nbar = 1.5

    [sweep]
    gamma_t = [0.5, 1.0, 2.0]

    [expect]
    conservation = "pass"
    ban = "pass"

    [output]
    path = "reports/pc"
    format = "json"

Unknown keys anywhere are rejected.  Every parameter has a documented
default (see ``MODEL_PARAMS``); tolerances left unset take the model's
default and are written into every report.
"""

from __future__ import annotations

import itertools
import sys
from dataclasses import dataclass, field, replace
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration (CLI exit code 64)."""


_COUNTER = {"gamma": 1.0, "t": 1.0, "N": 16, "x_step": 0.05, "x_max": 40.0, "route": "auto", "leak_tol": 1e-8}

# model name -> parameter defaults; ``gamma_t`` is accepted wherever gamma and t are
MODEL_PARAMS: dict[str, dict[str, Any]] = {
    "qnd": {"dim": 4, "eps": 0.1},
    "two_level": {"phi_0": "maximally_mixed", "phi_1": "maximally_mixed"},
    "photon_counting": {"gamma": 1.0, "t": 1.0, "N": 20, "omega": 0.0},
    "quantum_counter_number": dict(_COUNTER),
    "quantum_counter_x": dict(_COUNTER),
    "homodyne": {"gamma": 1.0, "t": 1.0, "N": 20, "step_factor": 1.0, "cert_outcomes": 48},
    "heterodyne": {"gamma": 1.0, "t": 1.0, "N": 16, "half_width": 4.0, "points": 41, "cert_outcomes": 41},
}

PHI_PRESETS = ("maximally_mixed", "eigen", "plus")

STATE_FIELDS = {
    "number": {"n"},
    "coherent": {"alpha"},
    "mixed": {"populations"},
    "thermal": {"nbar"},
    "random": {"seed", "diagonal", "rank"},
}
STATE_REQUIRED = {"number": {"n"}, "coherent": {"alpha"}, "thermal": {"nbar"}, "random": {"seed"}, "mixed": set()}

CHECKS = ("conservation", "certificate", "ban", "shannon")
TOL_KEYS = ("conservation", "certificate", "shannon")
OUTPUT_FORMATS = ("json", "csv")
TOP_KEYS = {"model", "params", "states", "pairs", "sweep", "expect", "tolerances", "output"}


@dataclass(frozen=True)
class StateSpec:
    name: str
    kind: str
    fields: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple


@dataclass(frozen=True)
class OutputSpec:
    path: str | None = None
    format: str = "json"


@dataclass(frozen=True)
class Tolerances:
    """Pass thresholds; None means the model default."""

    conservation: float | None = None
    certificate: float | None = None
    shannon: float | None = None


@dataclass(frozen=True)
class RunConfig:
    model: str
    params: dict
    states: tuple[StateSpec, ...]
    pairs: tuple[tuple[str, str], ...]
    sweep: SweepSpec | None = None
    expect: dict = field(default_factory=dict)
    tolerances: Tolerances = Tolerances()
    output: OutputSpec = OutputSpec()

    def points(self) -> list[tuple[str, Any, dict]]:
        """(param_name, param_value, params) per sweep point, in config order."""
        if self.sweep is None:
            return [("", "", dict(self.params))]
        return [(self.sweep.param, v, {**self.params, self.sweep.param: v}) for v in self.sweep.values]


def _strict(table: dict, allowed, where: str) -> None:
    extra = sorted(set(table) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _number(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where} must be a number, got {v!r}")
    return float(v)


def _check_param(model: str, key: str, value, where: str):
    defaults = MODEL_PARAMS[model]
    if key == "gamma_t":
        if "gamma" not in defaults:
            raise ConfigError(f"{where}: model {model!r} has no gamma_t parameter")
        v = _number(value, f"{where}.gamma_t")
        if v <= 0:
            raise ConfigError(f"{where}.gamma_t must be positive")
        return v
    if key not in defaults:
        raise ConfigError(f"unknown key(s) in {where}: {key}")
    ref = defaults[key]
    if key in ("phi_0", "phi_1"):
        if isinstance(value, str):
            if value not in PHI_PRESETS:
                raise ConfigError(f"{where}.{key} must be one of {PHI_PRESETS} or a 2x2 real matrix")
            return value
        try:
            rows = [[_number(x, f"{where}.{key}") for x in row] for row in value]
        except TypeError:
            raise ConfigError(f"{where}.{key} must be a 2x2 real matrix") from None
        if len(rows) != 2 or any(len(r) != 2 for r in rows):
            raise ConfigError(f"{where}.{key} must be a 2x2 real matrix")
        return rows
    if key == "route":
        if value not in ("auto", "dense", "diagonal"):
            raise ConfigError(f"{where}.route must be auto, dense or diagonal")
        return value
    if isinstance(ref, int) and not isinstance(ref, bool):
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ConfigError(f"{where}.{key} must be a positive integer")
        return value
    v = _number(value, f"{where}.{key}")
    if key != "omega" and v <= 0:
        raise ConfigError(f"{where}.{key} must be positive")
    return v


def _parse_state(raw: dict, i: int) -> StateSpec:
    where = f"states[{i}]"
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a table")
    name, kind = raw.get("name"), raw.get("kind")
    if not isinstance(name, str) or not name:
        raise ConfigError(f"{where}.name is required")
    if kind not in STATE_FIELDS:
        raise ConfigError(f"{where}.kind must be one of {sorted(STATE_FIELDS)}")
    fields = {k: v for k, v in raw.items() if k not in ("name", "kind")}
    _strict(fields, STATE_FIELDS[kind], where)
    missing = STATE_REQUIRED[kind] - set(fields)
    if missing:
        raise ConfigError(f"{where}: {kind} state needs {', '.join(sorted(missing))}")
    if kind == "number" and (isinstance(fields["n"], bool) or not isinstance(fields["n"], int) or fields["n"] < 0):
        raise ConfigError(f"{where}.n must be a nonnegative integer")
    if kind == "coherent":
        a = fields["alpha"]
        if isinstance(a, list):
            if len(a) != 2:
                raise ConfigError(f"{where}.alpha must be a number or [re, im]")
            fields["alpha"] = complex(_number(a[0], where), _number(a[1], where))
        else:
            fields["alpha"] = complex(_number(a, f"{where}.alpha"))
    if kind == "thermal" and _number(fields["nbar"], f"{where}.nbar") < 0:
        raise ConfigError(f"{where}.nbar must be nonnegative")
    if kind == "mixed" and "populations" in fields:
        pops = [_number(p, f"{where}.populations") for p in fields["populations"]]
        if not pops or min(pops) < 0 or sum(pops) <= 0:
            raise ConfigError(f"{where}.populations must be nonnegative with positive sum")
        fields["populations"] = pops
    if kind == "random":
        if isinstance(fields["seed"], bool) or not isinstance(fields["seed"], int) or fields["seed"] < 0:
            raise ConfigError(f"{where}.seed must be a nonnegative integer")
        if not isinstance(fields.get("diagonal", False), bool):
            raise ConfigError(f"{where}.diagonal must be a boolean")
        if "rank" in fields and (not isinstance(fields["rank"], int) or fields["rank"] < 1):
            raise ConfigError(f"{where}.rank must be a positive integer")
    return StateSpec(name, kind, fields)


def default_states() -> tuple[StateSpec, ...]:
    return (
        StateSpec("rand0", "random", {"seed": 0}),
        StateSpec("rand1", "random", {"seed": 1}),
    )


def parse_expect(spec) -> dict:
    """``{"ban": "fail"}`` from a table or from ``"ban=fail,conservation=pass"``."""
    if isinstance(spec, str):
        items = {}
        for part in filter(None, (p.strip() for p in spec.split(","))):
            if "=" not in part:
                raise ConfigError(f"expect item {part!r} is not key=value")
            k, v = (s.strip() for s in part.split("=", 1))
            items[k] = v
        spec = items
    if not isinstance(spec, dict):
        raise ConfigError("expect must be a table")
    _strict(spec, CHECKS, "expect")
    for k, v in spec.items():
        if v not in ("pass", "fail"):
            raise ConfigError(f"expect.{k} must be 'pass' or 'fail'")
    return dict(spec)


def parse_sweep_arg(text: str, model: str) -> SweepSpec:
    """``gamma_t=0.5,1,2`` from the command line."""
    if "=" not in text:
        raise ConfigError("--sweep takes name=v1,v2,...")
    name, vals = text.split("=", 1)
    values = []
    for v in vals.split(","):
        try:
            num = float(v)
        except ValueError:
            raise ConfigError(f"sweep value {v!r} is not a number") from None
        values.append(int(num) if num.is_integer() and name.strip() in ("N", "dim", "points", "cert_outcomes") else num)
    return _parse_sweep({name.strip(): values}, model)


def _parse_sweep(raw: dict, model: str) -> SweepSpec:
    if not isinstance(raw, dict) or len(raw) != 1:
        raise ConfigError("sweep must hold exactly one parameter list")
    (name, values), = raw.items()
    if not isinstance(values, list) or not values:
        raise ConfigError(f"sweep.{name} must be a nonempty list")
    checked = tuple(_check_param(model, name, v, "sweep") for v in values)
    return SweepSpec(name, checked)


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a table")
    _strict(raw, TOP_KEYS, "config")
    model = raw.get("model")
    if model not in MODEL_PARAMS:
        raise ConfigError(f"model must be one of {sorted(MODEL_PARAMS)}, got {model!r}")
    params_raw = raw.get("params", {})
    if not isinstance(params_raw, dict):
        raise ConfigError("params must be a table")
    params = dict(MODEL_PARAMS[model])
    for k, v in params_raw.items():
        params[k] = _check_param(model, k, v, "params")
    if "gamma_t" in params_raw and "t" in params_raw:
        raise ConfigError("params: give either t or gamma_t, not both")

    states_raw = raw.get("states")
    states = default_states() if states_raw is None else tuple(_parse_state(s, i) for i, s in enumerate(states_raw))
    names = [s.name for s in states]
    if len(set(names)) != len(names):
        raise ConfigError("state names must be unique")
    if len(states) < 2:
        raise ConfigError("at least two states are needed to form a pair")
    if "pairs" in raw:
        pairs = []
        for p in raw["pairs"]:
            if not (isinstance(p, list) and len(p) == 2 and all(x in names for x in p)):
                raise ConfigError(f"pair {p!r} must name two configured states")
            pairs.append((p[0], p[1]))
    else:
        pairs = list(itertools.combinations(names, 2))

    sweep = _parse_sweep(raw["sweep"], model) if "sweep" in raw else None
    expect = parse_expect(raw.get("expect", {}))

    tol_raw = raw.get("tolerances", {})
    if not isinstance(tol_raw, dict):
        raise ConfigError("tolerances must be a table")
    _strict(tol_raw, TOL_KEYS, "tolerances")
    tol = Tolerances(**{k: _number(v, f"tolerances.{k}") for k, v in tol_raw.items()})

    out_raw = raw.get("output", {})
    if not isinstance(out_raw, dict):
        raise ConfigError("output must be a table")
    _strict(out_raw, ("path", "format"), "output")
    fmt = out_raw.get("format", "json")
    if fmt not in OUTPUT_FORMATS:
        raise ConfigError(f"output.format must be one of {OUTPUT_FORMATS}")
    path = out_raw.get("path")
    if path is not None and not isinstance(path, str):
        raise ConfigError("output.path must be a string")
    return RunConfig(model, params, states, tuple(pairs), sweep, expect, tol, OutputSpec(path, fmt))


def loads(text: str) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    return from_dict(raw)


def load(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return loads(text)


def default_config(model: str) -> RunConfig:
    """Built-in config used by ``--model`` when no file is given."""
    return from_dict({"model": model})


def with_overrides(cfg: RunConfig, *, expect=None, sweep=None, output_path=None) -> RunConfig:
    if expect:
        cfg = replace(cfg, expect={**cfg.expect, **parse_expect(expect)})
    if sweep:
        cfg = replace(cfg, sweep=parse_sweep_arg(sweep, cfg.model))
    if output_path:
        cfg = replace(cfg, output=replace(cfg.output, path=output_path))
    return cfg
