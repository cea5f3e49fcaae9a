"""Flat ``section.key = value`` experiment configuration.

Example::

    # stationary smoke test
    mdp.S = 8
    mdp.A = 4
    mdp.H = 5
    schedule.kind = stationary
    algo.variant = power
    run.K = 500
    run.seeds = 0-19

Lines starting with ``#`` are comments.  Unknown keys, duplicate keys, bad
values and missing required keys raise :class:`ConfigError` carrying the line
number.  Every resolved value (defaults included) is written back by
:func:`config_echo`.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

from .algorithms import Variant

SCHEDULE_KINDS = ("stationary", "piecewise", "drift", "adaptive")
REWARD_DISTS = ("uniform", "bernoulli")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _positive_int(v):
    n = int(v)
    if n < 1:
        raise ValueError("must be >= 1")
    return n


def _nonneg_int(v):
    n = int(v)
    if n < 0:
        raise ValueError("must be >= 0")
    return n


def _unit_interval(v):
    x = float(v)
    if not 0 <= x <= 1:
        raise ValueError("must lie in [0, 1]")
    return x


def _delta(v):
    x = float(v)
    if not 0 < x <= 1:
        raise ValueError("delta must lie in (0,1]")
    return x


def _positive(v):
    x = float(v)
    if not x > 0:
        raise ValueError("must be > 0")
    return x


def _nonneg(v):
    x = float(v)
    if not x >= 0:
        raise ValueError("must be >= 0")
    return x


def _choice(options):
    def parse(v):
        if v not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return v
    return parse


def _bound(keywords):
    def parse(v):
        return v if v in keywords else _nonneg(v)
    return parse


def _seeds(v):
    seeds = []
    for part in v.replace(" ", "").split(","):
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError(f"empty seed range {part}")
            seeds.extend(range(lo, hi + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("seed list must be non-empty")
    return tuple(seeds)


def _initial_state(v):
    return "random" if v == "random" else _nonneg_int(v)


def _optional_str(v):
    return v or None


# key -> (parser, default); REQUIRED marks keys without a default
REQUIRED = object()
SCHEMA = {
    "mdp.S": (_positive_int, 8),
    "mdp.A": (_positive_int, 4),
    "mdp.H": (_positive_int, 5),
    "mdp.seed": (int, 0),
    "mdp.mixing": (_unit_interval, 0.0),
    "mdp.concentration": (_positive, 1.0),
    "mdp.kernel_file": (_optional_str, None),
    "schedule.kind": (_choice(SCHEDULE_KINDS), "stationary"),
    "schedule.rewards": (_choice(REWARD_DISTS), "uniform"),
    "schedule.num_changes": (_nonneg_int, 0),
    "schedule.amplitude": (_nonneg, 0.1),
    "schedule.period": (_nonneg, 0.0),  # 0 means run.K
    "schedule.strength": (_unit_interval, 0.5),
    "schedule.seed": (int, 0),
    "algo.variant": (_choice(tuple(v.value for v in Variant)), "power"),
    "algo.hp_mode": (_choice(("theory", "manual")), "theory"),
    "algo.delta": (_delta, 0.1),
    "algo.c_beta": (_positive, 1.0),
    "algo.pt_bound": (_bound(("realized",)), "realized"),
    "algo.dt_bound": (_bound(("realized", "generic")), "generic"),
    "algo.alpha": (_positive, None),
    "algo.tau": (_positive_int, None),
    "algo.beta": (_positive, None),
    "algo.lam": (_positive, None),
    "run.K": (_positive_int, REQUIRED),
    "run.seeds": (_seeds, (0,)),
    "run.initial_state": (_initial_state, 0),
    "out.dir": (str, "results"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def with_override(self, key: str, raw: str) -> "ExperimentConfig":
        """Copy with ``key`` re-parsed from its text form."""
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        values = dict(self.values)
        try:
            values[key] = SCHEMA[key][0](str(raw))
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
        cfg = dataclasses.replace(self, values=values)
        _check_cross(cfg)
        return cfg

    @property
    def K(self) -> int:
        return self.values["run.K"]

    @property
    def variant(self) -> Variant:
        return Variant(self.values["algo.variant"])

    def echo(self) -> str:
        return config_echo(self)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.echo().encode()).hexdigest()[:12]


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def config_echo(cfg: ExperimentConfig) -> str:
    return "".join(f"{key} = {_format(cfg.values[key])}\n" for key in SCHEMA)


def _check_cross(cfg, line_of=None):
    line_of = line_of or {}
    v = cfg.values
    if v["schedule.kind"] == "piecewise" and v["schedule.num_changes"] >= v["run.K"]:
        raise ConfigError("schedule.num_changes must be < run.K", line_of.get("schedule.num_changes"))
    if v["schedule.kind"] == "drift" and v["schedule.amplitude"] > 0.5:
        raise ConfigError("schedule.amplitude must lie in [0, 0.5]", line_of.get("schedule.amplitude"))
    if v["algo.hp_mode"] == "manual":
        for key in ("algo.alpha", "algo.tau"):
            if v[key] is None:
                raise ConfigError(f"{key} is required when algo.hp_mode = manual")
    if v["algo.tau"] is not None and v["algo.tau"] > v["run.K"]:
        raise ConfigError("algo.tau must be <= run.K", line_of.get("algo.tau"))
    if isinstance(v["run.initial_state"], int) and v["mdp.kernel_file"] is None \
            and v["run.initial_state"] >= v["mdp.S"]:
        raise ConfigError("run.initial_state must be < mdp.S", line_of.get("run.initial_state"))
    if v["schedule.kind"] == "adaptive" and v["algo.pt_bound"] == "realized" and v["algo.hp_mode"] == "theory":
        raise ConfigError("algo.pt_bound = realized needs a non-adaptive schedule; give a number",
                          line_of.get("algo.pt_bound"))


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    line_of = {}
    lineno = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            values[key] = SCHEMA[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", lineno) from None
        line_of[key] = lineno
    for key, (_, default) in SCHEMA.items():
        if key not in values:
            if default is REQUIRED:
                raise ConfigError(f"missing required key {key!r}", lineno + 1)
            values[key] = default
    cfg = ExperimentConfig(values)
    _check_cross(cfg, line_of)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
