"""Flat ``key = value`` configuration with typed, documented defaults."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .errors import ValidationError


class ConfigError(ValidationError):
    """Unknown key, unparsable value or missing required key."""


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _list(conv):
    def parse(s: str):
        s = s.strip()
        return tuple(conv(x.strip()) for x in s.split(",")) if s else ()
    return parse


def _choice(*options):
    def parse(s: str):
        v = s.strip().lower()
        if v not in options:
            raise ValueError(f"expected one of {list(options)}, got {s!r}")
        return v
    return parse


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], object]
    default: str
    help: str


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


KEYS: tuple[Key, ...] = (
    Key("data.source", _choice("synthetic", "csv"), "synthetic", "synthetic generator or CSV files"),
    Key("data.edges", str, "", "edge CSV path (csv source)"),
    Key("data.labels", str, "", "label CSV path (csv source)"),
    Key("data.labels_sparse", _bool, "false", "label CSV uses the cat:weight;... column"),
    Key("data.n_categories", int, "0", "category count for CSV labels"),
    Key("data.fractions", _list(float), "0.7,0.15,0.15", "train/valid/test edge fractions"),
    Key("data.train_keep", float, "1.0", "fraction of the training tail kept"),
    Key("synth.n_users", int, "100", "synthetic users"),
    Key("synth.n_categories", int, "20", "synthetic categories n"),
    Key("synth.k", int, "3", "true-set size per user"),
    Key("synth.u", float, "0.9", "probability an interaction is a true-set draw"),
    Key("synth.events_per_user", int, "500", "interactions per user"),
    Key("synth.label_period", int, "50", "rounds between label emissions"),
    Key("synth.seed", int, "0", "generator seed"),
    Key("strategy", _choice("default", "ha", "ma", "pf"), "default", "pseudo-label strategy for train"),
    Key("ma.window", float, "5.0", "moving-average window w > 1"),
    Key("noise.gamma", float, "0.0", "pseudo-target noise scale"),
    Key("noise.alpha", float, "1.0", "uniform noise half-width"),
    Key("noise.seed", int, "0", "noise seed"),
    Key("pseudo.replace_ground_truth", _bool, "false", "pseudo-targets also replace ground truth"),
    Key("model.dim", int, "32", "memory / embedding dimension d"),
    Key("model.mem_decay", float, "0.9", "memory decay in [0, 1)"),
    Key("train.mu", float, "0.2", "strong-convexity rate of the 1/(mu t) schedule"),
    Key("train.alpha_min", float, "1e-06", "step-size floor"),
    Key("train.max_epochs", int, "30", "maximum epochs"),
    Key("train.patience", int, "3", "epochs without validation gain before stopping"),
    Key("train.batch_edges", int, "100", "edges per batch N"),
    Key("train.seed", int, "0", "parameter init and memory projection seed"),
    Key("exp.strategies", _list(_choice("default", "ha", "ma", "pf")), "default,ha,ma,pf", "strategies compared"),
    Key("exp.seeds", _list(int), "0,1,2,3,4", "seed offsets, one run per seed"),
    Key("exp.budget_epochs", int, "1", "epochs for the fixed-budget run"),
    Key("exp.window_grid", _list(float), "1,2,3,4,5,6,7,8,9,10,11,12,13,14,15", "MA windows swept"),
    Key("speedup.n", int, "50", "categories"),
    Key("speedup.k", int, "10", "true-set size"),
    Key("speedup.u", float, "0.95", "observation probability"),
    Key("speedup.h", _list(int), "1,4,16,32,64", "history lengths compared to one-hot"),
    Key("speedup.users", int, "20", "users, each with a fixed one-hot embedding"),
    Key("speedup.mu", float, "0.001", "schedule rate mu"),
    Key("speedup.t0", int, "100", "step-counter offset of the schedule"),
    Key("speedup.init_scale", float, "3.0", "multiplier on the default parameter init"),
    Key("speedup.tau", float, "0.02", "true-set excess-loss threshold"),
    Key("speedup.max_steps", int, "20000", "step budget before a run is censored"),
    Key("theory.samples", int, "1000000", "Monte Carlo samples per grid cell"),
    Key("theory.seed", int, "0", "Monte Carlo seed"),
    Key("out.dir", str, "", "output directory (falls back to $HALSTREAM_OUT)"),
    Key("out.clock", _choice("work", "wall"), "work", "deterministic work clock or wall time"),
)

KEY_INDEX = {k.name: k for k in KEYS}
OUT_ENV = "HALSTREAM_OUT"


class Config(Mapping[str, object]):
    """Resolved configuration: every key present with a typed value."""

    def __init__(self, values: Mapping[str, object]):
        self._values = dict(values)

    def __getitem__(self, key):
        return self._values[key]

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    def replace(self, **changes) -> "Config":
        v = dict(self._values)
        for k, x in changes.items():
            k = k.replace("__", ".")
            if k not in KEY_INDEX:
                raise ConfigError(f"unknown config key {k!r}")
            v[k] = x
        return Config(v)

    def dump(self) -> str:
        """One ``key = value`` line per key, sorted; parses back to the same config."""
        return "".join(f"{k} = {_fmt(self._values[k])}\n" for k in sorted(self._values))

    def out_dir(self) -> Path:
        d = self["out.dir"] or os.environ.get(OUT_ENV, "")
        if not d:
            raise ConfigError(f"missing required key 'out.dir' (or ${OUT_ENV})")
        return Path(d)


def _parse_value(name: str, raw: str, where: str = ""):
    key = KEY_INDEX.get(name)
    if key is None:
        raise ConfigError(f"{where}unknown config key {name!r}")
    try:
        return key.parse(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}bad value for {name!r}: {exc}") from None


def parse_lines(text: str, source: str = "<config>") -> dict[str, object]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        name, raw = (p.strip() for p in s.split("=", 1))
        out[name] = _parse_value(name, raw, f"{source}:{lineno}: ")
    return out


def defaults() -> Config:
    return Config({k.name: k.parse(k.default) for k in KEYS})


def load_config(path=None, overrides: Sequence[str] = ()) -> Config:
    """Defaults, then the file at ``path`` (if given), then ``key=value`` overrides.

    Later writers win. The result is validated by building every domain
    object it configures.
    """
    values = dict(defaults())
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {str(p)!r}: {exc.strerror}") from None
        values.update(parse_lines(text, str(p)))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        name, raw = (p.strip() for p in item.split("=", 1))
        values[name] = _parse_value(name, raw)
    cfg = Config(values)
    validate(cfg)
    return cfg


def validate(cfg: Config) -> None:
    # constructing the domain objects runs their own range checks
    from .experiments import ExperimentSpec, SpeedupSpec

    if cfg["data.source"] == "csv":
        if not cfg["data.edges"]:
            raise ConfigError("missing required key 'data.edges' for data.source = csv")
        if cfg["data.labels"] and cfg["data.n_categories"] < 1:
            raise ConfigError("missing required key 'data.n_categories' for CSV labels")
    if cfg["theory.samples"] < 1000:
        raise ConfigError("theory.samples must be >= 1000")
    try:
        ExperimentSpec.from_config(cfg)
        SpeedupSpec.from_config(cfg)
    except ConfigError:
        raise
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def help_text() -> str:
    width = max(len(k.name) for k in KEYS)
    return "\n".join(f"  {k.name:<{width}}  (default: {k.default or '<unset>'})  {k.help}" for k in KEYS)
