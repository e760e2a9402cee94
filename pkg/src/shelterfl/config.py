"""Experiment configuration: an INI document with one section per module.

Every key has a default, so an empty file (or no file) is a complete
configuration. Lists are comma-separated; maps are ``key:value`` pairs
separated by commas.
"""

from __future__ import annotations

import configparser
import itertools
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .domain import FedConfig, TrainConfig, WindowConfig, to_record
from .synthgen import ClassParams, CohortSpec

SCENARIO_CHOICES = ("centralized", "federated", "isolated")
SCENARIO_ALIASES = {"central": "centralized", "all": "all"}

SWEEP_OBSERVATION = (60, 90, 120)
SWEEP_BINS = (5, 10)
SWEEP_PREDICTION = (548, 730, 913)

FAST_CLIENTS = 5_000
FAST_ROUNDS = 25
FAST_REPEATS = 3


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    repeats: int = 10
    scenarios: tuple[str, ...] = SCENARIO_CHOICES
    out_dir: str = "runs"
    data_path: str | None = None
    cohort: CohortSpec = field(default_factory=CohortSpec)
    window: WindowConfig = field(default_factory=WindowConfig)
    sweep_observation: tuple[int, ...] = SWEEP_OBSERVATION
    sweep_bins: tuple[int, ...] = SWEEP_BINS
    sweep_prediction: tuple[int, ...] = SWEEP_PREDICTION
    train: TrainConfig = field(default_factory=TrainConfig)
    fed: FedConfig = field(default_factory=FedConfig)
    fast: bool = False

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        bad = [s for s in self.scenarios if s not in SCENARIO_CHOICES]
        if bad or not self.scenarios:
            raise ConfigError(f"unknown scenarios {bad}")
        if not (self.sweep_observation and self.sweep_bins and self.sweep_prediction):
            raise ConfigError("sweep grid is empty")
        if self.data_path is not None and not Path(self.data_path).is_file():
            raise ConfigError(f"data file not found: {self.data_path}")

    def grid(self) -> list[WindowConfig]:
        """Sweep cells in report order: T_b ascending, then T_o and T_p descending."""
        cells = []
        for n_bins, t_o, t_p in itertools.product(
            sorted(self.sweep_bins), sorted(self.sweep_observation, reverse=True), sorted(self.sweep_prediction, reverse=True)
        ):
            try:
                cells.append(WindowConfig(t_o, n_bins, t_p, self.window.episode_gap))
            except ValueError as exc:
                raise ConfigError(f"bad sweep cell T_o={t_o} T_b={n_bins} T_p={t_p}: {exc}") from exc
        return cells

    def with_fast_profile(self) -> "ExperimentConfig":
        return replace(
            self,
            cohort=replace(self.cohort, n_clients=FAST_CLIENTS),
            fed=replace(self.fed, rounds=FAST_ROUNDS),
            repeats=FAST_REPEATS,
            fast=True,
        )

    def to_ini(self) -> str:
        cp = _new_parser()
        cp["experiment"] = {
            "seed": str(self.seed),
            "repeats": str(self.repeats),
            "scenarios": ",".join(self.scenarios),
            "out": self.out_dir,
            "data": self.data_path or "",
        }
        c = self.cohort
        cp["cohort"] = {
            "n_clients": str(c.n_clients),
            "class_mix": _join(c.class_mix),
            "agency_weights": _join_map(c.agency_weights),
            "horizon_days": str(c.horizon_days),
            "start_day": str(c.start_day),
            "entry_spread_days": str(c.entry_spread_days),
        }
        params = {}
        for f in fields(ClassParams):
            v = getattr(c.class_params, f.name)
            if f.name == "agency_affinity":
                for label in sorted(v):
                    params[f"affinity.{label}"] = _join_map(v[label])
            elif f.name == "agency_intensity":
                params[f.name] = _join_map(v)
            else:
                params[f.name] = _join(v) if isinstance(v, tuple) else repr(v) if isinstance(v, float) else str(v)
        cp["classes"] = params
        cp["window"] = {k: str(v) for k, v in to_record(self.window).items()}
        cp["sweep"] = {
            "observation_days": _join(self.sweep_observation),
            "n_bins": _join(self.sweep_bins),
            "prediction_days": _join(self.sweep_prediction),
        }
        cp["train"] = {
            k: _join(v) if isinstance(v, list) else repr(v) if isinstance(v, float) else str(v)
            for k, v in to_record(self.train).items()
            if k != "seed"
        }
        cp["federated"] = {
            "rounds": str(self.fed.rounds),
            "local_epochs": str(self.fed.local_epochs),
            "agencies": ",".join(self.fed.agencies),
            "normalization": self.fed.normalization,
        }
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in cp[section].items())
            lines.append("")
        return "\n".join(lines)


def _new_parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep key case
    return cp


def _join(values) -> str:
    return ",".join(repr(v) if isinstance(v, float) else str(v) for v in values)


def _join_map(m) -> str:
    return ",".join(f"{k}:{m[k]!r}" if isinstance(m[k], float) else f"{k}:{m[k]}" for k in sorted(m))


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _parse_map(text: str) -> dict[str, float]:
    out = {}
    for item in _split(text):
        key, sep, value = item.partition(":")
        if not sep:
            raise ConfigError(f"expected key:value, got {item!r}")
        out[key.strip()] = float(value)
    return out


def _typed(section, key, kind, default):
    if key not in section:
        return default
    raw = section[key]
    try:
        if kind is bool:
            return section.getboolean(key)
        if kind == "ints":
            return tuple(int(v) for v in _split(raw))
        if kind == "floats":
            return tuple(float(v) for v in _split(raw))
        if kind == "strs":
            return tuple(_split(raw))
        if kind == "map":
            return _parse_map(raw)
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key}: {exc}") from exc


_KNOWN = {
    "experiment": {"seed", "repeats", "scenarios", "out", "data"},
    "cohort": {"n_clients", "class_mix", "agency_weights", "horizon_days", "start_day", "entry_spread_days"},
    "window": {f.name for f in fields(WindowConfig)},
    "sweep": {"observation_days", "n_bins", "prediction_days"},
    "train": {f.name for f in fields(TrainConfig)} - {"seed"},
    "federated": {"rounds", "local_epochs", "agencies", "normalization"},
}


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    """Build a config from INI text; missing keys keep their defaults."""
    cp = _new_parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    class_keys = {f.name for f in fields(ClassParams)} - {"agency_affinity"}
    for name in cp.sections():
        known = _KNOWN.get(name)
        if name == "classes":
            unknown = {k for k in cp[name] if k not in class_keys and not k.startswith("affinity.")}
        elif known is None:
            raise ConfigError(f"unknown section [{name}]")
        else:
            unknown = set(cp[name]) - known
        if unknown:
            raise ConfigError(f"unknown keys in [{name}]: {', '.join(sorted(unknown))}")

    def sec(name):
        if not cp.has_section(name):
            cp.add_section(name)
        return cp[name]

    try:
        e = sec("experiment")
        scen = _typed(e, "scenarios", "strs", SCENARIO_CHOICES)
        scen = _expand_scenarios(scen)
        data = e.get("data", "").strip() or None
        if data is not None and base_dir is not None and not Path(data).is_absolute():
            data = str(base_dir / data)

        c = sec("cohort")
        default_cohort = CohortSpec()
        weights = _typed(c, "agency_weights", "map", None)
        if weights is not None:
            total = sum(weights.values())
            if total <= 0:
                raise ConfigError("[cohort] agency_weights must have a positive sum")
            if abs(total - 1.0) > 1e-9:  # counts or percentages are fine too
                weights = {k: v / total for k, v in weights.items()}
        cls_sec = sec("classes")
        cls_kwargs = {}
        for f in fields(ClassParams):
            if f.name == "agency_affinity":
                aff = {k.split(".", 1)[1]: _parse_map(cls_sec[k]) for k in cls_sec if k.startswith("affinity.")}
                if aff:
                    cls_kwargs[f.name] = aff
            elif f.name == "agency_intensity":
                if f.name in cls_sec:
                    cls_kwargs[f.name] = _parse_map(cls_sec[f.name])
            elif f.name in cls_sec:
                default = getattr(ClassParams(), f.name)
                kind = "floats" if isinstance(default, tuple) else type(default)
                cls_kwargs[f.name] = _typed(cls_sec, f.name, kind, default)
        cohort = CohortSpec(
            n_clients=_typed(c, "n_clients", int, default_cohort.n_clients),
            class_mix=_typed(c, "class_mix", "floats", default_cohort.class_mix),
            agency_weights=weights if weights is not None else default_cohort.agency_weights,
            horizon_days=_typed(c, "horizon_days", int, default_cohort.horizon_days),
            class_params=ClassParams(**cls_kwargs),
            start_day=_typed(c, "start_day", int, default_cohort.start_day),
            entry_spread_days=_typed(c, "entry_spread_days", int, default_cohort.entry_spread_days),
        )

        w = sec("window")
        dw = WindowConfig()
        window = WindowConfig(
            _typed(w, "observation_days", int, dw.observation_days),
            _typed(w, "n_bins", int, dw.n_bins),
            _typed(w, "prediction_days", int, dw.prediction_days),
            _typed(w, "episode_gap", int, dw.episode_gap),
        )

        s = sec("sweep")
        t = sec("train")
        dt = TrainConfig()
        train_kwargs = {}
        for f in fields(TrainConfig):
            if f.name == "seed" or f.name not in t:
                continue
            default = getattr(dt, f.name)
            kind = "floats" if isinstance(default, tuple) else type(default)
            train_kwargs[f.name] = _typed(t, f.name, kind, default)
        train = TrainConfig(**train_kwargs)

        fsec = sec("federated")
        df = FedConfig()
        fed = FedConfig(
            rounds=_typed(fsec, "rounds", int, df.rounds),
            local_epochs=_typed(fsec, "local_epochs", int, df.local_epochs),
            agencies=_typed(fsec, "agencies", "strs", df.agencies),
            normalization=fsec.get("normalization", df.normalization).strip(),
        )

        return ExperimentConfig(
            seed=_typed(e, "seed", int, 0),
            repeats=_typed(e, "repeats", int, 10),
            scenarios=scen,
            out_dir=e.get("out", "runs").strip() or "runs",
            data_path=data,
            cohort=cohort,
            window=window,
            sweep_observation=_typed(s, "observation_days", "ints", SWEEP_OBSERVATION),
            sweep_bins=_typed(s, "n_bins", "ints", SWEEP_BINS),
            sweep_prediction=_typed(s, "prediction_days", "ints", SWEEP_PREDICTION),
            train=train,
            fed=fed,
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _expand_scenarios(names) -> tuple[str, ...]:
    out = []
    for n in names:
        n = SCENARIO_ALIASES.get(n, n)
        if n == "all":
            out.extend(SCENARIO_CHOICES)
        elif n in SCENARIO_CHOICES:
            out.append(n)
        else:
            raise ConfigError(f"unknown scenario {n!r}")
    return tuple(dict.fromkeys(out))


def load_config(path=None) -> ExperimentConfig:
    """Read a config file; ``None`` gives the all-defaults configuration.

    Relative data paths resolve against the config file's directory.
    """
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent)


def default_config_text() -> str:
    return ExperimentConfig().to_ini()

