"""Run configuration: INI-style file with [section] key = value lines.

Unknown sections or keys are rejected so typos fail loudly.  Command-line
overrides arrive as "section.key=value" strings and are applied before
type conversion, so flags always win over the file.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .errors import ConfigError
from .ggp import NggpParams

__all__ = ["RunConfig", "load_config", "apply_overrides"]


def _to_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _to_optional_int(text: str):
    if text.strip().lower() in ("", "never", "none"):
        return None
    return int(text)


def _to_optional_float(text: str):
    if text.strip().lower() in ("", "none", "default"):
        return None
    return float(text)


_SCHEMA = {
    "prior": {"a": float, "sigma": float, "tau": float},
    "model": {
        "alpha0": float,
        "epsilon": _to_optional_float,
        "merge_threshold": float,
        "merge_every": _to_optional_int,
        "exact_expected_k": _to_bool,
    },
    "ep": {"epochs": int, "delta_tol": float, "record": _to_bool},
    "gibbs": {"sweeps": int, "burn_in": int, "chains": int, "seed": int},
    "io": {"corpus": str, "test_corpus": str, "checkpoint_in": str, "checkpoint_out": str},
    "eval": {"test_frac": float, "probe_cadence": int, "replicates": int, "seed": int},
}


@dataclass
class RunConfig:
    """Typed view of the configuration with package defaults filled in."""

    a: float = 1.0
    sigma: float = 0.0
    tau: float = 1.0
    alpha0: float = 0.5
    epsilon: float | None = None
    merge_threshold: float = 0.98
    merge_every: int | None = 1000
    exact_expected_k: bool = True
    ep_epochs: int = 50
    ep_delta_tol: float = 1e-4
    ep_record: bool = True
    gibbs_sweeps: int = 215
    gibbs_burn_in: int = 165
    gibbs_chains: int = 5
    gibbs_seed: int = 0
    io: dict = field(default_factory=dict)
    test_frac: float = 0.2
    probe_cadence: int = 5000
    replicates: int = 5
    eval_seed: int = 0

    def params(self) -> NggpParams:
        try:
            return NggpParams(a=self.a, sigma=self.sigma, tau=self.tau)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def validate(self) -> "RunConfig":
        self.params()
        if self.alpha0 <= 0:
            raise ConfigError(f"model.alpha0 must be positive, got {self.alpha0}")
        if self.epsilon is not None and not (self.sigma <= self.epsilon < 1.0):
            raise ConfigError(
                f"model.epsilon must lie in [sigma, 1) = [{self.sigma}, 1), got {self.epsilon}"
            )
        if not 0.0 < self.test_frac < 1.0:
            raise ConfigError(f"eval.test_frac must lie in (0, 1), got {self.test_frac}")
        for name, value in (
            ("ep.epochs", self.ep_epochs),
            ("gibbs.sweeps", self.gibbs_sweeps),
            ("gibbs.chains", self.gibbs_chains),
            ("eval.probe_cadence", self.probe_cadence),
            ("eval.replicates", self.replicates),
        ):
            if value < (0 if name == "ep.epochs" else 1):
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.gibbs_burn_in < 0 or self.gibbs_burn_in >= self.gibbs_sweeps:
            raise ConfigError(
                f"gibbs.burn_in must lie in [0, sweeps), got {self.gibbs_burn_in}"
            )
        return self


_FIELD_BY_KEY = {
    ("prior", "a"): "a",
    ("prior", "sigma"): "sigma",
    ("prior", "tau"): "tau",
    ("model", "alpha0"): "alpha0",
    ("model", "epsilon"): "epsilon",
    ("model", "merge_threshold"): "merge_threshold",
    ("model", "merge_every"): "merge_every",
    ("model", "exact_expected_k"): "exact_expected_k",
    ("ep", "epochs"): "ep_epochs",
    ("ep", "delta_tol"): "ep_delta_tol",
    ("ep", "record"): "ep_record",
    ("gibbs", "sweeps"): "gibbs_sweeps",
    ("gibbs", "burn_in"): "gibbs_burn_in",
    ("gibbs", "chains"): "gibbs_chains",
    ("gibbs", "seed"): "gibbs_seed",
    ("eval", "test_frac"): "test_frac",
    ("eval", "probe_cadence"): "probe_cadence",
    ("eval", "replicates"): "replicates",
    ("eval", "seed"): "eval_seed",
}


def _build(raw: dict) -> RunConfig:
    config = RunConfig()
    for (section, key), text in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in _SCHEMA[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        converter = _SCHEMA[section][key]
        try:
            value = converter(text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {section}.{key}: {text!r} ({exc})") from exc
        if section == "io":
            config.io[key] = value
        else:
            setattr(config, _FIELD_BY_KEY[(section, key)], value)
    return config.validate()


def load_config(path=None, overrides=()) -> RunConfig:
    """Parse a config file (optional) and apply section.key=value overrides."""
    raw: dict = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, "r", encoding="utf-8") as handle:
                parser.read_file(handle)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from exc
        for section in parser.sections():
            for key, value in parser.items(section):
                raw[(section, key)] = value
    raw = apply_overrides(raw, overrides)
    return _build(raw)


def apply_overrides(raw: dict, overrides) -> dict:
    raw = dict(raw)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        raw[(section.strip(), key.strip())] = value.strip()
    return raw
