"""Flat dotted-key experiment configuration.

A config file is TOML restricted to top-level dotted keys::

    model.beta = 1.0
    model.left = [0.5, 0.3, 0.2]
    sim.N = [64, 128, 256]

It is flattened to a ``{"model.beta": 1.0, ...}`` mapping; command-line
``--set key=value`` pairs override file keys.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..species import (ModelParams, ParameterError, RegimeKind, RegimeSpec,
                       ReservoirDensities, classify_regime, validate_params)

__all__ = ["ConfigError", "ExperimentConfig", "DEFAULTS", "load_config", "parse_overrides",
           "flatten"]


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


DEFAULTS: dict[str, Any] = {
    "model.N": 64,
    "model.beta": 1.0,
    "model.beta_tilde": 1.0,
    "model.theta": 1.5,
    "model.delta": 0.5,
    "model.left": [0.5, 0.3, 0.2],
    "model.right": [0.2, 0.3, 0.5],
    "regime.kind": "auto",
    "regime.kappa1": 0.0,
    "regime.kappa2": 0.0,
    "initial.preset": "linear",
    "initial.u0": 0.5,
    "initial.value": [1 / 3, 1 / 3, 1 / 3],
    "initial.amplitude": 0.1,
    "sim.N": [64, 128, 256],
    "sim.replicas": 200,
    "sim.t_end": 0.1,
    "sim.times": [0.0, 0.1],
    "sim.seed": 20240607,
    "sim.write_trajectories": False,
    "pde.M": 256,
    "pde.safety": 0.4,
    "pde.times": [],
    "pde.refine": False,
    "compare.norm": "L1",
    "compare.bins": 16,
    "oracle.N": 4,
    "oracle.mc_N": 3,
    "oracle.mc_replicas": 20000,
    "oracle.pairs": 100,
    "oracle.seed": 7,
    "sweep.key": "",
    "sweep.values": [],
}

_PRESETS = ("constant", "linear", "step", "bump")
_NORMS = ("L1", "L2", "sup-pairing")


def flatten(tree: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def parse_overrides(pairs) -> dict[str, Any]:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = _parse_value(v.strip())
    return out


def load_config(path=None, overrides: dict | None = None) -> "ExperimentConfig":
    data = dict(DEFAULTS)
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = flatten(tomllib.load(fh))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        data.update(raw)
    data.update(overrides or {})
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return ExperimentConfig(data)


def _triple(value, key) -> ReservoirDensities:
    try:
        return ReservoirDensities.from_seq(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from exc


@dataclass
class ExperimentConfig:
    values: dict[str, Any] = field(default_factory=lambda: dict(DEFAULTS))

    def __post_init__(self):
        self.validate()

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def replace(self, **dotted) -> "ExperimentConfig":
        new = dict(self.values)
        new.update(dotted)
        return ExperimentConfig(new)

    def with_key(self, key: str, value) -> "ExperimentConfig":
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        new = dict(self.values)
        new[key] = value
        return ExperimentConfig(new)

    # -- derived objects ----------------------------------------------------
    def params(self, N: int | None = None) -> ModelParams:
        v = self.values
        p = ModelParams(int(N if N is not None else v["model.N"]), float(v["model.beta"]),
                        float(v["model.beta_tilde"]), float(v["model.theta"]),
                        float(v["model.delta"]), _triple(v["model.left"], "model.left"),
                        _triple(v["model.right"], "model.right"))
        try:
            return validate_params(p)
        except ParameterError as exc:
            raise ConfigError(f"model (N={p.N}): {exc}") from exc

    def regime(self) -> RegimeSpec:
        v = self.values
        kind = str(v["regime.kind"]).lower()
        if kind == "auto":
            return classify_regime(float(v["model.theta"]), float(v["model.delta"]),
                                   float(v["model.beta_tilde"]))
        if kind == RegimeKind.DIRICHLET.value:
            return RegimeSpec.dirichlet()
        if kind == RegimeKind.ROBIN.value:
            return RegimeSpec.robin(v["regime.kappa1"], v["regime.kappa2"], label="custom")
        raise ConfigError(f"regime.kind must be auto, dirichlet or robin, got {kind!r}")

    @property
    def N_list(self) -> list[int]:
        n = self.values["sim.N"]
        return [int(x) for x in (n if isinstance(n, list) else [n])]

    @property
    def sim_times(self) -> list[float]:
        return sorted(float(t) for t in self.values["sim.times"])

    @property
    def pde_times(self) -> list[float]:
        times = self.values["pde.times"] or self.values["sim.times"]
        return sorted(float(t) for t in times)

    # -- validation ---------------------------------------------------------
    def validate(self) -> None:
        v = self.values
        Ns = self.N_list
        if not Ns or Ns != sorted(Ns) or len(set(Ns)) != len(Ns):
            raise ConfigError(f"sim.N must be strictly ascending, got {Ns}")
        if int(v["sim.replicas"]) < 1:
            raise ConfigError("sim.replicas must be >= 1")
        t_end = float(v["sim.t_end"])
        if t_end < 0:
            raise ConfigError("sim.t_end must be nonnegative")
        for key, times in (("sim.times", self.sim_times), ("pde.times", self.pde_times)):
            if any(t < 0 or t > t_end for t in times):
                raise ConfigError(f"{key}: all times must lie in [0, sim.t_end={t_end}]")
        if v["initial.preset"] not in _PRESETS:
            raise ConfigError(f"initial.preset must be one of {_PRESETS}")
        if v["compare.norm"] not in _NORMS:
            raise ConfigError(f"compare.norm must be one of {_NORMS}")
        if int(v["pde.M"]) < 8:
            raise ConfigError("pde.M must be >= 8")
        for N in Ns:
            self.params(N)
        self.regime()
