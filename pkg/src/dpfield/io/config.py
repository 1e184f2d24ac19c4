"""Sectioned plain-text run configuration.

Example::

    [schedule]
    T = 1000
    beta_start = 1e-4
    beta_end = 0.02
    sigma_rule = beta

    [model]
    architecture = cross_attention
    d_latent = 64

    [train]
    steps = 4000
    n_context = 25%     ; a percentage of the field's points
    lr = 1e-3

    [sampler]
    context_fraction = 1.0

Keys left out take their library defaults. ``[model] d_m``/``d_y`` are
filled in from the dataset when a run starts, so they are optional.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from ..diffusion import TrainConfig
from ..errors import ContractError, FormatError
from ..schedule import build_linear_schedule
from ..score_field import ScoreFieldConfig

SECTIONS = ("schedule", "model", "train", "sampler")
_SCHEDULE_KEYS = {"T": int, "beta_start": float, "beta_end": float, "sigma_rule": str}
_SAMPLER_KEYS = {"context_fraction": float, "n_samples": int, "seed": int}


@dataclass
class RunConfig:
    schedule: dict = field(default_factory=lambda: {"T": 1000, "beta_start": 1e-4, "beta_end": 0.02,
                                                    "sigma_rule": "beta"})
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: dict = field(default_factory=lambda: {"context_fraction": 1.0, "n_samples": 16, "seed": 0})

    def build_schedule(self):
        return build_linear_schedule(**self.schedule)

    def score_config(self, d_m=None, d_y=None):
        """ScoreFieldConfig with the schedule's T and, when given, the data's d_m/d_y."""
        d = dict(self.model)
        d["timesteps"] = self.schedule["T"]
        if d_m is not None:
            if "d_m" in self.model and int(self.model["d_m"]) != d_m:
                raise ContractError(f"config says d_m={self.model['d_m']} but the data has d_m={d_m}")
            d["d_m"] = d_m
        if d_y is not None:
            if "d_y" in self.model and int(self.model["d_y"]) != d_y:
                raise ContractError(f"config says d_y={self.model['d_y']} but the data has d_y={d_y}")
            d["d_y"] = d_y
        return ScoreFieldConfig.from_dict(d)


def _pair_count(key, value):
    # "25%" -> fraction key, plain integer -> count key
    value = value.strip()
    if value.endswith("%"):
        frac = float(value[:-1]) / 100.0
        if not 0.0 < frac <= 1.0:
            raise ContractError(f"{key} percentage must be in (0, 100], got {value}")
        return key.replace("n_", "") + "_fraction", frac
    return key, int(value)


def parse_config(text, source="<string>"):
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    parser.optionxform = str  # keep "T" upper-case
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise FormatError(f"{source}: {exc}") from None
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ContractError(f"{source}: unknown sections {sorted(unknown)}")
    cfg = RunConfig()
    try:
        if parser.has_section("schedule"):
            for k, v in parser["schedule"].items():
                if k not in _SCHEDULE_KEYS:
                    raise ContractError(f"unknown schedule key {k!r}")
                cfg.schedule[k] = _SCHEDULE_KEYS[k](v)
        if parser.has_section("model"):
            cfg.model = dict(parser["model"].items())
            ScoreFieldConfig.from_dict(cfg.model)  # validate early
        if parser.has_section("train"):
            raw = {}
            for k, v in parser["train"].items():
                if k in ("n_context", "n_query"):
                    k, v = _pair_count(k, v)
                raw[k] = v
            cfg.train = TrainConfig.from_dict(raw)
        if parser.has_section("sampler"):
            for k, v in parser["sampler"].items():
                if k not in _SAMPLER_KEYS:
                    raise ContractError(f"unknown sampler key {k!r}")
                cfg.sampler[k] = _SAMPLER_KEYS[k](v)
        cfg.build_schedule()
    except ValueError as exc:
        raise ContractError(f"{source}: {exc}") from None
    return cfg


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
