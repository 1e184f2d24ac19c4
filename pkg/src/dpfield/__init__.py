"""Diffusion probabilistic fields: generative models over coordinate-signal pairs."""

from .diffusion import (
    FieldDataset,
    SamplerConfig,
    TrainConfig,
    averaged_model,
    sample_field,
    sample_resolution_free,
    sample_signals,
    train,
)
from .errors import ConfigMismatchError, ContractError, DPFError, FormatError, NumericError, ShapeError
from .field_domain import FieldSample, MetricSpaceSpec, PairSet
from .schedule import NoiseSchedule, build_linear_schedule
from .score_field import ARCHITECTURES, ScoreField, ScoreFieldConfig

__version__ = "0.1.0"
