"""Binary checkpoints holding everything needed to resume training.

Layout (little-endian)::

    b"DPF1" | u32 version | u32 meta_len | meta (UTF-8 JSON, sorted keys)
    u32 n_tensors | n_tensors * tensor
    u8 has_optimizer | [u64 adam_step | 4 * f64 (lr, beta1, beta2, eps)
                        | first moments | second moments
                        | f64 ema_decay | u8 has_ema | [weight averages]]

    tensor := u16 name_len | name | u32 rank | u32 dim * rank | float32 data

Moments and weight averages are stored in parameter order with the parameter shapes. The meta
block carries the score-field config, metric space, schedule parameters,
training config, seed and step counter.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigMismatchError, FormatError
from ..field_domain import MetricSpaceSpec
from ..numerics import AdamState, ParameterStore, Tensor
from ..score_field import ScoreFieldConfig, parameter_shapes

MAGIC = b"DPF1"
VERSION = 1


@dataclass
class Checkpoint:
    score_config: ScoreFieldConfig
    field_spec: MetricSpaceSpec
    schedule: dict
    params: ParameterStore
    optimizer: AdamState | None = None
    seed: int = 0
    step: int = 0
    train: dict = field(default_factory=dict)

    def meta(self):
        return {
            "score_field": self.score_config.to_dict(),
            "field_spec": self.field_spec.to_dict(),
            "schedule": dict(self.schedule),
            "train": dict(self.train),
            "seed": int(self.seed),
            "step": int(self.step),
        }


def _tensor_bytes(name, arr):
    raw = name.encode()
    arr = np.ascontiguousarray(arr, dtype="<f4")
    return (
        struct.pack("<H", len(raw)) + raw + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape) + arr.tobytes()
    )


def encode_checkpoint(ckpt):
    meta = json.dumps(ckpt.meta(), sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(ckpt.params))]
    parts += [_tensor_bytes(name, t.data) for name, t in ckpt.params.items()]
    opt = ckpt.optimizer
    if opt is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<BQ4d", 1, opt.step, opt.lr, opt.beta1, opt.beta2, opt.eps))
        names = ckpt.params.names()
        parts += [np.ascontiguousarray(opt.m[n], dtype="<f4").tobytes() for n in names]
        parts += [np.ascontiguousarray(opt.v[n], dtype="<f4").tobytes() for n in names]
        parts.append(struct.pack("<dB", opt.ema_decay, 1 if opt.ema else 0))
        if opt.ema:
            parts += [np.ascontiguousarray(opt.ema[n], dtype="<f4").tobytes() for n in names]
    return b"".join(parts)


def save_checkpoint(path, ckpt):
    Path(path).write_bytes(encode_checkpoint(ckpt))


class _Reader:
    def __init__(self, blob, source):
        self.blob = blob
        self.pos = 0
        self.source = source

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.source}: truncated checkpoint (needed {n} bytes at offset {self.pos})")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, shape):
        count = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)


def decode_checkpoint(blob, source="<bytes>", expect_config=None):
    r = _Reader(blob, source)
    if r.take(4) != MAGIC:
        raise FormatError(f"{source}: not a checkpoint (bad magic)")
    version, meta_len = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    try:
        meta = json.loads(r.take(meta_len).decode())
        config = ScoreFieldConfig.from_dict(meta["score_field"])
        spec = MetricSpaceSpec.from_dict(meta["field_spec"])
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{source}: corrupt metadata ({exc})") from None
    if expect_config is not None and expect_config != config:
        raise ConfigMismatchError(f"{source}: checkpoint was written for a different model",
                                  expected=expect_config, found=config)
    if int(meta["schedule"]["T"]) != config.timesteps:
        raise ConfigMismatchError(f"{source}: schedule T does not match the model's timesteps",
                                  expected=config.timesteps, found=meta["schedule"]["T"])

    (n_tensors,) = r.unpack("<I")
    params = ParameterStore()
    for _ in range(n_tensors):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}I")
        params.add(name, Tensor(r.floats(shape)))
    expected = parameter_shapes(config)
    found = {name: t.shape for name, t in params.items()}
    if list(expected.items()) != list(found.items()):
        raise ConfigMismatchError(
            f"{source}: parameters ({params.n_params}) do not match the stored config",
            expected=config, found=_shape_summary(expected, found),
        )

    optimizer = None
    (has_opt,) = r.unpack("<B")
    if has_opt:
        step, lr, b1, b2, eps = r.unpack("<Q4d")
        optimizer = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, step=step)
        for n, t in params.items():
            optimizer.m[n] = r.floats(t.shape)
        for n, t in params.items():
            optimizer.v[n] = r.floats(t.shape)
        optimizer.ema_decay, has_ema = r.unpack("<dB")
        if has_ema:
            for n, t in params.items():
                optimizer.ema[n] = r.floats(t.shape)
    if r.pos != len(blob):
        raise FormatError(f"{source}: {len(blob) - r.pos} trailing bytes")
    return Checkpoint(config, spec, meta["schedule"], params, optimizer, meta["seed"], meta["step"], meta["train"])


def load_checkpoint(path, expect_config=None):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from None
    return decode_checkpoint(blob, str(path), expect_config)


def _shape_summary(expected, found):
    missing = sorted(set(expected) - set(found))
    extra = sorted(set(found) - set(expected))
    wrong = sorted(n for n in set(expected) & set(found) if expected[n] != found[n])
    return f"missing={missing[:5]} extra={extra[:5]} wrong_shape={wrong[:5]}"
