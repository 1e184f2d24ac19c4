"""Training and ancestral sampling of distributions over fields."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ContractError, NumericError, ShapeError
from .field_domain import FieldSample, MetricSpaceSpec
from .numerics import (
    AdamState,
    adam_update,
    as_tensor,
    assert_finite,
    backward_gradients,
    clip_grad_norm,
    mean,
    no_grad,
    square,
    sub,
)
from .schedule import ancestral_step, forward_diffuse

OUTPUT_CLAMP = 1.3
LR_DECAYS = ("none", "cosine")


@dataclass
class FieldDataset:
    """Fields that share one coordinate table: signals are [N, n_points, d_y]."""

    spec: MetricSpaceSpec
    coords: np.ndarray
    signals: np.ndarray

    def __post_init__(self):
        if self.signals.ndim != 3 or self.signals.shape[1] != len(self.coords):
            raise ShapeError(f"signals {self.signals.shape} do not match {len(self.coords)} coordinates")

    def __len__(self):
        return len(self.signals)

    @property
    def n_points(self):
        return len(self.coords)

    @property
    def d_y(self):
        return self.signals.shape[2]

    def field(self, i):
        return FieldSample(self.coords, self.signals[i], self.spec)


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 16
    n_context: int = 0  # 0 -> every point of the field (or context_fraction)
    n_query: int = 0  # 0 -> same as n_context (or query_fraction)
    context_fraction: float = 0.0  # > 0 overrides n_context with ceil(fraction * n_points)
    query_fraction: float = 0.0
    lr: float = 1e-4
    lr_decay: str = "none"  # "cosine": lr * (1 + cos(pi * step / steps)) / 2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0  # <= 0 disables clipping
    ema_decay: float = 0.0  # > 0 keeps a running average of the weights for sampling
    seed: int = 0
    disjoint_pairs: bool = False
    log_every: int = 100

    def __post_init__(self):
        if not 0.0 <= self.ema_decay < 1.0:
            raise ContractError(f"ema_decay must be in [0, 1), got {self.ema_decay}")
        if self.lr_decay not in LR_DECAYS:
            raise ContractError(f"lr_decay must be one of {LR_DECAYS}, got {self.lr_decay!r}")

    def lr_at(self, step):
        if self.lr_decay == "cosine":
            return self.lr * 0.5 * (1.0 + math.cos(math.pi * min(step, self.steps) / self.steps))
        return self.lr

    def resolved_counts(self, n_points):
        nc = math.ceil(self.context_fraction * n_points) if self.context_fraction > 0 else self.n_context
        nc = nc or n_points
        nq = math.ceil(self.query_fraction * n_points) if self.query_fraction > 0 else self.n_query
        nq = nq or nc
        if not (1 <= nc <= n_points and 1 <= nq <= n_points):
            raise ContractError(f"pair counts ({nc}, {nq}) must lie in 1..{n_points}")
        return nc, nq

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        types = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k not in types:
                raise ContractError(f"unknown training key {k!r}")
            kind = types[k]
            if kind == "str":
                out[k] = str(v)
            elif kind == "bool":
                out[k] = v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes", "on")
            elif kind == "int":
                out[k] = int(v)
            else:
                out[k] = float(v)
        return cls(**out)


@dataclass
class TrainBatch:
    ctx_coords: np.ndarray  # [B, n_c, d_m]
    ctx_signals: np.ndarray  # [B, n_c, d_y], noised to step t
    q_coords: np.ndarray
    q_signals: np.ndarray
    t: np.ndarray  # [B], 1-based
    eps_q: np.ndarray  # [B, n_q, d_y], the regression target


def step_rng(seed, step):
    """Independent stream per (seed, step) so a resumed run replays the same draws."""
    return np.random.default_rng([int(seed), int(step)])


def make_batch(dataset, schedule, cfg, step, dtype=np.float32):
    """Draw fields, timesteps, pair subsets and noise for one training step."""
    rng = step_rng(cfg.seed, step)
    n = dataset.n_points
    nc, nq = cfg.resolved_counts(n)
    b = cfg.batch_size
    which = rng.integers(0, len(dataset), size=b)
    t = rng.integers(1, schedule.T + 1, size=b)
    order = np.argsort(rng.random((b, n)), axis=1)
    ci = order[:, :nc]
    if cfg.disjoint_pairs:
        if nc + nq > n:
            raise ContractError(f"disjoint sampling needs {nc}+{nq} <= {n}")
        qi = order[:, nc:nc + nq]
    else:
        qi = np.argsort(rng.random((b, n)), axis=1)[:, :nq]
    y0 = dataset.signals[which].astype(np.float64)
    rows = np.arange(b)[:, None]
    eps_c = rng.standard_normal((b, nc, dataset.d_y))
    eps_q = rng.standard_normal((b, nq, dataset.d_y))
    ctx = forward_diffuse(y0[rows, ci], t, eps_c, schedule)
    qry = forward_diffuse(y0[rows, qi], t, eps_q, schedule)
    return TrainBatch(
        dataset.coords[ci], ctx.astype(dtype), dataset.coords[qi], qry.astype(dtype), t, eps_q.astype(dtype)
    )


def ddpm_loss(eps_hat, eps_q):
    """Mean squared error over every query row and channel (query side only)."""
    eps_hat = as_tensor(eps_hat)
    target = as_tensor(eps_q, like=eps_hat)
    if eps_hat.shape != target.shape:
        raise ShapeError(f"prediction {eps_hat.shape} vs target {target.shape}")
    return mean(square(sub(eps_hat, target)))


def train_step(batch, model, opt_state, grad_clip=1.0):
    """Forward, loss, backward, clip, Adam. Returns the loss before the update."""
    eps_hat = model(batch.ctx_coords, batch.ctx_signals, batch.t, batch.q_coords, batch.q_signals)
    loss = ddpm_loss(eps_hat, batch.eps_q)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NumericError(f"loss became {value}")
    backward_gradients(loss, model.params)
    clip_grad_norm(model.params, grad_clip)
    adam_update(model.params, opt_state)
    return value


def new_optimizer(model, cfg):
    return AdamState.for_params(model.params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
                                ema_decay=cfg.ema_decay)


def averaged_model(model, opt_state):
    """The model with its running-average weights, or ``model`` itself when none are kept."""
    if opt_state is None or not opt_state.ema:
        return model
    store = model.params.copy()
    store.load_arrays({name: opt_state.ema[name] for name in store.names()})
    return type(model)(model.config, params=store)


def train(model, dataset, schedule, cfg, opt_state=None, start_step=0, steps=None, on_log=None):
    """Run training steps ``start_step .. start_step + steps - 1``.

    Returns the per-step losses. ``on_log(step, loss, interval_mean, elapsed)``
    is called every ``cfg.log_every`` steps and on the final one; ``step`` counts
    completed steps and ``interval_mean`` averages the losses since the last call.
    """
    opt_state = opt_state if opt_state is not None else new_optimizer(model, cfg)
    steps = cfg.steps - start_step if steps is None else steps
    losses = []
    since = 0
    t0 = time.perf_counter()
    for step in range(start_step, start_step + steps):
        batch = make_batch(dataset, schedule, cfg, step, model.dtype)
        opt_state.lr = cfg.lr_at(step)
        loss = train_step(batch, model, opt_state, cfg.grad_clip)
        losses.append(loss)
        last = step == start_step + steps - 1
        if on_log is not None and cfg.log_every and ((step + 1) % cfg.log_every == 0 or last):
            on_log(step + 1, loss, float(np.mean(losses[since:])), time.perf_counter() - t0)
            since = len(losses)
    return losses, opt_state


def select_context_subset(n, rho, rng):
    """ceil(rho * n) distinct indices, drawn once per sampling run."""
    if not (0.0 < rho <= 1.0):
        raise ContractError(f"context fraction must be in (0, 1], got {rho}")
    k = max(1, math.ceil(rho * n - 1e-9))
    if k == n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=k, replace=False))


@dataclass
class SamplerConfig:
    spec: MetricSpaceSpec
    n_samples: int = 1
    context_fraction: float = 1.0
    seed: int = 0


def network_score(model):
    """Adapt a :class:`ScoreField` to the ``score(ctx_c, ctx_y, t, q_c, q_y) -> ndarray`` sampler hook."""

    def score(ctx_coords, ctx_signals, t, q_coords, q_signals):
        with no_grad():
            return model(ctx_coords, ctx_signals, t, q_coords, q_signals).data

    return score


def sample_signals(score, schedule, coords, n_samples, context_fraction=1.0, seed=0, d_y=1,
                   dtype=np.float32, on_step=None, start=None, t_start=None):
    """Ancestral sampling of ``n_samples`` fields evaluated at ``coords``.

    The context subset of each sample is fixed for the whole run and its
    signals are re-read from the current query signals at every step.
    ``on_step(t, coords, q_signals, ctx_idx, ctx_signals)`` observes each
    step before the update. Returns raw (unclamped) signals [N, n, d_y].

    By default the chain starts from pure noise at t = T. Passing ``start``
    (signals already at step ``t_start``) runs only the last ``t_start``
    steps, which is how partially noised fields are reconstructed.
    """
    rng = np.random.default_rng(seed)
    coords = np.asarray(coords)
    n = len(coords)
    if start is None:
        y = rng.standard_normal((n_samples, n, d_y)).astype(dtype)
        t_start = schedule.T
    else:
        y = np.asarray(start, dtype=dtype)
        if y.shape != (n_samples, n, d_y):
            raise ShapeError(f"start signals {y.shape} != {(n_samples, n, d_y)}")
        t_start = schedule.T if t_start is None else int(t_start)
        schedule.check_t(t_start)
    idx = np.stack([select_context_subset(n, context_fraction, rng) for _ in range(n_samples)])
    rows = np.arange(n_samples)[:, None]
    ctx_coords = coords[idx]
    for t in range(t_start, 0, -1):
        ctx_signals = y[rows, idx]
        if on_step is not None:
            on_step(t, coords, y, idx, ctx_signals)
        eps_hat = score(ctx_coords, ctx_signals, np.full(n_samples, t), coords, y)
        z = rng.standard_normal(y.shape).astype(dtype) if t > 1 else None
        y = ancestral_step(y, eps_hat, t, z, schedule).astype(dtype)
    assert_finite(y, "sampled signals")
    return y


def sample_field(model, schedule, sampler, on_step=None):
    """Generate ``sampler.n_samples`` fields on ``sampler.spec``'s coordinates."""
    coords = sampler.spec.coordinates()
    if coords.shape[1] != model.config.d_m:
        raise ShapeError(f"{sampler.spec.kind} has d_m={coords.shape[1]}, model expects {model.config.d_m}")
    y = sample_signals(
        network_score(model), schedule, coords, sampler.n_samples, sampler.context_fraction,
        sampler.seed, model.config.d_y, model.dtype, on_step,
    )
    return [FieldSample(coords, y[i], sampler.spec) for i in range(len(y))]


def sample_resolution_free(model, schedule, train_spec, eval_spec, n_samples=1, context_fraction=1.0, seed=0):
    """Sample on ``eval_spec``'s coordinates, which may be denser than the training grid."""
    if train_spec.kind != eval_spec.kind:
        raise ContractError(f"cannot move from {train_spec.kind} to {eval_spec.kind}")
    return sample_field(model, schedule, SamplerConfig(eval_spec, n_samples, context_fraction, seed))


def clamp_signals(signals, bound=OUTPUT_CLAMP):
    return np.clip(signals, -bound, bound)
