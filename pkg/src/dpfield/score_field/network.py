"""The score field eps_theta(C_t, t, Q_t) with three interchangeable bodies."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from ..field_domain import PairSet, fourier_encode
from ..numerics import ParameterStore, Tensor, add, broadcast_to, concat, gelu, mean, mul, no_grad
from . import layers
from .config import ScoreFieldConfig


def time_features(t, config):
    """[fourier(t/T), t/T] per batch element, shape [B, 2 L_t + 1]."""
    t_norm = np.asarray(t, dtype=np.float64).reshape(-1, 1) / config.timesteps
    return np.concatenate([fourier_encode(t_norm, config.time_freqs, config.time_ladder), t_norm], axis=-1)


def embed_features(coords, signals, t, config):
    """Per-row features [fourier(coords), coords, signals, fourier(t/T), t/T].

    ``coords``/``signals`` are [B, n, .] and ``t`` has one entry per batch
    element; the time features are shared by every row of an element.
    """
    b, n, _ = signals.shape
    t_feats = time_features(t, config)
    c_feats = fourier_encode(coords, config.coord_freqs, config.coord_ladder)
    if coords.shape[0] != b:
        c_feats = np.broadcast_to(c_feats, (b,) + c_feats.shape[1:])
        coords = np.broadcast_to(coords, (b,) + coords.shape[1:])
    return np.concatenate(
        [c_feats, coords, signals, np.broadcast_to(t_feats[:, None, :], (b, n, t_feats.shape[-1]))],
        axis=-1,
    )


def _as_batch(coords, signals, name, config):
    coords = np.asarray(coords, dtype=np.float64)
    signals = np.asarray(signals, dtype=np.float64)
    if signals.ndim == 2:
        signals = signals[None]
    if coords.ndim == 2:
        coords = coords[None]
    if signals.ndim != 3 or coords.ndim != 3:
        raise ShapeError(f"{name}: expected [n, d] or [B, n, d] arrays, got {coords.shape} / {signals.shape}")
    if coords.shape[-1] != config.d_m or signals.shape[-1] != config.d_y:
        raise ShapeError(
            f"{name}: coordinate/signal widths {coords.shape[-1]}/{signals.shape[-1]} "
            f"do not match config d_m={config.d_m}, d_y={config.d_y}"
        )
    if coords.shape[1] != signals.shape[1] or coords.shape[0] not in (1, signals.shape[0]):
        raise ShapeError(f"{name}: coordinates {coords.shape} do not pair with signals {signals.shape}")
    return coords, signals


class ScoreField:
    """Noise predictor over context/query pairs.

    Construct with a config and a seed to get freshly initialized weights, or
    pass an existing :class:`ParameterStore` (e.g. from a checkpoint).
    """

    def __init__(self, config: ScoreFieldConfig, params: ParameterStore | None = None, seed=0, dtype=np.float32):
        self.config = config
        self.params = params if params is not None else init_params(config, seed, dtype)

    @property
    def dtype(self):
        return self.params.dtype

    def __call__(self, ctx_coords, ctx_signals, t, q_coords, q_signals) -> Tensor:
        """Predicted query noise, shape [B, n_query, d_y] (or [n_query, d_y] for unbatched input)."""
        unbatched = np.ndim(q_signals) == 2
        cfg = self.config
        cc, cs = _as_batch(ctx_coords, ctx_signals, "context", cfg)
        qc, qs = _as_batch(q_coords, q_signals, "query", cfg)
        b = max(cs.shape[0], qs.shape[0])
        if cs.shape[0] != b:
            cs = np.broadcast_to(cs, (b,) + cs.shape[1:])
        if qs.shape[0] != b:
            qs = np.broadcast_to(qs, (b,) + qs.shape[1:])
        t = np.broadcast_to(np.asarray(t), (b,))
        dtype = self.dtype
        ctx = layers.dense(self.params, "embed.ctx", Tensor(embed_features(cc, cs, t, cfg).astype(dtype)))
        qry = layers.dense(self.params, "embed.query", Tensor(embed_features(qc, qs, t, cfg).astype(dtype)))
        body = _BODIES[cfg.architecture]
        out = body(self.params, cfg, ctx, qry)
        if cfg.signal_skip:
            # eps_hat += g(t) * Y_q: a per-step, per-channel gain on the noisy query signal
            gain = layers.dense(self.params, "skip", Tensor(time_features(t, cfg).astype(dtype)))
            out = add(out, mul(gain.reshape((b, 1, cfg.d_y)), Tensor(qs.astype(dtype))))
        if unbatched:
            out = out.reshape(out.shape[1:])
        return out

    def predict(self, context: PairSet, t, query: PairSet):
        """Untracked evaluation on unbatched pair sets; returns an ndarray."""
        with no_grad():
            return self(context.coords, context.signals, t, query.coords, query.signals).data


def score_eval(context, t, query, params, config):
    """Functional form: eps_hat for ``query`` given ``context`` at step ``t``."""
    return ScoreField(config, params).predict(context, t, query)


def _cross_attention_body(params, cfg, ctx, qry):
    b = ctx.shape[0]
    h = cfg.n_heads
    z = layers.batched(params["latents"], b)
    for i in range(cfg.n_blocks):
        z = layers.cross_attention(params, f"enc.{i}.cross", z, ctx, h)
        z = layers.mlp_residual(params, f"enc.{i}.cross_mlp", z)
        for s in range(cfg.self_attends_per_block):
            z = layers.self_attention_block(params, f"enc.{i}.self.{s}", z, h)
    x = qry
    for i in range(cfg.decoder_blocks):
        x = layers.cross_attention(params, f"dec.{i}.cross", x, z, h)
        x = layers.mlp_residual(params, f"dec.{i}.mlp", x)
    return layers.dense(params, "head.out", layers.norm(params, "head.ln", x))


def _pooled_query_head(params, cfg, tokens, qry):
    # pool the residual stream first so the field mean stays linear in the tokens
    pooled = layers.norm(params, "pool.ln", mean(tokens, axis=1, keepdims=True))  # [B, 1, d]
    pooled = broadcast_to(pooled, qry.shape)
    x = concat([qry, pooled], axis=-1)
    x = gelu(layers.dense(params, "qhead.fc1", layers.norm(params, "qhead.ln", x)))
    return layers.dense(params, "qhead.fc2", x)


def _transformer_body(params, cfg, ctx, qry):
    x = ctx
    for i in range(cfg.n_blocks):
        x = layers.self_attention_block(params, f"enc.{i}", x, cfg.n_heads)
    return _pooled_query_head(params, cfg, x, qry)


def _mixer_body(params, cfg, ctx, qry):
    x = ctx
    for i in range(cfg.n_blocks):
        x = layers.mixer_block(params, f"mix.{i}", x)
    return _pooled_query_head(params, cfg, x, qry)


_BODIES = {
    "cross_attention": _cross_attention_body,
    "transformer_encoder": _transformer_body,
    "mlp_mixer": _mixer_body,
}


def init_params(config, seed=0, dtype=np.float32):
    """Fresh weights; the parameter set is a pure function of ``config``."""
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    d = config.d_latent
    hidden = config.mlp_ratio * d
    dh = config.head_dim
    layers.init_dense(store, "embed.ctx", config.d_features, d, rng, dtype)
    layers.init_dense(store, "embed.query", config.d_features, d, rng, dtype)
    if config.architecture == "cross_attention":
        store.add("latents", (0.02 * rng.standard_normal((config.n_latents, d))).astype(dtype))
        for i in range(config.n_blocks):
            layers.init_attention(store, f"enc.{i}.cross", d, d, config.n_heads, dh, rng, dtype)
            layers.init_mlp(store, f"enc.{i}.cross_mlp", d, hidden, rng, dtype)
            for s in range(config.self_attends_per_block):
                layers.init_self_attention_block(store, f"enc.{i}.self.{s}", d, config.n_heads, dh, hidden, rng, dtype)
        for i in range(config.decoder_blocks):
            layers.init_attention(store, f"dec.{i}.cross", d, d, config.n_heads, dh, rng, dtype)
            layers.init_mlp(store, f"dec.{i}.mlp", d, hidden, rng, dtype)
        layers.init_norm(store, "head.ln", d, dtype)
        layers.init_dense(store, "head.out", d, config.d_y, rng, dtype)
    else:
        for i in range(config.n_blocks):
            if config.architecture == "transformer_encoder":
                layers.init_self_attention_block(store, f"enc.{i}", d, config.n_heads, dh, hidden, rng, dtype)
            else:
                layers.init_mixer_block(
                    store, f"mix.{i}", config.mixer_tokens, d, config.mlp_ratio * config.mixer_tokens, hidden, rng, dtype
                )
        layers.init_norm(store, "pool.ln", d, dtype)
        layers.init_norm(store, "qhead.ln", 2 * d, dtype)
        layers.init_dense(store, "qhead.fc1", 2 * d, d, rng, dtype)
        layers.init_dense(store, "qhead.fc2", d, config.d_y, rng, dtype)
    if config.signal_skip:
        store.add("skip.w", np.zeros((2 * config.time_freqs + 1, config.d_y), dtype=dtype))
        store.add("skip.b", np.zeros(config.d_y, dtype=dtype))
    return store


def parameter_shapes(config):
    """Name -> shape map expected for ``config`` (used to validate checkpoints)."""
    return {name: t.shape for name, t in init_params(config, 0, np.float32).items()}
