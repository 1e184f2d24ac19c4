import math

import numpy as np
import pytest

from dpfield.diffusion import (
    FieldDataset,
    SamplerConfig,
    TrainConfig,
    averaged_model,
    clamp_signals,
    ddpm_loss,
    make_batch,
    new_optimizer,
    sample_field,
    sample_resolution_free,
    sample_signals,
    select_context_subset,
    train,
    train_step,
)
from dpfield.errors import ContractError, NumericError, ShapeError
from dpfield.field_domain import MetricSpaceSpec
from dpfield.schedule import build_linear_schedule, gaussian_optimal_eps
from dpfield.score_field import ScoreField, ScoreFieldConfig

SPEC = MetricSpaceSpec("euclidean_grid_2d", (4, 4))


def tiny_model(seed=0, **kw):
    cfg = dict(architecture="transformer_encoder", d_latent=8, n_blocks=1, n_heads=2, coord_freqs=2, time_freqs=3,
               d_m=2, d_y=1, timesteps=20)
    cfg.update(kw)
    return ScoreField(ScoreFieldConfig(**cfg), seed=seed)


def toy_dataset(n=8, seed=0):
    rng = np.random.default_rng(seed)
    return FieldDataset(SPEC, SPEC.coordinates(), rng.uniform(-1, 1, (n, 16, 1)).astype(np.float32))


def test_ddpm_loss_examples():
    eps = np.random.default_rng(0).standard_normal((2, 5, 3))
    assert float(ddpm_loss(eps, eps).data) == 0.0
    assert float(ddpm_loss(eps + 0.3, eps).data) == pytest.approx(0.09)
    with pytest.raises(ShapeError):
        ddpm_loss(eps[:, :4], eps)


def test_batch_supervises_queries_only_and_keeps_coordinates():
    ds = toy_dataset()
    sched = build_linear_schedule(T=20)
    cfg = TrainConfig(batch_size=3, n_context=5, n_query=7)
    b = make_batch(ds, sched, cfg, step=0)
    assert b.eps_q.shape == (3, 7, 1) and b.q_signals.shape == (3, 7, 1) and b.ctx_signals.shape == (3, 5, 1)
    assert not hasattr(b, "eps_c")
    table = {tuple(c) for c in ds.coords}
    for c in np.concatenate([b.ctx_coords.reshape(-1, 2), b.q_coords.reshape(-1, 2)]):
        assert tuple(c) in table
    assert np.all((1 <= b.t) & (b.t <= 20))


def test_make_batch_is_a_function_of_seed_and_step():
    ds = toy_dataset()
    sched = build_linear_schedule(T=20)
    cfg = TrainConfig(batch_size=2, n_context=4, n_query=4, seed=3)
    a, b, c = (make_batch(ds, sched, cfg, s) for s in (5, 5, 6))
    assert np.array_equal(a.q_signals, b.q_signals) and np.array_equal(a.t, b.t)
    assert not np.array_equal(a.q_signals, c.q_signals)


def test_disjoint_pairs():
    ds = toy_dataset()
    cfg = TrainConfig(batch_size=4, n_context=6, n_query=10, disjoint_pairs=True)
    b = make_batch(ds, build_linear_schedule(T=20), cfg, 0)
    for i in range(4):
        assert not {tuple(c) for c in b.ctx_coords[i]} & {tuple(c) for c in b.q_coords[i]}
    with pytest.raises(ContractError):
        make_batch(ds, build_linear_schedule(T=20), TrainConfig(n_context=8, n_query=9, disjoint_pairs=True), 0)


def test_resolved_counts():
    assert TrainConfig().resolved_counts(64) == (64, 64)
    assert TrainConfig(context_fraction=0.25).resolved_counts(64) == (16, 16)
    assert TrainConfig(context_fraction=0.25, query_fraction=0.5).resolved_counts(64) == (16, 32)
    assert TrainConfig(n_context=3, n_query=5).resolved_counts(64) == (3, 5)
    with pytest.raises(ContractError):
        TrainConfig(n_context=65).resolved_counts(64)


def test_train_config_from_strings_and_lr_decay():
    cfg = TrainConfig.from_dict({"steps": "100", "lr": "0.01", "disjoint_pairs": "yes", "lr_decay": "cosine"})
    assert cfg.steps == 100 and cfg.disjoint_pairs and cfg.lr_at(0) == 0.01
    assert cfg.lr_at(50) == pytest.approx(0.005)
    assert cfg.lr_at(100) == pytest.approx(0.0, abs=1e-18)
    with pytest.raises(ContractError):
        TrainConfig.from_dict({"nope": 1})
    with pytest.raises(ContractError):
        TrainConfig(lr_decay="step")


def test_repeated_steps_on_fixed_batch_decrease_loss():
    model = tiny_model()
    ds = toy_dataset()
    cfg = TrainConfig(batch_size=4, lr=3e-3)
    batch = make_batch(ds, build_linear_schedule(T=20), cfg, 0)
    opt = new_optimizer(model, cfg)
    losses = [train_step(batch, model, opt) for _ in range(50)]
    smooth = np.convolve(losses, np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(smooth) < 0)


def test_zero_learning_rate_keeps_parameters():
    model = tiny_model()
    before = {k: v.data.copy() for k, v in model.params.items()}
    cfg = TrainConfig(batch_size=2, lr=0.0)
    batch = make_batch(toy_dataset(), build_linear_schedule(T=20), cfg, 0)
    opt = new_optimizer(model, cfg)
    losses = [train_step(batch, model, opt) for _ in range(3)]
    assert losses[0] == losses[1] == losses[2]
    for k, v in model.params.items():
        assert np.array_equal(v.data, before[k])


def test_training_is_deterministic_and_resumable():
    ds = toy_dataset()
    sched = build_linear_schedule(T=20)
    cfg = TrainConfig(steps=12, batch_size=3, lr=1e-3, seed=4, lr_decay="cosine")
    m1 = tiny_model()
    full, _ = train(m1, ds, sched, cfg)
    m2 = tiny_model()
    full2, _ = train(m2, ds, sched, cfg)
    assert full == full2
    m3 = tiny_model()
    first, opt = train(m3, ds, sched, cfg, steps=5)
    rest, _ = train(m3, ds, sched, cfg, opt_state=opt, start_step=5)
    assert first + rest == full
    for k in m1.params.names():
        assert m1.params[k].data.tobytes() == m3.params[k].data.tobytes()


def test_weight_average_resume_and_model():
    ds = toy_dataset()
    sched = build_linear_schedule(T=20)
    cfg = TrainConfig(steps=10, batch_size=2, lr=1e-2, ema_decay=0.9, seed=1)
    m1 = tiny_model()
    _, opt1 = train(m1, ds, sched, cfg)
    m2 = tiny_model()
    _, opt = train(m2, ds, sched, cfg, steps=4)
    _, opt2 = train(m2, ds, sched, cfg, opt_state=opt, start_step=4)
    avg = averaged_model(m1, opt1)
    for k in m1.params.names():
        assert opt1.ema[k].tobytes() == opt2.ema[k].tobytes()
        assert avg.params[k].data.tobytes() == opt1.ema[k].tobytes()
    assert not np.array_equal(avg.params["skip.w"].data, m1.params["skip.w"].data)
    assert averaged_model(m1, None) is m1
    with pytest.raises(ContractError):
        TrainConfig(ema_decay=1.0)


def test_train_logging_hook():
    seen = []
    cfg = TrainConfig(steps=7, batch_size=2, log_every=3)
    losses, _ = train(tiny_model(), toy_dataset(), build_linear_schedule(T=20), cfg,
                      on_log=lambda s, loss, m, e: seen.append((s, loss, m)))
    assert [s for s, _, _ in seen] == [3, 6, 7]
    assert seen[0][2] == pytest.approx(np.mean(losses[:3]))
    assert seen[-1][1] == losses[-1]


def test_non_finite_loss_raises():
    model = tiny_model()
    model.params["qhead.fc2.b"].data[...] = np.nan
    cfg = TrainConfig(steps=1, batch_size=2)
    with pytest.raises(NumericError):
        train(model, toy_dataset(), build_linear_schedule(T=20), cfg)


def test_select_context_subset():
    rng = np.random.default_rng(0)
    assert np.array_equal(select_context_subset(10, 1.0, rng), np.arange(10))
    idx = select_context_subset(1024, 0.5, rng)
    assert len(idx) == 512 == len(set(idx.tolist()))
    a = select_context_subset(100, 0.3, np.random.default_rng(5))
    b = select_context_subset(100, 0.3, np.random.default_rng(5))
    assert np.array_equal(a, b)
    assert len(select_context_subset(7, 0.01, rng)) == 1
    for bad in (0.0, 1.5):
        with pytest.raises(ContractError):
            select_context_subset(10, bad, rng)


def test_sampler_fixes_subset_and_coordinates():
    model = tiny_model()
    sched = build_linear_schedule(T=20)
    seen = []

    def hook(t, coords, y, idx, ctx):
        seen.append((t, coords.copy(), idx.copy()))
        rows = np.arange(len(y))[:, None]
        assert np.array_equal(ctx, y[rows, idx])

    fields = sample_field(model, sched, SamplerConfig(SPEC, n_samples=3, context_fraction=0.5, seed=1), hook)
    assert [t for t, _, _ in seen] == list(range(20, 0, -1))
    for _, c, idx in seen:
        assert c.tobytes() == SPEC.coordinates().tobytes()
        assert np.array_equal(idx, seen[0][2])
    assert idx.shape == (3, 8)
    for f in fields:
        assert f.coords.tobytes() == SPEC.coordinates().tobytes()
        assert f.signals.shape == (16, 1)


def test_sampler_is_deterministic():
    model = tiny_model()
    sched = build_linear_schedule(T=20)
    cfg = SamplerConfig(SPEC, n_samples=2, context_fraction=0.7, seed=9)
    a = sample_field(model, sched, cfg)
    b = sample_field(model, sched, cfg)
    assert all(x.signals.tobytes() == y.signals.tobytes() for x, y in zip(a, b))


def test_resolution_free_sampling():
    model = tiny_model()
    sched = build_linear_schedule(T=20)
    hi = sample_resolution_free(model, sched, SPEC, SPEC.with_resolution(8), n_samples=2, seed=3)
    assert hi[0].signals.shape == (64, 1) and hi[0].spec.raster_shape == (8, 8)
    assert all(np.all(np.isfinite(f.signals)) for f in hi)
    assert np.all(np.abs(clamp_signals(hi[0].signals)) <= 1.3)
    same = sample_resolution_free(model, sched, SPEC, SPEC, n_samples=2, seed=3)
    ref = sample_field(model, sched, SamplerConfig(SPEC, 2, 1.0, 3))
    assert all(x.signals.tobytes() == y.signals.tobytes() for x, y in zip(same, ref))
    with pytest.raises(ContractError):
        sample_resolution_free(model, sched, SPEC, MetricSpaceSpec("sphere_dh", bandwidth=2))


def test_sampler_with_gaussian_oracle_matches_data_moments():
    sched = build_linear_schedule()
    mu, sd = -0.2, 0.1

    def score(cc, cs, t, qc, qs):
        return gaussian_optimal_eps(qs.astype(np.float64), t, sched, mu, sd)

    y = sample_signals(score, sched, np.zeros((32, 2)), 64, 1.0, seed=0, d_y=1, dtype=np.float64)
    assert abs(y.mean() - mu) < 4 * sd / math.sqrt(y.size)
    assert abs(y.std() / sd - 1) < 0.1


def test_partial_chain_from_start_signals():
    sched = build_linear_schedule(T=50)
    clean = np.full((2, 5, 1), 0.4)

    def perfect(cc, cs, t, qc, qs):
        ab = sched.alpha_bar[t - 1][:, None, None]
        return (qs - np.sqrt(ab) * 0.4) / np.sqrt(1 - ab)

    steps = []
    y = sample_signals(perfect, sched, np.zeros((5, 2)), 2, 1.0, 0, 1, np.float64,
                       on_step=lambda t, *a: steps.append(t), start=clean, t_start=10)
    assert steps == list(range(10, 0, -1))
    assert np.allclose(y, 0.4, atol=0.05)
    with pytest.raises(ShapeError):
        sample_signals(perfect, sched, np.zeros((5, 2)), 2, start=np.zeros((2, 4, 1)), t_start=10)
