"""Command-line entry point: ``dpf <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import plotting
from .diffusion import (
    SamplerConfig,
    averaged_model,
    clamp_signals,
    network_score,
    new_optimizer,
    sample_field,
    sample_signals,
    train,
)
from .errors import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, DPFError, NumericError
from .evaluation import chamfer_matrix, field_points, moment_diagnostics, psnr
from .field_domain import FieldSample
from .io.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .io.config import load_config
from .io.datasets import KINDS, ingest_pixmaps, load_dataset, synthesize_dataset
from .io.formats import write_field_tensor, write_pixmap
from .numerics import finite_difference_check
from .schedule import forward_diffuse, schedule_from_params
from .score_field import ARCHITECTURES, ScoreField, ScoreFieldConfig

METRICS = ("psnr", "chamfer", "coverage", "mmd")
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _say(msg):
    print(msg, flush=True)


# ---------------------------------------------------------------- make-dataset

def cmd_make_dataset(args):
    if args.from_pixmaps:
        out = ingest_pixmaps(args.from_pixmaps, args.out)
    else:
        if args.kind is None or args.count is None:
            raise UsageError("--kind and --count are required unless --from-pixmaps is given")
        out = synthesize_dataset(args.kind, args.count, args.seed, args.out)
    manifest = json.loads((Path(out) / "manifest.json").read_text())
    _say(f"wrote {len(manifest['files'])} fields to {out}")
    return EXIT_OK


# ----------------------------------------------------------------------- train

def cmd_train(args):
    cfg = load_config(args.config)
    dataset, manifest = load_dataset(args.data)
    schedule = cfg.build_schedule()
    score_cfg = cfg.score_config(d_m=dataset.spec.d_m, d_y=dataset.d_y)
    out = Path(args.out)
    log_path = out.with_name(out.name + ".log.tsv")

    if args.resume:
        ckpt = load_checkpoint(args.resume, expect_config=score_cfg)
        if ckpt.field_spec != dataset.spec:
            raise DPFError(f"checkpoint was trained on {ckpt.field_spec}, data is {dataset.spec}")
        model = ScoreField(score_cfg, params=ckpt.params)
        opt_state = ckpt.optimizer if ckpt.optimizer is not None else new_optimizer(model, cfg.train)
        start = ckpt.step
        mode = "a" if log_path.exists() else "w"
    else:
        model = ScoreField(score_cfg, seed=cfg.train.seed)
        opt_state = new_optimizer(model, cfg.train)
        start = 0
        mode = "w"
    if start >= cfg.train.steps:
        raise UsageError(f"checkpoint is already at step {start} of {cfg.train.steps}")
    stop = cfg.train.steps if args.stop_at is None else args.stop_at
    if not start < stop <= cfg.train.steps:
        raise UsageError(f"--stop-at must be in ({start}, {cfg.train.steps}], got {stop}")

    _say(f"training {score_cfg.architecture} ({model.params.n_params} parameters) on {len(dataset)} fields, "
         f"steps {start}..{stop} of {cfg.train.steps}")
    with open(log_path, mode) as log:
        if mode == "w":
            log.write("step\tloss\tmean_loss\twall_s\n")

        def on_log(step, loss, interval_mean, elapsed):
            log.write(f"{step}\t{loss:.6g}\t{interval_mean:.6g}\t{elapsed:.2f}\n")
            log.flush()
            if not args.quiet:
                _say(f"step {step:6d}  loss {interval_mean:.5f}  {elapsed:7.1f}s")

        try:
            train(model, dataset, schedule, cfg.train, opt_state, start_step=start, steps=stop - start,
                  on_log=on_log)
        except NumericError:
            log.write("# stopped: non-finite loss\n")
            raise

    ckpt = Checkpoint(score_cfg, dataset.spec, schedule.params(), model.params, opt_state,
                      cfg.train.seed, stop, cfg.train.to_dict())
    save_checkpoint(out, ckpt)
    steps, losses = _read_log(log_path)
    if len(steps):
        plotting.plot_loss_curve(steps, losses, out.with_name(out.name + ".loss.png"),
                                 window=max(1, min(10, len(steps) // 5)))
    _say(f"saved {out} and {log_path}")
    return EXIT_OK


def _read_log(path):
    rows = [ln.split("\t") for ln in Path(path).read_text().splitlines()[1:] if ln and not ln.startswith("#")]
    if not rows:
        return np.zeros(0), np.zeros(0)
    return np.array([int(r[0]) for r in rows]), np.array([float(r[2]) for r in rows])


# ---------------------------------------------------------------------- sample

def _model_from_checkpoint(path):
    ckpt = load_checkpoint(path)
    model = averaged_model(ScoreField(ckpt.score_config, params=ckpt.params), ckpt.optimizer)
    return ckpt, model, schedule_from_params(ckpt.schedule)


def cmd_sample(args):
    ckpt, model, schedule = _model_from_checkpoint(args.ckpt)
    spec = ckpt.field_spec if args.resolution is None else ckpt.field_spec.with_resolution(args.resolution)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    fields = sample_field(model, schedule, SamplerConfig(spec, args.count, args.context_fraction, args.seed))
    fields = [FieldSample(f.coords, clamp_signals(f.signals), f.spec) for f in fields]
    for i, f in enumerate(fields):
        write_field_tensor(out / f"sample_{i:04d}.ften", f.raster().astype(np.float32))
        if spec.kind == "euclidean_grid_2d" and f.d_y in (1, 3):
            write_pixmap(f, out / f"sample_{i:04d}.{'pgm' if f.d_y == 1 else 'ppm'}")
    plotting.plot_field_grid(fields, out / "samples.png", title=f"{len(fields)} samples, {spec.kind} "
                             f"{spec.raster_shape}, context {args.context_fraction:g}")
    _say(f"wrote {len(fields)} samples ({spec.raster_shape}) to {out} in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK


# ------------------------------------------------------------------------ eval

def _point_sets(fields):
    sets = [field_points(f) for f in fields]
    return [s for s in sets if len(s)], sum(1 for s in sets if len(s) == 0)


def evaluate(model, schedule, dataset, metrics, n_samples, seed=0, recon_t=100, context_fraction=1.0):
    """Metric dictionary for a trained model against a reference dataset.

    psnr: fields are noised to ``recon_t`` and denoised by the model, then
    compared with the originals (averaged over up to ``n_samples`` fields).
    chamfer: mean over generated fields of the Chamfer distance to the
    closest reference field. coverage/mmd: standard set-level metrics.
    Point sets are coordinates whose occupancy exceeds 0.5.
    """
    report = {"n_reference": len(dataset), "n_samples": n_samples, "chamfer_convention": "squared, mean"}
    rng = np.random.default_rng(seed)
    if "psnr" in metrics:
        k = min(n_samples, len(dataset))
        recon_t = min(recon_t, schedule.T)
        y0 = dataset.signals[:k].astype(np.float64)
        noisy = forward_diffuse(y0, recon_t, rng.standard_normal(y0.shape), schedule)
        recon = sample_signals(network_score(model), schedule, dataset.coords, k, context_fraction, seed,
                               dataset.d_y, model.dtype, start=noisy, t_start=recon_t)
        scores = [psnr(dataset.field(i), FieldSample(dataset.coords, clamp_signals(recon[i]), dataset.spec))
                  for i in range(k)]
        report["psnr"] = float(np.mean(scores))
        report["psnr_recon_t"] = recon_t
    if {"chamfer", "coverage", "mmd"} & set(metrics):
        gen = sample_field(model, schedule, SamplerConfig(dataset.spec, n_samples, context_fraction, seed + 1))
        gen_sets, gen_empty = _point_sets(gen)
        ref_sets, ref_empty = _point_sets([dataset.field(i) for i in range(len(dataset))])
        report["empty_generated"] = gen_empty
        report["empty_reference"] = ref_empty
        if gen_sets and ref_sets:
            d = chamfer_matrix(gen_sets, ref_sets)
            if "chamfer" in metrics:
                report["chamfer"] = float(np.mean(d.min(axis=1)))
            if "coverage" in metrics:
                report["coverage"] = len(np.unique(np.argmin(d, axis=1))) / d.shape[1]
            if "mmd" in metrics:
                report["mmd"] = float(np.mean(d.min(axis=0)))
        else:
            for m in ("chamfer", "coverage", "mmd"):
                if m in metrics:
                    report[m] = None
    return report


def cmd_eval(args):
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    bad = sorted(set(metrics) - set(METRICS))
    if bad:
        raise UsageError(f"unknown metrics {bad}; choose from {','.join(METRICS)}")
    ckpt, model, schedule = _model_from_checkpoint(args.ckpt)
    dataset, _ = load_dataset(args.data)
    if dataset.spec != ckpt.field_spec:
        raise DPFError(f"checkpoint was trained on {ckpt.field_spec}, data is {dataset.spec}")
    report = evaluate(model, schedule, dataset, metrics, args.count, args.seed, args.recon_t)
    out = Path(args.out)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    plotting.plot_metrics({k: v for k, v in report.items() if k in METRICS}, out.with_suffix(".png"))
    for k in sorted(report):
        _say(f"{k}\t{report[k]}")
    return EXIT_OK


# ------------------------------------------------------------------- gradcheck

def tiny_config(architecture, d_m=2, d_y=3, timesteps=1000):
    return ScoreFieldConfig(
        architecture=architecture, n_latents=3, d_latent=8, n_blocks=1, self_attends_per_block=1, n_heads=2,
        coord_freqs=2, time_freqs=2, mixer_tokens=4, d_m=d_m, d_y=d_y, timesteps=timesteps,
    )


def gradcheck_architecture(architecture, d_m=2, d_y=3, timesteps=1000, precision=64, seed=0, max_entries=None):
    """Finite-difference check of the noise loss for one architecture at a tiny size."""
    from .diffusion import ddpm_loss

    dtype = np.float64 if precision == 64 else np.float32
    cfg = tiny_config(architecture, d_m, d_y, timesteps)
    model = ScoreField(cfg, seed=seed, dtype=dtype)
    rng = np.random.default_rng(seed)
    n_ctx = cfg.mixer_tokens
    cc, cs = rng.uniform(-1, 1, (2, n_ctx, d_m)), rng.standard_normal((2, n_ctx, d_y))
    qc, qs = rng.uniform(-1, 1, (2, 3, d_m)), rng.standard_normal((2, 3, d_y))
    t = np.array([7, timesteps // 2])
    target = rng.standard_normal((2, 3, d_y))

    def loss_fn(params):
        return ddpm_loss(model(cc.astype(dtype), cs.astype(dtype), t, qc.astype(dtype), qs.astype(dtype)), target)

    h = 1e-5 if precision == 64 else 1e-2
    return finite_difference_check(loss_fn, model.params, h=h, max_entries=max_entries, rng=rng)


def cmd_gradcheck(args):
    cfg = load_config(args.config)
    d_m = int(cfg.model.get("d_m", 2))
    d_y = int(cfg.model.get("d_y", 3))
    tol = GRADCHECK_TOL if args.precision == 64 else 5e-2
    worst = 0.0
    for arch in ARCHITECTURES:
        t0 = time.perf_counter()
        report = gradcheck_architecture(arch, d_m, d_y, cfg.schedule["T"], args.precision, max_entries=args.max_entries)
        worst = max(worst, report.max_error)
        status = "pass" if report.passed(tol) else "FAIL"
        if args.verbose:
            for line in report.lines():
                _say("  " + line)
        _say(f"{arch}\t{sum(report.checked.values())} entries\tmax_rel_err {report.max_error:.3e}\t{status}\t"
             f"{time.perf_counter() - t0:.1f}s")
    _say(f"overall max_rel_err {worst:.3e} (tolerance {tol:g})")
    return EXIT_OK if worst < tol else EXIT_NUMERIC


# ------------------------------------------------------------ diagnose-forward

def cmd_diagnose_forward(args):
    cfg = load_config(args.config)
    schedule = cfg.build_schedule()
    if args.data:
        dataset, _ = load_dataset(args.data)
        y0 = dataset.signals[0].astype(np.float64)
    else:
        y0 = np.linspace(-1.0, 1.0, 16)[:, None]
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for t in [int(x) for x in args.t.split(",")]:
        rep = moment_diagnostics(y0, t, schedule, args.draws, rng)
        worst = max(worst, rep.max_abs_z)
        _say(f"t={t}\tabar={schedule.alpha_bar[t - 1]:.6g}\texpected_var={rep.expected_var:.6g}\t"
             f"mean_var={float(np.mean(rep.empirical_var)):.6g}\tmax_abs_z={rep.max_abs_z:.3f}")
    _say(f"max_abs_z {worst:.3f} ({'within' if worst <= 3 else 'outside'} +-3)")
    return EXIT_OK


# ------------------------------------------------------------------------ main

def build_parser():
    p = _Parser(prog="dpf", description="Diffusion models over fields on grids and spheres.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("make-dataset", help="synthesize a toy dataset (or ingest pixmaps)")
    s.add_argument("--kind", choices=KINDS)
    s.add_argument("--count", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--from-pixmaps", metavar="DIR", help="ingest a directory of .pgm/.ppm files instead")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_make_dataset)

    s = sub.add_parser("train", help="train a score field")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="checkpoint path; the log and loss plot go next to it")
    s.add_argument("--resume", metavar="CKPT")
    s.add_argument("--stop-at", type=int, metavar="STEP",
                   help="save and exit after STEP steps; the schedule still spans the configured total")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("sample", help="generate fields from a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--count", type=int, default=16)
    s.add_argument("--resolution", type=int, help="grid side (or sphere bandwidth); defaults to the training one")
    s.add_argument("--context-fraction", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_sample)

    s = sub.add_parser("eval", help="metrics of a checkpoint against a dataset")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--metrics", default=",".join(METRICS))
    s.add_argument("--count", type=int, default=16, help="number of generated / reconstructed fields")
    s.add_argument("--recon-t", type=int, default=100, help="noise level for the psnr reconstruction")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference check of all architectures at a tiny size")
    s.add_argument("--config", required=True)
    s.add_argument("--precision", type=int, choices=(32, 64), default=64)
    s.add_argument("--max-entries", type=int, help="check a random subset of entries per tensor")
    s.add_argument("--verbose", action="store_true", help="print the error of every parameter tensor")
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("diagnose-forward", help="Monte-Carlo moments of the forward process")
    s.add_argument("--config", required=True)
    s.add_argument("--t", required=True, help="timestep or comma-separated list")
    s.add_argument("--draws", type=int, default=100000)
    s.add_argument("--data", help="take Y0 from the first field of this dataset")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_diagnose_forward)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"dpf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"dpf: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DPFError as exc:
        print(f"dpf: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
