"""Command-line entry point: train, attack, bound, sweep, gen-fixtures.

Results go to CSV (the source of truth); the stdout table mirrors it.
Progress chatter stays on stderr.  Exit codes: 0 ok, 2 configuration,
3 numeric failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import fields

import numpy as np

from . import fixtures
from .attack import invert
from .bounds import reconstruction_bound
from .config import ExperimentConfig
from .data import image_grid, write_pgm, write_ppm
from .defenses import defend
from .errors import ConfigError, DataError, GradlabError, NumericError
from .flsim import _defense_trace, smooth, sweep, train
from .metrics import COLUMNS, MetricRow, write_metrics
from .models import ParamVector, forward_loss, param_gradient
from .probe import exact_row_norms, sketch_row_norms


def _log(args, msg):
    if args.verbose:
        print(msg, file=sys.stderr)


def _print_rows(rows):
    table = [list(COLUMNS)]
    for row in rows:
        table.append(["" if getattr(row, f.name) is None else str(getattr(row, f.name)) for f in fields(MetricRow)])
    widths = [max(len(r[i]) for r in table) for i in range(len(COLUMNS))]
    for r in table:
        print("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())


def _out_dir(args, cfg):
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    return out


def _row_norms_for(cfg, model, params, batch, spec, mode):
    if mode == "exact":
        return exact_row_norms(model, params, batch)
    return sketch_row_norms(
        model, params, batch, spec.sketch_samples, np.random.default_rng([cfg.seed, 300])
    )


def cmd_bound(args):
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    model = cfg.model()
    params = cfg.params(model)
    mode, batch_size = cfg.bound_options()
    batch = cfg.batch(model, batch_size)
    spec = cfg.defense()
    g = param_gradient(model, params, batch)
    rn = _row_norms_for(cfg, model, params, batch, spec, mode)
    defended = defend(g, spec, row_norms=rn, rng=np.random.default_rng([cfg.seed, 301]))
    trace = _defense_trace(spec, defended.audit, rn)
    report = reconstruction_bound(trace, batch.m, cfg.prior())
    _log(args, f"trace={trace} m={batch.m}")
    row = MetricRow(
        experiment_id=cfg.experiment,
        defense=spec.describe(),
        seed=cfg.seed,
        round=0,
        fisher_trace=trace,
        bound_value=report.bound_value,
        wall_time=None,
    )
    out = _out_dir(args, cfg)
    path = os.path.join(out, f"{cfg.experiment}.csv")
    write_metrics([row], path)
    print(f"bound_value {report.bound_value:.9g}")
    _print_rows([row])
    return 0


def cmd_attack(args):
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    started = time.perf_counter()
    model = cfg.model()
    params = cfg.params(model)
    batch = cfg.batch(model)
    spec = cfg.defense()
    attack_cfg = cfg.attack()
    g = param_gradient(model, params, batch)
    rn = None
    if spec.needs_row_norms:
        mode, _ = cfg.bound_options()
        rn = _row_norms_for(cfg, model, params, batch, spec, mode)
    defended = defend(g, spec, row_norms=rn, rng=np.random.default_rng([cfg.seed, 301]))
    _log(args, f"attacking defense {spec.describe()} over {attack_cfg.iterations} iterations")
    result = invert(
        model,
        params,
        defended,
        batch.inputs.shape,
        attack_cfg,
        np.random.default_rng([cfg.seed, 302]),
        labels=batch.labels,
        targets=batch.targets,
        truth=batch.inputs,
    )
    sigma = defended.audit.sigma_used
    row = MetricRow(
        experiment_id=cfg.experiment,
        defense=spec.describe(),
        seed=cfg.seed,
        round=0,
        mse=result.mse,
        psnr=result.psnr,
        noise_frobenius=float(np.linalg.norm(sigma)) if sigma is not None else 0.0,
        prune_ratio=spec.ratio,
        wall_time=time.perf_counter() - started if args.timing else None,
    )
    out = _out_dir(args, cfg)
    write_metrics([row], os.path.join(out, f"{cfg.experiment}.csv"))
    _dump_images(out, cfg.experiment, model, result.reconstruction, batch.inputs)
    for note in result.notes:
        print(f"note: {note}", file=sys.stderr)
    _print_rows([row])
    return 0


def _dump_images(out, name, model, recon, truth):
    if len(model.input_shape) != 3:
        return
    c = model.input_shape[0]
    if c == 1:
        write_pgm(os.path.join(out, f"{name}_recon.pgm"), image_grid(recon[:, 0], cols=8))
        write_pgm(os.path.join(out, f"{name}_truth.pgm"), image_grid(truth[:, 0], cols=8))
    elif c == 3:
        write_ppm(os.path.join(out, f"{name}_recon.ppm"), recon[0])
        write_ppm(os.path.join(out, f"{name}_truth.ppm"), truth[0])


def cmd_train(args):
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    model = cfg.model()
    params = cfg.params(model)
    kind, dataset = cfg.data()
    if kind != "dataset":
        raise ConfigError("train needs a dataset (idx or synth), not inline data")
    flcfg = cfg.fl()
    if "defense" in cfg.raw:
        from dataclasses import replace

        flcfg = replace(flcfg, defense=cfg.defense())
    eval_size, window = cfg.train_options()
    eval_batch = None
    if eval_size:
        from .models import Batch

        inputs = dataset.inputs[-eval_size:].reshape((eval_size,) + model.input_shape)
        eval_batch = Batch(inputs, labels=dataset.labels[-eval_size:])
        dataset = dataset.subset(np.arange(dataset.inputs.shape[0] - eval_size))
    dataset = _shape_dataset(dataset, model)
    _log(args, f"training {flcfg.rounds} rounds, {flcfg.num_clients} clients")
    log, final = train(model, params, dataset, flcfg, eval_batch=eval_batch)
    out = _out_dir(args, cfg)
    write_train_log(log, os.path.join(out, f"{cfg.experiment}_trainlog.csv"), window)
    np.save(os.path.join(out, f"{cfg.experiment}_params.npy"), final.values)
    last = log.rounds[-1]
    print(f"final_train_loss {last.train_loss:.9g}")
    print(f"final_smoothed_loss {log.smoothed_losses(window)[-1]:.9g}")
    return 0


def _shape_dataset(dataset, model):
    shaped = dataset.inputs.reshape((dataset.inputs.shape[0],) + model.input_shape)
    from .data import Dataset

    return Dataset(shaped, dataset.labels, name=dataset.name)


def write_train_log(log, path, window: int = 8):
    smoothed = log.smoothed_losses(window)
    sigma_keys = sorted(log.rounds[0].per_layer_sigma) if log.rounds else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        headers = ["round", "train_loss", "train_loss_smooth", "eval_loss", "u1", "u2", "noise_frobenius"]
        headers += [f"sigma_mean.{k}" for k in sigma_keys]
        fh.write(",".join(headers) + "\n")
        for i, r in enumerate(log.rounds):
            cells = [
                str(r.round),
                format(r.train_loss, ".9g"),
                format(smoothed[i], ".9g"),
                "" if r.eval_loss is None else format(r.eval_loss, ".9g"),
                "" if r.u1 is None else format(r.u1, ".9g"),
                "" if r.u2 is None else format(r.u2, ".9g"),
                format(r.noise_frobenius, ".9g"),
            ]
            cells += [format(r.per_layer_sigma[k], ".9g") for k in sigma_keys]
            fh.write(",".join(cells) + "\n")


def cmd_sweep(args):
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    model = cfg.model()
    params = cfg.params(model)
    kind, dataset = cfg.data()
    if kind != "dataset":
        raise ConfigError("sweep needs a dataset (idx or synth), not inline data")
    dataset = _shape_dataset(dataset, model)
    grid = cfg.grid()
    settings = cfg.sweep_settings()
    flcfg = cfg.fl()
    started = time.perf_counter()
    _log(args, f"sweeping {len(grid)} defenses x {len(settings.seeds)} seeds, jobs={args.jobs}")
    rows = sweep(model, params, dataset, grid, flcfg, settings, jobs=args.jobs)
    if args.timing:
        elapsed = time.perf_counter() - started
        for row in rows:
            row.wall_time = elapsed / len(rows)
    out = _out_dir(args, cfg)
    write_metrics(rows, os.path.join(out, f"{cfg.experiment}.csv"))
    _print_rows(rows)
    return 0


def cmd_gen_fixtures(args):
    paths = fixtures.generate_all(args.out)
    for p in paths:
        print(p)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="gradlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "train": cmd_train,
        "attack": cmd_attack,
        "bound": cmd_bound,
        "sweep": cmd_sweep,
    }
    for name, fn in handlers.items():
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment YAML")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
        p.add_argument("--verbose", action="store_true")
        p.add_argument("--timing", action="store_true", help="record wall_time in the CSV")
        p.set_defaults(handler=fn)
    g = sub.add_parser("gen-fixtures")
    g.add_argument("--out", default="fixtures")
    g.set_defaults(handler=cmd_gen_fixtures)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError) as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 4
    except GradlabError as exc:
        print(f"error: internal: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
