"""Command-line interface: simulate, train, finetune, eval, predict, bench.

Every command is deterministic given its config and seeds (bench timings
aside). Reports are written as JSON-lines or CSV with matplotlib figures
alongside. Exit codes: 0 success, 2 configuration error, 3 I/O or file-format
error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from softsurf import dataio, figures, msm
from softsurf.config import (
    TARGET_DOMAIN_MARKERS,
    apply_msm_preset,
    load_run_config,
    workers_from_env,
)
from softsurf.core import Condition, make_rng
from softsurf.datasets import MarkerSpec, SplitSpec, build_modes, choose_markers, split_by_location
from softsurf.errors import ConfigError, DataFormatError, DivergenceError
from softsurf.model import forward_arrays, predict
from softsurf.training import evaluate, finetune, train


def _add_msm_flags(p: argparse.ArgumentParser):
    p.add_argument("--preset", choices=["full", "desk", "target"], default=None,
                   help="named simulator preset (default: full-scale constants)")
    p.add_argument("--grid-n", type=int, dest="grid_n")
    p.add_argument("--side-length", type=float, dest="side_length")
    p.add_argument("--n-locations", type=int, dest="n_locations")
    p.add_argument("--n-directions", type=int, dest="n_directions")
    p.add_argument("--n-t", type=int, dest="n_t")
    p.add_argument("--k-between", type=float, dest="k_between")
    p.add_argument("--k-fixed", type=float, dest="k_fixed")
    p.add_argument("--f-max", type=float, dest="f_max")


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--augment", type=float, dest="augment_fraction",
                   help="fraction of points fed per sample during training (0 disables)")
    p.add_argument("--seed", type=int, help="training seed (init, shuffling, augmentation)")


def _add_data_flags(p: argparse.ArgumentParser):
    p.add_argument("--split", type=str, default=None, help="location split ratios, e.g. 7:2:1")
    p.add_argument("--data-seed", type=int, default=None,
                   help="seed for split shuffle, multi-step pairs, marker choice")
    p.add_argument("--markers", type=int, default=None,
                   help="observe runs through this many fixed markers plus the contact point")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softsurf",
        description="Mass-spring surface simulation and learned deformation/force prediction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate an indentation dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None,
                   help="parallel runs (default: SOFTSURF_WORKERS or 1)")
    p.add_argument("--config", default=None)
    _add_msm_flags(p)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--config", default=None)
    p.add_argument("--no-figures", action="store_true")
    _add_train_flags(p)
    _add_data_flags(p)

    p = sub.add_parser("finetune", help="continue training from a checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--init", required=True, help="checkpoint to start from")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--no-figures", action="store_true")
    _add_train_flags(p)
    _add_data_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--subset", choices=["train", "val", "test", "all"], default="test")
    p.add_argument("--identity", action="store_true",
                   help="score the identity predictor instead of the model")
    p.add_argument("--cross-domain", action="store_true",
                   help="allow a dataset whose config hash differs from the checkpoint's")
    p.add_argument("--outdir", default=None, help="write metrics.jsonl and figures here")
    p.add_argument("--no-figures", action="store_true")
    _add_data_flags(p)

    p = sub.add_parser("predict", help="predict one deformation from a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--run", type=int, default=0)
    p.add_argument("--t-in", type=int, default=0)
    p.add_argument("--t-out", type=int, default=1)
    p.add_argument("--out", required=True, help="output prefix (.csv and .png)")
    p.add_argument("--cross-domain", action="store_true")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("bench", help="time one simulation force step against inference")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", default=None,
                   help="take the simulator config from this dataset (default: full-scale)")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--sparse-points", type=int, default=26)
    p.add_argument("--outdir", default=None)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--config", default=None)
    _add_msm_flags(p)

    return parser


def _msm_overrides(args) -> dict:
    keys = ("grid_n", "side_length", "n_locations", "n_directions", "n_t",
            "k_between", "k_fixed", "f_max")
    overrides = {k: getattr(args, k, None) for k in keys}
    return apply_msm_preset(overrides, getattr(args, "preset", None))


def cmd_simulate(args) -> int:
    run_config = load_run_config(args.config, {"msm": _msm_overrides(args)})
    config = run_config.msm
    workers = workers_from_env(args.workers)
    n_runs = config.n_locations * config.n_directions

    t0 = time.perf_counter()
    stats = {"max_depth_mm": 0.0, "n_states": 0, "n_runs": 0}

    def tracked():
        for run in msm.iter_dataset(config, args.seed, workers=workers):
            depth = np.linalg.norm(
                run.positions[:, run.location_index, :] - run.positions[0, run.location_index, :],
                axis=1,
            ).max()
            stats["max_depth_mm"] = max(stats["max_depth_mm"], float(depth))
            stats["n_states"] += run.n_states - 1
            stats["n_runs"] += 1
            yield run

    dataio.write_dataset(args.out, tracked(), config, args.seed, n_runs)
    elapsed = time.perf_counter() - t0
    print(f"wrote {args.out}")
    print(f"runs: {stats['n_runs']}")
    print(f"non-rest static states: {stats['n_states']}")
    print(f"max contact depth: {stats['max_depth_mm']:.2f} mm")
    print(f"wall time per run: {elapsed / max(1, stats['n_runs']):.3f} s "
          f"({elapsed:.1f} s total, {workers} worker(s))")
    return 0


def _load_split_samples(dataset_path, split: SplitSpec, markers_n: int | None, data_seed: int):
    """Samples for each split, built on the full run list so that the pair
    draws and markers do not depend on the split itself."""
    header, runs = dataio.read_dataset(dataset_path)
    markers = None
    if markers_n is not None:
        markers = choose_markers(runs, markers_n, seed=data_seed)
    modes = build_modes(runs, seed=data_seed, markers=markers)
    train_runs, val_runs, test_runs = split_by_location(runs, split)
    by_split = {}
    for name, subset in (("train", train_runs), ("val", val_runs), ("test", test_runs)):
        locs = {r.location_index for r in subset}
        by_split[name] = [s for s in modes.combined() if s.location_id in locs]
    by_split["all"] = modes.combined()
    return header, by_split, markers


def _train_common(args, init_checkpoint: str | None) -> int:
    overrides = {
        "train": {
            "epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr,
            "alpha": args.alpha, "augment_fraction": args.augment_fraction,
            "seed": args.seed,
        },
        "split": {"ratios": tuple(int(p) for p in args.split.split(":")) if args.split else None,
                  "seed": args.data_seed},
        "run": {"markers": args.markers, "data_seed": args.data_seed},
    }
    run_config = load_run_config(args.config, overrides)

    init_params = None
    model_config = run_config.model
    if init_checkpoint is not None:
        init_params, init_manifest = dataio.read_checkpoint(init_checkpoint)
        model_config = dataio.model_config_from_manifest(init_manifest)

    header, by_split, markers = _load_split_samples(
        args.dataset, run_config.split, run_config.markers, run_config.data_seed
    )
    label = "finetune" if init_checkpoint else "train"
    print(f"{label}: {len(by_split['train'])} train / {len(by_split['val'])} val / "
          f"{len(by_split['test'])} test samples")

    t0 = time.perf_counter()
    if init_checkpoint is None:
        result = train(by_split["train"], by_split["val"], model_config, run_config.train)
    else:
        result = finetune(init_params, by_split["train"], by_split["val"],
                          model_config, run_config.train)
    elapsed = time.perf_counter() - t0

    manifest = {
        "model_config": dataclasses.asdict(model_config),
        "model_config_hash": dataio.config_hash(model_config),
        "dataset_path": str(args.dataset),
        "dataset_config_hash": header.config_hash,
        "train_config": dataclasses.asdict(run_config.train),
        "split": {"ratios": list(run_config.split.ratios), "seed": run_config.split.seed},
        "markers": run_config.markers,
        "data_seed": run_config.data_seed,
        "init_checkpoint": init_checkpoint,
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val_loss,
    }
    dataio.write_checkpoint(args.out, result.params, manifest)
    history_path = str(args.out) + ".history.jsonl"
    dataio.write_jsonl(history_path, result.history)
    if result.history and not args.no_figures:
        figures.save_training_curves(result.history, str(args.out) + ".curves.png")
    print(f"wrote {args.out} (best epoch {result.best_epoch}, "
          f"val loss {result.best_val_loss:.4f}, {elapsed:.1f} s)")
    return 0


def cmd_train(args) -> int:
    return _train_common(args, init_checkpoint=None)


def cmd_finetune(args) -> int:
    return _train_common(args, init_checkpoint=args.init)


def _check_domain(header, manifest, cross_domain: bool):
    recorded = manifest.get("dataset_config_hash")
    if recorded is not None and recorded != header.config_hash and not cross_domain:
        raise ConfigError(
            "dataset config hash does not match the one this checkpoint was "
            "trained on; pass --cross-domain to evaluate across domains"
        )


def cmd_eval(args) -> int:
    params, manifest = dataio.read_checkpoint(args.checkpoint)
    model_config = dataio.model_config_from_manifest(manifest)
    split = SplitSpec(
        ratios=tuple(int(p) for p in args.split.split(":")) if args.split
        else tuple(manifest["split"]["ratios"]),
        seed=args.data_seed if args.data_seed is not None else manifest["split"]["seed"],
    )
    markers_n = args.markers if args.markers is not None else manifest.get("markers")
    data_seed = args.data_seed if args.data_seed is not None else manifest.get("data_seed", 0)

    header, by_split, _ = _load_split_samples(args.dataset, split, markers_n, data_seed)
    _check_domain(header, manifest, args.cross_domain)
    samples = by_split[args.subset]

    metrics = evaluate(samples, None if args.identity else params, model_config)
    summary = metrics.summary()
    name = "identity predictor" if args.identity else str(args.checkpoint)
    print(f"eval {name} on {args.subset} ({summary['n_samples']} samples):")
    print(f"  force MSE:            {summary['force_mse']:.4g} N^2")
    print(f"  force absolute error: {summary['force_abs_error_mean']:.4f} "
          f"+/- {summary['force_abs_error_std']:.4f} N")
    print(f"  mean L_d:             {summary['mean_ld_mean']:.4f} "
          f"+/- {summary['mean_ld_std']:.4f} mm")
    print(f"  max L_d:              {summary['max_ld_mean']:.4f} "
          f"+/- {summary['max_ld_std']:.4f} mm")

    if args.outdir:
        outdir = Path(args.outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        dataio.write_jsonl(outdir / "metrics.jsonl", metrics.records())
        with open(outdir / "metrics_summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        if not args.no_figures:
            figures.save_metric_histograms(metrics.records(), outdir / "error_histograms.png")
        print(f"wrote {outdir}/metrics.jsonl")
    return 0


def cmd_predict(args) -> int:
    params, manifest = dataio.read_checkpoint(args.checkpoint)
    model_config = dataio.model_config_from_manifest(manifest)
    header = dataio.read_dataset_header(args.dataset)
    _check_domain(header, manifest, args.cross_domain)
    run = None
    for i, r in enumerate(dataio.iter_dataset_file(args.dataset)):
        if i == args.run:
            run = r
            break
    if run is None:
        raise ConfigError(f"run {args.run} out of range ({header.n_runs} runs)")
    n_states = run.n_states
    if not (0 <= args.t_in < args.t_out < n_states):
        raise ConfigError(f"need 0 <= t_in < t_out < {n_states}")

    x = run.positions[args.t_in]
    y_true = run.positions[args.t_out]
    condition = Condition(
        c_s=x[run.location_index], c_e=y_true[run.location_index]
    )
    y_pred, df_pred = predict(x, condition, params, model_config)
    df_true = float(run.forces[args.t_out] - run.forces[args.t_in])

    csv_path = args.out + ".csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["point", "in_x", "in_y", "in_z",
                         "pred_x", "pred_y", "pred_z",
                         "true_x", "true_y", "true_z"])
        for i in range(len(x)):
            writer.writerow([i, *x[i], *y_pred[i], *y_true[i]])
    if not args.no_figures:
        figures.save_deformation_view(x, y_pred, args.out + ".png", y_true=y_true)
    d = y_true - y_pred
    mean_ld = float(np.sqrt(np.einsum("ij,ij->i", d, d)).mean())
    print(f"predicted force change: {df_pred:.3f} N (true {df_true:.3f} N)")
    print(f"mean L_d vs target: {mean_ld:.4f} mm")
    print(f"wrote {csv_path}")
    return 0


def cmd_bench(args) -> int:
    if args.reps < 1:
        raise ConfigError("--reps must be >= 1")
    params, manifest = dataio.read_checkpoint(args.checkpoint)
    model_config = dataio.model_config_from_manifest(manifest)
    if args.dataset is not None:
        config = dataio.read_dataset_header(args.dataset).msm_config
    else:
        run_config = load_run_config(args.config, {"msm": _msm_overrides(args)})
        config = run_config.msm

    rest = msm.build_surface(config)
    n = rest.n_points
    center = msm.grid_index(config, config.grid_n // 2, config.grid_n // 2)
    f_1 = float(msm.force_schedule(config)[0])
    ext = np.zeros_like(rest.positions)
    ext[center] = f_1 * msm.SURFACE_NORMAL

    sim_times, steps_taken = [], 0
    for _ in range(args.reps):
        t0 = time.perf_counter()
        loaded = msm.make_state(
            positions=rest.positions, velocities=rest.velocities,
            rest_positions=rest.rest_positions, spring_i=rest.spring_i,
            spring_j=rest.spring_j, spring_rest=rest.spring_rest,
            spring_k=rest.spring_k, external_force=ext, config=config,
            incidence=rest.incidence,
        )
        _, steps_taken = msm.run_to_stability(loaded, config)
        sim_times.append(time.perf_counter() - t0)

    cloud = rest.positions * msm.MM_PER_M
    condition = Condition(
        c_s=cloud[center],
        c_e=cloud[center] + (f_1 / config.k_fixed) * msm.MM_PER_M * msm.SURFACE_NORMAL,
    )
    forward_arrays(cloud, condition, params, model_config)  # warm-up
    full_times = []
    for _ in range(args.reps):
        t0 = time.perf_counter()
        forward_arrays(cloud, condition, params, model_config)
        full_times.append(time.perf_counter() - t0)

    rng = make_rng(0)
    m = min(args.sparse_points, n)
    rows = np.sort(rng.choice(np.delete(np.arange(n), center), size=m - 1, replace=False))
    sparse = np.concatenate([cloud[rows], cloud[center][None, :]], axis=0)
    forward_arrays(sparse, condition, params, model_config)  # warm-up
    sparse_times = []
    for _ in range(args.reps):
        t0 = time.perf_counter()
        forward_arrays(sparse, condition, params, model_config)
        sparse_times.append(time.perf_counter() - t0)

    report = {
        "reps": args.reps,
        "n_points_full": int(n),
        "n_points_sparse": int(m),
        "sim_steps": int(steps_taken),
        "sim_step_description": "first ramp step from rest, centre location, normal direction",
        "simulate_step_mean_s": float(np.mean(sim_times)),
        "simulate_step_std_s": float(np.std(sim_times)),
        "predict_full_mean_s": float(np.mean(full_times)),
        "predict_full_std_s": float(np.std(full_times)),
        "predict_sparse_mean_s": float(np.mean(sparse_times)),
        "predict_sparse_std_s": float(np.std(sparse_times)),
    }
    report["ratio_sim_over_predict"] = (
        report["simulate_step_mean_s"] / report["predict_full_mean_s"]
    )
    print(f"simulate one force step ({n} points, {steps_taken} integrator steps): "
          f"{report['simulate_step_mean_s']:.4f} +/- {report['simulate_step_std_s']:.4f} s")
    print(f"predict ({n} points): "
          f"{report['predict_full_mean_s']:.4f} +/- {report['predict_full_std_s']:.4f} s")
    print(f"predict ({m} points): "
          f"{report['predict_sparse_mean_s']:.4f} +/- {report['predict_sparse_std_s']:.4f} s")
    print(f"simulation/prediction time ratio: {report['ratio_sim_over_predict']:.2f}")

    if args.outdir:
        outdir = Path(args.outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        dataio.write_jsonl(outdir / "bench.jsonl", [report])
        if not args.no_figures:
            figures.save_bench_chart(report, outdir / "bench.png")
        print(f"wrote {outdir}/bench.jsonl")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataFormatError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3
    except DivergenceError as e:
        print(f"numerical divergence: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
