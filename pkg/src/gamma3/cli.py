"""Command-line surface: simulate | sensitivity | fisher | reconstruct | phantom.

Every run is reproducible from (config, seed) alone; the configuration is
echoed into every output header.  Exit codes: 0 success, 1 runtime error,
2 usage or configuration error.  Errors print a single JSON line to
stderr.
"""

import argparse
import json
import sys

import numpy as np

from . import infer, simulate, sysmodel
from ._accel import set_worker_threads
from .config import ConfigError, load_run_config, parse_classes, parse_epsilon
from .infer import ActivityImage
from .phantom import render_phantom


def _echo(cfg, **extra):
    doc = dict(cfg.echo)
    doc["seed"] = cfg.seed
    doc.update(extra)
    return doc


def _out_stem(cfg, args, default):
    if getattr(args, "out", None):
        return args.out
    return cfg.paths.get("out", default)


def _source_activity(cfg, args):
    """Emission distribution for the simulator: an image file when given,
    else the config phantom, else uniform over the grid."""
    image_stem = getattr(args, "image", None) or cfg.paths.get("image")
    if image_stem:
        img = infer.load_image(image_stem)
        if img.grid.dims != cfg.grid.dims:
            raise ConfigError("image grid does not match the configured grid")
        return img.values
    if cfg.phantom is not None:
        values, _ = render_phantom(cfg.phantom, cfg.grid)
        return values
    return np.ones(cfg.grid.n_voxels)


def cmd_simulate(cfg, args):
    stem = _out_stem(cfg, args, "simulation")
    activity = _source_activity(cfg, args)
    result = simulate.run_simulation(
        cfg.grid,
        activity,
        cfg.simulation.n_decays,
        cfg.detector,
        cfg.physics,
        cfg.seed,
        window_fraction=cfg.simulation.window_fraction,
        toy=cfg.simulation.toy,
        sink=f"{stem}.events.jsonl",
        collect=False,
        header=_echo(cfg),
    )
    simulate.write_class_counts(
        f"{stem}.counts.csv",
        result.counts,
        result.n_decays,
        meta=_echo(cfg, n_unclassified=result.n_unclassified),
    )
    detected = result.n_detected
    print(
        f"simulated {result.n_decays} decays: {detected} detected "
        f"({100.0 * detected / result.n_decays:.2f}%), "
        f"{result.n_unclassified} unclassifiable"
    )
    print(f"wrote {stem}.events.jsonl and {stem}.counts.csv")
    return 0


def cmd_sensitivity(cfg, args):
    stem = _out_stem(cfg, args, "sensitivity")
    sens = sysmodel.estimate_sensitivity(
        cfg.grid,
        cfg.detector,
        cfg.physics,
        cfg.simulation.emissions_per_voxel,
        cfg.seed,
        window_fraction=cfg.simulation.window_fraction,
        toy=cfg.simulation.toy,
    )
    sysmodel.save_sensitivity(stem, sens, config_echo=_echo(cfg))
    sysmodel.write_profiles_csv(f"{stem}.profiles.csv", sens, meta=_echo(cfg))
    sysmodel.write_transaxial_slice_csv(f"{stem}.slice.csv", sens, args.slice_z, meta=_echo(cfg))
    means = {tag: float(np.mean(sens.values[tag])) for tag in simulate.CLASS_TAGS}
    print("mean sensitivity per class: " + json.dumps(means))
    print(f"wrote {stem}.json, per-class .raw arrays, {stem}.profiles.csv, {stem}.slice.csv")
    return 0


def cmd_fisher(cfg, args):
    stem = _out_stem(cfg, args, "fisher")
    image_stem = args.image or cfg.paths.get("image")
    sens_stem = args.sensitivity or cfg.paths.get("sensitivity")
    if not image_stem or not sens_stem:
        raise ConfigError("fisher requires --image and --sensitivity stems")
    lam = infer.load_image(image_stem)
    sens = sysmodel.load_sensitivity(sens_stem)
    if lam.grid.dims != sens.grid.dims or lam.grid.voxel_size != sens.grid.voxel_size:
        raise ConfigError("grid mismatch between image and sensitivity files")
    tags = parse_classes(args.classes) if args.classes else cfg.reconstruction.classes
    matrices = []
    for tag in tags:
        fm = infer.estimate_fisher(
            tag,
            lam,
            sens,
            cfg.detector,
            cfg.physics,
            cfg.kernels,
            args.events,
            cfg.seed,
            window_fraction=cfg.simulation.window_fraction,
            toy=cfg.simulation.toy,
            allow_large=args.allow_large,
        )
        matrices.append(fm)
        if args.dump_matrices:
            infer.save_fisher_matrix(stem, fm)
    report = infer.fisher_summary(matrices)
    infer.write_fisher_csv(f"{stem}.fisher.csv", report, meta=_echo(cfg, n_mc_events=args.events))
    for row in report.rows:
        print(
            f"class {row['class']}: trace {row['trace']:.6g}, "
            f"lambda_max {row['lambda_max']:.6g}, n_events {row['n_events']}"
        )
    print(f"total trace {report.total_trace:.6g}; wrote {stem}.fisher.csv")
    return 0


def cmd_reconstruct(cfg, args):
    stem = _out_stem(cfg, args, "reconstruction")
    events_path = args.events or cfg.paths.get("events")
    sens_stem = args.sensitivity or cfg.paths.get("sensitivity")
    if not events_path or not sens_stem:
        raise ConfigError("reconstruct requires --events and --sensitivity paths")
    events, _header, diag = simulate.read_events(events_path)
    if diag["n_malformed"] or diag["n_discarded_cone"]:
        print(
            f"warning: {diag['n_malformed']} malformed records, "
            f"{diag['n_discarded_cone']} events with unphysical cones discarded",
            file=sys.stderr,
        )
    sens = sysmodel.load_sensitivity(sens_stem)
    if sens.grid.dims != cfg.grid.dims:
        raise ConfigError("sensitivity grid does not match the configured grid")
    tags = parse_classes(args.classes) if args.classes else cfg.reconstruction.classes
    missing = [t for t in tags if t not in sens.values]
    if missing:
        raise ConfigError(f"missing class {missing[0]} in sensitivity file")
    background = parse_epsilon(args.epsilon) if args.epsilon else cfg.reconstruction.background
    iterations = cfg.reconstruction.iterations if args.iters is None else args.iters
    result = infer.reconstruct(
        events,
        sens,
        kernels=cfg.kernels,
        background=background,
        class_subset=tags,
        iterations=iterations,
        early_stop=cfg.reconstruction.early_stop,
        tolerance=cfg.reconstruction.tolerance,
    )
    infer.save_image(stem, result.image, config_echo=_echo(cfg, classes=tags))
    infer.write_loglik_csv(f"{stem}.loglik.csv", result.loglik, meta=_echo(cfg, classes=tags))
    excluded = sum(sum(d.values()) for d in result.diagnostics)
    print(
        f"reconstructed {len(result.loglik) - 1} iterations over classes {','.join(tags)}; "
        f"final loglik {result.loglik[-1]:.6f}; {excluded} event exclusions"
    )
    print(f"wrote {stem}.json, {stem}.raw, {stem}.loglik.csv")
    return 0


def cmd_phantom(cfg, args):
    stem = _out_stem(cfg, args, "phantom")
    if cfg.phantom is None:
        raise ConfigError("config has no phantom section")
    values, report = render_phantom(cfg.phantom, cfg.grid)
    image = ActivityImage(cfg.grid, values)
    infer.save_image(stem, image, config_echo=_echo(cfg, phantom_report=report))
    print(json.dumps(report))
    print(f"wrote {stem}.json and {stem}.raw")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gamma3",
        description="Multi-class list-mode MLEM toolkit for 3-photon PET imaging",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="run-configuration JSON")
        p.add_argument("--seed", type=int, default=None, help="override simulation.seed")
        p.add_argument("--out", default=None, help="output stem")
        p.add_argument("--threads", type=int, default=None, help="cap worker threads")

    p = sub.add_parser("simulate", help="generate and classify decays")
    common(p)
    p.add_argument("--image", default=None, help="activity image stem for the source")

    p = sub.add_parser("sensitivity", help="Monte-Carlo per-class sensitivity maps")
    common(p)
    p.add_argument("--slice-z", type=float, default=0.0, help="z (mm) of the exported slice")

    p = sub.add_parser("fisher", help="per-class Fisher information report")
    common(p)
    p.add_argument("--image", default=None, help="activity image stem")
    p.add_argument("--sensitivity", default=None, help="sensitivity map stem")
    p.add_argument("--classes", default=None, help="class subset, e.g. C12,C02 or all")
    p.add_argument("--events", type=int, default=10000, help="MC events per class")
    p.add_argument("--dump-matrices", action="store_true", help="write raw J x J dumps")
    p.add_argument("--allow-large", action="store_true", help="lift the dense-J guard")

    p = sub.add_parser("reconstruct", help="multi-class LM-MLEM reconstruction")
    common(p)
    p.add_argument("--events", default=None, help="event file (JSON lines)")
    p.add_argument("--sensitivity", default=None, help="sensitivity map stem")
    p.add_argument("--classes", default=None, help="class subset, e.g. C12 or all")
    p.add_argument("--iters", type=int, default=None, help="iteration count")
    p.add_argument("--epsilon", default=None, help="background: scalar or C12=0.1,...")

    p = sub.add_parser("phantom", help="render the configured phantom to an image")
    common(p)
    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "sensitivity": cmd_sensitivity,
    "fisher": cmd_fisher,
    "reconstruct": cmd_reconstruct,
    "phantom": cmd_phantom,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        set_worker_threads(args.threads)
        cfg = load_run_config(args.config, seed_override=args.seed)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - single-line machine-readable errors
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
