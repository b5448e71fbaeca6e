"""Command line entry points: simulate, train, estimate, evaluate, loo."""
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import dataio
from .config import load_config
from .errors import (
    ColonForestError,
    ConfigError,
    DegenerateGeometryError,
    InvalidInputError,
    ParseError,
)
from .estimator import run_online, train_shape_regressor
from .evaluation import aggregate, evaluate_sequence
from .simulator import PhantomConfig, generate_phantom, simulate_insertion

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_DEGENERATE = 4
EXIT_INVALID = 5
EXIT_IO = 6


def insertion_seed(seed, k):
    return int(np.random.SeedSequence([int(seed), int(k)]).generate_state(1, np.uint64)[0])


def resolve_icp_target(cfg, seq):
    target = cfg.icp_target
    if target is None:
        return None
    if target == "phantom":
        sim = seq.meta.get("simulator")
        if not sim:
            raise ConfigError("sequence header has no simulator echo to rebuild the phantom from", "icp.target")
        return generate_phantom(PhantomConfig(**sim["phantom"])).centerline
    try:
        pts = np.loadtxt(target, dtype=np.float64, ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read ICP target: {exc}", "icp.target") from None
    except ValueError as exc:
        raise ParseError(f"{target}: {exc}") from None
    return pts


def _echo(msg, quiet):
    if not quiet:
        click.echo(msg)


def cmd_simulate(cfg, out_dir, seed=None, quiet=False):
    """Write ``cfg.n_insertions`` simulated sequences; returns their paths."""
    seed = cfg.insertion.seed if seed is None else seed
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    phantom = generate_phantom(cfg.phantom)
    paths = []
    for k in range(cfg.n_insertions):
        ins = replace(cfg.insertion, seed=insertion_seed(seed, k))
        seq = simulate_insertion(phantom, ins, seq_id=f"insertion-{k:02d}")
        path = out_dir / f"insertion_{k:02d}.seq"
        dataio.save_sequence(seq, path)
        paths.append(path)
        _echo(f"{path}: {len(seq)} frames, N={seq.n_scope_points}, M={seq.n_markers}", quiet)
    _echo(f"phantom centerline {phantom.length:.1f} mm; wrote {len(paths)} sequences", quiet)
    return paths


def _load_training(paths):
    seqs = [dataio.load_sequence(p) for p in paths]
    if not seqs:
        raise InvalidInputError("no training sequences given")
    n0 = seqs[0].n_scope_points
    bad = [str(p) for p, s in zip(paths, seqs) if s.n_scope_points != n0]
    if bad:
        raise InvalidInputError(f"scope point count differs from {paths[0]} (N={n0}) in: {', '.join(bad)}")
    m0 = seqs[0].n_markers
    bad = [str(p) for p, s in zip(paths, seqs) if s.n_markers != m0]
    if bad:
        raise InvalidInputError(f"marker count differs from {paths[0]} (M={m0}) in: {', '.join(bad)}")
    return seqs


def train_from_sequences(seqs, cfg):
    n_frames = sum(len(s) for s in seqs)
    if n_frames < 2 * cfg.forest.min_samples_leaf:
        click.echo(
            f"warning: only {n_frames} training frames; trees cannot split with "
            f"min_samples_leaf={cfg.forest.min_samples_leaf}",
            err=True,
        )
    return train_shape_regressor(seqs, cfg.forest, center_features=cfg.center_features)


def cmd_train(sequence_paths, cfg, out_model, quiet=False):
    seqs = _load_training(list(sequence_paths))
    r = train_from_sequences(seqs, cfg)
    dataio.save_model(r, out_model)
    n = r.metadata["n_training_frames"]
    for m, f in enumerate(r.forests):
        _echo(f"marker {m + 1:2d}: {n} training frames, {f.n_trees} trees", quiet)
    _echo(f"trained {r.n_markers} regressors of {r.forests[0].n_trees} trees -> {out_model}", quiet)
    return r


def estimate_sequence(r, seq, cfg):
    out = run_online(r, [f.scope for f in seq.frames], resolve_icp_target(cfg, seq), cfg.icp, cfg.smoother)
    return np.stack([c.points for c in out])


def _export(seq, est, path):
    frames = [(f.scope, e, f.colon) for f, e in zip(seq.frames, est)]
    return dataio.export_estimates(frames, path)


def cmd_estimate(model_path, sequence_path, cfg, out_path, quiet=False):
    r = dataio.load_model(model_path)
    seq = dataio.load_sequence(sequence_path)
    est = estimate_sequence(r, seq, cfg)
    rows = _export(seq, est, out_path)
    _echo(f"{len(est)} frames estimated, {rows} rows -> {out_path}", quiet)
    return est


def _format_report(rep):
    lines = [f"sequence {rep.sequence_id}: {rep.n_frames} frames, {rep.n_markers} markers"]
    lines.append("marker  mean_err  rmse     baseline")
    for m in range(rep.n_markers):
        lines.append(
            f"{m + 1:6d}  {rep.per_marker_mean_error[m]:8.3f}  {rep.per_marker_rmse[m]:7.3f}"
            f"  {rep.baseline_per_marker_mean_error[m]:8.3f}"
        )
    lines.append(
        f"overall mean error {rep.overall_mean_error:.3f} mm"
        f" (baseline {rep.baseline_overall_mean_error:.3f} mm)"
    )
    return "\n".join(lines)


def _write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def cmd_evaluate(model_path, sequence_path, cfg, report_path=None, quiet=False):
    r = dataio.load_model(model_path)
    seq = dataio.load_sequence(sequence_path)
    rep, _ = evaluate_sequence(
        r, seq, resolve_icp_target(cfg, seq), cfg.icp, cfg.smoother, config=cfg.to_dict()
    )
    if report_path:
        _write_json(rep.to_dict(), report_path)
    _echo(_format_report(rep), quiet)
    return rep


def _run_fold(args):
    k, paths, cfg, out_dir = args
    seqs = [dataio.load_sequence(p) for p in paths]
    held = seqs[k]
    train = [s for i, s in enumerate(seqs) if i != k]
    fold_dir = Path(out_dir) / f"fold_{k:02d}"
    fold_dir.mkdir(parents=True, exist_ok=True)
    r = train_from_sequences(train, cfg)
    dataio.save_model(r, fold_dir / "model.txt")
    rep, est = evaluate_sequence(
        r, held, resolve_icp_target(cfg, held), cfg.icp, cfg.smoother, config=cfg.to_dict()
    )
    _export(held, est, fold_dir / "estimates.csv")
    _write_json(rep.to_dict(), fold_dir / "report.json")
    return rep


def cmd_loo(sequence_paths, cfg, out_dir, jobs=1, quiet=False):
    """Leave-one-insertion-out over all given sequences.

    Every fold trains on all other sequences and is scored on the held-out
    one. Returns ``(reports, summary)``; files are written under ``out_dir``.
    """
    paths = [str(p) for p in sequence_paths]
    if len(paths) < 2:
        raise InvalidInputError("leave-one-out needs at least two sequences")
    _load_training(paths)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(k, paths, cfg, str(out_dir)) for k in range(len(paths))]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_fold, tasks))
    else:
        reports = [_run_fold(t) for t in tasks]
    summary = aggregate(reports)
    _write_json(summary, out_dir / "summary.json")
    _echo("fold  sequence        frames  mean_err  baseline", quiet)
    for k, rep in enumerate(reports):
        _echo(
            f"{k:4d}  {rep.sequence_id:14s}  {rep.n_frames:6d}  {rep.overall_mean_error:8.3f}"
            f"  {rep.baseline_overall_mean_error:8.3f}",
            quiet,
        )
    _echo(
        f"aggregate mean error {summary['aggregate_mean_error']:.3f} mm vs baseline "
        f"{summary['aggregate_baseline_mean_error']:.3f} mm (ratio {summary['ratio_to_baseline']:.3f})",
        quiet,
    )
    return reports, summary


# -- click wiring ---------------------------------------------------------


def _overrides(**kw):
    """Nested config mapping from flag values, skipping unset flags."""
    table = {
        "seed_forest": ("forest", "seed"),
        "n_trees": ("forest", "n_trees"),
        "min_samples_leaf": ("forest", "min_samples_leaf"),
        "mtry": ("forest", "mtry"),
        "max_depth": ("forest", "max_depth"),
        "bootstrap": ("forest", "bootstrap"),
        "window": ("smoother", "window"),
        "kappa": ("insertion", "coupling_strength"),
        "lam": ("insertion", "coupling_decay"),
        "noise_scope": ("insertion", "noise_sigma_scope"),
        "noise_marker": ("insertion", "noise_sigma_marker"),
        "n_frames": ("insertion", "n_frames"),
        "n_insertions": ("simulate", "n_insertions"),
        "icp_target": ("icp", "target"),
    }
    out = {}
    for key, value in kw.items():
        if value is None:
            continue
        section, name = table[key]
        out.setdefault(section, {})[name] = value
    return out


def _config(ctx, **flags):
    return load_config(ctx.obj.get("config"), _overrides(**flags))


def _run(fn):
    try:
        fn()
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except ParseError as exc:
        click.echo(f"parse error: {exc}", err=True)
        sys.exit(EXIT_PARSE)
    except DegenerateGeometryError as exc:
        click.echo(f"degenerate geometry: {exc}", err=True)
        sys.exit(EXIT_DEGENERATE)
    except InvalidInputError as exc:
        click.echo(f"invalid input: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    except ColonForestError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    except OSError as exc:
        click.echo(f"I/O error: {exc}", err=True)
        sys.exit(EXIT_IO)


forest_options = [
    click.option("--seed", "seed_forest", type=int, help="Forest seed."),
    click.option("--n-trees", type=int),
    click.option("--min-samples-leaf", type=int),
    click.option("--mtry", type=int),
    click.option("--max-depth", type=int),
    click.option("--bootstrap/--no-bootstrap", default=None),
]
online_options = [
    click.option("--window", type=int, help="Causal smoothing window (frames)."),
    click.option("--icp-target", help="'phantom' or an xyz text file; omit to skip registration."),
]


def _apply(options):
    def deco(f):
        for opt in reversed(options):
            f = opt(f)
        return f

    return deco


@click.group()
@click.option(
    "--config", "config_path", type=click.Path(dir_okay=False),
    help="YAML config file (default: $COLONFOREST_CONFIG).",
)
@click.option("-q", "--quiet", is_flag=True)
@click.pass_context
def main(ctx, config_path, quiet):
    """Colon shape estimation from colonoscope shapes with per-marker regression forests."""
    ctx.ensure_object(dict)
    ctx.obj["config"] = config_path
    ctx.obj["quiet"] = quiet


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, help="Base seed; insertion k uses (seed, k).")
@click.option("--kappa", type=float, help="Coupling strength.")
@click.option("--lambda", "lam", type=float, help="Coupling decay length (mm).")
@click.option("--noise-scope", type=float)
@click.option("--noise-marker", type=float)
@click.option("--n-frames", type=int)
@click.option("--n-insertions", type=int)
@click.pass_context
def simulate(ctx, out_dir, seed, **flags):
    """Simulate paired scope/colon insertion sequences."""
    _run(lambda: cmd_simulate(_config(ctx, **flags), out_dir, seed, ctx.obj["quiet"]))


@main.command()
@click.argument("sequences", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_model", required=True, type=click.Path(dir_okay=False))
@_apply(forest_options)
@click.pass_context
def train(ctx, sequences, out_model, **flags):
    """Train one forest per colon marker."""
    _run(lambda: cmd_train(sequences, _config(ctx, **flags), out_model, ctx.obj["quiet"]))


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(dir_okay=False))
@click.option("--sequence", "sequence_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@_apply(online_options)
@click.pass_context
def estimate(ctx, model_path, sequence_path, out_path, **flags):
    """Estimate colon shapes for every frame and export them as CSV."""
    _run(lambda: cmd_estimate(model_path, sequence_path, _config(ctx, **flags), out_path, ctx.obj["quiet"]))


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(dir_okay=False))
@click.option("--sequence", "sequence_path", required=True, type=click.Path(dir_okay=False))
@click.option("--report", "report_path", type=click.Path(dir_okay=False))
@_apply(online_options)
@click.pass_context
def evaluate(ctx, model_path, sequence_path, report_path, **flags):
    """Score estimates on a sequence with ground truth."""
    _run(lambda: cmd_evaluate(model_path, sequence_path, _config(ctx, **flags), report_path, ctx.obj["quiet"]))


@main.command()
@click.argument("sequences", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--jobs", type=int, default=1, show_default=True)
@_apply(forest_options + online_options)
@click.pass_context
def loo(ctx, sequences, out_dir, jobs, **flags):
    """Leave-one-insertion-out evaluation over all given sequences."""
    _run(lambda: cmd_loo(sequences, _config(ctx, **flags), out_dir, jobs, ctx.obj["quiet"]))


if __name__ == "__main__":
    main()
