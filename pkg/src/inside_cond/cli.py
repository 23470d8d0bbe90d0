"""Command-line entry points: dataset generation, training, evaluation,
method comparison and attention-map export."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import train as T
from .config import ExperimentConfig
from .layers import mean_attention_map
from .networks import build_model
from .serialization import content_hash, load_checkpoint, save_checkpoint, write_pgm
from .stats import wilcoxon_exact
from .tensor import Tensor


class CliError(RuntimeError):
    pass


def _fmt(v):
    return f"{v:.10g}"


def write_metrics_csv(path, runs):
    lines = ["fold,seed,test_dice,mean_sigma,best_epoch,epochs_run"]
    for r in runs:
        lines.append(",".join([str(r.fold), str(r.seed), _fmt(r.test_dice),
                               _fmt(r.mean_sigma), str(r.best_epoch),
                               str(r.epochs_run)]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics_csv(path):
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        rows.append(dict(zip(header, line.split(","))))
    return rows


def write_log_csv(path, log):
    lines = ["epoch,train_loss,val_dice"]
    for epoch, loss, dice in log:
        lines.append(f"{epoch},{_fmt(loss)},{_fmt(dice)}")
    Path(path).write_text("\n".join(lines) + "\n")


def markdown_table(results):
    """Table-1 style markdown: Dice x100, std as +/- suffix, best in bold.

    `results`: list of (method, mean, std) with mean/std in [0, 1] units.
    """
    best = max(range(len(results)), key=lambda i: results[i][1])
    lines = ["| Method | Dice |", "| --- | --- |"]
    for i, (method, mean, std) in enumerate(results):
        cell = f"{100 * mean:.1f} ±{100 * std:.1f}"
        if i == best:
            cell = f"**{cell}**"
        lines.append(f"| {method} | {cell} |")
    return "\n".join(lines) + "\n"


# -- commands -----------------------------------------------------------------


def cmd_generate(args):
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise CliError(f"output directory {out} is not empty (use --force)")
    dataset = D.build_dataset(args.n, args.scenario, args.seed,
                              (args.size, args.size))
    D.save_dataset(dataset, out)
    print(f"wrote {args.n} samples to {out} (hash {content_hash(out)[:16]})")
    return 0


def _load_or_build_dataset(cfg, dataset_dir):
    if dataset_dir:
        dataset = D.load_dataset(dataset_dir)
        if dataset.scenario != cfg.scenario:
            raise CliError(
                f"dataset scenario {dataset.scenario!r} does not match "
                f"config scenario {cfg.scenario!r}")
        return dataset
    return D.build_dataset(cfg.dataset_size, cfg.scenario, cfg.dataset_seed,
                           cfg.canvas)


def cmd_train(args):
    cfg = ExperimentConfig.load(args.config)
    if args.method:
        cfg = ExperimentConfig.load(args.config)
        cfg.method = args.method
        cfg.__post_init__()
    if args.seed is not None:
        cfg.seeds = (args.seed,)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise CliError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    dataset = _load_or_build_dataset(cfg, args.dataset)
    cfg.save(out / "config.ini")
    result = T.cross_validate(cfg, dataset)
    write_metrics_csv(out / "metrics.csv", result.runs)
    for r in result.runs:
        run_dir = out / f"run_f{r.fold}_s{r.seed}"
        save_checkpoint(run_dir / "checkpoint", r.state, cfg.hash())
        cfg.save(run_dir / "checkpoint" / "config.ini")
        write_log_csv(run_dir / "log.csv", r.log)
    summary = {"method": cfg.method, "scenario": cfg.scenario,
               "mean": result.mean, "std": result.std,
               "incomplete": result.incomplete, "errors": result.errors,
               "config_hash": cfg.hash()}
    (out / "results.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    (out / "results.md").write_text(
        markdown_table([(cfg.method, result.mean, result.std)]))
    print(f"{cfg.method} on {cfg.scenario}: "
          f"Dice {100 * result.mean:.1f} ±{100 * result.std:.1f}")
    if result.incomplete:
        raise CliError(f"{len(result.errors)} run(s) failed; partial results kept")
    return 0


def _model_from_checkpoint(ckpt_dir):
    ckpt_dir = Path(ckpt_dir)
    cfg_path = ckpt_dir / "config.ini"
    if not cfg_path.exists():
        raise CliError(f"no config.ini next to checkpoint at {ckpt_dir}")
    cfg = ExperimentConfig.load(cfg_path)
    weights, _ = load_checkpoint(ckpt_dir)
    model = build_model(cfg.make_backbone(), seed=0)
    model.load_state(weights)
    return model, cfg


def cmd_evaluate(args):
    model, cfg = _model_from_checkpoint(args.checkpoint)
    if args.dataset:
        dataset = D.load_dataset(args.dataset)
    else:
        dataset = D.build_dataset(cfg.dataset_size, cfg.scenario,
                                  cfg.dataset_seed, cfg.canvas)
    samples = dataset.splits[args.split]
    mean, per_class = T.evaluate_dice(model, samples)
    for c, v in sorted(per_class.items()):
        print(f"class {c}: Dice {100 * v:.2f}")
    print(f"mean foreground Dice on {args.split}: {100 * mean:.2f}")
    return 0


def cmd_compare(args):
    if len(args.results) < 2:
        raise CliError("compare needs at least two result directories")
    entries = []
    for directory in args.results:
        directory = Path(directory)
        summary = json.loads((directory / "results.json").read_text())
        rows = read_metrics_csv(directory / "metrics.csv")
        scores = [float(r["test_dice"]) for r in rows]
        entries.append((summary["method"], summary["mean"], summary["std"], scores))
    counts = {len(e[3]) for e in entries}
    if len(counts) != 1:
        raise CliError(f"paired comparison needs equal run counts, got {counts}")
    table = markdown_table([(m, mean, std) for m, mean, std, _ in entries])
    lines = [table, "", "Pairwise Wilcoxon signed-rank p-values:", ""]
    for i in range(len(entries)):
        for j in range(i + 1, len(entries)):
            _, p = wilcoxon_exact(entries[i][3], entries[j][3])
            lines.append(f"- {entries[i][0]} vs {entries[j][0]}: p = {p:.4g}")
    report = "\n".join(lines) + "\n"
    print(report)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(report)
    return 0


def _export_for_condition(model, z_vec, out_dir, tag):
    dtype = next(iter(model.weights.values())).data.dtype
    z = Tensor(np.asarray([z_vec], dtype=dtype))
    wrote = 0
    for i, net in enumerate(model.hypernets):
        if net is None or net.kind not in ("inside-multi", "inside-single",
                                           "attention-multi", "attention-single"):
            continue
        params = net.forward(z)
        gauss = params[0] if isinstance(params, tuple) else params
        amap = mean_attention_map(gauss, net.H, net.W)
        write_pgm(Path(out_dir) / f"layer{i}_{tag}.pgm", amap)
        wrote += 1
    return wrote


def cmd_export_attention(args):
    model, cfg = _model_from_checkpoint(args.checkpoint)
    has_attention = any(
        net is not None and net.kind in ("inside-multi", "inside-single",
                                         "attention-multi", "attention-single")
        for net in model.hypernets)
    if not has_attention:
        raise CliError("checkpoint contains no Gaussian-attention layer")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wrote = 0
    if cfg.scenario == "continuous-scale":
        ts = np.linspace(0.0, 1.0, args.sweep)
        for t in ts:
            wrote += _export_for_condition(model, [t], out, f"t{t:.2f}")
    else:
        categories = {"quadrant": D.QUADRANTS, "colour": D.COLOURS,
                      "shape": D.SHAPES, "size": D.SIZES}[cfg.scenario]
        for k, label in enumerate(categories):
            z = np.zeros(len(categories))
            z[k] = 1.0
            wrote += _export_for_condition(model, z, out, label)
    print(f"wrote {wrote} attention maps to {out}")
    return 0


# -- argument parsing ---------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="inside-cond",
        description="Conditioning-layer comparison harness "
                    "(FiLM / CIN / Guiding Block / Gaussian attention).")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a dataset on disk")
    p.add_argument("--scenario", required=True, choices=D.SCENARIOS)
    p.add_argument("--n", type=int, default=1200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="run cross-validated training")
    p.add_argument("--config", required=True)
    p.add_argument("--method", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dataset", default=None, help="dataset directory (else generated)")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="compare result directories")
    p.add_argument("results", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("export-attention", help="export attention heatmaps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sweep", type=int, default=5,
                   help="grid points for continuous-condition sweeps")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_attention)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
