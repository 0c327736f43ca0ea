"""Command-line surface: data generation, training, evaluation, shift
diagnostics, and benchmark-table reproduction.

Verbs:

* ``moons-gen``     write a stretched two-moons CSV
* ``train``         fit a model on source/target CSVs, write checkpoint + trace
* ``eval``          score a checkpoint against a labeled CSV
* ``shift-report``  per-feature marginal divergences and the copula distance
* ``reproduce``     run a benchmark table (table3|table6|table7|table8)
* ``fetch-wine``    download and verify the wine-quality CSVs

Every artifact embeds the fully resolved configuration and seed, so any
output can be regenerated from its own header. Exit status: 0 on success,
2 for bad usage/inputs/missing data, 3 when only part of a benchmark
completed (a ``.partial`` results file is written).
"""

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import copula as cop
from . import experiments as ex
from .datasets import (Dataset, MinMaxStats, MoonsConfig, generate_moons,
                       load_delimited, write_dataset)
from .errors import ContractViolation
from .models import load_params, save_params
from .training import (TrainConfig, evaluate_classification,
                       evaluate_regression, shift_report, train)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_PARTIAL = 3


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


# --- config plumbing --------------------------------------------------------


def _flag_overrides(args) -> dict:
    """Collect config fields set on the command line (flags beat --config)."""
    mapping = {"method": "method", "alpha": "alpha", "beta": "beta",
               "lambda_": "lambda_", "lr": "learning_rate",
               "epochs": "max_epochs", "batch": "batch_size", "seed": "seed",
               "h1": "h1", "h2": "h2", "tanh_a": "tanh_a"}
    out = {}
    for flag, name in mapping.items():
        value = getattr(args, flag, None)
        if value is not None:
            out[name] = value
    return out


def _resolve_config(args, model_hint: dict | None = None) -> TrainConfig:
    """Layer config file < flags < model hint over the defaults."""
    data = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            data.update(json.load(fh))
    data.update(_flag_overrides(args))
    model = dict(data.get("model") or {})
    if getattr(args, "hidden", None):
        model["hidden"] = [int(t) for t in str(args.hidden).split(",") if t.strip()]
    if getattr(args, "task", None):
        model["task"] = args.task
    if model_hint:
        model.setdefault("task", model_hint.get("task", "classification"))
        if model["task"] == "classification" and "n_classes" in model_hint:
            model.setdefault("n_classes", model_hint["n_classes"])
    if model:
        model.setdefault("hidden", list(TrainConfig().model.hidden))
        data["model"] = model
    return TrainConfig.from_dict(data)


def _load_maybe_labeled(path, delimiter: str, label_column: str,
                        domain: str) -> Dataset:
    """Load a CSV, treating ``label_column`` as the label only if present."""
    with open(path, "r", encoding="utf-8") as fh:
        header_line = next((ln for ln in fh
                            if ln.strip() and not ln.lstrip().startswith("#")), "")
    header = [h.strip().strip('"') for h in
              next(csv.reader([header_line], delimiter=delimiter), [])]
    column = label_column if label_column in header else None
    return load_delimited(path, delimiter=delimiter, label_column=column,
                          domain=domain)


def _write_json(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


# --- verbs -------------------------------------------------------------------


def cmd_moons_gen(args) -> int:
    cfg = MoonsConfig(n_per_class=args.n, stretch=args.stretch,
                      noise_sigma=args.noise, seed=args.seed)
    ds = generate_moons(cfg)
    note = {"generator": "moons", "n_per_class": cfg.n_per_class,
            "stretch": cfg.stretch, "noise_sigma": cfg.noise_sigma,
            "seed": cfg.seed}
    write_dataset(ds, args.out, header_note=note)
    _say(f"wrote {args.out} ({len(ds)} rows, stretch {cfg.stretch:g})")
    return EXIT_OK


def cmd_train(args) -> int:
    source = _load_maybe_labeled(args.source, args.delimiter,
                                 args.label_column, "source")
    if source.labels is None:
        raise ContractViolation(
            f"train: {args.source} has no {args.label_column!r} column")
    target = _load_maybe_labeled(args.target, args.delimiter,
                                 args.label_column, "target")
    hint = {}
    if np.issubdtype(source.labels.dtype, np.integer):
        hint = {"task": "classification",
                "n_classes": max(2, int(source.labels.max()) + 1)}
    else:
        hint = {"task": "regression"}
    config = _resolve_config(args, model_hint=hint)
    params, trace = train(source, target.unlabeled(), config)

    base = Path(args.out)
    while base.suffix in (".json", ".ckpt", ".trace"):
        base = base.with_suffix("")
    ckpt_path = base.with_suffix(".ckpt.json")
    trace_path = base.with_suffix(".trace.json")
    resolved = {"config": config.to_dict(), "source": str(args.source),
                "target": str(args.target)}
    save_params(params, ckpt_path, extra=resolved)
    _write_json({**resolved, "trace": [t.to_dict() for t in trace]}, trace_path)
    _say(f"wrote {ckpt_path} and {trace_path} "
         f"({len(trace)} epochs, final loss {trace[-1].loss:.6f})")
    return EXIT_OK


def cmd_eval(args) -> int:
    params = load_params(args.checkpoint)
    with open(args.checkpoint, "r", encoding="utf-8") as fh:
        extra = json.load(fh).get("extra", {})
    ds = _load_maybe_labeled(args.data, args.delimiter,
                             args.label_column, "target")
    if ds.labels is None:
        raise ContractViolation(
            f"eval: {args.data} has no {args.label_column!r} column to score against")
    if params.spec.task == "classification":
        m = evaluate_classification(params, ds)
        metrics = {"accuracy": m.accuracy, "auc": m.auc}
    else:
        # Identity scaling: metrics are on the file's own label scale.
        stats = MinMaxStats(np.zeros(ds.dim), np.ones(ds.dim))
        m = evaluate_regression(params, ds, stats)
        metrics = {"rmse": m.rmse, "r2": m.r2, "re": m.re}
    doc = {"task": params.spec.task, "checkpoint": str(args.checkpoint),
           "data": str(args.data), "n": len(ds), "metrics": metrics,
           "config": extra.get("config")}
    text = json.dumps(doc, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_shift_report(args) -> int:
    a = _load_maybe_labeled(args.a, args.delimiter, args.label_column, "source")
    b = _load_maybe_labeled(args.b, args.delimiter, args.label_column, "target")
    config = _resolve_config(args)
    weights = None
    if args.beta is not None and a.dim >= 2:
        weights = cop.PairWeights.uniform(a.dim, args.beta)
    rep = shift_report(a, b, config.h1, config.h2, beta=weights,
                       tanh_a=config.tanh_a)
    doc = {**rep.to_dict(),
           "a": str(args.a), "b": str(args.b),
           "h1": config.h1.kind, "h2": config.h2.tag,
           "tanh_a": config.tanh_a,
           "beta": 1.0 if args.beta is None else args.beta}
    print(json.dumps(doc, indent=2, sort_keys=True))

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["quantity", "value"])
    for name, md in zip(rep.feature_names, rep.md_per_feature):
        writer.writerow([f"md:{name}", repr(md)])
    if rep.cd is not None:
        writer.writerow(["cd", repr(rep.cd)])
    print(buf.getvalue(), end="")
    if args.out:
        base = Path(args.out)
        if base.suffix in (".json", ".csv"):
            base = base.with_suffix("")
        _write_json(doc, base.with_suffix(".json"))
        base.with_suffix(".csv").write_text(buf.getvalue(), encoding="utf-8")
        _say(f"wrote {base.with_suffix('.json')} and {base.with_suffix('.csv')}")
    return EXIT_OK


_TABLES = {
    "table3": ("moons accuracy by stretch", ex.DEFAULT_MOONS_SEEDS),
    "table6": ("wine transfer by method", ex.DEFAULT_WINE_SEEDS),
    "table7": ("wine regularizer-weight ablation", ex.DEFAULT_WINE_SEEDS),
    "table8": ("wine divergence comparison", ex.DEFAULT_COMPARISON_SEEDS),
}


def cmd_reproduce(args) -> int:
    progress = None if args.quiet else _say
    n_seeds = args.seeds if args.seeds is not None else _TABLES[args.table][1]
    out_base = args.out if args.out else args.table
    try:
        if args.table == "table3":
            table = ex.run_moons_benchmark(n_seeds=n_seeds, progress=progress)
        elif args.table == "table6":
            table = ex.run_wine_benchmark(n_seeds=n_seeds,
                                          data_dir=args.data_dir,
                                          progress=progress)
        elif args.table == "table7":
            table = ex.run_wine_ablation(n_seeds=n_seeds,
                                         data_dir=args.data_dir,
                                         progress=progress)
        else:
            table = ex.run_wine_divergence_comparison(n_seeds=n_seeds,
                                                      data_dir=args.data_dir,
                                                      progress=progress)
    except ex.ExperimentError as err:
        base = Path(str(out_base) + ".partial")
        md_path, json_path = ex.write_table(err.partial, base)
        _say(f"error: {err}")
        for f in err.failures:
            _say(f"  {f['row']}: {f['error']}")
        _say(f"partial results in {md_path} and {json_path}")
        return EXIT_PARTIAL
    md_path, json_path = ex.write_table(table, out_base)
    print(ex.render_markdown(table))
    _say(f"wrote {md_path} and {json_path}")
    return EXIT_OK


def cmd_fetch_wine(args) -> int:
    paths = ex.fetch_wine(args.data_dir, progress=_say)
    for p in paths:
        print(p)
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def _add_io_flags(sp, label_default: str = "label") -> None:
    sp.add_argument("--delimiter", default=",", help="CSV delimiter")
    sp.add_argument("--label-column", default=label_default,
                    help="column treated as the label when present")


def _add_config_flags(sp) -> None:
    sp.add_argument("--config", help="JSON file of training-config fields; "
                    "command-line flags override it")
    sp.add_argument("--seed", type=int, help="training seed")
    sp.add_argument("--alpha", type=float, help="marginal regularizer weight")
    sp.add_argument("--beta", type=float, help="dependence regularizer weight")
    sp.add_argument("--lambda", dest="lambda_", type=float,
                    help="baseline (dan/coral) regularizer weight")
    sp.add_argument("--lr", type=float, help="Adam learning rate")
    sp.add_argument("--epochs", type=int, help="maximum epochs")
    sp.add_argument("--batch", type=int, help="batch size")
    sp.add_argument("--h1", choices=["mmd", "w1", "kl"],
                    help="marginal divergence")
    sp.add_argument("--h2", choices=["kl", "chi2", "w2", "mmd"],
                    help="copula-pair divergence")
    sp.add_argument("--tanh-a", dest="tanh_a", type=float,
                    help="rank-correlation smoothing sharpness")
    sp.add_argument("--method", choices=["mlp", "dan", "coral", "cdan"],
                    help="training objective")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="copulashift",
        description="Domain adaptation by marginal + dependence-structure "
                    "alignment: train, diagnose, and reproduce benchmarks.")
    sub = parser.add_subparsers(dest="verb", required=True)

    sp = sub.add_parser("moons-gen", help="write a stretched two-moons CSV")
    sp.add_argument("--n", type=int, default=512, help="points per class")
    sp.add_argument("--stretch", type=float, default=1.0)
    sp.add_argument("--noise", type=float, default=0.05)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_moons_gen)

    sp = sub.add_parser("train", help="fit a model on source/target CSVs")
    sp.add_argument("--source", required=True, help="labeled source CSV")
    sp.add_argument("--target", required=True,
                    help="target CSV (labels, if any, are ignored)")
    sp.add_argument("--out", default="model",
                    help="output base path for .ckpt.json and .trace.json")
    sp.add_argument("--hidden", help="comma-separated hidden sizes, e.g. 8,4")
    sp.add_argument("--task", choices=["classification", "regression"],
                    help="override the task inferred from the labels")
    _add_io_flags(sp)
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score a checkpoint on a labeled CSV")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", help="also write the report JSON here")
    _add_io_flags(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("shift-report",
                        help="per-feature marginal divergences + copula distance")
    sp.add_argument("a", help="first CSV (e.g. source)")
    sp.add_argument("b", help="second CSV (e.g. target)")
    sp.add_argument("--out", help="write .json and .csv reports to this base path")
    _add_io_flags(sp)
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_shift_report)

    sp = sub.add_parser("reproduce", help="run a benchmark table")
    sp.add_argument("table", choices=sorted(_TABLES))
    sp.add_argument("--seeds", type=int,
                    help="number of seeds (default depends on the table)")
    sp.add_argument("--data-dir", help="directory with the wine CSVs "
                    "(default $COPULASHIFT_DATA_DIR or ./data)")
    sp.add_argument("--out", help="output base path (default: the table name)")
    sp.add_argument("--quiet", action="store_true",
                    help="suppress per-run progress lines")
    sp.set_defaults(func=cmd_reproduce)

    sp = sub.add_parser("fetch-wine",
                        help="download and verify the wine-quality CSVs")
    sp.add_argument("--data-dir", help="target directory "
                    "(default $COPULASHIFT_DATA_DIR or ./data)")
    sp.set_defaults(func=cmd_fetch_wine)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ContractViolation, ex.MissingDataError, OSError,
            json.JSONDecodeError) as err:
        _say(f"error: {err}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
