"""Command-line entry point ``ambical``.

Exit status is 0 on success, 2 on usage errors (argparse) and 1 on runtime
errors, in which case a JSON object describing the error goes to stderr.
The output directory and worker-thread count can be set with the
``AMBICAL_OUT`` and ``AMBICAL_THREADS`` environment variables; explicit
flags take precedence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__, metrics
from .annotators import isic_confusion, load_confusion, sample_annotations
from .calibrators import apply, load_model, save_model
from .errors import AmbicalError, InputError
from .harness import experiment as ex
from .harness import report as rp
from .harness.io import load_dataset, save_dataset
from .harness.methods import METHODS, FitSettings, fit_method, resolve_method
from .harness.synthetic import temperature_dataset
from .toy import ToyConfig, run_toy_experiment

DEFAULT_OUT = "ambical_out"


def _out_dir(args) -> str:
    return args.out_dir or os.environ.get("AMBICAL_OUT") or DEFAULT_OUT


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        raw = os.environ.get("AMBICAL_THREADS", "1")
        try:
            n = int(raw)
        except ValueError:
            raise InputError(f"AMBICAL_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise InputError("thread count must be >= 1")
    return n


def _load_config(args):
    """Parse ``--config`` and resolve the dataset path (flag over config)."""
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"config is not valid JSON (line {exc.lineno}): {exc.msg}") from None
    if not isinstance(doc, dict):
        raise InputError("config must be a JSON object")
    cfg = ex.ExperimentConfig.from_dict(doc)
    path = args.dataset
    if path is None:
        if cfg.dataset is None:
            raise InputError("no dataset given: pass --dataset or set 'dataset' in the config")
        path = cfg.dataset
        if not os.path.isabs(path):
            path = os.path.join(os.path.dirname(os.path.abspath(args.config)), path)
    # The resolved path is stored so an emitted report can be re-run from anywhere.
    overrides = {"dataset": os.path.abspath(path)}
    if getattr(args, "oracle", False):
        overrides["oracle"] = True
    cfg = ex.ExperimentConfig(**{**cfg.to_dict(), **overrides})
    return cfg, load_dataset(path)


def _print(text: str) -> None:
    sys.stdout.write(text)
    if not text.endswith("\n"):
        sys.stdout.write("\n")


# -- subcommands ---------------------------------------------------------------


def cmd_fit(args) -> int:
    ds = load_dataset(args.dataset)
    spec = resolve_method(args.method, args.target)
    settings = FitSettings(
        mcts_S=args.mc_s,
        lambda_odir=args.lambda_odir,
        lambda_ats=args.lambda_ats,
        fixed_eps=args.fixed_eps,
        optimizer=args.optimizer,
    )
    model = fit_method(spec, ds, args.seed, settings)
    save_model(model, args.out)
    T = "" if model.temperature is None else f" T={model.temperature:.3f}"
    _print(f"fitted {spec.label} ({model.kind}, targets={model.fitted_on}) on n={ds.n}{T} -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    ds = load_dataset(args.dataset)
    model = load_model(args.model)
    if model.K != ds.K:
        raise InputError(f"model has K={model.K} but the dataset has K={ds.K}")
    probs = apply(model, ds.logits)
    rep = metrics.evaluate(probs, ds.pi, ds.voted, args.mc_s, args.mc_seed, args.bins, model.temperature)
    out = _out_dir(args)
    os.makedirs(out, exist_ok=True)
    doc = {"kind": "evaluation", "model": model.kind, "fitted_on": model.fitted_on, "n": ds.n, "metrics": rep.to_dict()}
    with open(os.path.join(out, "eval.json"), "w") as fh:
        fh.write(rp.dumps(doc))
    head = "| " + " | ".join(rp.HEADERS + ("ECE_voted",)) + " |"
    vals = [rp.fmt("T", rep.T_fitted) or "---"]
    vals += [rp.fmt(k, getattr(rep, k)) for k in ("ece_true", "aece_true", "cwece_true", "brier_soft", "nll_soft", "ece_voted")]
    _print("\n".join([head, "|" + "---|" * 7, "| " + " | ".join(vals) + " |"]))
    return 0


def cmd_bench(args) -> int:
    cfg, ds = _load_config(args)
    report = ex.run_benchmark(ds, cfg, _threads(args))
    rp.emit_report(report, _out_dir(args))
    _print(rp.markdown_table(report))
    ref = cfg.reference
    if ref:
        _print(rp.reference_markdown(report, ref))
    return 0


def cmd_ablate(args) -> int:
    cfg, ds = _load_config(args)
    ab = dict(cfg.ablation or {})
    ab["axis"] = args.axis
    if args.values:
        ab["values"] = [float(v) if args.axis == "calsize" else int(v) for v in args.values.split(",")]
    elif (cfg.ablation or {}).get("axis") != args.axis:
        raise InputError(f"no values for axis {args.axis!r}: pass --values or an ablation block in the config")
    if args.nested is not None:
        ab["nested"] = args.nested
    cfg = ex.ExperimentConfig(**{**cfg.to_dict(), "ablation": ab})
    report = ex.run_ablation(ds, cfg, _threads(args))
    rp.emit_report(report, _out_dir(args))
    _print(rp.markdown_table(report))
    return 0


def cmd_check_theory(args) -> int:
    cfg, ds = _load_config(args)
    methods = list(cfg.methods) + [m for m in ("ts", "slts") if m not in cfg.methods]
    if args.threshold is not None:
        cfg = ex.ExperimentConfig(**{**cfg.to_dict(), "spearman_threshold": args.threshold})
    cfg = ex.ExperimentConfig(**{**cfg.to_dict(), "methods": methods})
    report = ex.run_benchmark(ds, cfg, _threads(args))
    theory = ex.check_propositions(report, ds, cfg)
    rp.emit_report(theory, _out_dir(args))
    a, b = theory["temperature_order"], theory["entropy_monotonicity"]
    _print(f"temperature order (T_TS < T_SLTS): {a['status']}")
    rho = "undefined" if b["spearman"] is None else f"{b['spearman']:.3f}"
    _print(f"entropy monotonicity (Spearman {rho} vs {b['threshold']}): {b['status']}")
    return 0


def cmd_simulate(args) -> int:
    C = isic_confusion() if args.confusion == "isic" else load_confusion(args.confusion)
    if args.dataset:
        ds = load_dataset(args.dataset)
        if ds.K != C.K:
            raise InputError(f"confusion matrix has K={C.K} but the dataset has K={ds.K}")
    else:
        ds = temperature_dataset(args.n, C.K, args.t_star, seed=args.seed)
        ds.class_names = list(C.class_names)
    anns = sample_annotations(ds.voted, C, args.m, args.seed, args.nested)
    out_ds = ds.with_annotations(anns)
    save_dataset(out_ds, args.out)
    agree = float(np.mean([np.mean(a == y) for a, y in zip(anns, ds.voted)]))
    _print(f"wrote {out_ds.n} examples x {args.m} annotations to {args.out} (agreement with consensus {agree:.3f})")
    return 0


def cmd_toy(args) -> int:
    kw = {}
    if args.n_per_cluster is not None:
        kw["n_per_cluster"] = args.n_per_cluster
    if args.epochs is not None:
        kw["epochs"] = args.epochs
    cfg = ToyConfig.from_seed(args.seed, **kw)
    res = run_toy_experiment(cfg)
    out = _out_dir(args)
    os.makedirs(out, exist_ok=True)
    cfg_doc = dict(res["config"])
    cfg_doc["splits"] = list(cfg_doc["splits"])
    doc = {
        "kind": "toy",
        "version": __version__,
        "config": cfg_doc,
        "methods": res["methods"],
        "diagnostics": res["diagnostics"],
        "checks": res["checks"],
    }
    with open(os.path.join(out, "toy_report.json"), "w") as fh:
        fh.write(rp.dumps(doc))
    lines = [
        f"# Toy experiment (seed {args.seed})",
        "",
        "| Method | T | ECE_voted | ECE_true | ECE_true ambiguous | ECE_true clear |",
        "|---|---|---|---|---|---|",
    ]
    for name, m in res["methods"].items():
        row = [name, rp.fmt("T", m["T"]) or "---"]
        row += [rp.fmt("ece_true", m[k]) for k in ("ece_voted", "ece_true", "ece_true_ambiguous", "ece_true_clear")]
        lines.append("| " + " | ".join(row) + " |")
    lines += ["", "## Checks", ""]
    lines += [f"- {k}: {'pass' if v else 'fail'}" for k, v in res["checks"].items()]
    md = "\n".join(lines) + "\n"
    with open(os.path.join(out, "toy_report.md"), "w") as fh:
        fh.write(md)
    pts = res["points"]
    with open(os.path.join(out, "toy_points.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "cluster", "split", "train_label", "voted_label"])
        for (x, y), c, s, t, v in zip(pts.x, pts.cluster, pts.split, pts.train_label, pts.voted):
            w.writerow([f"{x:.6f}", f"{y:.6f}", int(c), ("train", "cal", "test")[s], int(t), int(v)])
    _print(md)
    return 0


# -- parser ----------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(json.dumps({"error": "usage_error", "message": message}) + "\n")
        sys.exit(2)


def _bool_flag(value: str) -> bool:
    if value.lower() in ("1", "true", "yes"):
        return True
    if value.lower() in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError("expected true or false")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ambical", description="Calibrate classifier logits against annotator label distributions.")
    p.add_argument("--version", action="version", version=f"ambical {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND", parser_class=_Parser)

    def runner(sp):
        sp.add_argument("--out-dir", help="output directory (default: $AMBICAL_OUT or ./ambical_out)")
        sp.add_argument("--threads", type=int, help="worker threads for grid cells (default: $AMBICAL_THREADS or 1)")

    f = sub.add_parser("fit", help="fit one calibrator on a dataset")
    f.add_argument("--dataset", required=True, help="calibration dataset (JSONL)")
    f.add_argument("--method", required=True, choices=sorted(METHODS), help="calibration method")
    f.add_argument("--target", choices=("voted", "soft", "mc"), help="override the supervision of the method family")
    f.add_argument("--mc-s", type=int, default=1, help="annotation samples per example for MCTS (default 1)")
    f.add_argument("--seed", type=int, default=0, help="seed for sampled targets (default 0)")
    f.add_argument("--lambda-odir", type=float, default=1e-3, help="Dirichlet off-diagonal/intercept penalty")
    f.add_argument("--lambda-ats", type=float, default=1e-3, help="ATS L2 penalty on the feature weights")
    f.add_argument("--fixed-eps", type=float, default=0.1, help="smoothing weight for fixed_ls")
    f.add_argument("--optimizer", choices=("lbfgs", "adam"), default="lbfgs", help="vector-parameter optimizer")
    f.add_argument("--out", required=True, help="model JSON to write")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="evaluate a fitted calibrator")
    e.add_argument("--dataset", required=True, help="evaluation dataset (JSONL)")
    e.add_argument("--model", required=True, help="model JSON from 'ambical fit'")
    e.add_argument("--mc-s", type=int, default=100, help="Monte Carlo label draws (default 100)")
    e.add_argument("--mc-seed", type=int, default=0, help="seed of the label draws (default 0)")
    e.add_argument("--bins", type=int, default=15, help="confidence bins (default 15)")
    e.add_argument("--out-dir", help="output directory (default: $AMBICAL_OUT or ./ambical_out)")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="run the benchmark grid from a config file")
    b.add_argument("--config", required=True, help="experiment config JSON (an emitted report.json also works)")
    b.add_argument("--dataset", help="dataset JSONL (overrides the config)")
    b.add_argument("--oracle", action="store_true", help="add the test-set oracle temperature row")
    runner(b)
    b.set_defaults(func=cmd_bench)

    a = sub.add_parser("ablate", help="sweep calibration size, annotation count or MCTS samples")
    a.add_argument("--axis", required=True, choices=ex.ABLATION_AXES, help="axis to sweep")
    a.add_argument("--config", required=True, help="experiment config JSON")
    a.add_argument("--dataset", help="dataset JSONL (overrides the config)")
    a.add_argument("--values", help="comma-separated sweep values (overrides the config)")
    a.add_argument("--nested", type=_bool_flag, help="nest subsets across values (true/false, default true)")
    runner(a)
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("simulate", help="draw synthetic annotations from a confusion matrix")
    s.add_argument("--confusion", default="isic", help="confusion-matrix JSON or 'isic' for the built-in preset")
    s.add_argument("--m", type=int, default=9, help="annotations per example (default 9)")
    s.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    s.add_argument("--dataset", help="dataset whose voted labels are the consensus (default: synthetic logits)")
    s.add_argument("--n", type=int, default=1000, help="synthetic examples when no dataset is given")
    s.add_argument("--t-star", type=float, default=2.5, help="temperature of the synthetic logits")
    s.add_argument("--nested", action="store_true", help="key draws by example only so smaller m is a prefix")
    s.add_argument("--out", required=True, help="dataset JSONL to write")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("toy", help="run the three-cluster toy experiment")
    t.add_argument("--seed", type=int, default=0, help="seed for data, labels, training and MC draws")
    t.add_argument("--n-per-cluster", type=int, help="points per cluster (default 2000)")
    t.add_argument("--epochs", type=int, help="training epochs (default 200)")
    t.add_argument("--out-dir", help="output directory (default: $AMBICAL_OUT or ./ambical_out)")
    t.set_defaults(func=cmd_toy)

    c = sub.add_parser("check-theory", help="check the temperature-order and entropy-monotonicity claims")
    c.add_argument("--config", required=True, help="experiment config JSON")
    c.add_argument("--dataset", help="dataset JSONL (overrides the config)")
    c.add_argument("--threshold", type=float, help="Spearman pass threshold (default from config, 0.9)")
    runner(c)
    c.set_defaults(func=cmd_check_theory)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except AmbicalError as exc:
        sys.stderr.write(json.dumps(exc.to_dict()) + "\n")
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "io_error", "message": str(exc)}) + "\n")
    return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
