"""Seeded experiment orchestration: benchmark grid, ablations, theory checks.

Every random choice is keyed by a seed stored in :class:`ExperimentConfig`,
and grid cells are computed independently and merged in a fixed order, so
the same config and dataset always produce the same report regardless of
how many worker threads ran the cells.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import stats

from .. import __version__, metrics
from ..annotators import ConfusionMatrix, isic_confusion, sample_annotations, subsample_annotations
from ..calibrators import apply
from ..core import LogitDataset, softmax
from ..errors import AmbicalError, InputError
from .io import dataset_digest
from .methods import METHODS, FitSettings, MethodSpec, fit_method, resolve_method
from .splits import nested_subsample, split_stratified

SEED_AXES = ("split", "annotations")
ABLATION_AXES = ("calsize", "annotations", "mcts-s")
AGGREGATED = ("T", "ece_true", "aece_true", "cwece_true", "ece_voted", "brier_soft", "nll_soft")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a benchmark or ablation run.

    ``seeds`` are the run seeds.  With ``seed_axis="split"`` each run seed
    draws its own calibration/test split; with ``seed_axis="annotations"``
    the split is fixed by ``split_seed`` and each run seed re-simulates the
    annotations from ``annotation_model``.
    """

    methods: tuple = ("uncal", "ts", "slts")
    mc_S: int = 100
    mc_seed: int = 0
    bins: int = 15
    cal_fraction: float = 0.5
    stratify: bool = True
    split_seed: int = 42
    seeds: tuple = (42,)
    seed_axis: str = "split"
    annotation_model: dict | None = None
    lambda_odir: float = 1e-3
    lambda_ats: float = 1e-3
    mcts_S: int = 1
    fixed_eps: float = 0.1
    optimizer: str = "lbfgs"
    oracle: bool = False
    ablation: dict | None = None
    spearman_threshold: float = 0.9
    reference: str | None = None
    dataset: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        for m in self.methods:
            resolve_method(m)
        if not self.methods:
            raise InputError("methods must not be empty")
        if not self.seeds:
            raise InputError("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise InputError("seeds must be distinct")
        if not 0 < self.cal_fraction < 1:
            raise InputError("cal_fraction must lie in (0, 1)")
        if self.mc_S < 1 or self.mcts_S < 1:
            raise InputError("S must be >= 1")
        if self.bins < 1:
            raise InputError("bins must be >= 1")
        if self.seed_axis not in SEED_AXES:
            raise InputError(f"seed_axis must be one of {SEED_AXES}")
        if self.seed_axis == "annotations" and not self.annotation_model:
            raise InputError("seed_axis 'annotations' needs an annotation_model")
        if self.optimizer not in ("lbfgs", "adam"):
            raise InputError("optimizer must be 'lbfgs' or 'adam'")
        if self.ablation is not None:
            ab = dict(self.ablation)
            if ab.get("axis") not in ABLATION_AXES:
                raise InputError(f"ablation axis must be one of {ABLATION_AXES}")
            vals = ab.get("values")
            if not isinstance(vals, list) or not vals:
                raise InputError("ablation values must be a non-empty list")
            if ab["axis"] == "calsize" and not all(0 < v <= 1 for v in vals):
                raise InputError("cal-size fractions must lie in (0, 1]")
            if ab["axis"] != "calsize" and not all(isinstance(v, int) and v >= 1 for v in vals):
                raise InputError(f"{ab['axis']} values must be positive integers")
            unknown = set(ab) - {"axis", "values", "nested"}
            if unknown:
                raise InputError(f"unknown ablation keys {sorted(unknown)}")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        """Build from a parsed config file; an emitted report is also accepted."""
        if "provenance" in doc and "config" in doc["provenance"]:
            doc = doc["provenance"]["config"]
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InputError(f"unknown config keys {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["methods"] = list(self.methods)
        out["seeds"] = list(self.seeds)
        return out

    def digest(self) -> str:
        doc = self.to_dict()
        doc.pop("dataset")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    @property
    def settings(self) -> FitSettings:
        return FitSettings(self.mcts_S, self.lambda_odir, self.lambda_ats, self.fixed_eps, self.optimizer)

    def method_specs(self) -> list:
        specs = [METHODS[m] for m in self.methods]
        if self.oracle and METHODS["oracle_ts"] not in specs:
            specs.append(METHODS["oracle_ts"])
        return specs


def confusion_from_model(model: dict) -> ConfusionMatrix:
    """Resolve ``{"confusion": "isic" | {...matrix doc...}, "m": int}``."""
    c = model.get("confusion", "isic")
    if c == "isic":
        return isic_confusion()
    if isinstance(c, dict):
        return ConfusionMatrix.from_dict(c)
    raise InputError("annotation_model.confusion must be 'isic' or an inline matrix document")


def _simulate(ds: LogitDataset, model: dict, seed: int) -> LogitDataset:
    C = confusion_from_model(model)
    if C.K != ds.K:
        raise InputError(f"confusion matrix has K={C.K} but the dataset has K={ds.K}")
    m = int(model.get("m", 9))
    return ds.with_annotations(sample_annotations(ds.voted, C, m, seed, bool(model.get("nested", False))))


@dataclass
class _SeedContext:
    seed: int
    cal: LogitDataset
    test: LogitDataset
    table: np.ndarray = field(repr=False)


def _prepare_seed(ds: LogitDataset, cfg: ExperimentConfig, seed: int) -> _SeedContext:
    if cfg.seed_axis == "annotations":
        ds = _simulate(ds, cfg.annotation_model, seed)
        split_seed = cfg.split_seed
    else:
        split_seed = seed
    cal_idx, test_idx = split_stratified(ds.voted, cfg.cal_fraction, split_seed, cfg.stratify)
    test = ds.subset(test_idx)
    table = metrics.draw_label_table(test.pi, cfg.mc_S, cfg.mc_seed)
    return _SeedContext(seed, ds.subset(cal_idx), test, table)


def _scalar_diagnostics(diag: dict) -> dict:
    out = {}
    for k in sorted(diag):
        v = diag[k]
        if isinstance(v, (bool, int, float, str)) or v is None:
            out[k] = v
        elif isinstance(v, (list, tuple)) and all(isinstance(x, (int, float)) for x in v):
            out[k] = list(v)
    return out


def _run_cell(spec: MethodSpec, ctx: _SeedContext, cfg: ExperimentConfig, settings: FitSettings, cal=None) -> dict:
    """Fit one method for one seed and evaluate it; failures become records."""
    cal = ctx.cal if cal is None else cal
    cell = {"method": spec.name, "seed": ctx.seed, "oracle": spec.oracle}
    try:
        fit_on = ctx.test if spec.oracle else cal
        model = fit_method(spec, fit_on, ctx.seed, settings)
        probs = apply(model, ctx.test.logits)
        rep = metrics.evaluate(
            probs, ctx.test.pi, ctx.test.voted, cfg.mc_S, cfg.mc_seed, cfg.bins, model.temperature, ctx.table
        )
    except (AmbicalError, ValueError, ArithmeticError) as exc:
        cell["status"] = "error"
        cell["error"] = {"type": type(exc).__name__, "message": str(exc)}
        return cell
    cell["status"] = "ok"
    cell["fitted_on"] = "test (oracle)" if spec.oracle else model.fitted_on
    cell["metrics"] = rep.to_dict()
    cell["diagnostics"] = _scalar_diagnostics(model.diagnostics)
    return cell


def _map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _metric_value(cell, key):
    m = cell["metrics"]
    return m["T_fitted"] if key == "T" else m[key]


def aggregate_cells(cells, key_fields=("method",)) -> list:
    """Mean and sample std (ddof=1) per group over the successful cells."""
    groups = {}
    for c in cells:
        groups.setdefault(tuple(c[k] for k in key_fields), []).append(c)
    out = []
    for key, group in groups.items():
        ok = [c for c in group if c["status"] == "ok"]
        row = dict(zip(key_fields, key))
        row["oracle"] = group[0]["oracle"]
        row["n_ok"] = len(ok)
        row["n_error"] = len(group) - len(ok)
        for name in AGGREGATED:
            vals = [_metric_value(c, name) for c in ok]
            vals = [v for v in vals if v is not None]
            if not vals:
                row[name] = None
                continue
            arr = np.array(vals, dtype=np.float64)
            row[name] = {
                "mean": float(arr.mean()),
                "std": float(arr.std(ddof=1)) if arr.size > 1 else None,
            }
        out.append(row)
    return out


def _provenance(ds: LogitDataset, cfg: ExperimentConfig) -> dict:
    return {
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "dataset_digest": dataset_digest(ds),
        "version": __version__,
        "n": ds.n,
        "K": ds.K,
    }


def run_benchmark(ds: LogitDataset, cfg: ExperimentConfig, threads: int = 1) -> dict:
    """Fit every requested method for every seed and evaluate on the test split.

    Returns a report with one cell per (seed, method), in that order, an
    aggregate row per method and a provenance block.
    """
    specs = cfg.method_specs()
    settings = cfg.settings
    contexts = [_prepare_seed(ds, cfg, s) for s in cfg.seeds]
    jobs = [(spec, ctx) for ctx in contexts for spec in specs]
    cells = _map(lambda job: _run_cell(job[0], job[1], cfg, settings), jobs, threads)
    return {
        "kind": "benchmark",
        "provenance": _provenance(ds, cfg),
        "cells": cells,
        "aggregate": aggregate_cells(cells),
    }


def _calsize_jobs(ctx, cfg, specs, values, nested):
    if nested:
        subsets = nested_subsample(ctx.cal.voted, values, ctx.seed)
    else:
        subsets = {f: nested_subsample(ctx.cal.voted, [f], [ctx.seed, i])[f] for i, f in enumerate(values)}
    return [(f, spec, ctx, ctx.cal.subset(subsets[f])) for f in values for spec in specs]


def _annotation_jobs(ctx, cfg, specs, values, nested):
    cal = ctx.cal
    if not cal.has_annotations:
        raise InputError("the annotation-count sweep needs raw annotations for every calibration example")
    jobs = []
    for m in values:
        anns = []
        for i, a in enumerate(cal.annotations):
            key = [ctx.seed, i] if nested else [ctx.seed, m, i]
            anns.append(subsample_annotations(a, min(m, len(a)), key))
        jobs.extend((m, spec, ctx, cal.with_annotations(anns)) for spec in specs)
    return jobs


def run_ablation(ds: LogitDataset, cfg: ExperimentConfig, threads: int = 1) -> dict:
    """Sweep one axis of the protocol for every seed.

    ``calsize`` keeps a stratified fraction of the calibration split (nested
    across fractions by default, so the full fraction reproduces the
    benchmark cell).  ``annotations`` caps every calibration example at
    ``m`` annotations.  ``mcts-s`` refits MCTS with ``S`` samples; here the
    split is fixed by ``split_seed`` and the run seeds only key the draws.
    """
    if not cfg.ablation:
        raise InputError("config has no ablation block")
    axis = cfg.ablation["axis"]
    values = list(cfg.ablation["values"])
    nested = bool(cfg.ablation.get("nested", True))

    if axis == "mcts-s":
        if not ds.has_annotations and cfg.seed_axis != "annotations":
            raise InputError("the MCTS sweep needs raw annotations")
        base = _prepare_seed(ds, cfg, cfg.split_seed if cfg.seed_axis == "split" else cfg.seeds[0])
        jobs = []
        for S in values:
            for seed in cfg.seeds:
                ctx = _SeedContext(seed, base.cal, base.test, base.table)
                jobs.append((S, METHODS["mcts"], ctx, None))

        def run(job):
            S, spec, ctx, _ = job
            settings = FitSettings(S, cfg.lambda_odir, cfg.lambda_ats, cfg.fixed_eps, cfg.optimizer)
            return {axis: S, **_run_cell(spec, ctx, cfg, settings)}

    else:
        contexts = [_prepare_seed(ds, cfg, s) for s in cfg.seeds]
        specs = [s for s in cfg.method_specs() if not s.oracle]
        build = _calsize_jobs if axis == "calsize" else _annotation_jobs
        jobs = [j for ctx in contexts for j in build(ctx, cfg, specs, values, nested)]
        settings = cfg.settings

        def run(job):
            value, spec, ctx, cal = job
            cell = {axis: value, **_run_cell(spec, ctx, cfg, settings, cal)}
            cell["n_cal"] = cal.n
            return cell

    cells = _map(run, jobs, threads)
    return {
        "kind": "ablation",
        "axis": axis,
        "values": values,
        "provenance": _provenance(ds, cfg),
        "cells": cells,
        "aggregate": aggregate_cells(cells, (axis, "method")),
    }


def _cell(report, method, seed):
    for c in report["cells"]:
        if c["method"] == method and c["seed"] == seed and c["status"] == "ok":
            return c
    return None


def check_propositions(report: dict, ds: LogitDataset, cfg: ExperimentConfig) -> dict:
    """Evaluate the two theory claims on a benchmark report.

    (a) voted-label TS picks a lower temperature than the soft-label fit,
    per seed.  (b) the pointwise true-label error of TS predictions rises
    with annotation entropy: Spearman correlation between entropy-bin index
    and mean error over a 10-bin profile, compared with
    ``cfg.spearman_threshold``.
    """
    seed = cfg.seeds[0]
    degenerate = bool(np.all(ds.pi.max(axis=1) == 1.0))
    per_seed = []
    for s in cfg.seeds:
        ts, sl = _cell(report, "ts", s), _cell(report, "slts", s)
        if ts is None or sl is None:
            raise InputError("theory checks need successful ts and slts cells")
        t_ts, t_sl = ts["metrics"]["T_fitted"], sl["metrics"]["T_fitted"]
        per_seed.append({"seed": s, "T_ts": t_ts, "T_slts": t_sl, "gap": t_sl - t_ts, "holds": t_ts < t_sl})
    prop_a = {"per_seed": per_seed, "holds": all(r["holds"] for r in per_seed)}
    if degenerate:
        prop_a["status"] = "degenerate: no ambiguity"
        prop_a["max_abs_gap"] = max(abs(r["gap"]) for r in per_seed)
    else:
        prop_a["status"] = "pass" if prop_a["holds"] else "fail"

    ctx = _prepare_seed(ds, cfg, seed)
    T = _cell(report, "ts", seed)["metrics"]["T_fitted"]
    probs = softmax(ctx.test.logits / T)
    profile = metrics.entropy_profile(probs, ctx.test.pi, 10)
    centers = [p[0] for p in profile]
    means = [p[1] for p in profile]
    rho = None
    if len(profile) >= 2 and np.ptp(means) > 0:
        rho = float(stats.spearmanr(np.arange(len(means)), means)[0])
    prop_b = {
        "seed": seed,
        "T_ts": T,
        "profile": [{"entropy": c, "mean_error": m, "se": se, "count": n} for c, m, se, n in profile],
        "spearman": rho,
        "threshold": cfg.spearman_threshold,
        "holds": rho is not None and rho >= cfg.spearman_threshold,
    }
    prop_b["status"] = "pass" if prop_b["holds"] else ("undefined" if rho is None else "fail")
    return {
        "kind": "theory",
        "provenance": report["provenance"],
        "temperature_order": prop_a,
        "entropy_monotonicity": prop_b,
    }

