"""Serialise benchmark, ablation and theory reports to JSON, CSV and markdown.

JSON keeps full float precision.  CSV and markdown use the fixed
precision of the published tables: ECE-type metrics as percentages with
four decimals, Brier score, NLL and temperatures with three.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import os

from .methods import METHODS

# Published CIFAR-10H cells: T, ECE%, aECE%, cwECE%, Brier, NLL (None = not reported).
REFERENCE_TABLES = {
    "cifar10h-r50": {
        "uncal": (None, 4.97, 5.71, 1.09, 0.120, 0.692),
        "ts": (2.03, 4.29, 4.25, 0.91, 0.112, 0.363),
        "ats": (None, 4.40, 4.37, 0.94, 0.113, 0.350),
        "platt": (None, 4.29, 4.23, 0.91, 0.112, 0.372),
        "dirichlet_hard": (None, 4.46, 4.44, 0.95, 0.114, 0.395),
        "slts": (3.18, 1.51, 1.39, 0.45, 0.110, 0.293),
        "mcts": (3.14, 1.45, 1.44, 0.45, 0.111, 0.296),
        "softplatt": (None, 1.52, 1.31, 0.35, 0.110, 0.288),
        "vs": (None, 1.35, 1.26, 0.39, 0.109, 0.289),
        "ir_soft": (None, 0.72, 0.83, 0.45, 0.115, 0.340),
        "dirichlet_soft": (None, 1.25, 1.06, 0.35, 0.109, 0.271),
        "lsts": (3.08, 1.57, 1.31, 0.46, 0.109, 0.293),
        "oracle_ts": (3.17, 1.50, 1.52, 0.45, 0.111, 0.296),
    },
    "cifar10h-vit": {
        "uncal": (None, 4.99, 5.36, 1.06, 0.111, 0.678),
        "ts": (2.04, 4.48, 4.40, 0.93, 0.106, 0.346),
        "ats": (None, 4.54, 4.47, 0.94, 0.106, 0.345),
        "platt": (None, 4.54, 4.38, 0.93, 0.105, 0.363),
        "dirichlet_hard": (None, 4.70, 4.62, 0.97, 0.107, 0.394),
        "slts": (3.07, 0.85, 0.56, 0.39, 0.102, 0.278),
        "mcts": (3.07, 0.81, 0.65, 0.42, 0.101, 0.277),
        "softplatt": (None, 0.88, 0.47, 0.24, 0.101, 0.272),
        "vs": (None, 0.92, 0.50, 0.32, 0.101, 0.274),
        "ir_soft": (None, 0.91, 0.61, 0.43, 0.105, 0.321),
        "dirichlet_soft": (None, 0.72, 0.41, 0.25, 0.100, 0.255),
        "lsts": (2.76, 2.37, 2.21, 0.53, 0.103, 0.285),
        "oracle_ts": (3.09, 0.70, 0.63, 0.42, 0.101, 0.277),
    },
}

COLUMNS = ("T", "ece_true", "aece_true", "cwece_true", "brier_soft", "nll_soft")
HEADERS = ("T", "ECE", "aECE", "cwECE", "Br", "NLL")
_PERCENT = {"ece_true", "aece_true", "cwece_true", "ece_voted"}
_CELL_KEYS = ("calsize", "annotations", "mcts-s", "seed", "method", "oracle")


def fmt(name: str, value) -> str:
    """Fixed-precision rendering of one metric value ("" when missing)."""
    if value is None:
        return ""
    if name in _PERCENT:
        return f"{100.0 * value:.4f}"
    return f"{value:.3f}"


def _fmt_agg(name, entry) -> str:
    if entry is None:
        return "---"
    s = fmt(name, entry["mean"])
    if entry["std"] is not None:
        s += " ± " + fmt(name, entry["std"])
    return s


def _label(method: str) -> str:
    spec = METHODS.get(method)
    return spec.label if spec else method


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _split_reliability(report: dict):
    """Return (report without reliability blocks, reliability document)."""
    body = copy.deepcopy(report)
    rel = []
    for c in body.get("cells", []):
        if c.get("status") == "ok":
            entry = {k: c[k] for k in _CELL_KEYS if k in c}
            entry["reliability"] = c["metrics"].pop("reliability")
            rel.append(entry)
    return body, {"kind": "reliability", "provenance": report.get("provenance"), "cells": rel}


def markdown_table(report: dict) -> str:
    """One row per method (per swept value for ablations) with mean ± std."""
    axis = report.get("axis")
    head = ["Method"] + ([axis] if axis else []) + list(HEADERS) + ["ECE_voted", "seeds ok"]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for row in report["aggregate"]:
        name = _label(row["method"]) + (" (oracle: fitted on test labels)" if row["oracle"] else "")
        cells = [name] + ([str(row[axis])] if axis else [])
        cells += [_fmt_agg(c, row[c]) for c in COLUMNS] + [_fmt_agg("ece_voted", row["ece_voted"])]
        cells.append(f"{row['n_ok']}/{row['n_ok'] + row['n_error']}")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def reference_deviations(report: dict, reference: str) -> list:
    """Rows of (method, column, ours, published, difference); never asserts."""
    table = REFERENCE_TABLES.get(reference)
    if table is None:
        return []
    out = []
    for row in report["aggregate"]:
        ref = table.get(row["method"])
        if ref is None:
            continue
        for col, pub in zip(COLUMNS, ref):
            if pub is None or row[col] is None:
                continue
            ours = row[col]["mean"] * (100.0 if col in _PERCENT else 1.0)
            out.append((row["method"], col, ours, pub, ours - pub))
    return out


def reference_markdown(report: dict, reference: str) -> str:
    rows = reference_deviations(report, reference)
    if not rows:
        return ""
    lines = [
        f"## Deviation from published {reference} cells",
        "",
        "Informational only: matching needs the same backbone logits.",
        "",
        "| Method | Metric | Ours | Published | Ours - Published |",
        "|---|---|---|---|---|",
    ]
    for method, col, ours, pub, diff in rows:
        lines.append(f"| {_label(method)} | {col} | {ours:.4f} | {pub:.4f} | {diff:+.4f} |")
    return "\n".join(lines) + "\n"


def csv_text(report: dict) -> str:
    axis = report.get("axis")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ([axis] if axis else []) + ["seed", "method", "oracle", "status"]
    head += ["T", "ece_true_pct", "aece_true_pct", "cwece_true_pct", "ece_voted_pct", "brier_soft", "nll_soft", "error"]
    w.writerow(head)
    for c in report["cells"]:
        row = ([c[axis]] if axis else []) + [c["seed"], c["method"], str(c["oracle"]).lower(), c["status"]]
        if c["status"] == "ok":
            m = c["metrics"]
            row += [fmt("T", m["T_fitted"])]
            row += [fmt(k, m[k]) for k in ("ece_true", "aece_true", "cwece_true", "ece_voted", "brier_soft", "nll_soft")]
            row.append("")
        else:
            row += [""] * 7 + [f"{c['error']['type']}: {c['error']['message']}"]
        w.writerow(row)
    return buf.getvalue()


def markdown_text(report: dict) -> str:
    prov = report["provenance"]
    title = "Benchmark" if report["kind"] == "benchmark" else f"Ablation over {report['axis']}"
    parts = [
        f"# {title}",
        "",
        f"- config digest: `{prov['config_digest']}`",
        f"- dataset digest: `{prov['dataset_digest']}`",
        f"- version: {prov['version']}",
        f"- seeds: {', '.join(str(s) for s in prov['config']['seeds'])}",
        "- ECE columns are percentages; Br and NLL use soft labels.",
        "",
        markdown_table(report),
    ]
    errors = [c for c in report["cells"] if c["status"] != "ok"]
    if errors:
        parts += ["## Failed cells", ""]
        parts += [f"- {c['method']} seed {c['seed']}: {c['error']['message']}" for c in errors]
        parts.append("")
    ref = prov["config"].get("reference")
    if ref:
        parts.append(reference_markdown(report, ref))
    return "\n".join(parts)


def theory_markdown(theory: dict) -> str:
    a, b = theory["temperature_order"], theory["entropy_monotonicity"]
    lines = ["# Theory checks", "", f"## Temperature order (TS below soft-label fit): {a['status']}", ""]
    lines += ["| seed | T_TS | T_SLTS | gap |", "|---|---|---|---|"]
    for r in a["per_seed"]:
        lines.append(f"| {r['seed']} | {r['T_ts']:.3f} | {r['T_slts']:.3f} | {r['gap']:.3e} |")
    rho = "undefined" if b["spearman"] is None else f"{b['spearman']:.3f}"
    lines += [
        "",
        f"## Entropy monotonicity of TS error: {b['status']}",
        "",
        f"Spearman rho = {rho} (threshold {b['threshold']})",
        "",
        "| entropy | mean error | s.e. | count |",
        "|---|---|---|---|",
    ]
    for r in b["profile"]:
        lines.append(f"| {r['entropy']:.3f} | {r['mean_error']:.4f} | {r['se']:.4f} | {r['count']} |")
    return "\n".join(lines) + "\n"


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def emit_report(report: dict, out_dir, formats=("json", "csv", "markdown")) -> list:
    """Write report files into ``out_dir`` and return their paths.

    Benchmark and ablation reports produce ``report.json`` (reliability
    blocks moved to ``reliability.json``), ``report.csv`` and
    ``report.md``; theory records produce ``theory.json`` and ``theory.md``.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def put(name, text):
        path = os.path.join(out_dir, name)
        _write(path, text)
        written.append(path)

    if report["kind"] == "theory":
        if "json" in formats:
            put("theory.json", dumps(report))
        if "markdown" in formats:
            put("theory.md", theory_markdown(report))
        return written

    body, rel = _split_reliability(report)
    if "json" in formats:
        put("report.json", dumps(body))
        put("reliability.json", dumps(rel))
    if "csv" in formats:
        put("report.csv", csv_text(report))
    if "markdown" in formats:
        put("report.md", markdown_text(report))
    return written
