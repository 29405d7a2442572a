"""Calibration metrics against voted labels, sampled true labels and soft targets."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .core import PROB_FLOOR, as_distribution, cross_entropy, entropy
from .errors import InputError

SCHEMES = ("equal_width", "equal_mass")


@dataclass(frozen=True)
class ReliabilityBins:
    edges: np.ndarray
    count: np.ndarray
    mean_confidence: np.ndarray
    mean_accuracy: np.ndarray
    gap: np.ndarray
    scheme: str

    def to_dict(self) -> dict:
        def clean(a):
            return [None if not math.isfinite(v) else float(v) for v in np.asarray(a, dtype=np.float64)]

        return {
            "scheme": self.scheme,
            "edges": clean(self.edges),
            "bins": [
                {"count": int(c), "confidence": mc, "accuracy": ma, "gap": g}
                for c, mc, ma, g in zip(
                    self.count, clean(self.mean_confidence), clean(self.mean_accuracy), clean(self.gap)
                )
            ],
        }


@dataclass(frozen=True)
class MetricsReport:
    ece_true: float
    aece_true: float
    cwece_true: float
    ece_voted: float
    brier_soft: float
    nll_soft: float
    reliability: ReliabilityBins
    mc_S: int
    mc_seed: int
    bins: int
    T_fitted: Optional[float] = None

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "reliability"}
        out["reliability"] = self.reliability.to_dict()
        return out


def _check_binning(conf, correct, B):
    conf = np.asarray(conf, dtype=np.float64).ravel()
    correct = np.asarray(correct, dtype=np.float64).ravel()
    if conf.size == 0:
        raise InputError("binning needs at least one example")
    if conf.shape != correct.shape:
        raise InputError("confidences and correctness indicators must be aligned")
    if B < 1:
        raise InputError("B must be >= 1")
    return conf, correct


def equal_width_assign(conf: np.ndarray, B: int) -> np.ndarray:
    """Bin index for right-closed bins ``(k/B, (k+1)/B]``; zero goes to bin 0."""
    edges = np.linspace(0.0, 1.0, B + 1)
    return np.clip(np.searchsorted(edges[1:-1], conf, side="left"), 0, B - 1)


def equal_mass_assign(conf: np.ndarray, B: int):
    """Stable sort by (confidence, index) and split into ``B`` near-equal groups."""
    n = conf.size
    order = np.argsort(conf, kind="stable")
    sizes = np.full(B, n // B)
    sizes[: n % B] += 1
    idx = np.empty(n, dtype=np.int64)
    idx[order] = np.repeat(np.arange(B), sizes)
    bounds = np.cumsum(sizes)[:-1]
    sc = conf[order]
    inner = []
    for b in bounds:
        if 0 < b < n:
            inner.append(0.5 * (sc[b - 1] + sc[b]))
        else:
            inner.append(sc[min(b, n - 1)])
    edges = np.concatenate([[0.0], inner, [1.0]])
    return idx, edges


def _bin_stats(conf, correct, idx, B):
    count = np.bincount(idx, minlength=B)
    sconf = np.bincount(idx, weights=conf, minlength=B)
    sacc = np.bincount(idx, weights=correct, minlength=B)
    with np.errstate(invalid="ignore", divide="ignore"):
        mconf = np.where(count > 0, sconf / np.maximum(count, 1), np.nan)
        macc = np.where(count > 0, sacc / np.maximum(count, 1), np.nan)
    gap = np.abs(mconf - macc)
    ece = float(np.sum(np.where(count > 0, count * np.nan_to_num(gap), 0.0)) / conf.size)
    return ece, count, mconf, macc, gap


def ece_binned(confidences, correct, B: int = 15, scheme: str = "equal_width"):
    """Expected calibration error over ``B`` bins.

    Empty bins contribute nothing.

    Returns
    -------
    (float, ReliabilityBins)
    """
    conf, corr = _check_binning(confidences, correct, B)
    if scheme == "equal_width":
        idx = equal_width_assign(conf, B)
        edges = np.linspace(0.0, 1.0, B + 1)
    elif scheme == "equal_mass":
        idx, edges = equal_mass_assign(conf, B)
    else:
        raise InputError(f"unknown binning scheme {scheme!r}")
    ece, count, mconf, macc, gap = _bin_stats(conf, corr, idx, B)
    return ece, ReliabilityBins(edges, count, mconf, macc, gap, scheme)


def _stable_mean(values) -> float:
    # Shifted mean: exact whenever all values are identical.
    v = np.asarray(values, dtype=np.float64)
    return float(v[0] + np.mean(v - v[0]))


def draw_label_table(pi, S: int, seed: int) -> np.ndarray:
    """``(S, n)`` labels sampled from each row of ``pi``.

    Draw ``s`` uses its own stream seeded by ``(seed, s)``, so any subset of
    draws can be regenerated independently of the others.
    """
    if S < 1:
        raise InputError("S must be >= 1")
    pi = np.asarray(pi, dtype=np.float64)
    cdf = np.cumsum(pi, axis=1)
    total = cdf[:, -1]
    out = np.empty((S, pi.shape[0]), dtype=np.int64)
    for s in range(S):
        # Scaling by the row total keeps zero-mass classes unreachable.
        u = np.random.default_rng([seed, s]).random(pi.shape[0]) * total
        out[s] = (u[:, None] < cdf).argmax(axis=1)
    return out


def _prepare(probs, pi):
    probs = as_distribution(probs)
    pi = as_distribution(pi)
    if probs.ndim != 2 or probs.shape != pi.shape:
        raise InputError("probs and pi must both have shape (n, K)")
    return probs, pi


def ece_true_from_table(probs, table, B=15, scheme="equal_width") -> float:
    pred = np.argmax(probs, axis=1)
    conf = probs.max(axis=1)
    return _stable_mean([ece_binned(conf, pred == y, B, scheme)[0] for y in table])


def cwece_from_table(probs, table, B=15) -> float:
    K = probs.shape[1]
    per_draw = []
    for y in table:
        per_class = [ece_binned(probs[:, k], y == k, B, "equal_width")[0] for k in range(K)]
        per_draw.append(_stable_mean(per_class))
    return _stable_mean(per_draw)


def ece_true(probs, pi, S: int = 100, seed: int = 0, B: int = 15, scheme: str = "equal_width") -> float:
    """Mean ECE over ``S`` label draws from the annotator distributions."""
    probs, pi = _prepare(probs, pi)
    return ece_true_from_table(probs, draw_label_table(pi, S, seed), B, scheme)


def cwece_true(probs, pi, S: int = 100, seed: int = 0, B: int = 15) -> float:
    """Classwise ECE averaged over classes, then over label draws."""
    probs, pi = _prepare(probs, pi)
    return cwece_from_table(probs, draw_label_table(pi, S, seed), B)


def true_reliability(probs, table, B=15) -> ReliabilityBins:
    """Equal-width reliability bins with accuracy averaged over the label draws."""
    pred = np.argmax(probs, axis=1)
    conf = probs.max(axis=1)
    idx = equal_width_assign(conf, B)
    acc = (table == pred[None, :]).mean(axis=0)
    _, count, mconf, macc, gap = _bin_stats(conf, acc, idx, B)
    return ReliabilityBins(np.linspace(0.0, 1.0, B + 1), count, mconf, macc, gap, "equal_width")


def brier_soft(probs, pi):
    """Per-example squared distance ``||p - pi||^2``."""
    d = np.asarray(probs, dtype=np.float64) - np.asarray(pi, dtype=np.float64)
    out = (d * d).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def nll_soft(probs, pi):
    """Per-example cross-entropy ``-sum_k pi_k log p_k`` (probabilities floored)."""
    out = cross_entropy(pi, probs)
    return float(out) if np.ndim(out) == 0 else out


def pointwise_true_error(probs, pi):
    """``|p_c - pi_c|`` where ``c`` is the model's predicted class."""
    probs = np.asarray(probs, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    c = np.argmax(probs, axis=-1)
    if probs.ndim == 1:
        return float(abs(probs[c] - pi[c]))
    rows = np.arange(probs.shape[0])
    return np.abs(probs[rows, c] - pi[rows, c])


def entropy_profile(probs, pi, n_bins: int = 10):
    """Pointwise true-label error grouped by normalised annotation entropy.

    Bins are equal-frequency on ``H(pi) / log K`` (quantile edges; tied
    edges collapse, so fully tied data yields a single bin).

    Returns
    -------
    list of (bin_center, mean_error, std_error, count)
    """
    probs, pi = _prepare(probs, pi)
    if n_bins < 2:
        raise InputError("n_bins must be >= 2")
    n, K = probs.shape
    if n < n_bins:
        raise InputError("fewer examples than entropy bins")
    h = np.asarray(entropy(pi)) / math.log(K)
    err = pointwise_true_error(probs, pi)
    edges = np.unique(np.quantile(h, np.linspace(0.0, 1.0, n_bins + 1)))
    if edges.size == 1:
        idx = np.zeros(n, dtype=np.int64)
        nb = 1
    else:
        nb = edges.size - 1
        idx = np.clip(np.searchsorted(edges, h, side="right") - 1, 0, nb - 1)
    rows = []
    for b in range(nb):
        mask = idx == b
        cnt = int(mask.sum())
        if cnt == 0:
            continue
        e = err[mask]
        se = float(e.std(ddof=1) / math.sqrt(cnt)) if cnt > 1 else 0.0
        rows.append((float(h[mask].mean()), float(e.mean()), se, cnt))
    return rows


def evaluate(probs, pi, voted, S: int = 100, seed: int = 0, B: int = 15, T_fitted=None, table=None) -> MetricsReport:
    """All metrics for one prediction set, sharing one label-draw table."""
    probs, pi = _prepare(probs, pi)
    if table is None:
        table = draw_label_table(pi, S, seed)
    pred = np.argmax(probs, axis=1)
    conf = probs.max(axis=1)
    ece_v, _ = ece_binned(conf, pred == np.asarray(voted), B, "equal_width")
    return MetricsReport(
        ece_true=ece_true_from_table(probs, table, B, "equal_width"),
        aece_true=ece_true_from_table(probs, table, B, "equal_mass"),
        cwece_true=cwece_from_table(probs, table, B),
        ece_voted=ece_v,
        brier_soft=float(np.mean(brier_soft(probs, pi))),
        nll_soft=float(np.mean(nll_soft(probs, pi))),
        reliability=true_reliability(probs, table, B),
        mc_S=int(table.shape[0]),
        mc_seed=int(seed),
        bins=int(B),
        T_fitted=None if T_fitted is None else float(T_fitted),
    )


__all__ = [
    "PROB_FLOOR",
    "ReliabilityBins",
    "MetricsReport",
    "ece_binned",
    "ece_true",
    "cwece_true",
    "brier_soft",
    "nll_soft",
    "pointwise_true_error",
    "entropy_profile",
    "evaluate",
    "draw_label_table",
]
