"""Class-conditional (Dawid-Skene style) synthetic annotators."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InputError, LoadError

CONFUSION_FORMAT_VERSION = 1

ISIC_CLASSES = ("MEL", "NV", "BCC", "AK", "BKL", "DF", "VL", "SCC")
# Row = consensus class, column = annotator's label.
ISIC_ROWS = (
    (0.73, 0.14, 0.02, 0.03, 0.08, 0.00, 0.00, 0.00),
    (0.15, 0.76, 0.01, 0.01, 0.06, 0.01, 0.00, 0.00),
    (0.02, 0.01, 0.81, 0.05, 0.07, 0.01, 0.01, 0.02),
    (0.03, 0.01, 0.04, 0.65, 0.11, 0.00, 0.00, 0.16),
    (0.12, 0.05, 0.03, 0.10, 0.62, 0.00, 0.00, 0.08),
    (0.01, 0.02, 0.02, 0.01, 0.02, 0.87, 0.03, 0.02),
    (0.00, 0.01, 0.02, 0.01, 0.01, 0.02, 0.91, 0.02),
    (0.01, 0.01, 0.03, 0.18, 0.09, 0.00, 0.01, 0.67),
)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Row-stochastic ``K x K`` annotator model.

    ``rows[i, j]`` is the probability that an annotator reports class ``j``
    for an example whose consensus class is ``i``.
    """

    rows: np.ndarray
    class_names: tuple

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] != rows.shape[1] or rows.shape[0] < 2:
            raise InputError("confusion matrix must be square with K >= 2")
        if np.any(rows < 0) or not np.all(np.isfinite(rows)):
            raise InputError("confusion matrix entries must be finite and non-negative")
        if np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-9):
            raise InputError("every confusion-matrix row must sum to 1")
        names = tuple(self.class_names) if self.class_names else tuple(str(k) for k in range(rows.shape[0]))
        if len(names) != rows.shape[0]:
            raise InputError("class_names length does not match K")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "class_names", names)

    @property
    def K(self) -> int:
        return self.rows.shape[0]

    def entry(self, true_name: str, reported_name: str) -> float:
        return float(self.rows[self.class_names.index(true_name), self.class_names.index(reported_name)])

    def to_dict(self) -> dict:
        return {
            "version": CONFUSION_FORMAT_VERSION,
            "K": self.K,
            "class_names": list(self.class_names),
            "rows": self.rows.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ConfusionMatrix":
        if doc.get("version") != CONFUSION_FORMAT_VERSION:
            raise LoadError(f"unsupported confusion-matrix version {doc.get('version')!r}")
        try:
            cm = cls(np.asarray(doc["rows"], dtype=np.float64), tuple(doc.get("class_names") or ()))
        except KeyError as exc:
            raise LoadError(f"confusion matrix is missing field {exc}") from exc
        except InputError as exc:
            raise LoadError(str(exc)) from exc
        if int(doc.get("K", cm.K)) != cm.K:
            raise LoadError("header K does not match the matrix size")
        return cm


def isic_confusion() -> ConfusionMatrix:
    """The 8-class dermatology inter-reader matrix shipped as a preset."""
    return ConfusionMatrix(np.array(ISIC_ROWS), ISIC_CLASSES)


def load_confusion(path) -> ConfusionMatrix:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise LoadError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    return ConfusionMatrix.from_dict(doc)


def save_confusion(cm: ConfusionMatrix, path) -> None:
    with open(path, "w") as fh:
        json.dump(cm.to_dict(), fh, indent=2)
        fh.write("\n")


def sample_annotations(consensus, C: ConfusionMatrix, m: int = 9, seed: int = 0, nested: bool = False):
    """Draw ``m`` i.i.d. annotations per example from its consensus row.

    Each example ``i`` owns a random stream.  With ``nested=True`` the stream
    is keyed by ``(seed, i)`` only, so the draws for a smaller ``m`` are a
    prefix of those for a larger ``m``; by default it is keyed by
    ``(seed, m, i)`` and every ``m`` gets a fresh sample.

    Returns
    -------
    list of numpy.ndarray
        One integer array of length ``m`` per example.
    """
    if m < 1:
        raise InputError("m must be >= 1")
    y = np.asarray(consensus, dtype=np.int64).ravel()
    if y.size and (y.min() < 0 or y.max() >= C.K):
        raise InputError(f"consensus label out of range [0, {C.K})")
    cdf = np.cumsum(C.rows, axis=1)
    out = []
    for i, yi in enumerate(y):
        key = [seed, i] if nested else [seed, m, i]
        u = np.random.default_rng(key).random(m) * cdf[yi, -1]
        out.append(np.searchsorted(cdf[yi], u, side="right").astype(np.int64))
    return out


def subsample_annotations(a, m_new: int, seed: int = 0) -> np.ndarray:
    """Uniform sample of ``m_new`` annotations without replacement."""
    a = np.asarray(a, dtype=np.int64).ravel()
    if not 1 <= m_new <= a.size:
        raise InputError(f"m_new must lie in [1, {a.size}], got {m_new}")
    rng = np.random.default_rng(seed)
    return a[rng.permutation(a.size)[:m_new]]
