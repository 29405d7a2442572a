"""Probability and label primitives shared by the calibrators, metrics and harness.

Distributions are plain float64 numpy arrays whose last axis is the class
axis, so every function here accepts a single vector of shape ``(K,)`` or a
batch of shape ``(n, K)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, InputError

PROB_FLOOR = 1e-12
SIMPLEX_ATOL = 1e-9
INF = math.inf


def as_distribution(p, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Validate ``p`` as one or more points on the probability simplex."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 0 or p.shape[-1] < 2:
        raise InputError("a distribution needs at least two classes")
    if not np.all(np.isfinite(p)):
        raise InputError("distribution contains non-finite entries")
    if np.any(p < 0):
        raise InputError("distribution contains negative entries")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > atol):
        raise InputError("distribution entries do not sum to 1")
    return p


def as_logits(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0 or z.shape[-1] < 2:
        raise InputError("logit vectors need at least two classes")
    if not np.all(np.isfinite(z)):
        raise InputError("logits contain non-finite entries")
    return z


def softmax(a: np.ndarray) -> np.ndarray:
    """Row softmax with max subtraction; no validation (hot path)."""
    a = a - a.max(axis=-1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(a: np.ndarray) -> np.ndarray:
    a = a - a.max(axis=-1, keepdims=True)
    return a - np.log(np.exp(a).sum(axis=-1, keepdims=True))


def softmax_t(z, T: float) -> np.ndarray:
    """Tempered softmax ``softmax(z / T)``.

    Parameters
    ----------
    z : array-like, shape (K,) or (n, K)
        Finite logits.
    T : float
        Temperature, strictly positive.

    Returns
    -------
    numpy.ndarray
        Probabilities with the same shape as ``z``.
    """
    if not (T > 0) or not math.isfinite(T):
        raise DomainError(f"temperature must be positive and finite, got {T!r}")
    return softmax(as_logits(z) / T)


def empirical_distribution(labels, K: int) -> np.ndarray:
    """Frequency vector of annotation labels over ``K`` classes."""
    if K < 2:
        raise InputError("K must be at least 2")
    a = np.asarray(labels)
    if a.ndim != 1 or a.size == 0:
        raise InputError("annotation set must be a non-empty 1-D sequence")
    if not np.issubdtype(a.dtype, np.integer):
        if not np.all(np.equal(np.mod(a, 1), 0)):
            raise InputError("annotation labels must be integers")
        a = a.astype(np.int64)
    if a.min() < 0 or a.max() >= K:
        raise InputError(f"annotation label out of range [0, {K})")
    return np.bincount(a, minlength=K).astype(np.float64) / a.size


def voted_label(pi) -> np.ndarray | int:
    """Argmax with ties broken by the lowest class index.

    ``np.argmax`` already returns the first maximal index, which is the
    tie-break rule used throughout the package.
    """
    pi = np.asarray(pi, dtype=np.float64)
    out = np.argmax(pi, axis=-1)
    return int(out) if out.ndim == 0 else out


def entropy(p) -> np.ndarray | float:
    """Shannon entropy in nats, with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = terms.sum(axis=-1)
    return float(h) if np.ndim(h) == 0 else h


def kl_divergence(p, q) -> np.ndarray | float:
    """KL(p || q) in nats; ``math.inf`` where q has no mass under p's support."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    support = p > 0
    violated = np.any(support & (q <= 0), axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(support, p / np.where(q > 0, q, 1.0), 1.0)
        terms = np.where(support, p * np.log(ratio), 0.0)
    kl = np.maximum(terms.sum(axis=-1), 0.0)
    kl = np.where(violated, INF, kl)
    return float(kl) if np.ndim(kl) == 0 else kl


def cross_entropy(targets, probs) -> np.ndarray:
    """Per-row ``-sum_k t_k log p_k`` with the probability floor applied."""
    logp = np.log(np.maximum(np.asarray(probs, dtype=np.float64), PROB_FLOOR))
    return -(np.asarray(targets, dtype=np.float64) * logp).sum(axis=-1)


def one_hot(labels, K: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(labels.shape + (K,), dtype=np.float64)
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


@dataclass(frozen=True)
class LabeledExample:
    id: str
    logits: np.ndarray
    voted_label: int
    annotations: Optional[np.ndarray] = None
    pi_hat: Optional[np.ndarray] = None


@dataclass
class LogitDataset:
    """Cached logits with annotator supervision.

    ``pi`` always holds the empirical annotator distribution (derived from
    the annotations when only those were supplied); ``annotations`` is
    ``None`` for datasets that ship pre-aggregated distributions, and
    individual entries may be ``None`` for mixed datasets.
    """

    logits: np.ndarray
    pi: np.ndarray
    ids: list[str]
    annotations: Optional[list[Optional[np.ndarray]]] = None
    class_names: Optional[list[str]] = None
    voted: np.ndarray = field(init=False)

    def __post_init__(self):
        self.logits = as_logits(self.logits)
        self.pi = as_distribution(self.pi)
        if self.logits.ndim != 2 or self.logits.shape != self.pi.shape:
            raise InputError("logits and pi must both have shape (n, K)")
        if self.logits.shape[0] == 0:
            raise InputError("dataset is empty")
        if len(self.ids) != self.n:
            raise InputError("ids length does not match the number of examples")
        if self.annotations is not None and len(self.annotations) != self.n:
            raise InputError("annotations length does not match the number of examples")
        if self.class_names is not None and len(self.class_names) != self.K:
            raise InputError("class_names length does not match K")
        self.voted = np.argmax(self.pi, axis=1)

    @property
    def n(self) -> int:
        return self.logits.shape[0]

    @property
    def K(self) -> int:
        return self.logits.shape[1]

    @property
    def has_annotations(self) -> bool:
        return self.annotations is not None and all(a is not None for a in self.annotations)

    def example(self, i: int) -> LabeledExample:
        ann = None if self.annotations is None else self.annotations[i]
        return LabeledExample(self.ids[i], self.logits[i], int(self.voted[i]), ann, self.pi[i])

    def subset(self, idx: Sequence[int]) -> "LogitDataset":
        idx = np.asarray(idx, dtype=np.int64)
        ann = None if self.annotations is None else [self.annotations[i] for i in idx]
        return LogitDataset(
            logits=self.logits[idx],
            pi=self.pi[idx],
            ids=[self.ids[i] for i in idx],
            annotations=ann,
            class_names=self.class_names,
        )

    def with_annotations(self, annotations: list[np.ndarray]) -> "LogitDataset":
        """Copy of the dataset whose ``pi`` is recomputed from ``annotations``."""
        pi = np.stack([empirical_distribution(a, self.K) for a in annotations])
        return LogitDataset(self.logits, pi, list(self.ids), list(annotations), self.class_names)

    @classmethod
    def from_examples(cls, examples: Sequence[LabeledExample], class_names=None) -> "LogitDataset":
        if not examples:
            raise InputError("dataset is empty")
        K = len(examples[0].logits)
        pis, anns = [], []
        for ex in examples:
            if ex.annotations is None and ex.pi_hat is None:
                raise InputError(f"example {ex.id!r} has neither annotations nor pi")
            pi = ex.pi_hat
            if ex.annotations is not None:
                emp = empirical_distribution(ex.annotations, K)
                if pi is not None and np.max(np.abs(np.asarray(pi) - emp)) > SIMPLEX_ATOL:
                    raise InputError(f"example {ex.id!r}: pi disagrees with its annotations")
                pi = emp
            pis.append(pi)
            anns.append(None if ex.annotations is None else np.asarray(ex.annotations, dtype=np.int64))
        has_any = any(a is not None for a in anns)
        return cls(
            logits=np.stack([np.asarray(ex.logits, dtype=np.float64) for ex in examples]),
            pi=np.stack(pis),
            ids=[ex.id for ex in examples],
            annotations=anns if has_any else None,
            class_names=class_names,
        )
