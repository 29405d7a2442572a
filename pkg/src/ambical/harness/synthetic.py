"""Synthetic logit datasets with a known temperature mis-scaling."""

from __future__ import annotations

import numpy as np

from ..core import LogitDataset, softmax
from ..errors import InputError


def temperature_dataset(n: int = 10000, K: int = 10, T_star: float = 2.5, scale: float = 3.0, m: int | None = None, seed: int = 0):
    """Logits ``scale * N(0, 1)`` whose annotator distribution is ``softmax(z / T_star)``.

    With ``m`` set, ``m`` annotations per example are drawn from that
    distribution and ``pi`` becomes their empirical frequencies; otherwise
    ``pi`` is the exact distribution and no annotations are stored.
    """
    if n < 1 or K < 2 or T_star <= 0:
        raise InputError("need n >= 1, K >= 2 and T_star > 0")
    rng = np.random.default_rng([seed, 0])
    z = scale * rng.standard_normal((n, K))
    pi = softmax(z / T_star)
    ids = [f"s{i:06d}" for i in range(n)]
    if m is None:
        return LogitDataset(z, pi, ids)
    arng = np.random.default_rng([seed, 1])
    cdf = np.cumsum(pi, axis=1)
    u = arng.random((n, m)) * cdf[:, -1:]
    ann = np.minimum((u[:, :, None] >= cdf[:, None, :]).sum(axis=2), K - 1)
    return LogitDataset(z, pi, ids).with_annotations(list(ann.astype(np.int64)))
