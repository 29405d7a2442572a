"""Seeded, stratified calibration/test splits and nested subsampling."""

from __future__ import annotations

import math

import numpy as np

from ..errors import InputError, SplitError


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_stratified(labels, cal_fraction: float, seed: int, stratify: bool = True):
    """Partition example indices into calibration and test sets.

    Within each voted class the indices are shuffled with one seeded stream
    and ``round_half_up(cal_fraction * n_k)`` go to calibration.  Both
    returned index arrays are sorted, so subsets keep the dataset order.

    Raises
    ------
    SplitError
        If a class has fewer than two examples (stratified mode only).
    """
    if not 0 < cal_fraction < 1:
        raise InputError("cal_fraction must lie in (0, 1)")
    y = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    if not stratify:
        perm = rng.permutation(y.size)
        n_cal = round_half_up(cal_fraction * y.size)
        return np.sort(perm[:n_cal]), np.sort(perm[n_cal:])
    cal, test = [], []
    for k in np.unique(y):
        idx = np.flatnonzero(y == k)
        if idx.size < 2:
            raise SplitError(f"class {int(k)} has fewer than 2 examples; cannot stratify")
        idx = idx[rng.permutation(idx.size)]
        n_cal = round_half_up(cal_fraction * idx.size)
        cal.append(idx[:n_cal])
        test.append(idx[n_cal:])
    return np.sort(np.concatenate(cal)), np.sort(np.concatenate(test))


def nested_subsample(labels, fractions, seed: int):
    """Stratified subsets for each fraction, smaller ones contained in larger.

    One permutation per class is drawn and each fraction keeps its prefix;
    the result maps fraction -> sorted positions into ``labels``.
    """
    y = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    perms = {int(k): np.flatnonzero(y == k)[rng.permutation(int((y == k).sum()))] for k in np.unique(y)}
    out = {}
    for f in fractions:
        if not 0 < f <= 1:
            raise InputError("subsample fractions must lie in (0, 1]")
        keep = [p[: max(1, round_half_up(f * p.size))] for p in perms.values()]
        out[f] = np.sort(np.concatenate(keep))
    return out
