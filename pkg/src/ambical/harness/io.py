"""Line-delimited JSON dataset format.

The first line is a header ``{"version": 1, "K": K, "class_names": [...]}``;
each following line is one record
``{"id": str, "logits": [K floats], "annotations": [ints]?, "pi": [K floats]?}``.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from ..core import SIMPLEX_ATOL, LogitDataset, empirical_distribution
from ..errors import InputError, LoadError

DATASET_FORMAT_VERSION = 1
_RECORD_KEYS = {"id", "logits", "annotations", "pi"}


def _parse_record(obj, K, lineno):
    if not isinstance(obj, dict):
        raise LoadError("record must be a JSON object", line=lineno)
    unknown = set(obj) - _RECORD_KEYS
    if unknown:
        raise LoadError(f"unknown record fields {sorted(unknown)}", line=lineno)
    rid = obj.get("id")
    if not isinstance(rid, str) or not rid:
        raise LoadError("record needs a non-empty string id", line=lineno)
    logits = obj.get("logits")
    if not isinstance(logits, list) or len(logits) != K:
        raise LoadError(f"record {rid!r}: logits must be a list of length K={K}", line=lineno, record_id=rid)
    try:
        z = np.array(logits, dtype=np.float64)
    except (TypeError, ValueError):
        raise LoadError(f"record {rid!r}: logits must be numbers", line=lineno, record_id=rid) from None
    if not np.all(np.isfinite(z)):
        raise LoadError(f"record {rid!r}: logits must be finite", line=lineno, record_id=rid)

    ann = obj.get("annotations")
    pi = obj.get("pi")
    if ann is None and pi is None:
        raise LoadError(f"record {rid!r}: needs annotations or pi", line=lineno, record_id=rid)
    a = None
    if ann is not None:
        if not isinstance(ann, list) or not ann or not all(isinstance(v, int) and not isinstance(v, bool) for v in ann):
            raise LoadError(f"record {rid!r}: annotations must be a non-empty list of ints", line=lineno, record_id=rid)
        a = np.array(ann, dtype=np.int64)
        try:
            emp = empirical_distribution(a, K)
        except InputError as exc:
            raise LoadError(f"record {rid!r}: {exc}", line=lineno, record_id=rid) from None
    if pi is not None:
        if not isinstance(pi, list) or len(pi) != K:
            raise LoadError(f"record {rid!r}: pi must be a list of length K={K}", line=lineno, record_id=rid)
        try:
            p = np.array(pi, dtype=np.float64)
        except (TypeError, ValueError):
            raise LoadError(f"record {rid!r}: pi must be numbers", line=lineno, record_id=rid) from None
        if not np.all(np.isfinite(p)) or np.any(p < 0) or abs(p.sum() - 1.0) > SIMPLEX_ATOL:
            raise LoadError(f"record {rid!r}: pi is not a distribution", line=lineno, record_id=rid)
        if a is not None and np.max(np.abs(p - emp)) > SIMPLEX_ATOL:
            raise LoadError(f"record {rid!r}: pi disagrees with the annotation frequencies", line=lineno, record_id=rid)
    else:
        p = emp
    return rid, z, a, (emp if a is not None else p)


def read_dataset_lines(lines) -> LogitDataset:
    it = iter(lines)
    header = None
    lineno = 0
    for raw in it:
        lineno += 1
        if raw.strip():
            header = raw
            break
    if header is None:
        raise LoadError("file is empty", line=lineno)
    try:
        head = json.loads(header)
    except json.JSONDecodeError as exc:
        raise LoadError(f"header is not valid JSON: {exc.msg}", line=lineno) from None
    if not isinstance(head, dict) or head.get("version") != DATASET_FORMAT_VERSION:
        raise LoadError("header must be an object with version 1", line=lineno)
    K = head.get("K")
    if not isinstance(K, int) or K < 2:
        raise LoadError("header K must be an integer >= 2", line=lineno)
    names = head.get("class_names")
    if names is not None and (not isinstance(names, list) or len(names) != K):
        raise LoadError("header class_names must list K names", line=lineno)

    ids, zs, anns, pis = [], [], [], []
    seen = set()
    for raw in it:
        lineno += 1
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise LoadError(f"invalid JSON: {exc.msg}", line=lineno) from None
        rid, z, a, p = _parse_record(obj, K, lineno)
        if rid in seen:
            raise LoadError(f"duplicate record id {rid!r}", line=lineno, record_id=rid)
        seen.add(rid)
        ids.append(rid)
        zs.append(z)
        anns.append(a)
        pis.append(p)
    if not ids:
        raise LoadError("dataset has no records", line=lineno)
    return LogitDataset(
        logits=np.stack(zs),
        pi=np.stack(pis),
        ids=ids,
        annotations=anns if any(a is not None for a in anns) else None,
        class_names=names,
    )


def load_dataset(path) -> LogitDataset:
    """Read and validate a dataset file.

    ``pi`` is derived from the annotations when absent, and voted labels are
    recomputed; any violation raises :class:`LoadError` with its line number.
    """
    with open(path) as fh:
        return read_dataset_lines(fh)


def dataset_lines(ds: LogitDataset, write_pi: bool = True):
    head = {"version": DATASET_FORMAT_VERSION, "K": ds.K}
    if ds.class_names is not None:
        head["class_names"] = list(ds.class_names)
    yield json.dumps(head)
    for i in range(ds.n):
        rec = {"id": ds.ids[i], "logits": ds.logits[i].tolist()}
        ann = None if ds.annotations is None else ds.annotations[i]
        if ann is not None:
            rec["annotations"] = [int(v) for v in ann]
        if ann is None or write_pi:
            rec["pi"] = ds.pi[i].tolist()
        yield json.dumps(rec)


def save_dataset(ds: LogitDataset, path, write_pi: bool = False) -> None:
    """Write ``ds``; ``pi`` is only written for records without annotations
    unless ``write_pi`` is set."""
    with open(path, "w") as fh:
        for line in dataset_lines(ds, write_pi=write_pi):
            fh.write(line + "\n")


def dataset_digest(ds: LogitDataset) -> str:
    """Content hash independent of file formatting."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.logits, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(ds.pi, dtype="<f8").tobytes())
    h.update("\x00".join(ds.ids).encode())
    if ds.annotations is not None:
        for a in ds.annotations:
            h.update(b"-" if a is None else np.asarray(a, dtype="<i8").tobytes() + b"|")
    return h.hexdigest()
