"""Post-hoc calibrators fitted on cached logits.

Every fit returns an immutable :class:`CalibratorModel`; :func:`apply` maps
logits through any fitted model.  The parametric families share one
cross-entropy objective, so the same fit serves the voted-label baselines
(one-hot targets) and the annotator-distribution variants (soft targets).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import as_distribution, as_logits, entropy, log_softmax, one_hot, softmax
from .errors import InputError
from .optim import (
    ScalarMinimizerConfig,
    VectorMinimizerConfig,
    minimize_scalar,
    minimize_vector,
    pava,
)

MODEL_FORMAT_VERSION = 1
KINDS = ("identity", "temperature", "vector_temperature", "diag_affine", "full_affine", "isotonic", "ats")
FITTED_ON = ("none", "voted", "soft", "mc_samples", "pseudo_soft")
TARGET_SOURCES = (
    "annotator",
    "label_smooth_global",
    "label_smooth_fixed",
    "label_smooth_entropy",
    "label_smooth_classwise",
    "one_hot_voted",
    "mc_samples",
)
ATS_FLOOR = 0.1
TOP_MARGIN = 1e-9
# softplus(b) + ATS_FLOOR == 1 gives T = 1 at initialization.
ATS_INIT_BIAS = math.log(math.expm1(1.0 - ATS_FLOOR))

PLATT_CONFIG = VectorMinimizerConfig(learning_rate=0.01, weight_decay=1e-4, steps=2000)
VS_CONFIG = VectorMinimizerConfig(learning_rate=0.05, weight_decay=1e-4, steps=2000)
ATS_CONFIG = VectorMinimizerConfig(learning_rate=0.01, weight_decay=0.0, steps=2000)


@dataclass(frozen=True)
class SoftTargetSet:
    targets: np.ndarray
    source: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source not in TARGET_SOURCES:
            raise InputError(f"unknown target source {self.source!r}")
        object.__setattr__(self, "targets", as_distribution(self.targets))

    @property
    def fitted_on(self) -> str:
        if self.source == "one_hot_voted":
            return "voted"
        if self.source == "annotator":
            return "soft"
        if self.source == "mc_samples":
            return "mc_samples"
        return "pseudo_soft"

    @classmethod
    def voted(cls, labels, K: int) -> "SoftTargetSet":
        return cls(one_hot(labels, K), "one_hot_voted")

    @classmethod
    def annotator(cls, pi) -> "SoftTargetSet":
        return cls(pi, "annotator")


@dataclass(frozen=True)
class CalibratorModel:
    kind: str
    K: int
    params: dict
    fitted_on: str = "none"
    config_digest: str = ""
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown calibrator kind {self.kind!r}")
        if self.fitted_on not in FITTED_ON:
            raise InputError(f"unknown target kind {self.fitted_on!r}")
        p = self.params
        if self.kind == "temperature" and not p["T"] > 0:
            raise InputError("temperature must be positive")
        if self.kind == "vector_temperature" and not np.all(np.asarray(p["T"]) > 0):
            raise InputError("per-class temperatures must be positive")
        if self.kind == "isotonic":
            th, vals = np.asarray(p["thresholds"]), np.asarray(p["values"])
            if th.shape != vals.shape or np.any(np.diff(th) < 0) or np.any(np.diff(vals) < 0):
                raise InputError("isotonic map must have sorted thresholds and non-decreasing values")

    @property
    def temperature(self) -> Optional[float]:
        return float(self.params["T"]) if self.kind == "temperature" else None


def identity_model(K: int) -> CalibratorModel:
    return CalibratorModel("identity", K, {})


def _aligned(logits, targets: SoftTargetSet):
    z = as_logits(logits)
    if z.ndim != 2 or z.shape[0] == 0:
        raise InputError("logits must be a non-empty (n, K) array")
    if targets.targets.shape != z.shape:
        raise InputError("targets are not aligned with logits")
    return z, targets.targets


# -- temperature family ------------------------------------------------------


def temperature_loss(T: float, z: np.ndarray, t: np.ndarray) -> float:
    """Mean cross-entropy of ``softmax(z / T)`` against targets ``t``."""
    return float(-(t * log_softmax(z / T)).sum(axis=1).mean())


def temperature_loss_grad(T: float, z: np.ndarray, t: np.ndarray) -> float:
    s = softmax(z / T)
    dbeta = ((s - t) * z).sum(axis=1).mean()
    return float(-dbeta / (T * T))


def fit_temperature(logits, targets: SoftTargetSet, cfg: ScalarMinimizerConfig = ScalarMinimizerConfig()):
    """Single-temperature fit against one-hot, annotator or pseudo-soft targets.

    With voted one-hot targets this is classical temperature scaling; with
    annotator distributions it is the soft-label variant; with smoothed
    voted labels it is the annotation-free variant.
    """
    z, t = _aligned(logits, targets)
    T, loss = minimize_scalar(lambda T: temperature_loss(T, z, t), cfg)
    diag = {"loss": loss, **targets.diagnostics}
    return CalibratorModel("temperature", z.shape[1], {"T": T}, targets.fitted_on, diagnostics=diag)


def draw_mc_targets(annotations, K: int, S: int, seed: int) -> SoftTargetSet:
    """Resample ``S`` annotations per example (with replacement) as count targets."""
    if S < 1:
        raise InputError("S must be >= 1")
    if annotations is None or any(a is None or len(a) == 0 for a in annotations):
        raise InputError("Monte Carlo fitting needs raw annotations for every example")
    n = len(annotations)
    m = np.array([len(a) for a in annotations])
    pool = np.zeros((n, m.max()), dtype=np.int64)
    for i, a in enumerate(annotations):
        pool[i, : len(a)] = a
    rng = np.random.default_rng(seed)
    pick = np.floor(rng.random((n, S)) * m[:, None]).astype(np.int64)
    drawn = np.take_along_axis(pool, pick, axis=1)
    counts = np.zeros((n, K))
    np.add.at(counts, (np.repeat(np.arange(n), S), drawn.ravel()), 1.0)
    return SoftTargetSet(counts / S, "mc_samples", {"S": S, "seed": seed})


def fit_mcts(logits, annotations, S: int = 1, seed: int = 0, cfg: ScalarMinimizerConfig = ScalarMinimizerConfig()):
    """Temperature fit on ``S`` sampled annotations per example.

    The mean one-hot cross-entropy over the ``n * S`` pseudo-labelled
    instances equals the cross-entropy against each example's sample
    frequencies, which is what gets minimized.
    """
    z = as_logits(logits)
    targets = draw_mc_targets(annotations, z.shape[1], S, seed)
    return fit_temperature(z, targets, cfg)


def make_lsts_targets(logits, voted_labels, variant: str = "global", eps: float = 0.1) -> SoftTargetSet:
    """Smoothed voted-label pseudo-targets ``(1 - e) * onehot + (e / K) * 1``.

    Parameters
    ----------
    logits : array-like, shape (n, K)
        Uncalibrated logits; the smoothing weight is derived from their softmax.
    voted_labels : array-like, shape (n,)
    variant : {"global", "fixed", "entropy", "classwise"}
        ``global`` uses the mean complement of voted-class confidence;
        ``fixed`` uses ``eps``; ``entropy`` uses each example's normalised
        prediction entropy; ``classwise`` averages the complement within each
        voted class (empty classes fall back to the global value).
    """
    z = as_logits(logits)
    n, K = z.shape
    y = np.asarray(voted_labels, dtype=np.int64)
    if y.shape != (n,):
        raise InputError("voted labels are not aligned with logits")
    p = softmax(z)
    comp = 1.0 - p[np.arange(n), y]
    eps_bar = float(comp.mean())
    diag = {"variant": variant, "eps_bar": eps_bar}
    if variant == "global":
        e = np.full(n, eps_bar)
        diag["epsilon"] = eps_bar
        source = "label_smooth_global"
    elif variant == "fixed":
        if not 0 <= eps <= 1:
            raise InputError("fixed smoothing weight must lie in [0, 1]")
        e = np.full(n, float(eps))
        diag["epsilon"] = float(eps)
        source = "label_smooth_fixed"
    elif variant == "entropy":
        e = np.clip(np.asarray(entropy(p)) / math.log(K), 0.0, 1.0)
        diag["epsilon_mean"] = float(e.mean())
        diag["epsilon_min"] = float(e.min())
        diag["epsilon_max"] = float(e.max())
        source = "label_smooth_entropy"
    elif variant == "classwise":
        eps_k = np.full(K, eps_bar)
        for k in range(K):
            mask = y == k
            if mask.any():
                eps_k[k] = comp[mask].mean()
        e = eps_k[y]
        diag["epsilon"] = eps_k.tolist()
        source = "label_smooth_classwise"
    else:
        raise InputError(f"unknown smoothing variant {variant!r}")
    targets = (1.0 - e)[:, None] * one_hot(y, K) + (e / K)[:, None]
    return SoftTargetSet(targets, source, diag)


# -- multi-parameter families ------------------------------------------------


def _ce_and_residual(a: np.ndarray, t: np.ndarray):
    logp = log_softmax(a)
    loss = float(-(t * logp).sum(axis=1).mean())
    return loss, np.exp(logp) - t


def diag_affine_loss(x, z, t):
    K = z.shape[1]
    return _ce_and_residual(x[:K] * z + x[K:], t)[0]


def diag_affine_grad(x, z, t):
    K = z.shape[1]
    _, r = _ce_and_residual(x[:K] * z + x[K:], t)
    n = z.shape[0]
    return np.concatenate([(r * z).sum(axis=0) / n, r.sum(axis=0) / n])


def fit_diag_affine(logits, targets: SoftTargetSet, cfg: VectorMinimizerConfig = PLATT_CONFIG):
    """Per-class weight and bias, ``softmax(w * z + b)``."""
    z, t = _aligned(logits, targets)
    K = z.shape[1]
    init = np.concatenate([np.ones(K), np.zeros(K)])
    x = minimize_vector(lambda x: diag_affine_loss(x, z, t), lambda x: diag_affine_grad(x, z, t), init, cfg)
    diag = {"loss": diag_affine_loss(x, z, t), **targets.diagnostics}
    return CalibratorModel("diag_affine", K, {"w": x[:K], "b": x[K:]}, targets.fitted_on, diagnostics=diag)


def vector_scaling_loss(u, z, t):
    return _ce_and_residual(z * np.exp(-u), t)[0]


def vector_scaling_grad(u, z, t):
    a = z * np.exp(-u)
    _, r = _ce_and_residual(a, t)
    return -(r * a).sum(axis=0) / z.shape[0]


def fit_vector_scaling(logits, targets: SoftTargetSet, cfg: VectorMinimizerConfig = VS_CONFIG):
    """Per-class temperatures ``z_k / T_k`` with ``T_k = exp(u_k)``."""
    z, t = _aligned(logits, targets)
    K = z.shape[1]
    u = minimize_vector(lambda u: vector_scaling_loss(u, z, t), lambda u: vector_scaling_grad(u, z, t), np.zeros(K), cfg)
    diag = {"loss": vector_scaling_loss(u, z, t), **targets.diagnostics}
    return CalibratorModel("vector_temperature", K, {"T": np.exp(u)}, targets.fitted_on, diagnostics=diag)


def _unpack_full(x, K):
    return x[: K * K].reshape(K, K), x[K * K :]


def odir_penalty(W, b, lam):
    K = W.shape[0]
    off = W - np.diag(np.diag(W))
    return lam * (float((off**2).sum()) / (K * (K - 1)) + float((b**2).sum()) / K)


def dirichlet_loss(x, z, t, lam):
    K = z.shape[1]
    W, b = _unpack_full(x, K)
    return _ce_and_residual(z @ W.T + b, t)[0] + odir_penalty(W, b, lam)


def dirichlet_grad(x, z, t, lam):
    n, K = z.shape
    W, b = _unpack_full(x, K)
    _, r = _ce_and_residual(z @ W.T + b, t)
    gW = r.T @ z / n
    gb = r.sum(axis=0) / n
    off = W - np.diag(np.diag(W))
    gW = gW + 2.0 * lam * off / (K * (K - 1))
    gb = gb + 2.0 * lam * b / K
    return np.concatenate([gW.ravel(), gb])


def fit_dirichlet(logits, targets: SoftTargetSet, lambda_odir: float = 1e-3, cfg: VectorMinimizerConfig = PLATT_CONFIG):
    """Full affine map ``softmax(W z + b)`` with off-diagonal/intercept regularisation."""
    if lambda_odir < 0:
        raise InputError("lambda_odir must be non-negative")
    z, t = _aligned(logits, targets)
    K = z.shape[1]
    init = np.concatenate([np.eye(K).ravel(), np.zeros(K)])
    x = minimize_vector(
        lambda x: dirichlet_loss(x, z, t, lambda_odir), lambda x: dirichlet_grad(x, z, t, lambda_odir), init, cfg
    )
    W, b = _unpack_full(x, K)
    diag = {"loss": dirichlet_loss(x, z, t, 0.0), "lambda_odir": lambda_odir, **targets.diagnostics}
    return CalibratorModel("full_affine", K, {"W": W.copy(), "b": b.copy()}, targets.fitted_on, diagnostics=diag)


# -- adaptive temperature ----------------------------------------------------


def ats_features(z: np.ndarray) -> np.ndarray:
    """``[max z, H(softmax z) / log K, p(1) - p(2), p(1)]`` per row."""
    K = z.shape[1]
    p = softmax(z)
    top2 = -np.sort(-p, axis=1)[:, :2]
    return np.column_stack([z.max(axis=1), np.asarray(entropy(p)) / math.log(K), top2[:, 0] - top2[:, 1], top2[:, 0]])


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def ats_temperatures(params_w, params_b, z):
    return _softplus(ats_features(z) @ params_w + params_b) + ATS_FLOOR


def ats_loss(x, z, t, lam, phi=None):
    phi = ats_features(z) if phi is None else phi
    T = _softplus(phi @ x[:4] + x[4]) + ATS_FLOOR
    loss, _ = _ce_and_residual(z / T[:, None], t)
    return loss + lam * float(x[:4] @ x[:4])


def ats_grad(x, z, t, lam, phi=None):
    phi = ats_features(z) if phi is None else phi
    eta = phi @ x[:4] + x[4]
    T = _softplus(eta) + ATS_FLOOR
    _, r = _ce_and_residual(z / T[:, None], t)
    dT = -(r * z).sum(axis=1) / (T * T)
    deta = dT * _sigmoid(eta) / z.shape[0]
    return np.concatenate([phi.T @ deta + 2.0 * lam * x[:4], [deta.sum()]])


def fit_ats(logits, voted_labels, lambda_l2: float = 1e-3, cfg: VectorMinimizerConfig = ATS_CONFIG):
    """Per-instance temperature from logit features, trained on voted-label NLL."""
    z = as_logits(logits)
    t = one_hot(voted_labels, z.shape[1])
    if t.shape != z.shape:
        raise InputError("voted labels are not aligned with logits")
    phi = ats_features(z)
    init = np.array([0.0, 0.0, 0.0, 0.0, ATS_INIT_BIAS])
    x = minimize_vector(lambda x: ats_loss(x, z, t, lambda_l2, phi), lambda x: ats_grad(x, z, t, lambda_l2, phi), init, cfg)
    T = ats_temperatures(x[:4], x[4], z)
    diag = {
        "loss": ats_loss(x, z, t, 0.0, phi),
        "lambda_l2": lambda_l2,
        "T_mean": float(T.mean()),
        "T_std": float(T.std()),
    }
    return CalibratorModel("ats", z.shape[1], {"w": x[:4].copy(), "b": float(x[4])}, "voted", diagnostics=diag)


# -- isotonic ----------------------------------------------------------------


def fit_isotonic_soft(confidences, pi_top, K: int = 2):
    """Monotone step map from top-class confidence to annotator mass on that class.

    Equal confidences are pooled into one weighted knot before PAVA, so the
    map is a function of confidence.
    """
    c = np.asarray(confidences, dtype=np.float64).ravel()
    y = np.asarray(pi_top, dtype=np.float64).ravel()
    if c.shape != y.shape:
        raise InputError("confidences and pi_top must be aligned")
    if c.size < 2:
        raise InputError("isotonic fit needs at least two points")
    if np.any((c < 0) | (c > 1)) or np.any((y < 0) | (y > 1)):
        raise InputError("confidences and pi_top must lie in [0, 1]")
    order = np.argsort(c, kind="stable")
    c, y = c[order], y[order]
    knots, start = np.unique(c, return_index=True)
    wts = np.diff(np.append(start, c.size)).astype(np.float64)
    means = np.add.reduceat(y, start) / wts
    vals = pava(means, wts)
    return CalibratorModel("isotonic", K, {"thresholds": knots, "values": vals}, "soft")


def isotonic_map(model: CalibratorModel, conf: np.ndarray) -> np.ndarray:
    th, vals = model.params["thresholds"], model.params["values"]
    idx = np.clip(np.searchsorted(th, conf, side="right") - 1, 0, len(th) - 1)
    return vals[idx]


def replace_top_confidence(p: np.ndarray, new_top: np.ndarray) -> np.ndarray:
    """Set each row's top-class mass and rescale the remaining classes.

    The new top mass is floored at the level where it still equals the
    largest rescaled competitor, so the predicted class never changes.
    """
    p = np.atleast_2d(p)
    n, K = p.shape
    rows = np.arange(n)
    c = np.argmax(p, axis=1)
    top = p[rows, c]
    rest = 1.0 - top
    others = p.copy()
    others[rows, c] = -np.inf
    second = np.maximum(others.max(axis=1), 0.0)
    v = np.clip(np.asarray(new_top, dtype=np.float64), 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        floor = np.where(rest + second > 0, second / (rest + second), 1.0 / K)
    # A small margin keeps the top class strictly ahead, so lowest-index
    # tie-breaking cannot hand the argmax to another class.
    v = np.maximum(v, floor + TOP_MARGIN)
    out = np.empty_like(p)
    degenerate = rest <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(degenerate, 0.0, (1.0 - v) / np.where(degenerate, 1.0, rest))
    out[:] = p * scale[:, None]
    if degenerate.any():
        out[degenerate] = ((1.0 - v[degenerate]) / (K - 1))[:, None]
    out[rows, c] = v
    return out


# -- apply / serialization ---------------------------------------------------


def apply(model: CalibratorModel, z) -> np.ndarray:
    """Calibrated probabilities for logits ``z`` of shape ``(K,)`` or ``(n, K)``."""
    z = as_logits(z)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    if z2.shape[1] != model.K:
        raise InputError(f"model expects K={model.K}, got logits with K={z2.shape[1]}")
    p = model.params
    kind = model.kind
    if kind == "identity":
        out = softmax(z2)
    elif kind == "temperature":
        out = softmax(z2 / p["T"])
    elif kind == "vector_temperature":
        out = softmax(z2 / np.asarray(p["T"]))
    elif kind == "diag_affine":
        out = softmax(np.asarray(p["w"]) * z2 + np.asarray(p["b"]))
    elif kind == "full_affine":
        out = softmax(z2 @ np.asarray(p["W"]).T + np.asarray(p["b"]))
    elif kind == "ats":
        T = ats_temperatures(np.asarray(p["w"]), p["b"], z2)
        out = softmax(z2 / T[:, None])
    elif kind == "isotonic":
        base = softmax(z2)
        out = replace_top_confidence(base, isotonic_map(model, base.max(axis=1)))
    else:  # pragma: no cover - guarded by CalibratorModel
        raise InputError(f"unknown kind {kind!r}")
    return out[0] if single else out


def _hex(x):
    if isinstance(x, np.ndarray):
        return [_hex(v) for v in x.tolist()] if x.ndim > 0 else float(x).hex()
    if isinstance(x, (list, tuple)):
        return [_hex(v) for v in x]
    return float(x).hex()


def _unhex(x):
    if isinstance(x, list):
        return np.array([_unhex(v) for v in x], dtype=np.float64)
    return float.fromhex(x)


def model_to_dict(model: CalibratorModel) -> dict:
    """JSON-ready document; floats are hex-encoded so round trips are exact."""
    return {
        "version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "K": model.K,
        "params": {k: _hex(v) for k, v in sorted(model.params.items())},
        "fitted_on": model.fitted_on,
        "config_digest": model.config_digest,
        "diagnostics": _json_diagnostics(model.diagnostics),
    }


def _json_diagnostics(diag: dict) -> dict:
    """Keep the scalar (and flat numeric list) diagnostics of a fit."""
    out = {}
    for k, v in sorted(diag.items()):
        if isinstance(v, np.generic):
            v = v.item()
        if isinstance(v, (bool, int, float, str)) and not (isinstance(v, float) and not math.isfinite(v)):
            out[k] = v
        elif isinstance(v, (list, tuple, np.ndarray)) and np.ndim(v) == 1 and np.all(np.isfinite(v)):
            out[k] = [float(x) for x in v]
    return out


def model_from_dict(doc: dict) -> CalibratorModel:
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise InputError(f"unsupported model version {doc.get('version')!r}")
    try:
        params = {k: _unhex(v) for k, v in doc["params"].items()}
        diag = dict(doc.get("diagnostics") or {})
        return CalibratorModel(doc["kind"], int(doc["K"]), params, doc["fitted_on"], doc.get("config_digest", ""), diag)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed model document: {exc}") from exc


def save_model(model: CalibratorModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> CalibratorModel:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"model file is not valid JSON (line {exc.lineno}): {exc.msg}") from None
    if not isinstance(doc, dict):
        raise InputError("model file must hold a JSON object")
    return model_from_dict(doc)
