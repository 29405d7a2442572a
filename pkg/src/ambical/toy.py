"""Three-cluster 2-D toy problem with one ambiguous cluster.

A small tanh MLP is trained on voted labels; voted-label calibrators are
then compared with the annotator-distribution fit, overall and per cluster.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import metrics
from .calibrators import (
    SoftTargetSet,
    apply,
    fit_diag_affine,
    fit_temperature,
    identity_model,
    replace_top_confidence,
)
from .core import log_softmax, one_hot, softmax
from .errors import InputError, TrainingError

CLUSTERS = (
    # (mean, variances, annotator distribution)
    ((-3.2, 1.1), (0.60, 0.45), (1.0, 0.0, 0.0)),
    ((0.0, 0.0), (1.15, 0.75), (0.0, 0.70, 0.30)),
    ((3.2, -1.1), (0.60, 0.45), (0.0, 0.0, 1.0)),
)
AMBIGUOUS_CLUSTER = 1


@dataclass(frozen=True)
class ToyConfig:
    n_per_cluster: int = 2000
    data_seed: int = 0
    label_seed: int = 0
    training_seed: int = 0
    hidden: int = 64
    layers: int = 2
    epochs: int = 200
    learning_rate: float = 0.1
    splits: tuple = (0.6, 0.2, 0.2)
    mc_S: int = 100
    mc_seed: int = 0
    bins: int = 15

    def __post_init__(self):
        if abs(sum(self.splits) - 1.0) > 1e-9 or len(self.splits) != 3 or min(self.splits) <= 0:
            raise InputError("splits must be three positive fractions summing to 1")
        if self.hidden < 1 or self.layers < 1 or self.epochs < 1 or self.n_per_cluster < 1:
            raise InputError("hidden, layers, epochs and n_per_cluster must be positive")

    @classmethod
    def from_seed(cls, seed: int, **kw) -> "ToyConfig":
        return cls(data_seed=seed, label_seed=seed, training_seed=seed, mc_seed=seed, **kw)


@dataclass
class ToyData:
    x: np.ndarray
    cluster: np.ndarray
    pi: np.ndarray
    train_label: np.ndarray
    voted: np.ndarray
    split: np.ndarray  # 0 = train, 1 = cal, 2 = test


def generate_toy(cfg: ToyConfig) -> ToyData:
    """Sample the three Gaussian clusters, their labels and the split."""
    rng = np.random.default_rng([cfg.data_seed, 0])
    xs, cl = [], []
    for c, (mean, var, _) in enumerate(CLUSTERS):
        xs.append(rng.normal(mean, np.sqrt(var), size=(cfg.n_per_cluster, 2)))
        cl.append(np.full(cfg.n_per_cluster, c))
    x = np.concatenate(xs)
    cluster = np.concatenate(cl)
    pi = np.array([CLUSTERS[c][2] for c in cluster])

    lrng = np.random.default_rng([cfg.label_seed, 1])
    cdf = np.cumsum(pi, axis=1)
    u = lrng.random(len(x)) * cdf[:, -1]
    train_label = (u[:, None] < cdf).argmax(axis=1)
    voted = np.argmax(pi, axis=1)

    n = len(x)
    perm = np.random.default_rng([cfg.data_seed, 2]).permutation(n)
    n_train = int(round(cfg.splits[0] * n))
    n_cal = int(round(cfg.splits[1] * n))
    split = np.full(n, 2)
    split[perm[:n_train]] = 0
    split[perm[n_train : n_train + n_cal]] = 1
    return ToyData(x, cluster, pi, train_label, voted, split)


class MLP:
    """Fully connected tanh network trained by full-batch gradient descent."""

    def __init__(self, sizes, seed):
        rng = np.random.default_rng([seed, 3])
        self.params = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            self.params.append([rng.uniform(-bound, bound, (fan_in, fan_out)), np.zeros(fan_out)])

    def forward(self, x):
        acts = [x]
        h = x
        for W, b in self.params[:-1]:
            h = np.tanh(h @ W + b)
            acts.append(h)
        W, b = self.params[-1]
        return h @ W + b, acts

    def step(self, x, y_onehot, lr):
        logits, acts = self.forward(x)
        loss = float(-(y_onehot * log_softmax(logits)).sum(axis=1).mean())
        if not math.isfinite(loss):
            raise TrainingError("training loss became non-finite")
        delta = (softmax(logits) - y_onehot) / x.shape[0]
        for layer in range(len(self.params) - 1, -1, -1):
            W, b = self.params[layer]
            gW = acts[layer].T @ delta
            gb = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ W.T) * (1.0 - acts[layer] ** 2)
            self.params[layer] = [W - lr * gW, b - lr * gb]
        return loss


def train_toy_mlp(data: ToyData, cfg: ToyConfig):
    """Train on the voted labels of the train split; return logits for every point."""
    mask = data.split == 0
    net = MLP([2] + [cfg.hidden] * cfg.layers + [3], cfg.training_seed)
    y = one_hot(data.voted[mask], 3)
    x = data.x[mask]
    for _ in range(cfg.epochs):
        net.step(x, y, cfg.learning_rate)
    return net.forward(data.x)[0]


@dataclass(frozen=True)
class HistogramBinning:
    values: np.ndarray

    @property
    def B(self):
        return len(self.values)


def histogram_binning_fit(confidences, correct, B: int = 15) -> HistogramBinning:
    """Equal-width bins mapping confidence to the bin's empirical accuracy."""
    if B < 1:
        raise InputError("B must be >= 1")
    conf = np.asarray(confidences, dtype=np.float64)
    corr = np.asarray(correct, dtype=np.float64)
    idx = metrics.equal_width_assign(conf, B)
    count = np.bincount(idx, minlength=B)
    hits = np.bincount(idx, weights=corr, minlength=B)
    centers = (np.arange(B) + 0.5) / B
    values = np.where(count > 0, hits / np.maximum(count, 1), centers)
    return HistogramBinning(values)


def histogram_binning_apply(model: HistogramBinning, probs) -> np.ndarray:
    """Replace the top-class confidence by its bin value; rescale the rest."""
    probs = np.atleast_2d(probs)
    idx = metrics.equal_width_assign(probs.max(axis=1), model.B)
    return replace_top_confidence(probs, model.values[idx])


def run_toy_experiment(cfg: ToyConfig) -> dict:
    """Fit every calibrator on the cal split and evaluate on the test split."""
    data = generate_toy(cfg)
    logits = train_toy_mlp(data, cfg)
    cal, test = data.split == 1, data.split == 2
    z_cal, z_test = logits[cal], logits[test]
    y_cal = data.voted[cal]

    ts = fit_temperature(z_cal, SoftTargetSet.voted(y_cal, 3))
    platt = fit_diag_affine(z_cal, SoftTargetSet.voted(y_cal, 3))
    slts = fit_temperature(z_cal, SoftTargetSet.annotator(data.pi[cal]))
    p_cal = softmax(z_cal)
    hb = histogram_binning_fit(p_cal.max(axis=1), p_cal.argmax(axis=1) == y_cal, cfg.bins)

    probs = {
        "uncal": apply(identity_model(3), z_test),
        "ts": apply(ts, z_test),
        "platt": apply(platt, z_test),
        "hist_binning": histogram_binning_apply(hb, softmax(z_test)),
        "slts": apply(slts, z_test),
    }
    temps = {"ts": ts.temperature, "slts": slts.temperature}

    pi_t, voted_t, cluster_t = data.pi[test], data.voted[test], data.cluster[test]
    table = metrics.draw_label_table(pi_t, cfg.mc_S, cfg.mc_seed)
    amb = cluster_t == AMBIGUOUS_CLUSTER
    methods = {}
    for name, p in probs.items():
        conf = p.max(axis=1)
        correct_voted = p.argmax(axis=1) == voted_t
        methods[name] = {
            "T": temps.get(name),
            "ece_voted": metrics.ece_binned(conf, correct_voted, cfg.bins)[0],
            "ece_true": metrics.ece_true_from_table(p, table, cfg.bins),
            "ece_true_ambiguous": metrics.ece_true_from_table(p[amb], table[:, amb], cfg.bins),
            "ece_true_clear": metrics.ece_true_from_table(p[~amb], table[:, ~amb], cfg.bins),
        }

    pred = logits.argmax(axis=1)
    clear_train = (data.split == 0) & (data.cluster != AMBIGUOUS_CLUSTER)
    clear_test = test & (data.cluster != AMBIGUOUS_CLUSTER)
    amb_test = test & (data.cluster == AMBIGUOUS_CLUSTER)
    diagnostics = {
        "train_accuracy_clear": float(np.mean(pred[clear_train] == data.voted[clear_train])),
        "test_accuracy_clear": float(np.mean(pred[clear_test] == data.voted[clear_test])),
        "ambiguous_mean_confidence_class1": float(softmax(logits[amb_test])[:, 1].mean()),
    }
    return {
        "config": asdict(cfg),
        "methods": methods,
        "diagnostics": diagnostics,
        "checks": toy_checks(methods),
        "points": data,
        "logits": logits,
    }


def toy_checks(methods: dict) -> dict:
    """Sign-level claims of the toy experiment for one run."""
    m = methods
    return {
        "ts_temperature_below_one": m["ts"]["T"] < 1.0,
        "ts_lowers_ece_voted": m["ts"]["ece_voted"] < m["uncal"]["ece_voted"],
        "ts_raises_ece_true": m["ts"]["ece_true"] > m["uncal"]["ece_true"],
        "slts_lowers_ece_true": m["slts"]["ece_true"] < m["uncal"]["ece_true"],
        "ambiguous_dominates_ts": m["ts"]["ece_true_ambiguous"] > m["ts"]["ece_true_clear"],
        "ambiguous_dominates_platt": m["platt"]["ece_true_ambiguous"] > m["platt"]["ece_true_clear"],
        "ambiguous_dominates_hist_binning": m["hist_binning"]["ece_true_ambiguous"] > m["hist_binning"]["ece_true_clear"],
    }
