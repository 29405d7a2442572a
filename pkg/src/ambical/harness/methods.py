"""Method identifiers and how each one is fitted on a calibration slice."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import calibrators as cb
from ..core import LogitDataset, softmax
from ..errors import InputError
from ..optim import VectorMinimizerConfig


@dataclass(frozen=True)
class MethodSpec:
    name: str
    family: str
    target: str  # none | voted | soft | mc | pseudo
    label: str
    oracle: bool = False


METHODS = {
    m.name: m
    for m in (
        MethodSpec("uncal", "identity", "none", "Uncalibrated"),
        MethodSpec("ts", "temperature", "voted", "TS"),
        MethodSpec("ats", "ats", "voted", "ATS"),
        MethodSpec("platt", "diag_affine", "voted", "Platt"),
        MethodSpec("dirichlet_hard", "full_affine", "voted", "Dirichlet-Hard"),
        MethodSpec("slts", "temperature", "soft", "SLTS"),
        MethodSpec("mcts", "temperature", "mc", "MCTS"),
        MethodSpec("softplatt", "diag_affine", "soft", "SoftPlatt"),
        MethodSpec("vs", "vector_temperature", "soft", "VS"),
        MethodSpec("ir_soft", "isotonic", "soft", "IR-Soft"),
        MethodSpec("dirichlet_soft", "full_affine", "soft", "Dirichlet-Soft"),
        MethodSpec("lsts", "temperature", "pseudo:global", "LS-TS"),
        MethodSpec("fixed_ls", "temperature", "pseudo:fixed", "Fixed-LS"),
        MethodSpec("ent_ls", "temperature", "pseudo:entropy", "Ent-LS"),
        MethodSpec("cc_ls", "temperature", "pseudo:classwise", "CC-LS"),
        MethodSpec("oracle_ts", "temperature", "soft", "Oracle TS", oracle=True),
    )
}

# (method, --target override) -> method actually fitted.
_TARGET_OVERRIDES = {
    "temperature": {"voted": "ts", "soft": "slts", "mc": "mcts"},
    "diag_affine": {"voted": "platt", "soft": "softplatt"},
    "full_affine": {"voted": "dirichlet_hard", "soft": "dirichlet_soft"},
    "vector_temperature": {"soft": "vs"},
}


def resolve_method(name: str, target: str | None = None) -> MethodSpec:
    if name not in METHODS:
        raise InputError(f"unknown method {name!r}; choose from {sorted(METHODS)}")
    spec = METHODS[name]
    if target is None:
        return spec
    table = _TARGET_OVERRIDES.get(spec.family, {})
    if target not in table:
        raise InputError(f"method {name!r} cannot be fitted against target {target!r}")
    return METHODS[table[target]]


@dataclass(frozen=True)
class FitSettings:
    mcts_S: int = 1
    lambda_odir: float = 1e-3
    lambda_ats: float = 1e-3
    fixed_eps: float = 0.1
    optimizer: str = "lbfgs"

    def vector_config(self, base: VectorMinimizerConfig) -> VectorMinimizerConfig:
        return VectorMinimizerConfig(
            learning_rate=base.learning_rate,
            weight_decay=base.weight_decay,
            steps=base.steps,
            grad_tol=base.grad_tol,
            loss_tol=base.loss_tol,
            method=self.optimizer,
        )


def fit_method(spec: MethodSpec, cal: LogitDataset, seed: int = 0, settings: FitSettings = FitSettings()):
    """Fit ``spec`` on ``cal`` and return a :class:`CalibratorModel`."""
    z, K = cal.logits, cal.K
    voted = cb.SoftTargetSet.voted(cal.voted, K)
    soft = cb.SoftTargetSet.annotator(cal.pi)

    if spec.family == "identity":
        return cb.identity_model(K)
    if spec.family == "ats":
        return cb.fit_ats(z, cal.voted, settings.lambda_ats, settings.vector_config(cb.ATS_CONFIG))
    if spec.family == "isotonic":
        p = softmax(z)
        c = p.argmax(axis=1)
        return cb.fit_isotonic_soft(p.max(axis=1), cal.pi[np.arange(cal.n), c], K)

    if spec.target == "voted":
        targets = voted
    elif spec.target == "soft":
        targets = soft
    elif spec.target == "mc":
        if not cal.has_annotations:
            raise InputError(f"{spec.label} needs raw annotations for every calibration example")
        targets = cb.draw_mc_targets(cal.annotations, K, settings.mcts_S, seed)
    elif spec.target.startswith("pseudo:"):
        targets = cb.make_lsts_targets(z, cal.voted, spec.target.split(":", 1)[1], settings.fixed_eps)
    else:  # pragma: no cover
        raise InputError(f"unsupported target {spec.target!r}")

    if spec.family == "temperature":
        return cb.fit_temperature(z, targets)
    if spec.family == "diag_affine":
        return cb.fit_diag_affine(z, targets, settings.vector_config(cb.PLATT_CONFIG))
    if spec.family == "vector_temperature":
        return cb.fit_vector_scaling(z, targets, settings.vector_config(cb.VS_CONFIG))
    if spec.family == "full_affine":
        return cb.fit_dirichlet(z, targets, settings.lambda_odir, settings.vector_config(cb.PLATT_CONFIG))
    raise InputError(f"unsupported family {spec.family!r}")  # pragma: no cover
