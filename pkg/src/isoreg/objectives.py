"""Training objectives: cross-entropy plus isotropy regularizers.

All functions take and return :class:`~isoreg.numcore.Tensor` values so the
same code path is used for the forward value and the recorded gradient.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ContractViolation, DegenerateInputError
from .geometry import CORR_EPS
from .model import ModelParams, encode, log_probs
from .numcore import Rng, Tensor, lift, log_softmax, logsumexp

NORM_EPS = 1e-12
FRO_EPS = 1e-12
COV_VARIANTS = ("none", "target-1", "target-0.5", "target-mean")


@dataclass(frozen=True)
class ObjectiveConfig:
    """Loss composition.

    Single regularizer: ``total = ce + lam * reg``.  Both CL and Cor active:
    ``total = ce + lam1 * cl + lam2 * cor``.  A covariance variant replaces
    Cor-Reg and uses ``lam``.  ``l2_mode`` picks between an explicit loss term
    (``"loss"``) and decoupled optimizer weight decay (``"decay"``).
    """
    use_cl: bool = False
    use_cor: bool = False
    lam: float = 0.0
    lam1: float = 1.7
    lam2: float = 0.04
    tau: float = 0.05
    cov_variant: str = "none"
    l2_weight: float = 0.0
    l2_mode: str = "loss"
    squared_frobenius: bool = False
    ce_pass: str = "first"

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError("temperature tau must be positive")
        if min(self.lam, self.lam1, self.lam2, self.l2_weight) < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.cov_variant not in COV_VARIANTS:
            raise ConfigError(f"cov_variant must be one of {COV_VARIANTS}")
        if self.use_cor and self.cov_variant != "none":
            raise ConfigError("cov_variant and use_cor are mutually exclusive")
        if self.l2_mode not in ("loss", "decay"):
            raise ConfigError("l2_mode must be 'loss' or 'decay'")
        if self.ce_pass != "first":
            raise ConfigError("only ce_pass='first' is supported")

    @property
    def use_cov(self) -> bool:
        return self.cov_variant != "none"

    @property
    def any_regularizer(self) -> bool:
        return self.use_cl or self.use_cor or self.use_cov

    def weights(self) -> tuple:
        """(weight on CL-Reg, weight on Cor-Reg or Cov-Reg)."""
        second = self.use_cor or self.use_cov
        if self.use_cl and second:
            return self.lam1, self.lam2
        if self.use_cl:
            return self.lam, 0.0
        if second:
            return 0.0, self.lam
        return 0.0, 0.0

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ObjectiveConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ConfigError(f"unknown objective fields: {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)


# default regularizer weights
PRESETS = {
    "ce": ObjectiveConfig(),
    "cl": ObjectiveConfig(use_cl=True, lam=1.7, tau=0.05),
    "cor": ObjectiveConfig(use_cor=True, lam=0.04),
    "cl+cor": ObjectiveConfig(use_cl=True, use_cor=True, lam1=1.7, lam2=0.04, tau=0.05),
}


# ---------------------------------------------------------------------------
# individual terms
# ---------------------------------------------------------------------------

def cross_entropy_from_logits(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    L = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= L):
        raise ContractViolation(f"label out of range for {L} classes")
    lp = log_softmax(logits, axis=1)
    return -(lp[np.arange(len(labels)), labels]).mean()


def cross_entropy(probs, labels) -> float:
    """Mean -log p(y_i) for a matrix of probabilities (evaluation helper)."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ContractViolation(f"label out of range for {probs.shape[1]} classes")
    with np.errstate(divide="ignore"):
        logits = np.log(probs)
    logits = np.where(np.isfinite(logits), logits, -745.0)
    return cross_entropy_from_logits(Tensor(logits), labels).item()


def _row_normalize(H: Tensor) -> Tensor:
    norm = (H * H).sum(axis=1, keepdims=True).sqrt()
    return H / (norm + NORM_EPS)


def cl_reg(H, H_pos, tau: float) -> Tensor:
    """Dropout contrastive loss: -mean_i log softmax_j(cos(h_i, h+_j)/tau)[i].

    The denominator runs over every j, including the positive.
    """
    H, H_pos = lift(H), lift(H_pos)
    if H.shape != H_pos.shape or H.shape[0] < 1:
        raise ContractViolation("CL-Reg needs two non-empty passes of equal shape")
    A = _row_normalize(H)
    B = _row_normalize(H_pos)
    sim = (A @ B.T) * (1.0 / tau)
    idx = np.arange(H.shape[0])
    pos = sim[idx, idx]
    return (logsumexp(sim, axis=1) - pos).mean()


def _centered(H: Tensor) -> Tensor:
    n = H.shape[0]
    if n < 2:
        raise DegenerateInputError("batch regularizers need at least two rows")
    return H - H.mean(axis=0, keepdims=True)


def batch_covariance(H) -> Tensor:
    H = lift(H)
    Hc = _centered(H)
    return (Hc.T @ Hc) * (1.0 / (H.shape[0] - 1))


def batch_correlation(H, eps: float = CORR_EPS) -> Tensor:
    H = lift(H)
    Hc = _centered(H)
    n = H.shape[0]
    C = (Hc.T @ Hc) * (1.0 / (n - 1))
    var = (Hc * Hc).sum(axis=0) * (1.0 / (n - 1))
    std = (var + eps).sqrt()
    return C / (std.reshape(-1, 1) * std.reshape(1, -1))


def _frobenius(D: Tensor, squared: bool) -> Tensor:
    s = (D * D).sum()
    return s if squared else (s + FRO_EPS).sqrt()


def cor_reg(H, squared: bool = False) -> Tensor:
    """||corr(H) - I||_F over the batch."""
    R = batch_correlation(H)
    return _frobenius(R - np.eye(R.shape[0]), squared)


def cov_reg(H, variant: str, squared: bool = False) -> Tensor:
    """||cov(H) - t I||_F, t in {1, 0.5, mean variance (held constant)}."""
    C = batch_covariance(H)
    d = C.shape[0]
    if variant == "target-1":
        t = 1.0
    elif variant == "target-0.5":
        t = 0.5
    elif variant == "target-mean":
        t = float(np.trace(C.data) / d)
    else:
        raise ConfigError(f"unknown covariance variant {variant!r}")
    return _frobenius(C - t * np.eye(d), squared)


def l2_penalty(params, weight: float, leaves: Mapping[str, Tensor] | None = None,
               keys: Sequence[str] | None = None) -> Tensor:
    """weight * sum of squared weight matrices (biases excluded).

    ``params`` may be a :class:`ModelParams` or a plain mapping of arrays; for
    a mapping every entry counts unless ``keys`` narrows it.
    """
    if weight < 0:
        raise ConfigError("l2 weight must be non-negative")
    if isinstance(params, ModelParams):
        keys = params.weight_keys() if keys is None else keys
        arrays = params.arrays
    else:
        arrays = params
        keys = list(arrays) if keys is None else keys
    src = leaves if leaves is not None else {k: Tensor(arrays[k]) for k in keys}
    total = Tensor(0.0)
    for k in keys:
        total = total + (src[k] * src[k]).sum()
    return total * weight


# ---------------------------------------------------------------------------
# composition
# ---------------------------------------------------------------------------

@dataclass
class LossBreakdown:
    total: float
    ce: float
    cl: float = 0.0
    cor: float = 0.0
    cov: float = 0.0
    l2: float = 0.0
    times: dict = field(default_factory=dict)

    def record(self, step: int) -> dict:
        return {
            "step": step, "ce": self.ce, "cl": self.cl, "cor": self.cor,
            "cov": self.cov, "l2": self.l2, "total": self.total,
            "t_ce": self.times.get("ce", 0.0), "t_cl": self.times.get("cl", 0.0),
            "t_cor": self.times.get("cor", 0.0),
        }

    def to_json(self, step: int) -> str:
        return json.dumps(self.record(step), sort_keys=False)


@dataclass
class JointResult:
    loss: Tensor
    breakdown: LossBreakdown
    bn_stats: dict


def joint_loss(params: ModelParams, seqs, labels, config: ObjectiveConfig, rng: Rng,
               leaves: Mapping[str, Tensor] | None = None) -> JointResult:
    """Compose CE and the configured regularizers on one batch.

    The first encode pass feeds CE and Cor-/Cov-Reg; a second pass with an
    independent dropout mask supplies the positives for CL-Reg.
    """
    n = len(seqs)
    if n == 0:
        raise ContractViolation("empty batch")
    if config.any_regularizer and n < 2:
        raise DegenerateInputError("regularized batches need at least two utterances")
    w_cl, w_second = config.weights()
    times = {"ce": 0.0, "cl": 0.0, "cor": 0.0}
    stats: dict = {}

    t0 = time.perf_counter()
    H = encode(params, seqs, train=True, rng=rng, leaves=leaves, stats=stats)
    ce = -(log_probs(params, H, leaves)[np.arange(n), np.asarray(labels)]).mean()
    times["ce"] = time.perf_counter() - t0
    total = ce
    parts = {"ce": ce.item()}

    if config.use_cl:
        t0 = time.perf_counter()
        H_pos = encode(params, seqs, train=True, rng=rng, leaves=leaves)
        cl = cl_reg(H, H_pos, config.tau)
        times["cl"] = time.perf_counter() - t0
        total = total + w_cl * cl
        parts["cl"] = cl.item()
    if config.use_cor:
        t0 = time.perf_counter()
        cor = cor_reg(H, config.squared_frobenius)
        times["cor"] = time.perf_counter() - t0
        total = total + w_second * cor
        parts["cor"] = cor.item()
    if config.use_cov:
        t0 = time.perf_counter()
        cov = cov_reg(H, config.cov_variant, config.squared_frobenius)
        times["cor"] = time.perf_counter() - t0
        total = total + w_second * cov
        parts["cov"] = cov.item()
    if config.l2_weight > 0 and config.l2_mode == "loss":
        l2 = l2_penalty(params, config.l2_weight, leaves)
        total = total + l2
        parts["l2"] = l2.item()

    breakdown = LossBreakdown(total=total.item(), times=times, **parts)
    return JointResult(total, breakdown, stats)
