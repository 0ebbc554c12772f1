"""Supervised pre-training with Adam and few-shot early stopping."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import Dataset
from .errors import ConfigError, NonFiniteGradientError
from .fewshot import EpisodeSpec, eligible_classes, sample_episodes, score_episodes
from .geometry import isotropy
from .model import ModelConfig, ModelParams, checkpoint_save, embed_sequences, init_params, \
    update_running_stats
from .numcore import Tensor, backward, derive_seed, make_rng
from .objectives import ObjectiveConfig, joint_loss

log = logging.getLogger(__name__)

PRESETS = {
    "desk": {"learning_rate": 1e-3, "weight_decay": 1e-3},
    "paper": {"learning_rate": 2e-5, "weight_decay": 1e-3},
}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-3
    batch_size: int = 32
    max_steps: int = 1000
    patience_steps: int = 100
    eval_every: int = 20
    seed: int = 1
    val_episodes: int = 50
    val_way: int = 5
    val_shot: int = 2
    val_query: int = 5
    val_seed: int = 0
    objective: ObjectiveConfig = ObjectiveConfig()
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.patience_steps < self.eval_every:
            raise ConfigError("patience_steps must be >= eval_every")
        if self.eval_every < 1 or self.max_steps < 0 or self.batch_size < 1:
            raise ConfigError("eval_every >= 1, max_steps >= 0 and batch_size >= 1 required")
        if self.objective.any_regularizer and self.batch_size < 8:
            raise ConfigError("batch_size must be >= 8 when a regularizer is active")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate > 0 and weight_decay >= 0 required")

    @classmethod
    def from_dict(cls, obj: Mapping) -> "TrainConfig":
        obj = dict(obj)
        preset = obj.pop("preset", None)
        base = {}
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
            base.update(PRESETS[preset])
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ConfigError(f"unknown train config fields: {sorted(unknown)}")
        base.update(obj)
        if isinstance(base.get("objective"), Mapping):
            base["objective"] = ObjectiveConfig.from_dict(base["objective"])
        if "model" in base and not isinstance(base["model"], Mapping):
            raise ConfigError("model must be a JSON object")
        try:
            return cls(**base)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            obj = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ConfigError(f"{p}: expected a JSON object")
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["objective"] = self.objective.to_dict()
        return d

    def with_objective(self, **changes) -> "TrainConfig":
        return replace(self, objective=replace(self.objective, **changes))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays: Mapping[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in arrays.items()},
                   {k: np.zeros_like(v) for k, v in arrays.items()})


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState, lr: float, weight_decay: float = 0.0,
              decay_keys=()):
    """One bias-corrected Adam update; returns ``(new_params, state)``.

    Parameter arrays are not modified (fresh arrays are returned); the moment
    buffers in ``state`` are updated in place.  Weight decay is decoupled:
    keys in ``decay_keys`` are additionally scaled by ``1 - lr * weight_decay``.
    """
    for k, g in grads.items():
        if np.shape(g) != np.shape(params[k]):
            raise ConfigError(f"gradient shape {np.shape(g)} != parameter shape for {k}")
        if not np.isfinite(g).all():
            bad = int((~np.isfinite(g)).sum())
            raise NonFiniteGradientError(f"{bad} non-finite gradient entries in {k!r}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p = {}
    for k, p in params.items():
        g = grads.get(k)
        m, v = state.m[k], state.v[k]
        m *= b1
        v *= b2
        if g is not None:
            m += (1 - b1) * g
            v += (1 - b2) * (g * g)
        denom = np.sqrt(v * (1.0 / c2))
        denom += state.eps
        upd = m * (lr / c1)
        upd /= denom
        if weight_decay and k in decay_keys:
            new_p[k] = p * (1.0 - lr * weight_decay) - upd
        else:
            new_p[k] = p - upd
    state.step = t
    return new_p, state


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainLog:
    steps: list = field(default_factory=list)        # LossBreakdown records
    evals: list = field(default_factory=list)        # {step, val_acc, isotropy}
    best_step: int = -1
    best_val_acc: float = float("nan")
    stop_step: int = 0
    stop_reason: str = ""
    best_checkpoint: str | None = None
    epoch_size: int = 0

    def metrics(self) -> dict:
        """Everything except wall-clock timings (deterministic given the seed)."""
        strip = [{k: v for k, v in r.items() if not k.startswith("t_")} for r in self.steps]
        return {"steps": strip, "evals": self.evals, "best_step": self.best_step,
                "best_val_acc": self.best_val_acc, "stop_step": self.stop_step,
                "stop_reason": self.stop_reason}

    def epoch_means(self, term: str) -> list:
        if not self.steps or self.epoch_size < 1:
            return []
        vals = np.array([r[term] for r in self.steps])
        return [float(vals[i:i + self.epoch_size].mean())
                for i in range(0, len(vals), self.epoch_size)]

    def timing_summary(self) -> dict:
        if not self.steps:
            return {}
        return {k: float(sum(r[f"t_{k}"] for r in self.steps)) for k in ("ce", "cl", "cor")}

    def write_jsonl(self, path, timings: bool = True) -> None:
        steps = self.steps if timings else self.metrics()["steps"]
        lines = [json.dumps(r) for r in steps]
        lines += [json.dumps({"eval": e}) for e in self.evals]
        lines.append(json.dumps({"summary": {
            "best_step": self.best_step, "best_val_acc": self.best_val_acc,
            "stop_step": self.stop_step, "stop_reason": self.stop_reason,
            "epoch_size": self.epoch_size, "best_checkpoint": self.best_checkpoint}}))
        Path(path).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")

    @classmethod
    def read_jsonl(cls, path) -> "TrainLog":
        out = cls()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            if "eval" in obj:
                out.evals.append(obj["eval"])
            elif "summary" in obj:
                s = obj["summary"]
                out.best_step = s["best_step"]
                out.best_val_acc = s["best_val_acc"]
                out.stop_step = s["stop_step"]
                out.stop_reason = s["stop_reason"]
                out.epoch_size = s.get("epoch_size", 0)
                out.best_checkpoint = s.get("best_checkpoint")
            else:
                out.steps.append(obj)
        return out


class Validator:
    """Fixed-episode few-shot accuracy on the validation domains."""

    def __init__(self, val: Dataset, tokenizer, config: TrainConfig):
        self.seqs = tokenizer.encode_all(val.texts)
        self.spec = EpisodeSpec(config.val_way, config.val_shot, config.val_query,
                                config.val_episodes, config.val_seed)
        need = self.spec.K + self.spec.Q
        self.enabled = len(eligible_classes(val.labels, need)) >= self.spec.C
        self.episodes = sample_episodes(val.labels, self.spec) if self.enabled else []

    def __call__(self, params: ModelParams):
        reps = embed_sequences(params, self.seqs)
        acc = float(score_episodes(reps, self.episodes).mean())
        try:
            iso = isotropy(reps)
        except Exception:  # degenerate reps early in training
            iso = float("nan")
        return acc, iso


def train(source: Dataset, val: Dataset, config: TrainConfig,
          checkpoint_path=None, init: ModelParams | None = None):
    """Pre-train an encoder + head on ``source``; early-stop on ``val`` few-shot accuracy.

    Returns ``(best_params, TrainLog)``.  Without a usable validation set the
    final parameters are returned and training runs for ``max_steps``.
    """
    if len(source) == 0:
        raise ConfigError("source dataset is empty")
    if source.n_classes < 2:
        raise ConfigError("source dataset needs at least two classes")
    overlap = set(source.label_names) & set(val.label_names)
    if overlap:
        warnings.warn(f"{len(overlap)} labels appear in both source and validation splits",
                      stacklevel=2)

    mcfg = ModelConfig(n_classes=source.n_classes, **config.model)
    params = init if init is not None else init_params(mcfg, derive_seed(config.seed, 1))
    tok = params.config.tokenizer
    seqs = tok.encode_all(source.texts)
    labels = source.labels
    order_rng = make_rng(derive_seed(config.seed, 2))
    drop_rng = make_rng(derive_seed(config.seed, 3))
    n = len(seqs)
    bs = min(config.batch_size, n)
    steps_per_epoch = max(1, n // bs)
    trainlog = TrainLog(epoch_size=steps_per_epoch)
    if config.max_steps == 0:
        trainlog.stop_reason = "max_steps"
        return params, trainlog

    validator = Validator(val, tok, config) if len(val) else None
    if validator is not None and not validator.enabled:
        log.warning("validation split too small for %d-way %d-shot episodes; no early stopping",
                    config.val_way, config.val_shot)
        validator = None

    obj = config.objective
    decay = config.weight_decay if obj.l2_mode == "loss" else config.weight_decay + obj.l2_weight
    decay_keys = set(params.weight_keys())
    state = AdamState.zeros_like(params.arrays)
    best = params.copy()
    best_acc = -1.0

    def evaluate_at(step):
        nonlocal best, best_acc
        acc, iso = validator(params)
        trainlog.evals.append({"step": step, "val_acc": acc, "isotropy": iso})
        if acc > best_acc:
            best_acc = acc
            best = params.copy()
            trainlog.best_step = step
            trainlog.best_val_acc = acc
            if checkpoint_path is not None:
                checkpoint_save(best, checkpoint_path, {"step": step, "val_acc": acc})
                trainlog.best_checkpoint = str(checkpoint_path)

    perm = order_rng.permutation(n)
    cursor = 0
    step = 0
    trainlog.stop_reason = "max_steps"
    while step < config.max_steps:
        if cursor + bs > n:
            perm = order_rng.permutation(n)
            cursor = 0
        idx = perm[cursor:cursor + bs]
        cursor += bs
        batch = [seqs[i] for i in idx]
        leaves = {k: Tensor(v, requires_grad=True) for k, v in params.arrays.items()}
        res = joint_loss(params, batch, labels[idx], obj, drop_rng, leaves)
        backward(res.loss)
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                 for k, t in leaves.items()}
        new_arrays, state = adam_step(params.arrays, grads, state, config.learning_rate,
                                      decay, decay_keys)
        params = update_running_stats(params.replace_arrays(new_arrays), res.bn_stats)
        step += 1
        trainlog.steps.append(res.breakdown.record(step))
        if validator is not None and step % config.eval_every == 0:
            evaluate_at(step)
            if step - trainlog.best_step >= config.patience_steps:
                trainlog.stop_reason = "early_stopping"
                break
    trainlog.stop_step = step
    if validator is not None and not trainlog.evals:
        evaluate_at(step)   # max_steps below eval_every
    if validator is None:
        best = params
        if checkpoint_path is not None:
            checkpoint_save(best, checkpoint_path, {"step": step})
            trainlog.best_checkpoint = str(checkpoint_path)
    return best, trainlog
