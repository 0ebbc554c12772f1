"""Desk-scale utterance encoder and linear intent head.

The encoder hashes whitespace tokens into a fixed vocabulary, mean-pools
their embeddings and runs a two-layer MLP (ReLU, inverted dropout on the
hidden layer).  Optional batch normalization acts on the final
representation ``h``, which is what the regularizers and few-shot probes see.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (BadMagicError, ConfigError, CorruptCheckpointError,
                     TruncatedCheckpointError, UnsupportedVersionError)
from .numcore import Rng, Tensor, embedding_bag_mean, log_softmax, make_rng

UNK = 0
BN_EPS = 1e-5
LN_EPS = 1e-5
BN_MOMENTUM = 0.1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a_64(text: str) -> int:
    """64-bit FNV-1a hash of the UTF-8 bytes of ``text``."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class Tokenizer:
    """Whitespace tokenizer hashing each token to ``1 + fnv1a_64(tok) % (vocab_size - 1)``.

    Id 0 is reserved for UNK, emitted for empty utterances.
    """
    vocab_size: int = 4096
    lowercase: bool = True

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be at least 2")

    def token_id(self, token: str) -> int:
        return _bucket(token, self.vocab_size)

    def __call__(self, text: str) -> np.ndarray:
        if self.lowercase:
            text = text.lower()
        toks = text.split()
        if not toks:
            return np.array([UNK], dtype=np.int64)
        return np.array([_bucket(t, self.vocab_size) for t in toks], dtype=np.int64)

    def encode_all(self, texts: Sequence[str]) -> list:
        return [self(t) for t in texts]


@lru_cache(maxsize=1 << 18)
def _bucket(token: str, vocab_size: int) -> int:
    return 1 + fnv1a_64(token) % (vocab_size - 1)


@dataclass(frozen=True)
class ModelConfig:
    n_classes: int
    vocab_size: int = 4096
    lowercase: bool = True
    d_emb: int = 64
    d_hidden: int = 128
    d_out: int = 32
    dropout: float = 0.1
    batchnorm: bool = False
    final_norm: str = "rms"

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if min(self.d_emb, self.d_hidden, self.d_out) < 1:
            raise ConfigError("layer sizes must be positive")
        if self.n_classes < 1:
            raise ConfigError("n_classes must be positive")
        if self.final_norm not in ("none", "layernorm", "rms", "tanh"):
            raise ConfigError("final_norm must be one of 'none', 'layernorm', 'rms', 'tanh'")

    @property
    def tokenizer(self) -> Tokenizer:
        return Tokenizer(self.vocab_size, self.lowercase)

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ConfigError(f"unknown model fields: {sorted(unknown)}")
        return cls(**obj)


ENCODER_WEIGHTS = ("embedding", "w1", "w2")
HEAD_WEIGHTS = ("head_w",)


@dataclass(frozen=True)
class HeadParams:
    W: np.ndarray
    b: np.ndarray


@dataclass
class ModelParams:
    """All trainable arrays (``arrays``) plus batch-norm running statistics.

    ``arrays`` keys: embedding, w1, b1, w2, b2, [bn_scale, bn_shift],
    head_w, head_b.  ``buffers`` holds bn_mean / bn_var when batch norm is on.
    """
    config: ModelConfig
    arrays: dict
    buffers: dict = field(default_factory=dict)

    @property
    def head(self) -> HeadParams:
        return HeadParams(self.arrays["head_w"], self.arrays["head_b"])

    def weight_keys(self) -> tuple:
        """Keys subject to L2 / weight decay (biases and BN affine excluded)."""
        return ENCODER_WEIGHTS + HEAD_WEIGHTS

    def replace_arrays(self, arrays: Mapping) -> "ModelParams":
        return ModelParams(self.config, dict(arrays), dict(self.buffers))

    def copy(self) -> "ModelParams":
        return ModelParams(self.config,
                           {k: v.copy() for k, v in self.arrays.items()},
                           {k: v.copy() for k, v in self.buffers.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def fingerprint(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for k in sorted(self.arrays):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.arrays[k]).tobytes())
        for k in sorted(self.buffers):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.buffers[k]).tobytes())
        return h.hexdigest()


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    rng = make_rng(seed)
    c = config
    arrays = {
        "embedding": rng.normal(0.0, 1.0, (c.vocab_size, c.d_emb)),
        "w1": rng.normal(0.0, np.sqrt(2.0 / c.d_emb), (c.d_emb, c.d_hidden)),
        "b1": np.zeros(c.d_hidden),
        "w2": rng.normal(0.0, np.sqrt(1.0 / c.d_hidden), (c.d_hidden, c.d_out)),
        "b2": np.zeros(c.d_out),
    }
    buffers = {}
    if c.batchnorm:
        arrays["bn_scale"] = np.ones(c.d_out)
        arrays["bn_shift"] = np.zeros(c.d_out)
        buffers = {"bn_mean": np.zeros(c.d_out), "bn_var": np.ones(c.d_out)}
    arrays["head_w"] = rng.normal(0.0, np.sqrt(1.0 / c.d_out), (c.n_classes, c.d_out))
    arrays["head_b"] = np.zeros(c.n_classes)
    return ModelParams(config, arrays, buffers)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def pack(seqs: Sequence[np.ndarray]):
    """Flatten token sequences into (ids, segment ids)."""
    lens = np.fromiter((len(s) for s in seqs), dtype=np.int64, count=len(seqs))
    ids = np.concatenate(seqs) if len(seqs) else np.zeros(0, dtype=np.int64)
    return ids, np.repeat(np.arange(len(seqs)), lens)


def _tensors(params: ModelParams, leaves):
    if leaves is not None:
        return leaves
    return {k: Tensor(v) for k, v in params.arrays.items()}


def encode(params: ModelParams, seqs: Sequence[np.ndarray], train: bool = False,
           rng: Rng | None = None, leaves: Mapping[str, Tensor] | None = None,
           stats: dict | None = None) -> Tensor:
    """Representations ``h`` (N x d_out) for a batch of token-id sequences.

    In train mode a fresh dropout mask is drawn from ``rng`` and batch norm
    (if enabled) uses batch statistics, which are written into ``stats`` as
    ``mean`` / ``var`` when a dict is passed.  Eval mode is deterministic.
    ``leaves`` substitutes recorded Tensors for the parameter arrays.
    """
    P = _tensors(params, leaves)
    cfg = params.config
    seqs = [s if len(s) else np.array([UNK], dtype=np.int64) for s in seqs]
    ids, seg = pack(seqs)
    x = embedding_bag_mean(P["embedding"], ids, seg, len(seqs))
    a = (x @ P["w1"] + P["b1"]).relu()
    if train and cfg.dropout > 0:
        if rng is None:
            raise ConfigError("train-mode encode needs an rng for dropout")
        keep = rng.random(a.shape) >= cfg.dropout
        a = a * (keep / (1.0 - cfg.dropout))
    h = a @ P["w2"] + P["b2"]
    if cfg.final_norm == "layernorm":
        hc = h - h.mean(axis=1, keepdims=True)
        h = hc / ((hc * hc).mean(axis=1, keepdims=True) + LN_EPS).sqrt()
    elif cfg.final_norm == "rms":
        h = h / ((h * h).mean(axis=1, keepdims=True) + LN_EPS).sqrt()
    elif cfg.final_norm == "tanh":
        h = h.tanh()
    if cfg.batchnorm:
        h = _batchnorm(h, P, params.buffers, train, stats)
    return h


def _batchnorm(h: Tensor, P, buffers, train: bool, stats) -> Tensor:
    if train:
        mu = h.mean(axis=0, keepdims=True)
        hc = h - mu
        var = (hc * hc).mean(axis=0, keepdims=True)
        if stats is not None:
            n = h.shape[0]
            stats["mean"] = mu.data.ravel().copy()
            stats["var"] = var.data.ravel() * (n / max(n - 1, 1))
        hn = hc / (var + BN_EPS).sqrt()
    else:
        hn = (h - buffers["bn_mean"]) / np.sqrt(buffers["bn_var"] + BN_EPS)
    return hn * P["bn_scale"] + P["bn_shift"]


def update_running_stats(params: ModelParams, stats: Mapping) -> ModelParams:
    if not params.config.batchnorm or "mean" not in stats:
        return params
    m = BN_MOMENTUM
    buffers = {
        "bn_mean": (1 - m) * params.buffers["bn_mean"] + m * stats["mean"],
        "bn_var": (1 - m) * params.buffers["bn_var"] + m * stats["var"],
    }
    return ModelParams(params.config, params.arrays, buffers)


def head_logits(params: ModelParams, h: Tensor, leaves=None) -> Tensor:
    P = _tensors(params, leaves)
    return h @ P["head_w"].T + P["head_b"]


def classify(head: HeadParams, h) -> np.ndarray:
    """softmax(W h + b) for a single vector or a batch of rows."""
    h = np.asarray(h, dtype=np.float64)
    z = h @ np.asarray(head.W).T + head.b
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_probs(params: ModelParams, h: Tensor, leaves=None) -> Tensor:
    return log_softmax(head_logits(params, h, leaves), axis=1)


def embed_texts(params: ModelParams, texts: Sequence[str], batch_size: int = 512) -> np.ndarray:
    """Eval-mode representations for raw texts."""
    tok = params.config.tokenizer
    seqs = tok.encode_all(texts)
    return embed_sequences(params, seqs, batch_size)


def embed_sequences(params: ModelParams, seqs, batch_size: int = 512) -> np.ndarray:
    out = [encode(params, seqs[i:i + batch_size]).data
           for i in range(0, len(seqs), batch_size)]
    if not out:
        return np.zeros((0, params.config.d_out))
    return np.concatenate(out, axis=0)


# ---------------------------------------------------------------------------
# checkpoints: magic, u64 header length, JSON header, float64 LE payload
# ---------------------------------------------------------------------------

MAGIC = b"ISOLAB01"
FORMAT_VERSION = 1


def checkpoint_save(params: ModelParams, path, meta: Mapping | None = None) -> None:
    entries = [("arrays", k, v) for k, v in params.arrays.items()]
    entries += [("buffers", k, v) for k, v in params.buffers.items()]
    payload = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for _, _, v in entries)
    header = {
        "format_version": FORMAT_VERSION,
        "model": asdict(params.config),
        "tokenizer": {"hash": "fnv1a-64", "vocab_size": params.config.vocab_size,
                      "lowercase": params.config.lowercase, "unk_id": UNK},
        "tensors": [{"group": g, "name": k, "shape": list(np.shape(v))} for g, k, v in entries],
        "payload_bytes": len(payload),
        "meta": dict(meta or {}),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    Path(path).write_bytes(MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + payload)


def read_checkpoint_header(path) -> dict:
    return _parse(Path(path).read_bytes())[0]


def checkpoint_load(path) -> ModelParams:
    header, payload = _parse(Path(path).read_bytes())
    try:
        config = ModelConfig.from_dict(header["model"])
        specs = header["tensors"]
        arrays, buffers = {}, {}
        offset = 0
        for spec in specs:
            shape = tuple(int(s) for s in spec["shape"])
            n = int(np.prod(shape)) if shape else 1
            chunk = payload[offset:offset + 8 * n]
            offset += 8 * n
            arr = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
            (arrays if spec["group"] == "arrays" else buffers)[spec["name"]] = arr
    except (KeyError, TypeError, ValueError, ConfigError) as exc:
        raise CorruptCheckpointError(f"malformed checkpoint header: {exc}") from None
    return ModelParams(config, arrays, buffers)


def _parse(blob: bytes):
    if len(blob) < len(MAGIC):
        raise TruncatedCheckpointError("file shorter than the magic number")
    if blob[:8] != MAGIC:
        raise BadMagicError("not an isoreg checkpoint (bad magic)")
    if len(blob) < 16:
        raise TruncatedCheckpointError("file ends inside the header length")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if len(blob) < 16 + hlen:
        raise TruncatedCheckpointError("file ends inside the header")
    try:
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CorruptCheckpointError("header is not valid JSON") from None
    if not isinstance(header, dict):
        raise CorruptCheckpointError("header is not a JSON object")
    if header.get("format_version") != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"unsupported checkpoint version {header.get('format_version')!r}")
    payload = blob[16 + hlen:]
    try:
        declared = int(header["payload_bytes"])
        expected = 8 * sum(int(np.prod(t["shape"])) for t in header["tensors"])
    except (KeyError, TypeError, ValueError):
        raise CorruptCheckpointError("header lacks tensor layout") from None
    if len(payload) < declared:
        raise TruncatedCheckpointError(
            f"payload has {len(payload)} bytes, header declares {declared}")
    if len(payload) != declared or expected != declared:
        raise CorruptCheckpointError(
            f"tensor shapes need {expected} bytes but payload holds {len(payload)}")
    return header, payload
