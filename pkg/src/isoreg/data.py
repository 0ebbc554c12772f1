"""Intent corpora: JSONL ingestion, domain splits and a synthetic generator."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError, MalformedJSONError, MissingFieldError
from .numcore import make_rng


@dataclass(frozen=True)
class Dataset:
    """Labeled utterances.

    ``labels[i]`` indexes ``label_names`` and ``domains[i]`` indexes
    ``domain_names``.  Ids are dense and assigned in first-appearance order.
    """
    texts: tuple
    labels: np.ndarray
    domains: np.ndarray
    label_names: tuple
    domain_names: tuple

    def __post_init__(self):
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "domains", np.asarray(self.domains, dtype=np.int64))
        if not (len(self.texts) == len(self.labels) == len(self.domains)):
            raise ConfigError("texts, labels and domains must have equal length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.label_names)):
            raise ConfigError("label id out of range")

    def __len__(self):
        return len(self.texts)

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    def label_domain(self) -> dict:
        """Label id -> domain id (each label lives in exactly one domain)."""
        out = {}
        for y, dom in zip(self.labels.tolist(), self.domains.tolist()):
            if out.setdefault(y, dom) != dom:
                raise ConfigError(f"label {self.label_names[y]!r} spans several domains")
        return out

    def class_indices(self) -> list:
        return [np.flatnonzero(self.labels == c) for c in range(self.n_classes)]

    @classmethod
    def from_records(cls, records) -> "Dataset":
        """Build from ``(text, label_name, domain_name)`` triples."""
        labels, domains = {}, {}
        texts, ys, ds = [], [], []
        for text, label, domain in records:
            texts.append(text)
            ys.append(labels.setdefault(label, len(labels)))
            ds.append(domains.setdefault(domain, len(domains)))
        return cls(tuple(texts), np.array(ys, dtype=np.int64), np.array(ds, dtype=np.int64),
                   tuple(labels), tuple(domains))

    def records(self):
        for t, y, d in zip(self.texts, self.labels.tolist(), self.domains.tolist()):
            yield t, self.label_names[y], self.domain_names[d]

    def subset(self, idx) -> "Dataset":
        """Rows ``idx``, with label and domain ids re-densified."""
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset.from_records(
            (self.texts[i], self.label_names[self.labels[i]], self.domain_names[self.domains[i]])
            for i in idx.tolist())


def load_jsonl(path) -> Dataset:
    """Read ``{"text", "label", "domain"}`` objects, one per line."""
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"cannot read corpus {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(raw.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedJSONError(f"invalid JSON ({exc.msg})", line=lineno) from None
        if not isinstance(obj, dict):
            raise MalformedJSONError("expected a JSON object", line=lineno)
        for key in ("text", "label", "domain"):
            if key not in obj:
                raise MissingFieldError(f"missing field {key!r}", line=lineno)
            if not isinstance(obj[key], str):
                raise DataFormatError(f"field {key!r} must be a string", line=lineno)
        records.append((obj["text"], obj["label"], obj["domain"]))
    return Dataset.from_records(records)


def save_jsonl(data: Dataset, path) -> None:
    lines = [json.dumps({"text": t, "label": y, "domain": d}, ensure_ascii=False)
             for t, y, d in data.records()]
    Path(path).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8", newline="\n")


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train: tuple
    validation: tuple = ()
    excluded: tuple = ()

    def __post_init__(self):
        for name in ("train", "validation", "excluded"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        seen = {}
        for name in ("train", "validation", "excluded"):
            for dom in getattr(self, name):
                if dom in seen:
                    raise ConfigError(f"domain {dom!r} listed in both {seen[dom]} and {name}")
                seen[dom] = name

    @classmethod
    def from_json(cls, path) -> "SplitSpec":
        obj = _read_json(path)
        unknown = set(obj) - {"train", "validation", "excluded"}
        if unknown:
            raise ConfigError(f"unknown split fields: {sorted(unknown)}")
        return cls(**obj)


def split_by_domain(data: Dataset, spec: SplitSpec):
    """Route utterances to (train, validation) by domain; excluded domains are dropped."""
    known = set(data.domain_names)
    for dom in spec.train + spec.validation + spec.excluded:
        if dom not in known:
            raise ConfigError(f"unknown domain {dom!r}")
    names = np.array(data.domain_names, dtype=object)
    dom_of = names[data.domains] if len(data) else np.array([], dtype=object)
    train = np.flatnonzero(np.isin(dom_of, list(spec.train)))
    val = np.flatnonzero(np.isin(dom_of, list(spec.validation)))
    return data.subset(train), data.subset(val)


def select_domains(data: Dataset, domains) -> Dataset:
    """Utterances whose domain is in ``domains`` (used to carve out a target set)."""
    known = set(data.domain_names)
    for dom in domains:
        if dom not in known:
            raise ConfigError(f"unknown domain {dom!r}")
    names = np.array(data.domain_names, dtype=object)
    dom_of = names[data.domains] if len(data) else np.array([], dtype=object)
    return data.subset(np.flatnonzero(np.isin(dom_of, list(domains))))


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    domains: int = 10
    intents_per_domain: int = 15
    utterances_per_intent: int = 30
    signature_tokens: int = 6
    noise_vocab: int = 2000
    signature_prob: float = 0.6
    min_len: int = 4
    max_len: int = 12
    zipf_exponent: float = 1.2
    seed: int = 0

    def __post_init__(self):
        if min(self.domains, self.intents_per_domain, self.utterances_per_intent) < 1:
            raise ConfigError("domain, intent and utterance counts must be positive")
        if self.signature_tokens < 1 or self.noise_vocab < 1:
            raise ConfigError("signature_tokens and noise_vocab must be positive")
        if not 0.0 <= self.signature_prob <= 1.0:
            raise ConfigError("signature_prob must lie in [0, 1]")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError("need 1 <= min_len <= max_len")

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ConfigError(f"unknown synth fields: {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)


def domain_name(k: int) -> str:
    return f"domain{k:02d}"


def generate_synthetic(config: SynthConfig = SynthConfig()) -> Dataset:
    """Sample a corpus where every intent owns a private set of signature tokens.

    Each token is, with probability ``signature_prob``, drawn uniformly from
    the utterance's intent signature set and otherwise from a shared noise
    vocabulary with Zipf(``zipf_exponent``) frequencies.  Tokens are rendered
    as ``t<id>``: noise ids occupy ``[0, noise_vocab)`` and signature ids are a
    seed-dependent draw from the range above it.
    """
    rng = make_rng(config.seed)
    n_intents = config.domains * config.intents_per_domain
    n_sig = n_intents * config.signature_tokens
    pool = config.noise_vocab + rng.permutation(2 * n_sig)[:n_sig]
    signatures = pool.reshape(n_intents, config.signature_tokens)

    ranks = np.arange(1, config.noise_vocab + 1, dtype=np.float64)
    zipf = ranks ** -config.zipf_exponent
    zipf /= zipf.sum()

    records = []
    for dom in range(config.domains):
        for k in range(config.intents_per_domain):
            intent = dom * config.intents_per_domain + k
            label = f"{domain_name(dom)}.intent{k:02d}"
            for _ in range(config.utterances_per_intent):
                length = int(rng.integers(config.min_len, config.max_len + 1))
                use_sig = rng.random(length) < config.signature_prob
                sig = signatures[intent][rng.integers(0, config.signature_tokens, length)]
                noise = rng.choice(config.noise_vocab, size=length, p=zipf)
                toks = np.where(use_sig, sig, noise)
                records.append((" ".join(f"t{t}" for t in toks.tolist()), label, domain_name(dom)))
    return Dataset.from_records(records)


def default_split(config: SynthConfig, n_val: int = 2, n_target: int = 2):
    """Domain split shaped like the OOS setup: train / validation / held-out target."""
    n_train = config.domains - n_val - n_target
    if n_train < 1:
        raise ConfigError("not enough domains for a train/validation/target split")
    names = [domain_name(k) for k in range(config.domains)]
    return (SplitSpec(tuple(names[:n_train]), tuple(names[n_train:n_train + n_val]),
                      tuple(names[n_train + n_val:])),
            tuple(names[n_train + n_val:]))


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{p}: expected a JSON object")
    return obj
