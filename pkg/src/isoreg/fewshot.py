"""Episodic C-way K-shot evaluation with a logistic-regression probe.

Representations of the target set are computed once per model (eval mode);
episodes are index sets into that cache.  Probes for many episodes are fit
simultaneously with batched gradient descent, each episode keeping its own
backtracking step size and stopping rule.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, SamplingError
from .numcore import Rng, make_rng

FitPredict = Callable[[np.ndarray, np.ndarray, np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class EpisodeSpec:
    C: int = 5
    K: int = 2
    Q: int = 5
    episodes: int = 500
    seed: int = 1

    def __post_init__(self):
        if self.C < 2 or self.K < 1 or self.Q < 1 or self.episodes < 1:
            raise ConfigError("need C >= 2, K >= 1, Q >= 1 and at least one episode")


@dataclass(frozen=True)
class Episode:
    classes: np.ndarray   # (C,) dataset label ids, in episode-label order
    support: np.ndarray   # (C, K) utterance indices
    query: np.ndarray     # (C, Q) utterance indices


def _labels_of(data) -> np.ndarray:
    return np.asarray(getattr(data, "labels", data), dtype=np.int64)


def eligible_classes(labels, need: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        return np.zeros(0, dtype=np.int64)
    counts = np.bincount(labels)
    return np.flatnonzero(counts >= need)


def sample_episode(data, spec: EpisodeSpec, rng: Rng, _pools=None) -> Episode:
    """Draw C classes and K+Q distinct utterances per class, all without replacement."""
    labels = _labels_of(data)
    need = spec.K + spec.Q
    if _pools is None:
        _pools = _class_pools(labels, need)
    elig, pools = _pools
    if len(elig) < spec.C:
        raise SamplingError(
            f"need {spec.C} classes with >= {need} examples, found {len(elig)}")
    classes = elig[rng.choice(len(elig), spec.C, replace=False)]
    chosen = np.stack([pools[c][rng.permutation(len(pools[c]))[:need]] for c in classes])
    return Episode(classes, chosen[:, :spec.K], chosen[:, spec.K:])


def _class_pools(labels, need):
    elig = eligible_classes(labels, need)
    pools = {int(c): np.flatnonzero(labels == c) for c in elig}
    return elig, pools


def sample_episodes(data, spec: EpisodeSpec, seed: int | None = None) -> list:
    rng = make_rng(spec.seed if seed is None else seed)
    pools = _class_pools(_labels_of(data), spec.K + spec.Q)
    return [sample_episode(data, spec, rng, pools) for _ in range(spec.episodes)]


# ---------------------------------------------------------------------------
# logistic-regression probe
# ---------------------------------------------------------------------------

@dataclass
class LogRegProbe:
    weights: np.ndarray          # (C, d)
    bias: np.ndarray             # (C,)
    l2_weight: float = 1.0
    max_iters: int = 500
    tol: float = 1e-6
    iterations: int = 0
    converged: bool = False
    objective_trace: list = field(default_factory=list)

    def decision_function(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights.T + self.bias

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=-1)


# Probabilities and one-hot targets are stored class-major, (C, E, n), so the
# reductions over the (small) class axis are elementwise ops over blocks.

def _objective(W, b, X, Y, lam):
    """Per-episode mean CE + lam/2 ||W||^2, with the softmax probabilities."""
    Z = np.matmul(X, W.transpose(0, 2, 1)) + b[:, None, :]
    Z = np.ascontiguousarray(Z.transpose(2, 0, 1))
    Z -= Z.max(axis=0)
    E = np.exp(Z)
    S = E.sum(axis=0)
    ce = (np.log(S) - (Z * Y).sum(axis=0)).mean(axis=1)
    return ce + 0.5 * lam * (W * W).sum(axis=(1, 2)), E / S


def _gradient(W, X, Y, P, lam):
    R = (P - Y) / X.shape[1]
    gW = np.matmul(R.transpose(1, 0, 2), X) + lam * W
    gb = R.sum(axis=2).T
    return gW, gb, (gW * gW).sum(axis=(1, 2)) + (gb * gb).sum(axis=1)


def fit_probes(X, y, n_classes: int, l2_weight: float = 1.0, max_iters: int = 500,
               tol: float = 1e-6, trace: bool = False):
    """Fit one multinomial logistic regression per episode.

    ``X`` is (E, n, d), ``y`` is (E, n).  Full-batch gradient descent from
    zero; each iteration tries a Barzilai-Borwein step and halves it until
    the Armijo condition holds.  An episode stops once its gradient norm is
    at most ``tol`` (or its line search fails, i.e. it sits at rounding
    precision).  Returns ``(W, b, iterations, converged, traces)``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    E, n, d = X.shape
    Y = (y[None, :, :] == np.arange(n_classes)[:, None, None]).astype(np.float64)
    W = np.zeros((E, n_classes, d))
    b = np.zeros((E, n_classes))
    step = np.ones(E)
    iters = np.zeros(E, dtype=np.int64)
    active = np.ones(E, dtype=bool)
    f, P = _objective(W, b, X, Y, l2_weight)
    gW, gb, g2 = _gradient(W, X, Y, P, l2_weight)
    traces = [[float(v)] for v in f] if trace else None
    tol2 = tol * tol
    for _ in range(max_iters):
        active &= g2 > tol2
        if not active.any():
            break
        t = np.where(active, step, 0.0)
        cW = W - t[:, None, None] * gW
        cb = b - t[:, None] * gb
        cf, cP = _objective(cW, cb, X, Y, l2_weight)
        ok = active & (cf <= f - 0.5 * t * g2)
        sel = np.flatnonzero(active & ~ok)
        ts = t[sel]
        for _ in range(60):
            if sel.size == 0:
                break
            ts = 0.5 * ts
            sW = W[sel] - ts[:, None, None] * gW[sel]
            sb = b[sel] - ts[:, None] * gb[sel]
            sf, sP = _objective(sW, sb, X[sel], Y[:, sel], l2_weight)
            good = sf <= f[sel] - 0.5 * ts * g2[sel]
            hit = sel[good]
            cW[hit], cb[hit], cf[hit], cP[:, hit] = sW[good], sb[good], sf[good], sP[:, good]
            t[hit] = ts[good]
            ok[hit] = True
            sel, ts = sel[~good], ts[~good]
        iters[active] += 1
        # a failed line search means the episode is at floating-point precision
        active[sel] = False
        if not ok.any():
            break
        o3 = ok[:, None, None]
        cW = np.where(o3, cW, W)
        cb = np.where(ok[:, None], cb, b)
        cP = np.where(ok[None, :, None], cP, P)
        ngW, ngb, ng2 = _gradient(cW, X, Y, cP, l2_weight)
        sW, sb = cW - W, cb - b
        yW, yb = ngW - gW, ngb - gb
        sy = np.einsum("ecd,ecd->e", sW, yW) + np.einsum("ec,ec->e", sb, yb)
        ss = np.einsum("ecd,ecd->e", sW, sW) + np.einsum("ec,ec->e", sb, sb)
        bb = ss / np.where(sy > 0, sy, 1.0)
        step = np.where(ok, np.where(sy > 0, np.clip(bb, 1e-8, 1e8), 2.0 * t), step)
        W, b, P = cW, cb, cP
        f = np.where(ok, cf, f)
        gW, gb, g2 = ngW, ngb, ng2
        if trace:
            for k in np.flatnonzero(ok).tolist():
                traces[k].append(float(f[k]))
    return W, b, iters, g2 <= tol2, traces


def fit_probe(support_reps, labels, l2_weight: float = 1.0, max_iters: int = 500,
              tol: float = 1e-6) -> LogRegProbe:
    X = np.asarray(support_reps, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1
    if len(np.unique(labels)) < 2:
        raise ConfigError("a probe needs at least two classes")
    W, b, it, conv, traces = fit_probes(X[None], labels[None], n_classes, l2_weight,
                                        max_iters, tol, trace=True)
    return LogRegProbe(W[0], b[0], l2_weight, max_iters, tol, int(it[0]), bool(conv[0]),
                       traces[0])


def logreg_fit_predict(Xs, ys, Xq, n_classes: int, l2_weight: float = 1.0,
                       max_iters: int = 500, tol: float = 1e-6) -> np.ndarray:
    W, b, *_ = fit_probes(Xs, ys, n_classes, l2_weight, max_iters, tol)
    return np.argmax(np.matmul(Xq, W.transpose(0, 2, 1)) + b[:, None, :], axis=2)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    mean: float
    std: float
    n_episodes: int
    C: int
    K: int
    Q: int
    seeds: list
    per_episode: list

    def summary(self) -> str:
        return f"acc = {100 * self.mean:.2f}% ± {100 * self.std:.2f}"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def score_episodes(reps: np.ndarray, episodes: Sequence[Episode],
                   fit_predict: FitPredict | None = None, chunk: int = 250) -> np.ndarray:
    """Accuracy of each episode given cached representations ``reps``."""
    if not episodes:
        return np.zeros(0)
    fit_predict = fit_predict or logreg_fit_predict
    C, K = episodes[0].support.shape
    Q = episodes[0].query.shape[1]
    ys = np.repeat(np.arange(C), K)
    yq = np.repeat(np.arange(C), Q)
    out = []
    for lo in range(0, len(episodes), chunk):
        batch = episodes[lo:lo + chunk]
        S = np.stack([ep.support.ravel() for ep in batch])
        Qi = np.stack([ep.query.ravel() for ep in batch])
        pred = fit_predict(reps[S], np.broadcast_to(ys, S.shape), reps[Qi], C)
        out.append((np.asarray(pred) == yq).mean(axis=1))
    return np.concatenate(out)


def evaluate_reps(reps: np.ndarray, labels, spec: EpisodeSpec,
                  fit_predict: FitPredict | None = None, seed: int | None = None) -> EvalReport:
    seed = spec.seed if seed is None else seed
    episodes = sample_episodes(labels, spec, seed)
    acc = score_episodes(reps, episodes, fit_predict)
    return EvalReport(float(acc.mean()), 0.0, len(acc), spec.C, spec.K, spec.Q,
                      [int(seed)], [float(a) for a in acc])


def evaluate(params, target, spec: EpisodeSpec, fit_predict: FitPredict | None = None,
             seed: int | None = None) -> EvalReport:
    """Few-shot accuracy of a frozen encoder on ``target`` (eval mode, no updates)."""
    from .model import embed_texts
    reps = embed_texts(params, target.texts)
    return evaluate_reps(reps, target.labels, spec, fit_predict, seed)


def combine_reports(reports: Sequence[EvalReport]) -> EvalReport:
    """Pool reports from several models (or episode seeds).

    ``mean`` is the mean over all episodes; ``std`` is the standard deviation
    of the per-report means (0 for a single report).
    """
    if not reports:
        raise ConfigError("no reports to combine")
    means = np.array([r.mean for r in reports])
    per = [a for r in reports for a in r.per_episode]
    r0 = reports[0]
    return EvalReport(float(np.mean(per)), float(means.std(ddof=1)) if len(means) > 1 else 0.0,
                      len(per), r0.C, r0.K, r0.Q, [s for r in reports for s in r.seeds], per)
