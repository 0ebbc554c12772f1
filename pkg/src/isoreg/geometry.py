"""Embedding-space diagnostics: isotropy, covariance/correlation, whitening.

The isotropy score of an embedding matrix V (rows are utterances) is::

    I(V) = min_c Z(c, V) / max_c Z(c, V),    Z(c, V) = sum_i exp(c . v_i)

with ``c`` ranging over the unit eigenvectors of VᵀV of the mean-centered
data.  Both signs of every eigenvector are evaluated so the score does not
depend on the eigensolver's sign convention.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation, DataFormatError, DegenerateInputError

CORR_EPS = 1e-8
WHITEN_EPS = 1e-10


def _as_2d(V) -> np.ndarray:
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2:
        raise ContractViolation(f"embedding matrix must be 2-D, got shape {V.shape}")
    return V


def center(V) -> np.ndarray:
    V = _as_2d(V)
    if V.shape[0] < 1:
        raise DegenerateInputError("cannot center an empty matrix")
    return V - V.mean(axis=0, keepdims=True)


# ---------------------------------------------------------------------------
# symmetric eigensolver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EigenBasis:
    """Eigenvalues in descending order; ``vectors[:, k]`` pairs with ``values[k]``."""
    values: np.ndarray
    vectors: np.ndarray
    sweeps: int = 0

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def _round_robin(d: int) -> list:
    """Pairings that cover every (p, q), p < q, once with disjoint pairs per round."""
    m = d + (d % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = []
        for i in range(m // 2):
            p, q = players[i], players[m - 1 - i]
            if p < d and q < d:
                pairs.append((min(p, q), max(p, q)))
        rounds.append((np.array([a for a, _ in pairs], dtype=np.intp),
                       np.array([b for _, b in pairs], dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def symmetric_eigen(S, tol: float = 1e-12, max_sweeps: int = 100,
                    sym_tol: float = 1e-10) -> EigenBasis:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Each sweep visits every off-diagonal pair (p, q) once, in round-robin
    order so that the d/2 disjoint pairs of a round are rotated together.
    Stops once all off-diagonal entries are at most ``tol`` (relative to the
    largest entry, floored at 1) or after ``max_sweeps`` sweeps.
    """
    A = np.array(_as_2d(S), copy=True)
    d = A.shape[0]
    if A.shape != (d, d):
        raise ContractViolation(f"eigen input must be square, got {A.shape}")
    scale = max(1.0, float(np.abs(A).max())) if A.size else 1.0
    if np.abs(A - A.T).max(initial=0.0) > sym_tol * scale:
        raise ContractViolation("eigen input is not symmetric")
    A = 0.5 * (A + A.T)
    Q = np.eye(d)
    thresh = tol * scale
    rounds = _round_robin(d)
    sweeps = 0
    while sweeps < max_sweeps:
        off = A - np.diag(np.diag(A))
        if np.abs(off).max(initial=0.0) <= thresh:
            break
        sweeps += 1
        for P, R in rounds:
            apq = A[P, R]
            live = np.abs(apq) > 1e-300
            if not live.any():
                continue
            P, R, apq = P[live], R[live], apq[live]
            theta = (A[R, R] - A[P, P]) / (2.0 * apq)
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            J = np.eye(d)
            J[P, P] = c
            J[R, R] = c
            J[P, R] = s
            J[R, P] = -s
            A = J.T @ A @ J
            A[P, R] = 0.0
            A[R, P] = 0.0
            Q = Q @ J
    vals = np.diag(A).copy()
    order = np.argsort(-vals, kind="stable")
    return EigenBasis(vals[order], Q[:, order], sweeps)


# ---------------------------------------------------------------------------
# isotropy
# ---------------------------------------------------------------------------

def log_partition_function(c, V) -> float:
    """log Z(c, V), computed with max-subtraction."""
    c = np.asarray(c, dtype=np.float64).ravel()
    V = _as_2d(V)
    if abs(np.linalg.norm(c) - 1.0) > 1e-10:
        raise ContractViolation("direction must have unit norm")
    if V.shape[1] != c.size:
        raise ContractViolation(f"direction has {c.size} dims, embeddings {V.shape[1]}")
    s = V @ c
    m = s.max()
    return float(m + np.log(np.exp(s - m).sum()))


def partition_function(c, V) -> float:
    """Z(c, V) = sum_i exp(c . v_i)."""
    return float(np.exp(log_partition_function(c, V)))


def isotropy(V, eigen: str = "jacobi") -> float:
    """Isotropy score in [0, 1]; 1 means perfectly isotropic.

    ``eigen="numpy"`` swaps the Jacobi solver for LAPACK (``eigh``), which is
    much faster for large d.
    """
    V = _as_2d(V)
    n, d = V.shape
    if n < 2 or d < 2:
        raise DegenerateInputError(f"isotropy needs n>=2 and d>=2, got {V.shape}")
    Vc = center(V)
    G = Vc.T @ Vc
    if not np.any(G):
        raise DegenerateInputError("all embeddings are identical")
    if eigen == "numpy":
        _, C = np.linalg.eigh(G)
    else:
        C = symmetric_eigen(G).vectors
    C = C / np.linalg.norm(C, axis=0, keepdims=True)
    S = Vc @ np.concatenate([C, -C], axis=1)
    m = S.max(axis=0)
    logz = m + np.log(np.exp(S - m).sum(axis=0))
    return float(np.exp(logz.min() - logz.max()))


# ---------------------------------------------------------------------------
# second-order statistics
# ---------------------------------------------------------------------------

def covariance(V) -> np.ndarray:
    """Unbiased sample covariance (1/(n-1))."""
    V = _as_2d(V)
    n = V.shape[0]
    if n < 2:
        raise DegenerateInputError("covariance needs at least two rows")
    Vc = center(V)
    C = Vc.T @ Vc / (n - 1)
    return 0.5 * (C + C.T)


def correlation(V, eps: float = CORR_EPS) -> np.ndarray:
    """Pearson correlation with an ``eps`` floor on each variance."""
    C = covariance(V)
    std = np.sqrt(np.diag(C) + eps)
    R = C / np.outer(std, std)
    return 0.5 * (R + R.T)


# ---------------------------------------------------------------------------
# whitening
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WhiteningMap:
    mean: np.ndarray
    transform: np.ndarray

    def apply(self, V) -> np.ndarray:
        return apply_whitening(self, V)


def fit_whitening(V, eps: float = WHITEN_EPS) -> WhiteningMap:
    """PCA whitening: transform = Q diag((lambda + eps)^-1/2)."""
    V = _as_2d(V)
    mean = V.mean(axis=0)
    basis = symmetric_eigen(covariance(V))
    lam = np.clip(basis.values, 0.0, None)
    return WhiteningMap(mean, basis.vectors / np.sqrt(lam + eps))


def apply_whitening(wmap: WhiteningMap, V) -> np.ndarray:
    V = _as_2d(V)
    if V.shape[1] != wmap.mean.size:
        raise ContractViolation(
            f"whitening map expects {wmap.mean.size} dims, got {V.shape[1]}")
    return (V - wmap.mean) @ wmap.transform


# ---------------------------------------------------------------------------
# text format: "n d" header then n rows of d floats
# ---------------------------------------------------------------------------

def save_embeddings(path, V) -> None:
    V = _as_2d(V)
    lines = [f"{V.shape[0]} {V.shape[1]}"]
    lines += [" ".join(repr(float(x)) for x in row) for row in V]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_embeddings(path) -> np.ndarray:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot read embeddings file {path}: {exc}") from exc
    rows = [ln for ln in text.split("\n") if ln.strip()]
    if not rows:
        raise DataFormatError("empty embeddings file", line=1)
    head = rows[0].split()
    try:
        n, d = int(head[0]), int(head[1])
        if len(head) != 2 or n < 0 or d < 0:
            raise ValueError
    except (ValueError, IndexError):
        raise DataFormatError("header must be 'n d'", line=1) from None
    if len(rows) - 1 != n:
        raise DataFormatError(f"header declares {n} rows, found {len(rows) - 1}")
    out = np.empty((n, d))
    for i, ln in enumerate(rows[1:]):
        parts = ln.split()
        if len(parts) != d:
            raise DataFormatError(f"expected {d} values, found {len(parts)}", line=i + 2)
        try:
            out[i] = [float(p) for p in parts]
        except ValueError:
            raise DataFormatError("non-numeric value", line=i + 2) from None
    if not np.isfinite(out).all():
        raise DataFormatError("embeddings contain NaN or Inf")
    return out
