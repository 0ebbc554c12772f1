"""Dense float64 arithmetic, seeded randomness and a small reverse-mode autodiff.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.  Differentiable
computations are recorded by wrapping arrays in :class:`Tensor`; calling
:func:`backward` on a scalar result walks the recorded graph in reverse
topological order.

Randomness always comes from :func:`make_rng`, which returns a
``numpy.random.Generator`` driven by the PCG64 bit generator (O'Neill's
permuted congruential generator, 128-bit state).  PCG64 streams are
bit-for-bit reproducible across platforms for a given seed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ContractViolation, EvaluationError, UsageError

Rng = np.random.Generator

DTYPE = np.float64


def make_rng(seed: int) -> Rng:
    """PCG64 generator seeded through ``SeedSequence(seed)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic child seed for a (seed, keys...) tuple."""
    ss = np.random.SeedSequence([int(seed), *map(int, keys)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=DTYPE)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ContractViolation(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(
            f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


# ---------------------------------------------------------------------------
# reverse-mode autodiff
# ---------------------------------------------------------------------------

def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An array node in a recorded computation.

    Leaves created with ``requires_grad=True`` accumulate ``.grad`` after
    :func:`backward`.  Constants (``requires_grad=False`` and no parents) are
    never differentiated through.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    @staticmethod
    def _make(data, parents, backward) -> "Tensor":
        live = tuple(p for p in parents if p.requires_grad)
        if not live:
            return Tensor(data)
        return Tensor(data, True, parents, backward)

    # -- elementwise arithmetic -------------------------------------------

    def __add__(self, other):
        other = lift(other)
        out = self.data + other.data

        def back(g):
            return _unbroadcast(g, self.shape), _unbroadcast(g, other.shape)
        return Tensor._make(out, (self, other), back)

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = lift(other)
        out = self.data - other.data

        def back(g):
            return _unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)
        return Tensor._make(out, (self, other), back)

    def __rsub__(self, other):
        return lift(other) - self

    def __mul__(self, other):
        other = lift(other)
        a, b = self.data, other.data

        def back(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)
        return Tensor._make(a * b, (self, other), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = lift(other)
        a, b = self.data, other.data
        out = a / b

        def back(g):
            return (_unbroadcast(g / b, a.shape),
                    _unbroadcast(-g * out / b, b.shape))
        return Tensor._make(out, (self, other), back)

    def __rtruediv__(self, other):
        return lift(other) / self

    def __pow__(self, k: float):
        if isinstance(k, Tensor):
            raise ContractViolation("only constant exponents are supported")
        a = self.data
        out = a ** k
        return Tensor._make(out, (self,), lambda g: (g * k * a ** (k - 1),))

    def __matmul__(self, other):
        other = lift(other)
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ContractViolation(
                f"matmul dimension mismatch: {a.shape} x {b.shape}")

        def back(g):
            return g @ b.T, a.T @ g
        return Tensor._make(a @ b, (self, other), back)

    def __rmatmul__(self, other):
        return lift(other) @ self

    # -- shape ops ---------------------------------------------------------

    @property
    def T(self):
        return Tensor._make(self.data.T, (self,), lambda g: (g.T,))

    def reshape(self, *shape):
        old = self.shape
        return Tensor._make(self.data.reshape(*shape), (self,),
                            lambda g: (g.reshape(old),))

    def __getitem__(self, idx):
        shape = self.shape

        def back(g):
            full = np.zeros(shape)
            np.add.at(full, idx, g)
            return (full,)
        return Tensor._make(self.data[idx], (self,), back)

    # -- reductions --------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        shape = self.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)
        return Tensor._make(out, (self,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- unary functions ---------------------------------------------------

    def exp(self):
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self):
        a = self.data
        return Tensor._make(np.log(a), (self,), lambda g: (g / a,))

    def sqrt(self):
        out = np.sqrt(self.data)

        def back(g):
            # subgradient 0 at the origin (a zero row under the cosine norm)
            safe = np.where(out > 0, out, 1.0)
            return (np.where(out > 0, g * 0.5 / safe, 0.0),)
        return Tensor._make(out, (self,), back)

    def relu(self):
        mask = self.data > 0
        return Tensor._make(self.data * mask, (self,), lambda g: (g * mask,))

    def tanh(self):
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), lambda g: (g * (1 - out * out),))


def lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    """Stable log-sum-exp along ``axis`` (keeps no dimension)."""
    a = x.data
    m = a.max(axis=axis, keepdims=True)
    s = np.exp(a - m)
    tot = s.sum(axis=axis, keepdims=True)
    out = (np.log(tot) + m).squeeze(axis)
    soft = s / tot

    def back(g):
        return (np.expand_dims(g, axis) * soft,)
    return Tensor._make(out, (x,), back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    a = x.data
    m = a.max(axis=axis, keepdims=True)
    z = a - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def back(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)
    return Tensor._make(out, (x,), back)


def embedding_bag_mean(table: Tensor, ids: np.ndarray, segments: np.ndarray,
                       n_segments: int) -> Tensor:
    """Mean of ``table`` rows per segment.

    ``ids[k]`` is a row of ``table`` and ``segments[k]`` the output row it is
    pooled into.  Every segment must own at least one id.
    """
    counts = np.bincount(segments, minlength=n_segments).astype(DTYPE)
    if np.any(counts == 0):
        raise ContractViolation("every sequence needs at least one token")
    inv = 1.0 / counts
    out = np.zeros((n_segments, table.shape[1]))
    np.add.at(out, segments, table.data[ids])
    out *= inv[:, None]
    weights = inv[segments][:, None]
    rows = table.shape[0]

    def back(g):
        full = np.zeros((rows, g.shape[1]))
        np.add.at(full, ids, g[segments] * weights)
        return (full,)
    return Tensor._make(out, (table,), back)


def _toposort(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf reachable from loss."""
    if not isinstance(loss, Tensor):
        raise UsageError("backward needs the Tensor produced by a forward pass")
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("backward called on a value with no recorded forward graph")
    if not np.isfinite(loss.data).all():
        raise EvaluationError("loss is not finite")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg


def grad(loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
         params: Mapping[str, np.ndarray]) -> dict:
    """Analytic gradient of ``loss_fn`` with respect to every array in ``params``."""
    leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    loss = loss_fn(leaves)
    backward(loss)
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for k, t in leaves.items()}


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def flatten(arrays: Mapping[str, np.ndarray], keys: Iterable[str] | None = None) -> np.ndarray:
    keys = list(arrays) if keys is None else list(keys)
    if not keys:
        return np.zeros(0)
    return np.concatenate([np.asarray(arrays[k], dtype=DTYPE).ravel() for k in keys])


def finite_diff_grad(loss_fn: Callable[[Mapping[str, np.ndarray]], float],
                     params: Mapping[str, np.ndarray],
                     step: float = 1e-5,
                     keys: Iterable[str] | None = None) -> np.ndarray:
    """Central-difference gradient, flattened in ``keys`` order.

    ``loss_fn`` receives a dict of arrays and must be deterministic.  A bare
    ndarray is accepted for ``params`` and treated as a single entry.
    """
    if step <= 0:
        raise ContractViolation("finite-difference step must be positive")
    if isinstance(params, np.ndarray) or np.isscalar(params):
        arr = np.atleast_1d(np.asarray(params, dtype=DTYPE))
        return finite_diff_grad(lambda p: loss_fn(p["x"]), {"x": arr}, step)
    work = {k: np.array(v, dtype=DTYPE, copy=True) for k, v in params.items()}
    keys = list(work) if keys is None else list(keys)
    out = []
    for k in keys:
        arr = work[k]
        flat = arr.reshape(-1)
        g = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(loss_fn(work))
            flat[i] = orig - step
            fm = float(loss_fn(work))
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise EvaluationError(f"non-finite loss while differencing {k}[{i}]")
            g[i] = (fp - fm) / (2 * step)
        out.append(g)
    return np.concatenate(out) if out else np.zeros(0)


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    parameter_count: int
    step_size: float

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a-n| / max(|a|, |n|, floor) elementwise.

    The floor keeps coordinates whose true gradient is ~0 from dividing
    rounding noise by a tiny denominator.
    """
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def gradcheck(loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
              params: Mapping[str, np.ndarray],
              step: float = 1e-5,
              keys: Iterable[str] | None = None) -> GradCheckReport:
    """Compare :func:`grad` against :func:`finite_diff_grad` on ``keys``."""
    keys = list(params) if keys is None else list(keys)
    analytic = grad(loss_fn, params)
    a = flatten(analytic, keys)

    def scalar(p):
        return loss_fn({k: Tensor(v) for k, v in p.items()}).item()
    n = finite_diff_grad(scalar, params, step, keys)
    return GradCheckReport(relative_error(a, n), int(a.size), step)
