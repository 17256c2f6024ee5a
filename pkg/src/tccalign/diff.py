"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A `Tensor` wraps an immutable row-major numpy float64 array.  Operations on
tensors that (transitively) depend on a trainable leaf are recorded on a
`Tape`; `backward` replays the tape once, in reverse, and returns gradients
for every leaf.  Tensors built purely from constants stay off the tape, so
the same op functions double as a plain forward evaluator.

Shapes are explicit.  Elementwise ops require equal shapes; the single
broadcasting rule is that a scalar (shape ``()``) combines with any shape.
Everything is float64: the losses downstream exponentiate negative squared
distances, and float32 underflow would make finite-difference checks flaky.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class ContractError(ValueError):
    """An operation precondition (other than shape) was violated."""


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ContractError("tensor data must be finite (no NaN/Inf)")
    return arr


class Tensor:
    """A dense float64 value, optionally recorded on a tape for gradients."""

    __slots__ = ("data", "tape", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, tape=None, requires_grad=False, parents=(), vjp=None):
        self.data = data if isinstance(data, np.ndarray) else _as_array(data)
        self.tape = tape
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, taped={self.tape is not None})"

    # Arithmetic sugar; floats and arrays are wrapped as constants.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(constant(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(constant(other), self)

    def __neg__(self):
        return neg(self)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def reshape(self, shape):
        return reshape(self, shape)


class Tape:
    """Append-only record of executed operations, topological by construction.

    A tape is single-threaded; independent tapes may run on distinct threads.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def leaf(self, data) -> Tensor:
        """Register a trainable leaf; `backward` reports its gradient."""
        t = Tensor(_as_array(data), tape=self, requires_grad=True)
        self.nodes.append(t)
        return t


def constant(data) -> Tensor:
    """Wrap data as an untracked constant."""
    if isinstance(data, Tensor):
        return data
    return Tensor(_as_array(data))


def _record(data: np.ndarray, parents, vjp) -> Tensor:
    """Create an op result; it lands on a tape only if some parent is tracked."""
    tape = None
    for p in parents:
        if p.requires_grad:
            if tape is None:
                tape = p.tape
            elif p.tape is not tape:
                raise ContractError("operands belong to different tapes")
    if tape is None:
        return Tensor(data)
    t = Tensor(data, tape=tape, requires_grad=True, parents=tuple(parents), vjp=vjp)
    tape.nodes.append(t)
    return t


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _binary_shapes(a: Tensor, b: Tensor, opname: str):
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"{opname}: incompatible shapes {a.shape} vs {b.shape}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    # Only scalar-vs-anything broadcasting exists, so collapse to () if needed.
    if shape == () and g.shape != ():
        return np.asarray(g.sum())
    return g


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "add")
    out = a.data + b.data

    def vjp(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _record(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "sub")
    out = a.data - b.data

    def vjp(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return _record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "mul")
    out = a.data * b.data

    def vjp(g):
        return ((a, _unbroadcast(g * b.data, a.shape)),
                (b, _unbroadcast(g * a.data, b.shape)))

    return _record(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "div")
    out = a.data / b.data

    def vjp(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return ((a, _unbroadcast(ga, a.shape)), (b, _unbroadcast(gb, b.shape)))

    return _record(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = _coerce(a)
    return _record(-a.data, (a,), lambda g: ((a, -g),))


def exp(a) -> Tensor:
    a = _coerce(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: ((a, g * out),))


def log(a) -> Tensor:
    a = _coerce(a)
    if np.any(a.data <= 0.0):
        raise ContractError("log requires strictly positive inputs")
    return _record(np.log(a.data), (a,), lambda g: ((a, g / a.data),))


def relu(a) -> Tensor:
    a = _coerce(a)
    mask = a.data > 0.0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: ((a, g * mask),))


def clamp_min(a, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient passes only where a > floor."""
    a = _coerce(a)
    mask = a.data > floor
    out = np.where(mask, a.data, floor)
    return _record(out, (a,), lambda g: ((a, g * mask),))


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return _record(out, (a, b), vjp)


def add_rowvec(m, v) -> Tensor:
    """Add a length-d vector to every row of an n-by-d matrix."""
    m, v = _coerce(m), _coerce(v)
    if m.data.ndim != 2 or v.data.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"add_rowvec: incompatible shapes {m.shape} + {v.shape}")
    out = m.data + v.data

    def vjp(g):
        return ((m, g), (v, g.sum(axis=0)))

    return _record(out, (m, v), vjp)


def pairwise_sq_dist(a, b) -> Tensor:
    """Squared Euclidean distances between all rows of a and all rows of b.

    out[i, j] = sum_c (a[i, c] - b[j, c])**2, computed via the Gram expansion
    with a clamp at zero to absorb cancellation error.
    """
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(
            f"pairwise_sq_dist: feature dims differ {a.shape} vs {b.shape}")
    if a.shape[1] < 1:
        raise ShapeError("pairwise_sq_dist: feature dimension must be >= 1")
    aa = np.einsum("ij,ij->i", a.data, a.data)
    bb = np.einsum("ij,ij->i", b.data, b.data)
    out = np.maximum(aa[:, None] + bb[None, :] - 2.0 * (a.data @ b.data.T), 0.0)

    def vjp(g):
        rs = g.sum(axis=1)
        cs = g.sum(axis=0)
        ga = 2.0 * (rs[:, None] * a.data - g @ b.data)
        gb = 2.0 * (cs[:, None] * b.data - g.T @ a.data)
        return ((a, ga), (b, gb))

    return _record(out, (a, b), vjp)


def weighted_sum(v, w) -> Tensor:
    """Combination sum_j w[j] * v[j, :] of matrix rows."""
    v, w = _coerce(v), _coerce(w)
    if v.data.ndim != 2 or w.data.ndim != 1 or v.shape[0] != w.shape[0]:
        raise ShapeError(f"weighted_sum: incompatible shapes {v.shape}, {w.shape}")
    out = w.data @ v.data

    def vjp(g):
        return ((v, np.outer(w.data, g)), (w, v.data @ g))

    return _record(out, (v, w), vjp)


# ---------------------------------------------------------------------------
# Softmax
# ---------------------------------------------------------------------------

def softmax(x) -> Tensor:
    """Stable softmax of a vector (max-subtraction)."""
    x = _coerce(x)
    if x.data.ndim != 1 or x.size < 1:
        raise ShapeError(f"softmax expects a nonempty vector, got shape {x.shape}")
    z = np.exp(x.data - x.data.max())
    s = z / z.sum()

    def vjp(g):
        return ((x, s * (g - float(s @ g))),)

    return _record(s, (x,), vjp)


def softmax_rows(x) -> Tensor:
    """Stable softmax applied independently to each matrix row."""
    x = _coerce(x)
    if x.data.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"softmax_rows expects a nonempty matrix, got {x.shape}")
    z = np.exp(x.data - x.data.max(axis=1, keepdims=True))
    s = z / z.sum(axis=1, keepdims=True)

    def vjp(g):
        return ((x, s * (g - (s * g).sum(axis=1, keepdims=True))),)

    return _record(s, (x,), vjp)


# ---------------------------------------------------------------------------
# Reductions, indexing, reshaping
# ---------------------------------------------------------------------------

def sum_all(a) -> Tensor:
    a = _coerce(a)
    out = np.asarray(a.data.sum())
    return _record(out, (a,), lambda g: ((a, np.broadcast_to(g, a.shape).copy()),))


def mean_all(a) -> Tensor:
    a = _coerce(a)
    if a.size < 1:
        raise ShapeError("mean of an empty tensor")
    n = a.size
    out = np.asarray(a.data.mean())
    return _record(
        out, (a,), lambda g: ((a, np.broadcast_to(g / n, a.shape).copy()),))


def row_sums(a) -> Tensor:
    """Sum over each row of a matrix, yielding a vector."""
    a = _coerce(a)
    if a.data.ndim != 2:
        raise ShapeError(f"row_sums expects a matrix, got shape {a.shape}")
    out = a.data.sum(axis=1)

    def vjp(g):
        return ((a, np.repeat(g[:, None], a.shape[1], axis=1)),)

    return _record(out, (a,), vjp)


def gather_rows(m, indices) -> Tensor:
    """Select rows of a matrix by index (repeats allowed)."""
    m = _coerce(m)
    if m.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a matrix, got shape {m.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("gather_rows expects a flat index list")
    if idx.size and (idx.min() < 0 or idx.max() >= m.shape[0]):
        raise ContractError("gather_rows: row index out of range")
    out = m.data[idx]

    def vjp(g):
        gm = np.zeros_like(m.data)
        np.add.at(gm, idx, g)
        return ((m, gm),)

    return _record(out, (m,), vjp)


def pick(v, i: int) -> Tensor:
    """Extract element i of a vector as a scalar."""
    v = _coerce(v)
    if v.data.ndim != 1:
        raise ShapeError(f"pick expects a vector, got shape {v.shape}")
    if not 0 <= i < v.shape[0]:
        raise ContractError(f"pick: index {i} out of range for length {v.shape[0]}")
    out = np.asarray(v.data[i])

    def vjp(g):
        gv = np.zeros_like(v.data)
        gv[i] = g
        return ((v, gv),)

    return _record(out, (v,), vjp)


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    orig = a.shape
    return _record(
        a.data.reshape(shape), (a,), lambda g: ((a, g.reshape(orig)),))


def logsumexp(x) -> Tensor:
    """log(sum(exp(x))) of a vector, stabilized against overflow.

    The shift is a detached constant, which leaves the gradient exact.
    """
    x = _coerce(x)
    if x.data.ndim != 1 or x.size < 1:
        raise ShapeError(f"logsumexp expects a nonempty vector, got {x.shape}")
    m = float(x.data.max())
    return add(log(sum_all(exp(sub(x, constant(m))))), constant(m))


def softplus(x) -> Tensor:
    """log(1 + exp(x)), elementwise, stabilized for large |x|."""
    x = _coerce(x)
    m = clamp_min(x, 0.0)
    return add(m, log(add(exp(sub(x, m)), exp(neg(m)))))


# ---------------------------------------------------------------------------
# Backward pass and gradient checking
# ---------------------------------------------------------------------------

def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss)/d(node) through the tape, reverse topological order.

    Returns a gradient for every leaf on the tape (zeros for leaves the loss
    does not depend on).  Each node is visited exactly once.
    """
    if loss.shape != ():
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    if loss.tape is not tape:
        raise ContractError("loss was not produced on this tape")
    pending: dict[int, np.ndarray] = {id(loss): np.ones(())}
    grads: dict[Tensor, np.ndarray] = {}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node), None)
        if node._vjp is None:  # leaf
            grads[node] = g if g is not None else np.zeros_like(node.data)
            continue
        if g is None:
            continue
        for parent, pg in node._vjp(g):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
    return grads


@dataclass
class GradCheckReport:
    """Outcome of comparing reverse-mode gradients to central differences."""

    max_rel_error: float
    checked: int
    skipped: int
    tol: float
    passed: bool
    worst: tuple[int, int] = (-1, -1)  # (param index, flat component)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max_rel_error={self.max_rel_error:.3e} "
                f"tol={self.tol:.1e} checked={self.checked} skipped={self.skipped}")


def grad_check(f, params, step: float = 1e-5, tol: float = 1e-4,
               threshold: float = 1e-8) -> GradCheckReport:
    """Compare the taped gradient of f against central finite differences.

    f(tape, leaves) must build and return a scalar Tensor from the given leaf
    tensors.  Components where both gradients are below `threshold` in
    magnitude are skipped; the rest must agree to relative error < tol.
    """
    if step <= 0:
        raise ContractError("finite-difference step must be positive")
    params = [_as_array(p).copy() for p in (
        params if isinstance(params, (list, tuple)) else [params])]

    tape = Tape()
    leaves = [tape.leaf(p) for p in params]
    loss = f(tape, leaves)
    grads = backward(tape, loss)
    analytic = [grads[leaf] for leaf in leaves]

    def eval_at(arrays) -> float:
        t = Tape()
        return float(f(t, [t.leaf(a) for a in arrays]).data)

    max_rel = 0.0
    checked = skipped = 0
    worst = (-1, -1)
    for pi, base in enumerate(params):
        flat = base.ravel()
        a_flat = analytic[pi].ravel()
        for ci in range(flat.size):
            orig = flat[ci]
            flat[ci] = orig + step
            up = eval_at(params)
            flat[ci] = orig - step
            down = eval_at(params)
            flat[ci] = orig
            numeric = (up - down) / (2.0 * step)
            scale = max(abs(a_flat[ci]), abs(numeric))
            if scale <= threshold:
                skipped += 1
                continue
            rel = abs(a_flat[ci] - numeric) / scale
            checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = (pi, ci)
    return GradCheckReport(max_rel_error=max_rel, checked=checked,
                           skipped=skipped, tol=tol, passed=max_rel < tol,
                           worst=worst)
