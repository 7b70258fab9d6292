"""Dense tensors with reverse-mode differentiation, Adam, and .ten file I/O.

Everything in this toolkit trains on the CPU through this module: a
numpy-backed ``Tensor`` that records the operations applied to it, a
``backward`` pass that walks the recorded graph once in reverse
topological order, an Adam optimizer, and a central finite-difference
harness used by the verification suite and the ``gradcheck`` command.

Tensors are treated as immutable once created. The only sanctioned
mutation is ``adam_step`` writing updated values into parameter buffers,
so sharing tensors across threads for reading is safe while a training
loop (record + backward + step) stays single-threaded.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NumericError",
    "Tensor",
    "add",
    "sub",
    "scalar_mul",
    "weighted_sum",
    "sum_all",
    "l1_loss",
    "zero_grads",
    "AdamState",
    "adam_step",
    "GradCheckResult",
    "finite_diff_check",
    "save_ten",
    "load_ten",
]

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class NumericError(RuntimeError):
    """A computation produced NaN/Inf or diverged past its guard."""


class Tensor:
    """N-dimensional float array with optional gradient tracking.

    The canonical image layout is (batch, channels, height, width).
    A tensor created with ``requires_grad=True`` owns a same-shape
    ``grad`` buffer that ``backward`` accumulates into additively;
    intermediate results allocate their buffers lazily during backward.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        # Graph record: parent tensors and the rule that routes this
        # node's gradient to them. Leaves keep (), None.
        self._parents: tuple = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def check_finite(self, context: str = "tensor") -> "Tensor":
        """Validity gate: raise NumericError if any value is NaN/Inf."""
        if not self.is_finite():
            bad = int(np.size(self.data) - np.isfinite(self.data).sum())
            raise NumericError(
                f"{context}: {bad} non-finite value(s) in tensor of shape {self.shape}"
            )
        return self

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0
        elif self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        """Reverse-mode pass from a scalar result.

        Visits every recorded node exactly once, in reverse topological
        order, accumulating gradients additively into each parent. Every
        parameter reachable from this tensor receives its gradient;
        unreachable parameters are simply never touched.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar, got shape {self.shape}"
            )
        order = _toposort(self)
        for node in order:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
        self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"


def _toposort(root: Tensor) -> list:
    """Parents-first ordering of the graph below ``root`` (iterative DFS)."""
    order: list = []
    seen: set = set()
    stack: list = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _tracked(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._backward_fn is not None for t in tensors)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _record(out: Tensor, parents: tuple, fn) -> Tensor:
    if _tracked(*parents):
        out._parents = parents
        out._backward_fn = fn
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; shapes must match exactly (no broadcasting)."""
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def _bwd(g):
        _accum(a, g)
        _accum(b, g)

    return _record(out, (a, b), _bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise difference; shapes must match exactly."""
    if a.shape != b.shape:
        raise ValueError(f"sub: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data - b.data)

    def _bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return _record(out, (a, b), _bwd)


def scalar_mul(s, x: Tensor) -> Tensor:
    """Scale a tensor by a python float or a single-element tensor.

    The tensor form exists for learnable step sizes: the scalar then
    receives the gradient sum(g * x).
    """
    if isinstance(s, Tensor):
        if s.data.size != 1:
            raise ValueError(f"scalar_mul: scale must be one element, got shape {s.shape}")
        sval = s.data.reshape(())
        out = Tensor(sval * x.data)

        def _bwd(g):
            _accum(x, sval * g)
            _accum(s, np.sum(g * x.data).reshape(s.shape).astype(s.dtype))

        return _record(out, (s, x), _bwd)

    sval = float(s)
    out = Tensor(np.asarray(sval, dtype=x.dtype) * x.data)

    def _bwd_const(g):
        _accum(x, np.asarray(sval, dtype=x.dtype) * g)

    return _record(out, (x,), _bwd_const)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar projection sum(x * weights) against a fixed weight array.

    Used by the gradient-check harness to reduce a tensor-valued op to a
    scalar that exercises its whole Jacobian.
    """
    w = np.asarray(weights, dtype=x.dtype)
    if w.shape != x.shape:
        raise ValueError(f"weighted_sum: shape mismatch {x.shape} vs {w.shape}")
    out = Tensor(np.asarray(np.sum(x.data * w), dtype=x.dtype))

    def _bwd(g):
        _accum(x, w * g)

    return _record(out, (x,), _bwd)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = Tensor(np.asarray(np.sum(x.data), dtype=x.dtype))

    def _bwd(g):
        _accum(x, np.broadcast_to(g, x.shape).astype(x.dtype, copy=False))

    return _record(out, (x,), _bwd)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error, reduced over every element.

    Subgradient convention: sign(0) = 0 exactly at ties.
    """
    if pred.shape != target.shape:
        raise ValueError(f"l1_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out = Tensor(np.asarray(np.mean(np.abs(diff)), dtype=pred.dtype))

    def _bwd(g):
        s = np.sign(diff) * (g / diff.size)
        _accum(pred, s.astype(pred.dtype, copy=False))
        _accum(target, (-s).astype(target.dtype, copy=False))

    return _record(out, (pred, target), _bwd)


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


@dataclass
class AdamState:
    """First/second moment buffers and step counter for Adam."""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr: float = 5e-4, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        params = list(params)
        return cls(
            lr=lr, beta1=beta1, beta2=beta2, eps=eps, t=0,
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(params, grads, state: AdamState) -> None:
    """One bias-corrected Adam update, in place on the parameter buffers.

    update = lr * mhat / (sqrt(vhat) + eps), with mhat = m / (1 - b1^t)
    and vhat = v / (1 - b2^t). Deterministic: no randomness, fixed order.
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError(
            f"adam_step: got {len(params)} params, {len(grads)} grads, "
            f"state sized {len(state.m)}"
        )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g)
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ValueError(
                f"adam_step: shape mismatch param {p.data.shape}, grad {g.shape}, "
                f"state {m.shape}"
            )
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        p.data -= state.lr * mhat / (np.sqrt(vhat) + state.eps)


@dataclass
class GradCheckResult:
    """Outcome of one finite-difference comparison."""

    passed: bool
    max_rel_err: float
    per_input: list

    def __str__(self):
        word = "ok" if self.passed else "FAIL"
        return f"{word} max_rel_err={self.max_rel_err:.3e}"


def _rel_err(a: float, n: float) -> float:
    # Central differences at eps=1e-6 carry cancellation noise around
    # 1e-10 * |f|, so coordinates whose gradient sits below 1e-5 cannot
    # support a relative comparison; they are held to the tolerance as an
    # absolute difference instead.
    scale = max(abs(a), abs(n))
    if scale < 1e-5:
        return abs(a - n)
    return abs(a - n) / scale


def finite_diff_check(fn, inputs, eps: float = 1e-6, tol: float = 1e-5) -> GradCheckResult:
    """Compare analytic gradients of a scalar function with central differences.

    ``fn`` maps leaf tensors to a scalar tensor and must be pure (it is
    re-evaluated many times). Inputs are copied to 64-bit leaves; the
    numeric derivative for each element is (f(x+eps) - f(x-eps)) / (2 eps).
    Failures are reported in the result, never raised.
    """
    leaves = [Tensor(t.data.astype(np.float64), requires_grad=True) for t in inputs]
    out = fn(*leaves)
    out.backward()
    analytic = [leaf.grad.copy() for leaf in leaves]

    def run() -> float:
        return float(fn(*[Tensor(leaf.data) for leaf in leaves]).data)

    per_input = []
    for leaf, ana in zip(leaves, analytic):
        worst = 0.0
        flat = leaf.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = run()
            flat[i] = orig - eps
            fm = run()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            worst = max(worst, _rel_err(float(ana.reshape(-1)[i]), numeric))
        per_input.append(worst)
    max_err = max(per_input) if per_input else 0.0
    return GradCheckResult(passed=max_err < tol, max_rel_err=max_err, per_input=per_input)


# .ten container: magic "TEN1", u8 rank, rank u32 little-endian dims,
# float32 little-endian payload in row-major order.

TEN_MAGIC = b"TEN1"


def save_ten(path, array) -> None:
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    if arr.ndim > 255:
        raise ValueError(f"save_ten: rank {arr.ndim} exceeds 255")
    with open(path, "wb") as fh:
        fh.write(TEN_MAGIC)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def load_ten(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != TEN_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, expected {TEN_MAGIC!r}")
    rank = raw[4]
    header_end = 5 + 4 * rank
    if len(raw) < header_end:
        raise ValueError(f"{path}: truncated header")
    dims = struct.unpack(f"<{rank}I", raw[5:header_end])
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = raw[header_end:]
    if len(payload) != 4 * count:
        raise ValueError(
            f"{path}: payload holds {len(payload) // 4} floats, dims {dims} need {count}"
        )
    arr = np.frombuffer(payload, dtype="<f4", count=count).reshape(dims)
    return arr.astype(np.float32, copy=True)
