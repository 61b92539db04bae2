"""Dense tensors with reverse-mode automatic differentiation.

Values live in flat row-major float64 buffers (numpy arrays). Operations
compute eagerly; when a :class:`Tape` is active and an operand requires
gradients, the op also records a node so :meth:`Tape.backward` can replay
the chain rule in reverse creation order. Creation order is a topological
order by construction, so the backward pass visits every node exactly once.

The engine is deliberately small: no broadcasting beyond scalar operands,
no strided views, no mixed precision. Sizes here are desk scale, where
copies are cheap and double precision keeps finite-difference checks at
tolerance 1e-4 meaningful.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

_EPS_DEFAULT = 1e-12


class Tensor:
    """A dense n-dimensional array with an optional gradient buffer."""

    __slots__ = ("values", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)  # ascontiguousarray would promote 0-d to 1-d
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars (Python numbers) are allowed as second operand.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


class _Node:
    __slots__ = ("name", "inputs", "output", "backward_fn")

    def __init__(self, name, inputs, output, backward_fn):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


_active = threading.local()


def _current_tape():
    return getattr(_active, "tape", None)


class Tape:
    """Recording of op nodes in creation order, for one backward replay.

    Use as a context manager around the forward computation. A tape is
    single threaded; concurrent runs must each own their tape (the active
    tape is tracked per thread).
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._used = False

    def __enter__(self):
        if _current_tape() is not None:
            raise RuntimeError("a tape is already active on this thread")
        _active.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _active.tape = None
        return False

    def backward(self, output: Tensor):
        """Seed d(output)=1 and accumulate gradients into `.grad` buffers.

        `output` must be a scalar produced under this tape. Each node is
        visited exactly once, in reverse creation order.
        """
        if self._used:
            raise RuntimeError("tape already replayed; record a fresh tape")
        self._used = True
        if output.size != 1:
            raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
        for node in self.nodes:
            node.output.grad = np.zeros_like(node.output.values)
            for t in node.inputs:
                t.grad = np.zeros_like(t.values)
        if output.grad is None:
            output.grad = np.zeros_like(output.values)
        output.grad += np.ones_like(output.values)
        for node in reversed(self.nodes):
            grads = node.backward_fn(node.output.grad)
            for t, g in zip(node.inputs, grads):
                if g is not None and t.grad is not None:
                    t.grad += g


def _record(name, inputs, output, backward_fn):
    tape = _current_tape()
    if tape is not None and output.requires_grad:
        tape.nodes.append(_Node(name, inputs, output, backward_fn))
    return output


def _result(values, inputs):
    return Tensor(values, requires_grad=any(t.requires_grad for t in inputs))


def _check_same_shape(name, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# elementwise ops


def _binary(name, a, b, forward, grad_a, grad_b):
    if not isinstance(b, Tensor):
        bv = float(b)
        out = _result(forward(a.values, bv), (a,))
        return _record(name, (a,), out, lambda g: (grad_a(g, a.values, bv),))
    if b.values.ndim == 0 and a.values.ndim != 0:
        # scalar tensor operand: broadcast, gradient sums back
        out = _result(forward(a.values, b.values), (a, b))

        def back(g):
            return (
                grad_a(g, a.values, b.values),
                np.asarray(np.sum(grad_b(g, a.values, b.values))),
            )

        return _record(name, (a, b), out, back)
    _check_same_shape(name, a, b)
    out = _result(forward(a.values, b.values), (a, b))
    return _record(
        name,
        (a, b),
        out,
        lambda g: (grad_a(g, a.values, b.values), grad_b(g, a.values, b.values)),
    )


def add(a: Tensor, b) -> Tensor:
    return _binary("add", a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a: Tensor, b) -> Tensor:
    return _binary("sub", a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a: Tensor, b) -> Tensor:
    return _binary("mul", a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def relu(x: Tensor) -> Tensor:
    out = _result(np.maximum(x.values, 0.0), (x,))
    return _record("relu", (x,), out, lambda g: (g * (x.values > 0.0),))


def exp(x: Tensor) -> Tensor:
    out = _result(np.exp(x.values), (x,))
    return _record("exp", (x,), out, lambda g: (g * out.values,))


def log(x: Tensor) -> Tensor:
    out = _result(np.log(x.values), (x,))
    return _record("log", (x,), out, lambda g: (g / x.values,))


def sqrt(x: Tensor) -> Tensor:
    out = _result(np.sqrt(x.values), (x,))
    # derivative guard keeps the backward finite at 0
    return _record("sqrt", (x,), out, lambda g: (g / (2.0 * np.maximum(out.values, _EPS_DEFAULT)),))


ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "relu": relu, "exp": exp, "log": log, "sqrt": sqrt}


def elementwise(op_kind: str, a: Tensor, b=None) -> Tensor:
    """Dispatch by op kind; binary kinds need identical shapes or a scalar b."""
    fn = ELEMENTWISE.get(op_kind)
    if fn is None:
        raise ValueError(f"unknown elementwise op kind {op_kind!r}")
    if op_kind in ("add", "sub", "mul"):
        if b is None:
            raise ValueError(f"{op_kind} needs a second operand")
        return fn(a, b)
    if b is not None:
        raise ValueError(f"{op_kind} is unary")
    return fn(a)


# ---------------------------------------------------------------------------
# structural ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
    out = _result(a.values @ b.values, (a, b))
    return _record(
        "matmul", (a, b), out, lambda g: (g @ b.values.T, a.values.T @ g)
    )


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(int(i) for i in np.argsort(axes))
    out = _result(np.ascontiguousarray(np.transpose(x.values, axes)), (x,))
    return _record("permute", (x,), out, lambda g: (np.ascontiguousarray(np.transpose(g, inv)),))


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = _result(x.values.reshape(shape), (x,))
    return _record("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def concat(parts) -> Tensor:
    """Join 1-d tensors end to end; gradient slices route back to each part."""
    parts = list(parts)
    if not parts:
        raise ValueError("concat needs at least one part")
    for p in parts:
        if p.values.ndim != 1:
            raise ShapeError(f"concat needs 1-d parts, got shape {p.shape}")
    out = _result(np.concatenate([p.values for p in parts]), tuple(parts))
    offsets = np.cumsum([0] + [p.size for p in parts])

    def back(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _record("concat", tuple(parts), out, back)


def slice_axis(x: Tensor, axis: int, index: int) -> Tensor:
    """Take one slice along `axis`, dropping that axis."""
    out = _result(np.ascontiguousarray(np.take(x.values, index, axis=axis)), (x,))

    def back(g):
        gx = np.zeros_like(x.values)
        sl = [slice(None)] * x.values.ndim
        sl[axis] = index
        gx[tuple(sl)] = g
        return (gx,)

    return _record("slice_axis", (x,), out, back)


def expand_last(x: Tensor, n: int) -> Tensor:
    """Repeat values along a new trailing axis of extent n."""
    out = _result(np.repeat(x.values[..., None], n, axis=-1), (x,))
    return _record("expand_last", (x,), out, lambda g: (g.sum(axis=-1),))


def mul_colvec(x: Tensor, v: Tensor) -> Tensor:
    """Scale each row of 2-d x by the matching entry of 1-d v."""
    if x.values.ndim != 2 or v.values.ndim != 1 or x.shape[0] != v.shape[0]:
        raise ShapeError(f"mul_colvec: incompatible shapes {x.shape} and {v.shape}")
    out = _result(x.values * v.values[:, None], (x, v))
    return _record(
        "mul_colvec",
        (x, v),
        out,
        lambda g: (g * v.values[:, None], (g * x.values).sum(axis=1)),
    )


def add_rowvec(x: Tensor, b: Tensor) -> Tensor:
    """Add 1-d b to every row of 2-d x."""
    if x.values.ndim != 2 or b.values.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_rowvec: incompatible shapes {x.shape} and {b.shape}")
    out = _result(x.values + b.values[None, :], (x, b))
    return _record("add_rowvec", (x, b), out, lambda g: (g, g.sum(axis=0)))


def ssum(x: Tensor) -> Tensor:
    """Sum of all entries, as a rank-0 tensor."""
    out = _result(np.asarray(x.values.sum()), (x,))
    return _record("ssum", (x,), out, lambda g: (np.broadcast_to(g, x.shape).copy(),))


# ---------------------------------------------------------------------------
# normalized / pooling ops


def softmax_over_axis(x: Tensor, axis: int, scale: float = 1.0) -> Tensor:
    """softmax(scale * x) along `axis`, with max subtraction for stability."""
    if not -x.values.ndim <= axis < x.values.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for rank {x.values.ndim}")
    z = scale * x.values
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _result(y, (x,))

    def back(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (scale * y * (g - inner),)

    return _record("softmax", (x,), out, back)


def l2_normalize(x: Tensor, axis: int = -1, epsilon: float = _EPS_DEFAULT) -> Tensor:
    """Divide slices along `axis` by max(L2 norm, epsilon)."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    norm = np.sqrt((x.values ** 2).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, epsilon)
    y = x.values / denom
    out = _result(y, (x,))

    def back(g):
        # above the guard the norm varies with x; below it the map is linear
        inner = (g * x.values).sum(axis=axis, keepdims=True)
        live = norm > epsilon
        return (np.where(live, (g - y * inner / denom) / denom, g / epsilon),)

    return _record("l2_normalize", (x,), out, back)


def spatial_mean_pool(x: Tensor) -> Tensor:
    """Average a rank-3 h*w*c map over its spatial grid, returning (c,)."""
    if x.values.ndim != 3:
        raise ShapeError(f"spatial_mean_pool needs a rank-3 map, got shape {x.shape}")
    h, w, _ = x.shape
    out = _result(x.values.mean(axis=(0, 1)), (x,))
    return _record(
        "spatial_mean_pool",
        (x,),
        out,
        lambda g: (np.broadcast_to(g / (h * w), x.shape).copy(),),
    )


def cosine_similarity(u: Tensor, v: Tensor, epsilon: float = _EPS_DEFAULT) -> Tensor:
    """Cosine of the angle between 1-d u and v, with epsilon-guarded norms."""
    if u.values.ndim != 1 or v.values.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine_similarity needs equal-length vectors, got {u.shape}, {v.shape}")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    nu = max(float(np.linalg.norm(u.values)), epsilon)
    nv = max(float(np.linalg.norm(v.values)), epsilon)
    s = float(u.values @ v.values) / (nu * nv)
    out = _result(np.asarray(s), (u, v))

    def back(g):
        gf = float(np.reshape(g, -1)[0])
        gu = gf * (v.values / (nu * nv))
        gv = gf * (u.values / (nu * nv))
        if np.linalg.norm(u.values) > epsilon:
            gu = gu - gf * s * u.values / (nu * nu)
        if np.linalg.norm(v.values) > epsilon:
            gv = gv - gf * s * v.values / (nv * nv)
        return (gu, gv)

    return _record("cosine_similarity", (u, v), out, back)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradcheckReport:
    """Outcome of comparing tape gradients against central differences."""

    passed: bool
    max_rel_err: float
    per_input: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (input idx, flat idx, analytic, numeric, rel err)
    message: str = ""

    def __bool__(self):
        return self.passed


def _rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def gradcheck(f, inputs, h: float = 1e-4, tol: float = 1e-4) -> GradcheckReport:
    """Check tape gradients of a scalar computation against finite differences.

    `f` is a zero-argument deterministic computation returning a scalar
    Tensor; it must read its leaves from `inputs`, each of which needs
    requires_grad set. For every input entry the central difference
    (f(x+h) - f(x-h)) / 2h is compared with the tape gradient using
    relative error |a-b| / max(|a|, |b|, 1e-8); the check passes iff the
    maximum relative error stays below `tol`.
    """
    inputs = list(inputs)
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            raise ValueError(f"gradcheck input {i} does not require gradients")

    with Tape() as tape:
        out = f()
    if out.size != 1:
        raise ShapeError(f"gradcheck needs a scalar output, got shape {out.shape}")
    if not np.isfinite(out.values).all():
        return GradcheckReport(False, np.inf, message="non-finite forward output")
    tape.backward(out)
    analytic = [np.zeros_like(t.values) if t.grad is None else t.grad.copy() for t in inputs]

    failures = []
    per_input = []
    max_err = 0.0
    for i, t in enumerate(inputs):
        flat = t.values.reshape(-1)
        worst = 0.0
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = f().item()
            flat[j] = orig - h
            down = f().item()
            flat[j] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                return GradcheckReport(
                    False, np.inf, per_input, failures,
                    f"non-finite output while perturbing input {i} entry {j}",
                )
            numeric = (up - down) / (2.0 * h)
            a = analytic[i].reshape(-1)[j]
            err = float(_rel_err(a, numeric))
            worst = max(worst, err)
            if err >= tol:
                failures.append((i, j, float(a), float(numeric), err))
        per_input.append(worst)
        max_err = max(max_err, worst)

    passed = max_err < tol
    return GradcheckReport(passed, max_err, per_input, failures,
                           "" if passed else f"max relative error {max_err:.3e} >= tol {tol:.1e}")
