"""Dense float64 tensors with a reverse-mode differentiation tape.

Everything in this package runs at desk scale, so the engine favors
precision and debuggability over throughput: all storage is float64,
every forward op validates shapes and checks its output for NaN/Inf,
and tensors are immutable once created.

A ``Tape`` records operations while it is active (``with Tape() as t:``).
Tapes are thread-local; running without an active tape gives plain
forward evaluation with nothing recorded, which is what decoding uses.
"""

import math
import threading

import numpy as np


class ShapeMismatch(ValueError):
    """Input shapes do not conform to the primitive's contract."""


class NonFiniteValue(ArithmeticError):
    """A forward op produced NaN or Inf."""


class UnknownOp(ValueError):
    """op_apply was called with an unrecognized primitive name."""


class TapeError(RuntimeError):
    """Misuse of the tape (missing scalar loss, node not on tape, ...)."""


class Tensor:
    """Immutable dense array. ``node_id`` is assigned lazily by the tape
    that first sees the tensor; constants never get one."""

    __slots__ = ("values", "requires_grad", "node_id", "_tape_token")

    def __init__(self, values, requires_grad=False):
        arr = np.array(values, dtype=np.float64, copy=True, order="C")
        arr.flags.writeable = False
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = None
        self._tape_token = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self):
        if self.values.size != 1:
            raise ShapeMismatch(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def replace_values(self, values):
        """Swap this parameter's value buffer between training steps.

        Arrays stay immutable; only the reference moves, so any tape that
        saved the old buffer keeps a consistent view. Must not be called
        while a tape referencing this tensor is still to be backpropped.
        """
        if not self.requires_grad:
            raise ValueError("only parameters may have their values replaced")
        arr = np.ascontiguousarray(values, dtype=np.float64)
        if arr.shape != self.values.shape:
            raise ShapeMismatch(f"replacement shape {arr.shape} != {self.values.shape}")
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        self.values = arr

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _wrap(values, requires_grad=False):
    """Internal constructor that skips the defensive copy."""
    t = Tensor.__new__(Tensor)
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.flags.writeable:
        arr.flags.writeable = False
    t.values = arr
    t.requires_grad = requires_grad
    t.node_id = None
    t._tape_token = None
    return t


_ACTIVE = threading.local()


def _active_tape():
    stack = getattr(_ACTIVE, "stack", None)
    if not stack:
        return None
    return stack[-1]


class Tape:
    """Ordered record of operations; inputs always precede their op."""

    def __init__(self):
        self._ops = []  # (kind, input_ids, output_id, backward_fn)
        self._next_id = 0
        self._token = object()

    def __enter__(self):
        stack = getattr(_ACTIVE, "stack", None)
        if stack is None:
            stack = _ACTIVE.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.stack.pop()
        return False

    def _node(self, tensor):
        """Assign (or fetch) this tensor's node id on this tape."""
        if tensor._tape_token is not self._token:
            tensor._tape_token = self._token
            tensor.node_id = self._next_id
            self._next_id += 1
        return tensor.node_id

    def _record(self, kind, inputs, output, backward_fn):
        in_ids = tuple(self._node(t) if t.requires_grad else None for t in inputs)
        out_id = self._node(output)
        self._ops.append((kind, in_ids, out_id, backward_fn))

    def __len__(self):
        return len(self._ops)

    def backward(self, loss):
        """Backpropagate from a scalar loss recorded on this tape.

        Returns a :class:`Gradients` map (node_id -> Tensor); every
        requires_grad tensor that participated has an entry.
        """
        if loss.values.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        if loss._tape_token is not self._token or loss.node_id is None:
            raise TapeError("loss was not produced on this tape")
        grads = {loss.node_id: np.ones_like(loss.values)}
        # Reverse sweep; each recorded op is visited exactly once and ops
        # are stored topologically, so all uses of a node are consumed
        # before the node itself propagates.
        for kind, in_ids, out_id, backward_fn in reversed(self._ops):
            g_out = grads.get(out_id)
            if g_out is None:
                continue
            g_inputs = backward_fn(g_out)
            for node, g in zip(in_ids, g_inputs):
                if node is None or g is None:
                    continue
                acc = grads.get(node)
                if acc is None:
                    grads[node] = g if g.flags.writeable else g.copy()
                else:
                    acc += g
        return Gradients({k: _wrap(v, False) for k, v in grads.items()})


class Gradients(dict):
    """node_id -> Tensor gradient map with a tensor-keyed accessor."""

    def wrt(self, tensor):
        if tensor.node_id is None:
            return None
        return self.get(tensor.node_id)


def _check_finite(kind, out):
    # sum() is NaN if any entry is NaN and Inf if any entry is +/-Inf
    # (mixed infinities also land on NaN), so one reduction covers both.
    if not math.isfinite(float(np.sum(out))):
        raise NonFiniteValue(f"{kind} produced a non-finite value")


def _finish(kind, inputs, out_values, backward_fn):
    _check_finite(kind, out_values)
    requires = any(t.requires_grad for t in inputs)
    out = _wrap(out_values, requires)
    if requires:
        tape = _active_tape()
        if tape is not None:
            tape._record(kind, inputs, out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# primitives


def _matmul(a, b):
    av, bv = a.values, b.values
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ShapeMismatch(f"matmul needs 1-D/2-D operands, got {av.shape} @ {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise ShapeMismatch(f"matmul inner dims differ: {av.shape} @ {bv.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = av @ bv

    def backward(g):
        g_arr = np.asarray(g)
        # Promote everything to 2-D, compute, then squeeze back.
        a2 = av.reshape(1, -1) if av.ndim == 1 else av
        b2 = bv.reshape(-1, 1) if bv.ndim == 1 else bv
        if av.ndim == 1 and bv.ndim == 1:
            g2 = g_arr.reshape(1, 1)
        elif av.ndim == 1:
            g2 = g_arr.reshape(1, -1)
        elif bv.ndim == 1:
            g2 = g_arr.reshape(-1, 1)
        else:
            g2 = g_arr
        ga = (g2 @ b2.T).reshape(av.shape) if a.requires_grad else None
        gb = (a2.T @ g2).reshape(bv.shape) if b.requires_grad else None
        return ga, gb

    return _finish("matmul", [a, b], out, backward)


def _is_bias_row(main_shape, bias_shape):
    if len(main_shape) != 2:
        return False
    m = main_shape[1]
    return bias_shape == (m,) or bias_shape == (1, m)


def _add_like(kind, a, b, sign):
    av, bv = a.values, b.values
    if av.shape == bv.shape:
        broadcast = False
    elif _is_bias_row(av.shape, bv.shape):
        broadcast = True
    else:
        raise ShapeMismatch(f"{kind}: shapes {av.shape} and {bv.shape} do not conform")
    out = av + sign * bv

    def backward(g):
        ga = g if a.requires_grad else None
        if not b.requires_grad:
            gb = None
        elif broadcast:
            gb = sign * g.sum(axis=0).reshape(bv.shape)
        else:
            gb = sign * g
        return ga, gb

    return _finish(kind, [a, b], out, backward)


def _add(a, b):
    return _add_like("add", a, b, 1.0)


def _sub(a, b):
    return _add_like("sub", a, b, -1.0)


def _elemwise_mul(a, b):
    av, bv = a.values, b.values
    if av.shape != bv.shape:
        raise ShapeMismatch(f"elemwise_mul: shapes {av.shape} and {bv.shape} differ")
    out = av * bv

    def backward(g):
        ga = g * bv if a.requires_grad else None
        gb = g * av if b.requires_grad else None
        return ga, gb

    return _finish("elemwise_mul", [a, b], out, backward)


def _sigmoid(x):
    xv = x.values
    out = np.empty_like(xv)
    pos = xv >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
    ex = np.exp(xv[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _finish("sigmoid", [x], out, backward)


def _tanh(x):
    out = np.tanh(x.values)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _finish("tanh", [x], out, backward)


def _relu(x):
    xv = x.values
    out = np.maximum(xv, 0.0)

    def backward(g):
        return (g * (xv > 0.0),)

    return _finish("relu", [x], out, backward)


def _softmax_masked(logits, mask=None):
    """Softmax over the unmasked positions of the last axis.

    mask entries are 1 (keep) or 0 (drop); dropped positions come out as
    exact zeros. The mask is a constant: no gradient flows into it.
    """
    xv = logits.values
    if xv.ndim not in (1, 2):
        raise ShapeMismatch(f"softmax_masked needs a 1-D or 2-D tensor, got {xv.shape}")
    if mask is None:
        mv = np.ones_like(xv)
    else:
        if mask.requires_grad:
            raise ShapeMismatch("softmax_masked mask must be a constant")
        mv = mask.values
        if mv.shape != xv.shape:
            raise ShapeMismatch(f"mask shape {mv.shape} != logits shape {xv.shape}")
    keep = mv != 0.0
    if not keep.any(axis=-1).all():
        raise ShapeMismatch("softmax_masked: a row is fully masked")
    # Large negative fill keeps the exp stable; exact zeroing afterwards
    # makes the masked-position invariant hold bit-for-bit.
    shifted = np.where(keep, xv, -1e30)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted) * keep
    out = e / e.sum(axis=-1, keepdims=True)

    inputs = [logits] if mask is None else [logits, mask]

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        gx = out * (g - dot)
        return (gx,) if mask is None else (gx, None)

    return _finish("softmax_masked", inputs, out, backward)


def _concat_last_dim(inputs):
    if not inputs:
        raise ShapeMismatch("concat_last_dim of nothing")
    ndim = inputs[0].values.ndim
    if ndim not in (1, 2) or any(t.values.ndim != ndim for t in inputs):
        raise ShapeMismatch("concat_last_dim needs same-rank 1-D or 2-D inputs")
    if ndim == 2:
        rows = inputs[0].values.shape[0]
        if any(t.values.shape[0] != rows for t in inputs):
            raise ShapeMismatch("concat_last_dim: row counts differ")
    out = np.concatenate([t.values for t in inputs], axis=-1)
    widths = [t.values.shape[-1] for t in inputs]

    def backward(g):
        pieces = []
        start = 0
        for t, w in zip(inputs, widths):
            pieces.append(g[..., start:start + w] if t.requires_grad else None)
            start += w
        return pieces

    return _finish("concat_last_dim", list(inputs), out, backward)


def _stack_rows(inputs):
    if not inputs:
        raise ShapeMismatch("stack_rows of nothing")
    width = inputs[0].values.shape
    if len(width) != 1 or any(t.values.shape != width for t in inputs):
        raise ShapeMismatch("stack_rows needs equal-length 1-D inputs")
    out = np.stack([t.values for t in inputs], axis=0)

    def backward(g):
        return [g[i] if t.requires_grad else None for i, t in enumerate(inputs)]

    return _finish("stack_rows", list(inputs), out, backward)


def _sum_rows(x):
    xv = x.values
    if xv.ndim == 1:
        out = xv.sum()

        def backward(g):
            return (np.full_like(xv, g[()] if g.ndim == 0 else g),)

    elif xv.ndim == 2:
        out = xv.sum(axis=0)

        def backward(g):
            return (np.broadcast_to(g, xv.shape).copy(),)

    else:
        raise ShapeMismatch(f"sum_rows needs a 1-D or 2-D tensor, got {xv.shape}")
    return _finish("sum_rows", [x], out, backward)


def _scalar_scale(x, factor):
    factor = float(factor)
    out = x.values * factor

    def backward(g):
        return (g * factor,)

    return _finish("scalar_scale", [x], out, backward)


def _gather_rows(x, indices):
    xv = x.values
    if xv.ndim != 2:
        raise ShapeMismatch(f"gather_rows needs a 2-D tensor, got {xv.shape}")
    single = isinstance(indices, (int, np.integer))
    idx = np.asarray([indices] if single else indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= xv.shape[0]):
        raise ShapeMismatch(f"gather_rows index out of range for {xv.shape[0]} rows")
    out = xv[idx[0]] if single else xv[idx]

    def backward(g):
        z = np.zeros_like(xv)
        np.add.at(z, idx, g.reshape(idx.size, xv.shape[1]))
        return (z,)

    return _finish("gather_rows", [x], out, backward)


def _log(x):
    xv = x.values
    if (xv <= 0.0).any():
        raise NonFiniteValue("log of a non-positive value")
    out = np.log(xv)

    def backward(g):
        return (g / xv,)

    return _finish("log", [x], out, backward)


def _clamp_min(x, floor):
    floor = float(floor)
    xv = x.values
    out = np.maximum(xv, floor)

    def backward(g):
        return (g * (xv > floor),)

    return _finish("clamp_min", [x], out, backward)


_DISPATCH = {
    "matmul": _matmul,
    "add": _add,
    "sub": _sub,
    "elemwise_mul": _elemwise_mul,
    "sigmoid": _sigmoid,
    "tanh": _tanh,
    "relu": _relu,
    "softmax_masked": _softmax_masked,
    "concat_last_dim": _concat_last_dim,
    "stack_rows": _stack_rows,
    "sum_rows": _sum_rows,
    "scalar_scale": _scalar_scale,
    "gather_rows": _gather_rows,
    "log": _log,
    "clamp_min": _clamp_min,
}

_VARIADIC = {"concat_last_dim", "stack_rows"}


def op_apply(kind, inputs, **kwargs):
    """Apply a named primitive to a list of tensors.

    The operation is recorded on the active tape whenever any input
    requires a gradient. Extra keyword arguments carry the primitive's
    constant attributes (scale factor, row indices, clamp floor).
    """
    fn = _DISPATCH.get(kind)
    if fn is None:
        raise UnknownOp(f"unknown primitive {kind!r}")
    if kind in _VARIADIC:
        return fn(list(inputs), **kwargs)
    return fn(*inputs, **kwargs)


# Short helpers; layer code reads better with these than with op_apply.
def matmul(a, b):
    return _matmul(a, b)


def add(a, b):
    return _add(a, b)


def sub(a, b):
    return _sub(a, b)


def mul(a, b):
    return _elemwise_mul(a, b)


def sigmoid(x):
    return _sigmoid(x)


def tanh(x):
    return _tanh(x)


def relu(x):
    return _relu(x)


def softmax_masked(logits, mask=None):
    return _softmax_masked(logits, mask)


def concat(inputs):
    return _concat_last_dim(list(inputs))


def stack_rows(inputs):
    return _stack_rows(list(inputs))


def sum_rows(x):
    return _sum_rows(x)


def scale(x, factor):
    return _scalar_scale(x, factor)


def gather_rows(x, indices):
    return _gather_rows(x, indices)


def log(x):
    return _log(x)


def clamp_min(x, floor):
    return _clamp_min(x, floor)


def zeros(shape, requires_grad=False):
    return _wrap(np.zeros(shape), requires_grad)


def ones(shape):
    return _wrap(np.ones(shape))


def constant(values):
    return Tensor(values, requires_grad=False)


def parameter(values):
    return Tensor(values, requires_grad=True)


# ---------------------------------------------------------------------------
# gradient checking


class GradCheckError(RuntimeError):
    pass


class GradCheckReport:
    """Per-parameter worst relative error between analytic and
    central-difference gradients."""

    def __init__(self, per_param, tol):
        self.per_param = per_param  # list of (name, max_rel_err)
        self.tol = tol
        self.max_rel_err = max((e for _, e in per_param), default=0.0)
        self.passed = self.max_rel_err < tol

    def __repr__(self):
        status = "pass" if self.passed else "FAIL"
        return f"GradCheckReport({status}, max_rel_err={self.max_rel_err:.3e}, tol={self.tol:.1e})"


def _as_named(params):
    if isinstance(params, dict):
        return list(params.items())
    return [(f"p{i}", p) for i, p in enumerate(params)]


def grad_check(f, params, step=1e-5, tol=1e-4, floor=None):
    """Compare analytic gradients of ``f(params)`` against central
    finite differences.

    ``f`` must be deterministic; it is evaluated twice at the base point
    and any bit difference raises :class:`GradCheckError`. ``params`` is
    a dict name->Tensor or a sequence of Tensors; each must have
    requires_grad set.

    The relative error divides by max(|analytic|, |numeric|, floor);
    the floor (default: the step size) keeps gradients beneath the
    finite-difference resolution limit in an absolute-comparison regime,
    where a relative criterion would only measure truncation noise.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if floor is None:
        floor = step
    named = _as_named(params)
    plist = [p for _, p in named]
    with Tape() as tape:
        loss = f(plist)
    base = loss.item()
    with Tape():
        again = f(plist).item()
    if base != again:
        raise GradCheckError("function is not deterministic at the base point")
    grads = tape.backward(loss)

    per_param = []
    for slot, (name, p) in enumerate(named):
        g = grads.wrt(p)
        analytic = np.zeros(p.shape) if g is None else g.values
        worst = 0.0
        flat = p.values.reshape(-1)
        for j in range(flat.size):
            bumped_plus = flat.copy()
            bumped_plus[j] += step
            bumped_minus = flat.copy()
            bumped_minus[j] -= step
            f_plus = _eval_at(f, plist, slot, bumped_plus.reshape(p.shape))
            f_minus = _eval_at(f, plist, slot, bumped_minus.reshape(p.shape))
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic.reshape(-1)[j]
            denom = max(abs(a), abs(numeric), floor)
            worst = max(worst, abs(a - numeric) / denom)
        per_param.append((name, worst))
    return GradCheckReport(per_param, tol)


def _eval_at(f, plist, slot, new_values):
    trial = list(plist)
    trial[slot] = parameter(new_values)
    with Tape():
        return f(trial).item()
