import numpy as np
import pytest

from sssgen import tensor as T
from sssgen.tensor import (
    GradCheckError,
    NonFiniteValue,
    ShapeMismatch,
    Tape,
    TapeError,
    Tensor,
    UnknownOp,
    grad_check,
    op_apply,
)


def fd_grad(f, x, step=1e-5):
    """Independent central-difference gradient of scalar f at x (numpy only)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        up = flat.copy()
        up[i] += step
        dn = flat.copy()
        dn[i] -= step
        g.reshape(-1)[i] = (f(up.reshape(x.shape)) - f(dn.reshape(x.shape))) / (2 * step)
    return g


def rel_err(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom))


# ---------------------------------------------------------------------------
# forward examples


def test_matmul_identity():
    a = T.constant([[1.0, 2.0], [3.0, 4.0]])
    eye = T.constant([[1.0, 0.0], [0.0, 1.0]])
    out = op_apply("matmul", [a, eye])
    assert np.array_equal(out.values, a.values)


def test_sigmoid_at_zero():
    out = op_apply("sigmoid", [T.constant([0.0])])
    assert out.values[0] == 0.5


def test_softmax_masked_uniform_over_unmasked():
    out = op_apply(
        "softmax_masked",
        [T.constant([1.0, 1.0, 1.0]), T.constant([1.0, 1.0, 0.0])],
    )
    assert np.allclose(out.values, [0.5, 0.5, 0.0])
    assert out.values[2] == 0.0


def test_softmax_masked_sums_to_one_and_zeros_exact():
    rng = np.random.default_rng(0)
    for _ in range(20):
        logits = rng.normal(size=7) * 5
        mask = (rng.random(7) < 0.6).astype(float)
        if mask.sum() == 0:
            mask[0] = 1.0
        y = T.softmax_masked(T.constant(logits), T.constant(mask)).values
        assert abs(y.sum() - 1.0) < 1e-12
        assert np.all(y[mask == 0.0] == 0.0)


def test_softmax_masked_fully_masked_row_errors():
    with pytest.raises(ShapeMismatch):
        T.softmax_masked(T.constant([1.0, 2.0]), T.constant([0.0, 0.0]))


def test_forward_is_deterministic():
    rng = np.random.default_rng(3)
    a = T.constant(rng.normal(size=(4, 5)))
    b = T.constant(rng.normal(size=(5, 3)))
    y1 = T.tanh(T.matmul(a, b)).values
    y2 = T.tanh(T.matmul(a, b)).values
    assert np.array_equal(y1, y2)


def test_unknown_kind():
    with pytest.raises(UnknownOp):
        op_apply("convolve", [T.constant([1.0])])


def test_shape_mismatch_errors():
    with pytest.raises(ShapeMismatch):
        T.matmul(T.constant([[1.0, 2.0]]), T.constant([[1.0, 2.0]]))
    with pytest.raises(ShapeMismatch):
        T.add(T.constant([1.0, 2.0]), T.constant([1.0, 2.0, 3.0]))
    with pytest.raises(ShapeMismatch):
        T.mul(T.constant([[1.0]]), T.constant([1.0]))


def test_bias_row_broadcast_is_the_only_add_broadcast():
    m = T.constant(np.ones((3, 2)))
    bias = T.constant([1.0, 2.0])
    out = T.add(m, bias)
    assert np.allclose(out.values, [[2.0, 3.0]] * 3)
    with pytest.raises(ShapeMismatch):
        T.add(m, T.constant(np.ones((3, 1))))  # column broadcast refused


def test_non_finite_output_is_an_error():
    big = T.constant(np.full((2, 2), 1e308))
    with pytest.raises(NonFiniteValue):
        T.matmul(big, big)
    with pytest.raises(NonFiniteValue):
        T.log(T.constant([0.0]))


def test_tensors_are_immutable():
    t = T.constant([1.0, 2.0])
    with pytest.raises(ValueError):
        t.values[0] = 5.0


# ---------------------------------------------------------------------------
# backward examples


def test_backward_of_sum_is_ones():
    x = T.parameter([1.0, 2.0, 3.0])
    with Tape() as tape:
        loss = T.sum_rows(x)
    grads = tape.backward(loss)
    assert np.array_equal(grads.wrt(x).values, [1.0, 1.0, 1.0])


def test_backward_of_square_is_two_x():
    x = T.parameter([2.0])
    with Tape() as tape:
        loss = T.sum_rows(T.mul(x, x))
    grads = tape.backward(loss)
    assert np.array_equal(grads.wrt(x).values, [4.0])


def test_backward_sigmoid_dot_matches_finite_differences():
    rng = np.random.default_rng(7)
    w_val = rng.normal(size=5) * 0.5
    x_val = rng.normal(size=5) * 0.5
    w = T.parameter(w_val)
    x = T.constant(x_val)
    with Tape() as tape:
        loss = T.sum_rows(T.sigmoid(T.mul(w, x)))
    grads = tape.backward(loss)

    def f(wv):
        return float(np.sum(1.0 / (1.0 + np.exp(-(wv * x_val)))))

    numeric = fd_grad(f, w_val, step=1e-6)
    assert rel_err(grads.wrt(w).values, numeric) < 1e-6


def test_backward_requires_scalar_loss_on_tape():
    x = T.parameter([1.0, 2.0])
    with Tape() as tape:
        y = T.mul(x, x)
    with pytest.raises(TapeError):
        tape.backward(y)  # not scalar
    with Tape():
        z = T.sum_rows(T.mul(x, x))
    with pytest.raises(TapeError):
        tape.backward(z)  # scalar, but recorded on a different tape


def test_no_tape_means_no_recording():
    x = T.parameter([1.0])
    y = T.mul(x, x)
    assert y.requires_grad
    assert y._tape_token is None


def test_gradient_accumulates_over_shared_use():
    x = T.parameter([3.0])
    with Tape() as tape:
        loss = T.sum_rows(T.add(T.mul(x, x), x))  # x^2 + x
    grads = tape.backward(loss)
    assert np.allclose(grads.wrt(x).values, [7.0])


# ---------------------------------------------------------------------------
# finite-difference property for every primitive


def _fd_case(name, build, x_val, step=1e-5, tol=1e-4):
    x = T.parameter(x_val)
    with Tape() as tape:
        loss = build(x)
    grads = tape.backward(loss)

    def scalar(v):
        with Tape():
            return build(T.parameter(v)).item()

    numeric = fd_grad(scalar, x_val, step=step)
    analytic = grads.wrt(x).values
    assert rel_err(analytic, numeric) < tol, f"{name}: fd mismatch"


PRIMITIVE_CASES = {
    "matmul": lambda x: T.sum_rows(T.sum_rows(T.matmul(x, T.constant(_B)))),
    "add": lambda x: T.sum_rows(T.sum_rows(T.add(x, T.constant(_BIAS)))),
    "sub": lambda x: T.sum_rows(T.sum_rows(T.sub(x, T.constant(_B4)))),
    "elemwise_mul": lambda x: T.sum_rows(T.sum_rows(T.mul(x, T.constant(_B4)))),
    "sigmoid": lambda x: T.sum_rows(T.sum_rows(T.sigmoid(x))),
    "tanh": lambda x: T.sum_rows(T.sum_rows(T.tanh(x))),
    "relu": lambda x: T.sum_rows(T.sum_rows(T.relu(x))),
    "softmax_masked": lambda x: T.sum_rows(
        T.mul(
            T.softmax_masked(T.sum_rows(x), T.constant([1.0, 0.0, 1.0, 1.0])),
            T.constant([0.3, 0.9, -0.2, 0.5]),
        )
    ),
    "concat_last_dim": lambda x: T.sum_rows(
        T.sum_rows(T.concat([x, T.mul(x, x)]))
    ),
    "stack_rows": lambda x: T.sum_rows(
        T.sum_rows(T.stack_rows([T.sum_rows(x), T.sum_rows(T.mul(x, x))]))
    ),
    "sum_rows": lambda x: T.sum_rows(T.mul(T.sum_rows(x), T.constant([0.1, -2.0, 0.7, 1.3]))),
    "scalar_scale": lambda x: T.sum_rows(T.sum_rows(T.scale(x, -1.7))),
    "gather_rows": lambda x: T.sum_rows(T.sum_rows(T.gather_rows(x, [2, 0, 2]))),
    "log": lambda x: T.sum_rows(T.sum_rows(T.log(T.add(T.mul(x, x), T.constant(_ONES34))))),
    "clamp_min": lambda x: T.sum_rows(T.sum_rows(T.clamp_min(x, 0.1))),
}

_B = None
_BIAS = None
_B4 = None
_ONES34 = None


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients_match_finite_differences(name):
    global _B, _BIAS, _B4, _ONES34
    rng = np.random.default_rng(11)
    for trial in range(10):
        x_val = rng.normal(size=(3, 4)) * 0.8
        if name == "relu" or name == "clamp_min":
            # keep clear of the kink
            x_val = np.where(np.abs(x_val) < 0.05, 0.3, x_val)
        _B = rng.normal(size=(4, 2))
        _BIAS = rng.normal(size=4)
        _B4 = rng.normal(size=(3, 4))
        _ONES34 = np.ones((3, 4))
        _fd_case(name, PRIMITIVE_CASES[name], x_val)


# ---------------------------------------------------------------------------
# grad_check


def test_grad_check_quadratic():
    x = T.parameter([1.0, 2.0, 3.0])

    def f(params):
        (p,) = params
        return T.scale(T.sum_rows(T.mul(p, p)), 0.5)

    report = grad_check(f, [x], step=1e-5, tol=1e-8)
    assert report.passed
    assert report.max_rel_err < 1e-8

    with Tape() as tape:
        loss = f([x])
    grads = tape.backward(loss)
    assert np.allclose(grads.wrt(x).values, [1.0, 2.0, 3.0])


def test_grad_check_rejects_nondeterministic_f():
    calls = []

    def f(params):
        calls.append(0)
        return T.scale(T.sum_rows(params[0]), float(len(calls)))

    with pytest.raises(GradCheckError):
        grad_check(f, [T.parameter([1.0])])


def test_grad_check_rejects_bad_step():
    with pytest.raises(ValueError):
        grad_check(lambda p: T.sum_rows(p[0]), [T.parameter([1.0])], step=0.0)
