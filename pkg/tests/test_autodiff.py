import numpy as np
import pytest

from unlearnlab import autodiff as ad
from unlearnlab.errors import ContractError, DimensionError


def rel_err(a, b):
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return np.max(np.abs(a - b)) / denom


def test_softmax_of_zeros_is_uniform():
    p = ad.softmax(ad.leaf([[0.0, 0.0]]))
    assert np.allclose(p.value, [[0.5, 0.5]], atol=1e-15)


def test_log_softmax_shift_invariant_no_overflow():
    lp = ad.log_softmax(ad.leaf([[1000.0, 1000.0]]))
    assert np.all(np.isfinite(lp.value))
    assert np.allclose(lp.value, -np.log(2.0), atol=1e-12)


def test_matmul_identity():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(3, 3))
    out = ad.matmul(ad.constant(np.eye(3)), ad.leaf(m))
    assert np.allclose(out.value, m, atol=1e-15)


def test_matmul_shape_mismatch_raises():
    with pytest.raises(DimensionError):
        ad.matmul(ad.leaf(np.zeros((2, 3))), ad.leaf(np.zeros((2, 3))))
    with pytest.raises(DimensionError):
        ad.matmul(ad.leaf(np.zeros(3)), ad.leaf(np.zeros((3, 2))))


def test_softmax_cross_entropy_gradient_closed_form():
    z = ad.leaf([[0.0, 0.0]])
    root = ad.element(ad.log_softmax(z), (0, 0))
    g = ad.grad(root, [z])[0]
    assert np.allclose(g, [[0.5, -0.5]], atol=1e-15)


def test_stop_gradient_blocks_and_preserves_eval():
    rng = np.random.default_rng(1)
    x = ad.leaf(rng.normal(size=(3,)))
    plain = ad.sum_all(ad.mul(ad.gelu(x), x))
    wrapped = ad.sum_all(ad.mul(ad.stop_gradient(ad.gelu(x)), x))
    # eval unchanged
    assert np.array_equal(plain.value, wrapped.value)
    # gradient keeps only the un-wrapped route: d/dx sum(c * x) = c
    g = ad.grad(wrapped, [x])[0]
    assert np.allclose(g, ad.gelu(x).value, atol=1e-15)


def test_stop_gradient_only_route_gives_zero():
    x = ad.leaf([1.0, 2.0])
    root = ad.sum_all(ad.stop_gradient(ad.mul(x, x)))
    assert np.array_equal(ad.grad(root, [x])[0], np.zeros(2))


def test_grad_requires_scalar_root():
    x = ad.leaf([1.0, 2.0])
    with pytest.raises(ContractError):
        ad.grad(ad.mul(x, x), [x])


def test_finite_diff_requires_positive_epsilon():
    x = ad.leaf([1.0])
    root = ad.sum_all(x)
    with pytest.raises(ContractError):
        ad.finite_diff(root, x, 0.0)


def test_finite_diff_quadratic_exact():
    x = ad.leaf([3.0])
    f = ad.sum_all(ad.mul(x, x))
    est = ad.finite_diff(f, x, 1e-4)
    assert abs(est[0] - 6.0) < 1e-7


def test_finite_diff_error_shrinks_quadratically():
    # exp has nonzero third derivative; truncation error ~ eps^2.
    x = ad.leaf([0.7])
    f = ad.sum_all(ad.exp(x))
    exact = np.exp(0.7)
    err = {eps: abs(ad.finite_diff(f, x, eps)[0] - exact)
           for eps in (1e-3, 5e-4)}
    assert err[5e-4] / err[1e-3] < 0.5


def test_three_layer_graph_grad_matches_fd():
    rng = np.random.default_rng(7)
    x = ad.leaf(rng.uniform(-2, 2, (2, 3)))
    w1 = ad.leaf(rng.uniform(-1, 1, (3, 4)))
    w2 = ad.leaf(rng.uniform(-1, 1, (4, 2)))
    h = ad.gelu(ad.matmul(x, w1))
    root = ad.mean_all(ad.softplus(ad.matmul(h, w2)))
    for leafn in (x, w1, w2):
        g = ad.grad(root, [leafn])[0]
        fd = ad.finite_diff(root, leafn, 1e-5)
        assert rel_err(g, fd) <= 1e-5


def test_diamond_graph_counts_both_paths():
    x = ad.leaf([2.0])
    y = ad.mul(x, x)          # x^2
    root = ad.sum_all(ad.add(y, y))  # 2 x^2 -> d/dx = 4x = 8
    assert np.allclose(ad.grad(root, [x])[0], [8.0])
    x.value[...] = 3.0
    assert np.allclose(ad.evaluate(root), [18.0])


def test_grad_wrt_interior_node():
    z = ad.leaf([[0.3, -0.7, 1.1]])
    lp = ad.log_softmax(z)
    root = ad.element(lp, (0, 2))
    gz, glp = ad.grad(root, [z, lp])
    expect = -np.exp(lp.value)
    expect[0, 2] += 1.0
    assert np.allclose(gz, expect, atol=1e-12)
    want = np.zeros((1, 3))
    want[0, 2] = 1.0
    assert np.allclose(glp, want)


def test_softmax_normalization_property():
    # Strict (0, 1) components need the spread to stay float-representable:
    # beyond ~36 nats the dominant component rounds to exactly 1.0.
    rng = np.random.default_rng(3)
    for _ in range(50):
        z = rng.uniform(-15, 15, (4, 7))
        p = ad.softmax(ad.leaf(z)).value
        assert np.all(p > 0) and np.all(p < 1)
        assert np.max(np.abs(p.sum(axis=-1) - 1.0)) < 1e-12


def test_softmax_extreme_inputs_stay_normalized():
    z = np.array([[800.0, -800.0, 0.0], [1e4, 1e4, 1e4]])
    p = ad.softmax(ad.leaf(z)).value
    assert np.all(np.isfinite(p)) and np.all(p >= 0)
    assert np.max(np.abs(p.sum(axis=-1) - 1.0)) < 1e-12


# Finite-difference sweep over every op with a registered derivative --------


def _fd_case(name):
    rng_shapes = {
        "add": [(2, 3), (2, 3)],
        "add_broadcast": [(2, 3), (3,)],
        "sub": [(2, 3), (2, 3)],
        "mul": [(2, 3), (2, 3)],
        "mul_broadcast": [(2, 3), (1, 3)],
        "div": [(2, 3), (2, 3)],
        "scale": [(2, 3)],
        "matmul": [(2, 3), (3, 2)],
        "matmul_batched": [(2, 2, 3), (3, 2)],
        "reshape": [(2, 3)],
        "transpose": [(2, 3)],
        "take_rows": [(4, 3)],
        "take_last": [(2, 4)],
        "gather_positions": [(2, 3, 2)],
        "element": [(2, 3)],
        "sum_axis": [(2, 3)],
        "softmax": [(2, 4)],
        "log_softmax": [(2, 4)],
        "layer_norm": [(2, 4), (4,), (4,)],
        "gelu": [(2, 3)],
        "softplus": [(2, 3)],
        "exp": [(2, 3)],
        "log_shifted": [(2, 3)],
    }
    builders = {
        "add": lambda a, b: ad.add(a, b),
        "add_broadcast": lambda a, b: ad.add(a, b),
        "sub": lambda a, b: ad.sub(a, b),
        "mul": lambda a, b: ad.mul(a, b),
        "mul_broadcast": lambda a, b: ad.mul(a, b),
        "div": lambda a, b: ad.div(a, ad.add(ad.mul(b, b), ad.constant(1.0))),
        "scale": lambda a: ad.scale(a, -1.7),
        "matmul": lambda a, b: ad.matmul(a, b),
        "matmul_batched": lambda a, b: ad.matmul(a, b),
        "reshape": lambda a: ad.reshape(a, (3, 2)),
        "transpose": lambda a: ad.transpose(a, (1, 0)),
        "take_rows": lambda a: ad.take_rows(a, np.array([[0, 2], [3, 2]])),
        "take_last": lambda a: ad.take_last(a, np.array([1, 3])),
        "gather_positions": lambda a: ad.gather_positions(
            a, np.array([[0, 2], [1, 1]])),
        "element": lambda a: ad.element(a, (1, 2)),
        "sum_axis": lambda a: ad.sum_axis(a, axis=1),
        "softmax": lambda a: ad.softmax(a),
        "log_softmax": lambda a: ad.log_softmax(a),
        "layer_norm": lambda a, g, b: ad.layer_norm(a, g, b),
        "gelu": lambda a: ad.gelu(a),
        "softplus": lambda a: ad.softplus(a),
        "exp": lambda a: ad.exp(a),
        "log_shifted": lambda a: ad.log(ad.add(ad.mul(a, a),
                                               ad.constant(1.5))),
    }
    return rng_shapes[name], builders[name]


ALL_OPS = ["add", "add_broadcast", "sub", "mul", "mul_broadcast", "div",
           "scale", "matmul", "matmul_batched", "reshape", "transpose",
           "take_rows", "take_last", "gather_positions", "element",
           "sum_axis", "softmax", "log_softmax", "layer_norm", "gelu",
           "softplus", "exp", "log_shifted"]


@pytest.mark.parametrize("op", ALL_OPS)
def test_every_op_gradient_matches_fd(op):
    shapes, builder = _fd_case(op)
    rng = np.random.default_rng(hash(op) % 2**32)
    for _ in range(100):
        leaves = [ad.leaf(rng.uniform(-2, 2, s)) for s in shapes]
        out = builder(*leaves)
        # random linear functional so the root is scalar
        w = ad.constant(rng.uniform(-1, 1, out.value.shape))
        root = ad.sum_all(ad.mul(out, w))
        for leafn in leaves:
            g = ad.grad(root, [leafn])[0]
            fd = ad.finite_diff(root, leafn, 1e-5)
            assert rel_err(g, fd) <= 1e-4, f"{op}: rel err {rel_err(g, fd)}"
