import numpy as np
import pytest

from src import autodiff as ad
from src.errors import NumericalError, ShapeError


def test_square_forward():
    x = ad.leaf([3.0])
    assert ad.evaluate(x * x).tolist() == [9.0]


def test_sum_forward():
    assert float(ad.evaluate(ad.reduce_sum(ad.leaf([1.0, 2.0])))) == 3.0


def test_identity_matmul():
    out = ad.evaluate(ad.const(np.eye(2)) @ ad.leaf([5.0, 7.0]))
    assert out.tolist() == [5.0, 7.0]


def test_square_gradient():
    x = ad.leaf(3.0)
    root = ad.square(x)
    ad.evaluate(root)
    assert float(ad.backward(root, [x])[x.id]) == pytest.approx(6.0)


def test_mse_gradient():
    x = ad.leaf([1.0, 2.0])
    loss = ad.reduce_mean(ad.square(x - ad.const([0.0, 0.0])))
    assert float(ad.evaluate(loss)) == 2.5
    np.testing.assert_allclose(ad.backward(loss, [x])[x.id], [1.0, 2.0])


def test_backward_requires_scalar_root():
    x = ad.leaf([1.0, 2.0])
    root = ad.square(x)
    ad.evaluate(root)
    with pytest.raises(ShapeError):
        ad.backward(root, [x])


def test_backward_requires_evaluation():
    x = ad.leaf([1.0])
    with pytest.raises(ValueError):
        ad.backward(ad.reduce_sum(x), [x])


def test_backward_rejects_leaf_outside_graph():
    x, y = ad.leaf([1.0, 2.0]), ad.leaf([4.0])
    root = ad.reduce_sum(ad.square(x))
    ad.evaluate(root)
    ad.backward(root, [x])
    with pytest.raises(ValueError):
        ad.backward(root, [y])


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        ad.evaluate(ad.leaf([1.0, 2.0]) + ad.leaf([1.0, 2.0, 3.0]))


def test_row_broadcast_and_gradient_reduction():
    rows = ad.leaf(np.ones((3, 2)))
    bias = ad.leaf([1.0, -1.0])
    root = ad.reduce_sum(ad.square(rows + bias))
    ad.evaluate(root)
    grads = ad.backward(root, [rows, bias])
    np.testing.assert_allclose(grads[bias.id], [12.0, 0.0])
    assert grads[rows.id].shape == (3, 2)


def test_log_of_zero_names_op_and_step():
    x = ad.leaf([0.0])
    with ad.step_scope(17):
        root = ad.log(x)
    with pytest.raises(NumericalError) as info:
        ad.evaluate(root)
    assert info.value.op == "log"
    assert info.value.step == 17


def test_rebinding_leaf_does_not_alias():
    original = np.array([1.0, 2.0])
    x = ad.leaf(original)
    ad.bind(x, [5.0, 5.0])
    assert original.tolist() == [1.0, 2.0]


def test_fd_check_on_square_is_tight():
    x = ad.leaf([0.3, -1.2, 2.0])
    result = ad.finite_difference_check(ad.reduce_sum(ad.square(x)), x)
    assert result.max_rel_error < 1e-8
    assert result.checked == 3


def test_fd_check_excludes_sqrt_at_zero():
    x = ad.leaf([0.0, 4.0])
    result = ad.finite_difference_check(ad.reduce_sum(ad.sqrt(x)), x)
    assert result.excluded == [0]
    assert result.checked == 1
    assert result.max_rel_error < 1e-6


def test_three_layer_tanh_network_matches_fd(rng):
    x = ad.leaf(rng.normal(size=4))
    h = x
    for fan_in, width in ((4, 5), (5, 6), (6, 3)):
        w = ad.const(rng.normal(size=(fan_in, width)) * 0.5)
        h = ad.tanh(h @ w + ad.const(rng.normal(size=width)))
    result = ad.finite_difference_check(ad.reduce_sum(h), x)
    assert result.max_rel_error < 1e-6


def _random_graph(rng, x):
    """A random composition over the differentiable op set."""
    a = ad.const(rng.normal(size=x.value.shape))
    pos = ad.square(x) + ad.const(0.5)
    candidates = [
        lambda: ad.tanh(x * a),
        lambda: ad.silu(x - a),
        lambda: ad.sqrt(pos),
        lambda: ad.log(pos),
        lambda: ad.div(x, pos),
        lambda: ad.absolute(x + ad.const(3.0)),
        lambda: ad.scale(ad.mul(x, x), 0.7),
        lambda: ad.affine(x, rng.normal(size=(x.value.shape[0], 3)), rng.normal(size=3)),
    ]
    picks = rng.choice(len(candidates), size=3, replace=False)
    total = None
    for i in picks:
        term = ad.reduce_mean(candidates[i]()) if i != 7 else ad.reduce_sum(ad.square(candidates[i]()))
        total = term if total is None else total + term
    return total


def test_random_graphs_match_central_differences():
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = ad.leaf(rng.normal(size=4))
        result = ad.finite_difference_check(_random_graph(rng, x), x)
        assert result.max_rel_error < 1e-4


def test_framed_affine_gradient_overlap_adds(rng):
    x = ad.leaf(rng.normal(size=16))
    root = ad.reduce_sum(ad.square(ad.affine(x, rng.normal(size=(8, 5)), frame=(8, 4))))
    assert ad.finite_difference_check(root, x).max_rel_error < 1e-6


def test_checkpoint_matches_plain_graph(rng):
    values = rng.normal(size=6)
    w = rng.normal(size=(6, 6))

    def block(node):
        return ad.tanh(node @ ad.const(w))

    plain_x = ad.leaf(values)
    plain = ad.reduce_sum(ad.square(block(block(plain_x))))
    ck_x = ad.leaf(values)
    ck = ad.reduce_sum(ad.square(ad.checkpoint(block, ad.checkpoint(block, ck_x))))
    v1, g1 = ad.value_and_grad(plain, plain_x)
    v2, g2 = ad.value_and_grad(ck, ck_x)
    assert v1 == pytest.approx(v2, abs=1e-14)
    np.testing.assert_allclose(g1, g2, atol=1e-12)


def test_gradients_are_linear_in_the_root(rng):
    data = rng.normal(size=6)

    def f(x):
        return ad.reduce_sum(ad.tanh(x) * x)

    def g(x):
        return ad.reduce_mean(ad.square(x))

    x = ad.leaf(data)
    _, grad_f = ad.value_and_grad(f(x), x)
    _, grad_g = ad.value_and_grad(g(x), x)
    _, grad_sum = ad.value_and_grad(ad.scale(f(x), 2.5) + ad.scale(g(x), -0.5), x)
    np.testing.assert_allclose(grad_sum, 2.5 * grad_f - 0.5 * grad_g, rtol=1e-12, atol=1e-14)


def test_constant_graph_has_zero_gradient(rng):
    x = ad.leaf(rng.normal(size=5))
    root = ad.reduce_sum(x - x) + ad.const(3.0)
    value, grad = ad.value_and_grad(root, x)
    assert value == 3.0
    assert grad.shape == (5,)
    assert not grad.any()
