import pytest
import torch

from ..errors import GraphError, NonFiniteError, ShapeError
from .graph import Graph, backward, eval_graph
from .gradcheck import finite_difference_gradient, relative_error


def test_eval_add():
    g = Graph()
    g.set_output(g.apply("add", g.leaf("a"), g.leaf("b")))

    out = eval_graph(g, {"a": torch.tensor([1.0, 2.0]), "b": torch.tensor([3.0, 4.0])})

    assert torch.equal(out, torch.tensor([4.0, 6.0], dtype=torch.float64))


def test_eval_matmul_all_ones():
    g = Graph()
    g.set_output(g.apply("matmul", g.leaf("a"), g.leaf("b")))

    out = eval_graph(g, {"a": torch.ones(2, 3), "b": torch.ones(3, 2)})

    assert torch.equal(out, torch.full((2, 2), 3.0, dtype=torch.float64))


def test_eval_softmax_uniform():
    g = Graph()
    g.set_output(g.apply("softmax", g.leaf("x")))

    out = eval_graph(g, {"x": torch.zeros(4)})

    assert torch.allclose(out, torch.full((4,), 0.25, dtype=torch.float64), atol=1e-15)


def test_eval_shape_mismatch_names_node():
    g = Graph()
    g.set_output(g.apply("add", g.leaf("a"), g.leaf("b"), name="bad_add"))

    with pytest.raises(ShapeError) as e:
        eval_graph(g, {"a": torch.ones(2), "b": torch.ones(3)})

    assert "bad_add" in e.value.detail


def test_eval_non_finite_names_node():
    g = Graph()
    g.set_output(g.apply("log", g.leaf("x"), name="the_log"))

    with pytest.raises(NonFiniteError) as e:
        eval_graph(g, {"x": torch.tensor([0.0, 1.0])})

    assert "the_log" in e.value.detail


def test_unbound_leaf():
    g = Graph()
    g.set_output(g.apply("exp", g.leaf("x")))

    with pytest.raises(GraphError):
        eval_graph(g, {})


def test_inputs_must_precede_use():
    g = Graph()

    with pytest.raises(GraphError):
        g.apply("relu", "not_yet_defined")


def test_unknown_primitive():
    g = Graph()

    with pytest.raises(GraphError):
        g.apply("tanh", g.leaf("x"))


def test_backward_sum_of_squares():
    g = Graph()
    x = g.leaf("x")
    g.set_output(g.apply("sum", g.apply("multiply", x, x)))

    grads = backward(g, {"x": torch.tensor([1.0, -2.0, 3.0])})

    assert torch.equal(grads["x"], torch.tensor([2.0, -4.0, 6.0], dtype=torch.float64))


def test_backward_requires_scalar_output():
    g = Graph()
    g.set_output(g.apply("relu", g.leaf("x")))

    with pytest.raises(GraphError):
        backward(g, {"x": torch.ones(3)})


def test_backward_constant_leaf_gets_zeros():
    g = Graph()
    x = g.leaf("x")
    c = g.constant("c")
    g.set_output(g.apply("sum", g.apply("multiply", x, c)))

    grads = backward(g, {"x": torch.ones(3), "c": torch.tensor([1.0, 2.0, 3.0])})

    assert torch.equal(grads["c"], torch.zeros(3, dtype=torch.float64))
    assert torch.equal(grads["x"], torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64))


def test_backward_unreachable_leaf_gets_zeros():
    g = Graph()
    x = g.leaf("x")
    g.leaf("unused")
    g.set_output(g.apply("sum", x))

    grads = backward(g, {"x": torch.ones(2), "unused": torch.ones(2, 2)})

    assert grads["unused"].shape == (2, 2)
    assert torch.equal(grads["unused"], torch.zeros(2, 2, dtype=torch.float64))


def _cross_entropy_graph() -> Graph:
    # -sum(onehot * log softmax(W x)) over a batch of column vectors
    g = Graph()
    w = g.leaf("W")
    x = g.constant("x")
    neg_y = g.constant("neg_y")
    logits = g.apply("matmul", w, x)
    proba = g.apply("softmax", logits, dim=0)
    g.set_output(g.apply("sum", g.apply("multiply", g.apply("log", proba), neg_y)))
    return g


def test_backward_cross_entropy_matches_finite_differences():
    g = _cross_entropy_graph()
    torch.manual_seed(0)
    bindings = {
        "W": torch.randn(2, 3, dtype=torch.float64),
        "x": torch.randn(3, 4, dtype=torch.float64),
        "neg_y": -torch.tensor([[1.0, 0.0, 0.0, 1.0], [0.0, 1.0, 1.0, 0.0]]),
    }

    grads = backward(g, bindings)
    numeric = finite_difference_gradient(lambda w: eval_graph(g, {**bindings, "W": w}), bindings["W"])

    assert relative_error(grads["W"], numeric) < 1e-6


def test_backward_linear_in_output_scale():
    torch.manual_seed(1)
    w = torch.randn(2, 3, dtype=torch.float64)
    x = torch.randn(3, 4, dtype=torch.float64)
    neg_y = -torch.tensor([[1.0, 0.0, 0.0, 1.0], [0.0, 1.0, 1.0, 0.0]])

    g = _cross_entropy_graph()
    base = backward(g, {"W": w, "x": x, "neg_y": neg_y})["W"]

    scaled = _cross_entropy_graph()
    c = scaled.constant("c")
    scaled.set_output(scaled.apply("multiply", scaled.output, scaled.apply("broadcast", c, shape=())))
    got = backward(scaled, {"W": w, "x": x, "neg_y": neg_y, "c": torch.tensor([4.0])})["W"]

    assert torch.equal(got, 4.0 * base)


def test_eval_and_backward_are_deterministic():
    torch.manual_seed(2)
    bindings = {
        "W": torch.randn(2, 3, dtype=torch.float64),
        "x": torch.randn(3, 4, dtype=torch.float64),
        "neg_y": -torch.tensor([[1.0, 0.0, 0.0, 1.0], [0.0, 1.0, 1.0, 0.0]]),
    }
    g = _cross_entropy_graph()

    assert torch.equal(eval_graph(g, bindings), eval_graph(g, bindings))
    assert torch.equal(backward(g, bindings)["W"], backward(g, bindings)["W"])
