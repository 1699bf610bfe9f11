import numpy as np
import pytest

from src.autodiff import (
    ComputationGraph,
    Gradient,
    LeafKind,
    NonScalarRootError,
    ShapeMismatchError,
    UnboundLeafError,
    AutodiffError,
    evaluate,
    gradient,
    gradient_as_graph
)
from src.network import Network, init
from src.schemas import Architecture


def scalar_graph(op):
    graph = ComputationGraph()
    x = graph.input("x", np.array([[3.0]]))
    graph.root = graph.sum(op(graph, x))
    return graph


def test_evaluate_square():
    graph = scalar_graph(lambda g, x: g.mul(x, x))
    assert evaluate(graph) == pytest.approx(9.0)


def test_evaluate_relu_negative():
    graph = scalar_graph(lambda g, x: g.relu(x))
    assert evaluate(graph, {"x": np.array([[-2.0]])}) == 0.0


def test_evaluate_identity_mlp():
    net = Network(
        arch=Architecture(widths=[1, 1, 1, 1]),
        weights=[np.eye(1)] * 3,
        biases=[np.zeros(1), np.zeros(1)]
    )
    graph = ComputationGraph()
    nodes = net.bind(graph, "net")
    x = graph.input("x", np.array([[1.5]]))
    graph.root = graph.sum(net.apply(graph, x, nodes))
    assert evaluate(graph) == pytest.approx(1.5)


def test_unbound_leaf():
    graph = ComputationGraph()
    x = graph.input("x")
    graph.root = graph.sum(x)
    with pytest.raises(UnboundLeafError):
        evaluate(graph)


def test_shape_mismatch():
    graph = ComputationGraph()
    a = graph.input("a", np.ones((2, 3)))
    b = graph.input("b", np.ones((2, 2)))
    graph.root = graph.add(a, b)
    with pytest.raises(ShapeMismatchError):
        evaluate(graph)


def test_gradient_of_square():
    graph = ComputationGraph()
    x = graph.parameter("x", np.array([[3.0]]))
    graph.root = graph.sum(graph.square(x))
    assert gradient(graph, None, ["x"])["x"][0, 0] == pytest.approx(6.0)


def test_gradient_through_active_relu():
    graph = ComputationGraph()
    w = graph.parameter("w", np.array([[1.0]]))
    graph.root = graph.sum(graph.relu(graph.affine(w, 2.0)))
    assert gradient(graph, None, ["w"])["w"][0, 0] == pytest.approx(2.0)


def test_relu_derivative_at_zero_is_zero():
    graph = ComputationGraph()
    w = graph.parameter("w", np.array([[0.0]]))
    graph.root = graph.sum(graph.relu(w))
    assert gradient(graph, None, ["w"])["w"][0, 0] == 0.0


def test_non_scalar_root():
    graph = ComputationGraph()
    w = graph.parameter("w", np.ones((2, 2)))
    graph.root = graph.relu(w)
    with pytest.raises(NonScalarRootError):
        gradient(graph, None, ["w"])


def test_unreached_parameter_gets_zero_gradient():
    graph = ComputationGraph()
    a = graph.parameter("a", np.array([[2.0]]))
    graph.parameter("b", np.ones((2, 3)))
    graph.root = graph.sum(graph.square(a))
    grads = gradient(graph, None, ["a", "b"])
    assert np.array_equal(grads["b"], np.zeros((2, 3)))


def test_topology_and_cache_consistency(rng):
    net = init(Architecture(widths=[3, 5, 4, 1]), rng)
    graph = ComputationGraph()
    nodes = net.bind(graph, "net")
    x = graph.input("x", rng.uniform(size=(6, 3)))
    graph.root = graph.mean(net.apply(graph, x, nodes))
    evaluate(graph)
    assert graph.check_topology()
    assert graph.verify()


def test_evaluate_is_deterministic(rng):
    net = init(Architecture(widths=[3, 8, 1]), rng)
    graph = ComputationGraph()
    nodes = net.bind(graph, "net")
    x_value = rng.normal(size=(10, 3))
    x = graph.input("x", x_value)
    graph.root = graph.mean(net.apply(graph, x, nodes))
    assert evaluate(graph).tobytes() == evaluate(graph.copy()).tobytes()


def _min_abs_preactivation(net: Network, x: np.ndarray) -> float:
    h = x @ net.weights[0].T
    smallest = np.inf
    for l in range(1, net.arch.depth + 1):
        pre = h + net.biases[l - 1]
        smallest = min(smallest, float(np.min(np.abs(pre))))
        h = np.maximum(pre, 0.0) @ net.weights[l].T
    return smallest


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-8))


def _mean_output(params, depth: int, x: np.ndarray) -> float:
    h = x @ params["W0"].T
    for l in range(1, depth + 1):
        h = np.maximum(h + params[f"b{l}"], 0.0) @ params[f"W{l}"].T
    return float(h.mean())


def _mlp_loss_graph(net: Network, x: np.ndarray):
    graph = ComputationGraph()
    nodes = net.bind(graph, "net")
    graph.root = graph.mean(net.apply(graph, graph.input("x", x), nodes))
    return graph


def test_first_order_gradients_match_finite_differences():
    rng = np.random.default_rng(2024)
    h = 1e-5
    checked = 0
    while checked < 50:
        depth = int(rng.integers(1, 4))
        widths = [int(w) for w in rng.integers(1, 17, size=depth + 2)]
        widths[-1] = 1
        net = init(Architecture(widths=widths), rng)
        net = net.with_parameters({
            f"b{l}": rng.uniform(-0.5, 0.5, size=widths[l]) for l in range(1, depth + 1)
        })
        x = rng.uniform(size=(4, widths[0]))
        if _min_abs_preactivation(net, x) <= 1e-3:
            continue

        grads = gradient(_mlp_loss_graph(net, x), None, [f"net.{k}" for k in net.parameters()])
        params = net.parameters()
        for name, value in params.items():
            fd = np.zeros_like(value)
            for idx in np.ndindex(value.shape):
                plus, minus = value.copy(), value.copy()
                plus[idx] += h
                minus[idx] -= h
                f_plus = _mean_output({**params, name: plus}, depth, x)
                f_minus = _mean_output({**params, name: minus}, depth, x)
                fd[idx] = (f_plus - f_minus) / (2 * h)
            assert _relative_error(grads[f"net.{name}"], fd) <= 1e-6
        checked += 1


def test_gradient_linearity(rng):
    graph = ComputationGraph()
    w = graph.parameter("w", rng.normal(size=(3, 2)))
    x = graph.input("x", rng.normal(size=(4, 3)))
    f = graph.sum(graph.relu(graph.matmul(x, w)))
    g = graph.mean(graph.square(w))
    combo = graph.add(graph.affine(f, 2.0), graph.affine(g, -3.0))

    grad_f = gradient(graph, f, ["w"])
    grad_g = gradient(graph, g, ["w"])
    grad_combo = gradient(graph, combo, ["w"])
    expected = grad_f.scaled(2.0) + grad_g.scaled(-3.0)
    np.testing.assert_allclose(grad_combo["w"], expected["w"], atol=1e-12)


def _penalty_reducer(graph, grad_nodes):
    deviation = graph.affine(graph.row_norm(grad_nodes[0]), 1.0, -1.0)
    return graph.mean(graph.square(deviation))


def _linear_critic_penalty_graph(w: np.ndarray, x: np.ndarray):
    net = Network(arch=Architecture(widths=[len(w), 1]), weights=[w[None, :]], biases=[])
    graph = ComputationGraph()
    nodes = net.bind(graph, "critic")
    x_node = graph.input("x", x)
    graph.root = graph.sum(net.apply(graph, x_node, nodes))
    return gradient_as_graph(graph, None, ["x"], reducer=_penalty_reducer)


def test_linear_critic_penalty_closed_form(rng):
    w = np.array([3.0, 4.0])
    work = _linear_critic_penalty_graph(w, rng.uniform(size=(5, 2)))
    assert float(work.value(work.root)) == pytest.approx(16.0, abs=1e-10)

    grad = gradient(work, None, ["critic.W0"])["critic.W0"][0]
    expected = 2 * (np.linalg.norm(w) - 1) * w / np.linalg.norm(w)
    np.testing.assert_allclose(grad, expected, atol=1e-10)
    np.testing.assert_allclose(grad, [4.8, 6.4], atol=1e-10)


def test_unit_linear_critic_has_zero_penalty_gradient(rng):
    w = np.array([0.6, 0.8])
    work = _linear_critic_penalty_graph(w, rng.uniform(size=(3, 2)))
    assert float(work.value(work.root)) == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(gradient(work, None, ["critic.W0"])["critic.W0"], 0.0, atol=1e-10)


def test_default_reducer_is_gradient_norm():
    graph = ComputationGraph()
    w = graph.parameter("w", np.array([[3.0], [4.0]]))
    x = graph.input("x", np.ones((1, 2)))
    graph.root = graph.sum(graph.matmul(x, w))
    work = gradient_as_graph(graph, None, ["x"])
    assert float(work.value(work.root)) == pytest.approx(5.0)


def test_gradient_as_graph_rejects_parameters():
    graph = ComputationGraph()
    w = graph.parameter("w", np.ones((1, 1)))
    graph.root = graph.sum(w)
    with pytest.raises(AutodiffError):
        gradient_as_graph(graph, None, ["w"])


def test_penalty_double_backprop_matches_finite_differences():
    rng = np.random.default_rng(99)
    h = 1e-4
    checked = 0
    while checked < 20:
        widths = [3, int(rng.integers(2, 9)), int(rng.integers(2, 9)), 1]
        net = init(Architecture(widths=widths), rng)
        net = net.with_parameters({"b1": rng.uniform(-0.3, 0.3, widths[1]), "b2": rng.uniform(-0.3, 0.3, widths[2])})
        x = rng.uniform(size=(4, 3))
        if _min_abs_preactivation(net, x) <= 1e-2:
            continue

        graph = ComputationGraph()
        nodes = net.bind(graph, "critic")
        graph.root = graph.sum(net.apply(graph, graph.input("x", x), nodes))
        work = gradient_as_graph(graph, None, ["x"], reducer=_penalty_reducer)
        grads = gradient(work, None, [f"critic.{k}" for k in net.parameters()])

        def penalty(candidate: Network) -> float:
            norms = np.linalg.norm(candidate.input_gradient(x), axis=1)
            return float(np.mean((norms - 1.0) ** 2))

        for name, value in net.parameters().items():
            fd = np.zeros_like(value)
            for idx in np.ndindex(value.shape):
                plus, minus = value.copy(), value.copy()
                plus[idx] += h
                minus[idx] -= h
                fd[idx] = (
                    penalty(net.with_parameters({name: plus}))
                    - penalty(net.with_parameters({name: minus}))
                ) / (2 * h)
            assert _relative_error(grads[f"critic.{name}"], fd) <= 1e-4
        checked += 1


def test_gradient_congruence_check():
    grads = Gradient({"w": np.zeros((2, 2))})
    with pytest.raises(ShapeMismatchError):
        grads.check_congruent({"w": np.zeros((2, 3))})
    with pytest.raises(ShapeMismatchError):
        grads.check_congruent({"v": np.zeros(2)})


def test_leaves_by_kind():
    graph = ComputationGraph()
    graph.parameter("w", np.ones(1))
    graph.input("x", np.ones(1))
    graph.const(np.ones(1))
    assert set(graph.leaves(LeafKind.PARAMETER)) == {"w"}
    assert set(graph.leaves(LeafKind.INPUT)) == {"x"}
