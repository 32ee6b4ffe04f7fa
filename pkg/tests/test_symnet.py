import numpy as np
import pytest
from numpy.testing import assert_allclose

from utils.errors import ConfigError, LayoutError
from utils.expression import ExpressionNode, evaluate, expression_render, extract_expression
from utils.pdelib import catalog_get
from utils.physics import physics_residual
from utils.symnet import (
    Grammar,
    SymbolicNetParams,
    symnet_forward,
    symnet_init,
    symnet_layout,
    symnet_param_count,
)

XT = Grammar(inputs=("x", "t"))
XYT = Grammar(inputs=("x", "y", "t"))


def x_plus_t() -> SymbolicNetParams:
    """u = x + t：add 产生式的两个操作数分别取 x 和 t，输出只接 add 通道"""
    W0 = np.zeros((3, 6))
    W0[0, 2] = 1.0
    W0[1, 3] = 1.0
    Wout = np.zeros(XT.hidden_width)
    Wout[2] = 1.0
    return SymbolicNetParams.from_blocks(1, XT, {"W0": W0, "Wout": Wout})


def oracle(params: SymbolicNetParams, pts: np.ndarray) -> np.ndarray:
    """直接按层写出的前向"""
    ones = np.ones((len(pts), 1))

    def hidden(A):
        return np.column_stack([np.sin(A[:, 0]), np.exp(A[:, 1]), A[:, 2] + A[:, 3], A[:, 4] * A[:, 5], pts, ones])

    H = hidden(np.hstack([pts, ones]) @ params.block("W0"))
    for j in range(1, params.depth):
        H = hidden(H @ params.block(f"W{j}"))
    return H @ params.block("Wout")


class TestGrammar:
    def test_hidden_width(self):
        assert XT.hidden_width == 7
        assert XYT.hidden_terms() == ["sin", "exp", "add", "multiply", "x", "y", "t", "1"]

    @pytest.mark.parametrize("inputs", [(), ("t", "x"), ("x", "x"), ("z",)])
    def test_invalid_inputs(self, inputs):
        with pytest.raises(ValueError):
            Grammar(inputs=inputs)


class TestLayout:
    @pytest.mark.parametrize("depth", [1, 2, 3, 4])
    @pytest.mark.parametrize("grammar", [XT, XYT])
    def test_param_count_closed_form(self, depth, grammar):
        layout = symnet_layout(depth, grammar)
        n = grammar.n_inputs
        assert layout.size == symnet_param_count(depth, n)
        assert layout["W0"].shape == (n + 1, 6)
        assert layout["Wout"].shape == (n + 5,)

    def test_count_is_linear_in_depth(self):
        counts = [symnet_param_count(d, 2) for d in range(1, 6)]
        steps = np.diff(counts)
        assert np.all(steps == steps[0])

    def test_depth_zero_rejected(self):
        with pytest.raises(ConfigError):
            symnet_init(0, XT, seed=0)

    def test_block_shape_checked(self):
        with pytest.raises(LayoutError):
            SymbolicNetParams.from_blocks(1, XT, {"W0": np.zeros((2, 6))})


class TestForward:
    def test_init_is_reproducible_and_bounded(self):
        a = symnet_init(2, XT, seed=7)
        b = symnet_init(2, XT, seed=7)
        assert np.array_equal(a.vector.values, b.vector.values)
        assert np.all(np.abs(a.vector.values) <= 0.5)

    def test_zero_network(self, rng):
        params = SymbolicNetParams.from_blocks(2, XT, {})
        out = symnet_forward(params, rng.random((10, 2)))
        assert np.all(out.array() == 0.0)
        assert np.all(out.array("x") == 0.0)
        assert np.all(out.array("x", "x") == 0.0)

    def test_x_plus_t_witness(self):
        out = symnet_forward(x_plus_t(), np.array([[2.0, 3.0]]))
        assert out.array()[0] == 5.0
        assert out.array("x")[0] == 1.0
        assert out.array("t")[0] == 1.0

    def test_x_plus_t_solves_fp1(self, rng):
        problem = catalog_get("fp1")
        pts = rng.random((100, 2))
        fields = {"u": symnet_forward(x_plus_t(), pts, 2, problem.pair_indices())}
        (res,) = physics_residual(problem, fields, pts)
        assert np.max(np.abs(res.data)) <= 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_straight_line_oracle(self, seed):
        params = symnet_init(2, XYT, seed=seed)
        pts = np.random.default_rng(seed).random((64, 3))
        assert_allclose(symnet_forward(params, pts, 0).array(), oracle(params, pts), rtol=1e-14, atol=1e-14)


class TestExtraction:
    def test_x_plus_t_renders_inline(self):
        expr = extract_expression(x_plus_t(), 1e-6)
        assert expression_render(expr) == "x + t"
        assert expression_render(expr, layered=True).splitlines()[-1] == "u = x + t"

    def test_round_trip_on_random_networks(self):
        rng = np.random.default_rng(0)
        for k in range(20):
            grammar = XT if k % 2 else XYT
            depth = 1 + k % 3
            params = symnet_init(depth, grammar, seed=k)
            if k % 4 == 0:
                # 训练后的网络常有恰为 0 的连接
                values = params.vector.values.copy()
                values[rng.random(values.size) < 0.3] = 0.0
                params = SymbolicNetParams(depth, grammar, type(params.vector)(values, params.vector.layout))
            pts = rng.random((1000, grammar.n_inputs))
            expr = extract_expression(params, 0.0)
            env = {name: pts[:, i] for i, name in enumerate(grammar.inputs)}
            assert_allclose(evaluate(expr, env), symnet_forward(params, pts, 0).array(), rtol=1e-10, atol=1e-10)

    def test_pruning_drops_small_coefficients(self):
        params = symnet_init(1, XT, seed=3)
        expr = extract_expression(params, prune_threshold=10.0)
        assert expr.kind == "constant"
        assert expr.value == 0.0

    def test_layered_render_labels(self):
        params = symnet_init(2, XYT, seed=1)
        text = expression_render(extract_expression(params, 1e-6), precision=3, layered=True, output="v")
        lines = text.splitlines()
        assert lines[0].startswith("l_")
        assert any(line.startswith("h_1") for line in lines)
        assert lines[-1].startswith("v = ")

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            extract_expression(symnet_init(1, XT, seed=0), -1.0)

    def test_node_arity_validated(self):
        with pytest.raises(ValueError):
            ExpressionNode(kind="sin", children=[])
        with pytest.raises(ValueError):
            ExpressionNode(kind="linear", coefficients=[1.0], children=[])

    def test_json_round_trip(self):
        expr = extract_expression(symnet_init(2, XT, seed=5), 1e-3)
        again = ExpressionNode.model_validate_json(expr.model_dump_json())
        pts = np.random.default_rng(5).random((50, 2))
        env = {"x": pts[:, 0], "t": pts[:, 1]}
        assert_allclose(evaluate(again, env), evaluate(expr, env))
