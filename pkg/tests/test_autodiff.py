import numpy as np
import pytest
from numpy.testing import assert_allclose

from utils import autodiff as ad
from utils.autodiff import Tape
from utils.errors import LayoutError, MissingDerivativeError, NonFiniteGradientError, UnsupportedPrimitiveError
from utils.jets import Jet, jet_eval, seed
from utils.params import ParamLayout, ParamVector, param_grad


class TestTape:
    def test_constants_are_not_recorded(self):
        tape = Tape()
        out = ad.sin(tape.const(1.0) + tape.const(2.0))
        assert len(tape) == 0
        assert out.is_const
        assert_allclose(out.data, np.sin(3.0))

    def test_records_are_topologically_ordered(self):
        tape = Tape()
        w = tape.param(np.array([0.3, -0.2]))
        loss = ad.reduce_sum(ad.exp(w * w) + ad.sin(w))
        assert loss.index == len(tape) - 1
        for rec in tape.records:
            assert all(p is None or p < rec.index for p in rec.parents)

    def test_quadratic_gradient(self):
        tape = Tape()
        w = tape.param(1.0)
        loss = (w * 2.0) ** 2
        (g,) = tape.backward(loss, [w])
        assert g == pytest.approx(8.0)

    def test_backward_requires_scalar(self):
        tape = Tape()
        w = tape.param(np.ones(3))
        with pytest.raises(ValueError):
            tape.backward(w * 2.0, [w])

    def test_overflow_raises_diagnostic(self):
        tape = Tape()
        w = tape.param(np.array([1000.0]))
        loss = ad.reduce_sum(ad.exp(w))
        with pytest.raises(NonFiniteGradientError) as info:
            tape.backward(loss, [w])
        assert info.value.index == w.index

    def test_division_by_var_is_rejected(self):
        tape = Tape()
        w = tape.param(1.0)
        with pytest.raises(UnsupportedPrimitiveError):
            w / w

    @pytest.mark.parametrize("name", ["sin", "cos", "exp", "tanh", "sigmoid"])
    def test_reverse_matches_jet_derivative(self, name, rng):
        x = rng.uniform(-2.0, 2.0, 50)
        tape = Tape()
        a = tape.param(x)
        (g,) = tape.backward(ad.reduce_sum(getattr(ad, name)(a)), [a])

        (jx,) = seed(Tape(), x.reshape(-1, 1), ["x"])
        dj = getattr(jx, name)().array("x")
        assert_allclose(g, dj, rtol=0, atol=1e-12)


class TestParamGrad:
    def test_untouched_segment_has_zero_gradient(self):
        layout = ParamLayout([("a", (2,)), ("b", (3,))])
        tape = Tape()
        flat = tape.param(np.arange(5.0))
        bound = layout.bind(flat)
        loss = ad.reduce_sum(bound["a"] * bound["a"])
        grad = param_grad(loss, flat, layout)
        assert_allclose(grad.segment("a"), [0.0, 2.0])
        assert np.all(grad.segment("b") == 0.0)
        assert grad.layout == layout

    def test_linearity(self, rng):
        layout = ParamLayout([("w", (4,))])
        values = rng.normal(size=4)

        def grads(a, b):
            tape = Tape()
            flat = tape.param(values)
            w = layout.bind(flat)["w"]
            l1 = ad.reduce_sum(ad.sin(w) * w)
            l2 = ad.reduce_sum(ad.exp(w * 0.5))
            return param_grad(l1 * a + l2 * b, flat, layout).values

        g1, g2, g12 = grads(1.0, 0.0), grads(0.0, 1.0), grads(2.0, -3.0)
        assert_allclose(g12, 2.0 * g1 - 3.0 * g2, atol=1e-12)

    def test_gradient_flows_through_input_derivatives(self):
        # L = Σ (d/dx sin(w·x))² = Σ w² cos²(w·x)
        x = np.linspace(-1.0, 1.0, 7)
        tape = Tape()
        w = tape.param(0.7)
        (jx,) = seed(tape, x.reshape(-1, 1), ["x"])
        u = (jx * w).sin()
        loss = ad.reduce_sum(u.d("x") * u.d("x"))
        (g,) = tape.backward(loss, [w])
        expected = np.sum(2 * 0.7 * np.cos(0.7 * x) ** 2 - 0.7 ** 2 * 2 * np.cos(0.7 * x) * np.sin(0.7 * x) * x)
        assert g == pytest.approx(expected, rel=1e-12)


class TestLayout:
    def test_segments_cover_array(self):
        layout = ParamLayout([("W", (3, 2)), ("b", (2,)), ("c", ())])
        layout.validate()
        assert layout.size == 9
        assert [s.offset for s in layout] == [0, 6, 8]

    def test_duplicate_names_rejected(self):
        with pytest.raises(LayoutError):
            ParamLayout([("a", (1,)), ("a", (2,))])

    def test_vector_length_checked(self):
        with pytest.raises(LayoutError):
            ParamVector(np.zeros(3), ParamLayout([("a", (2,))]))

    def test_concat_and_sub(self):
        a = ParamLayout([("W", (2, 2))])
        b = ParamLayout([("v", (3,))])
        joined = ParamLayout.concat({"p": a, "q": b})
        assert joined.names() == ["p.W", "q.v"]
        vec = ParamVector(np.arange(7.0), joined)
        assert_allclose(vec.sub("q").values, [4.0, 5.0, 6.0])
        assert vec.sub("p").layout == a

    def test_description_round_trip(self):
        layout = ParamLayout([("W", (3, 2)), ("b", (2,))])
        assert ParamLayout.from_description(layout.describe()) == layout


class TestJetEval:
    def test_sine_at_origin(self):
        j = jet_eval(lambda x: x.sin(), [0.0], ["x"])
        assert j.array()[0] == 0.0
        assert j.array("x")[0] == 1.0
        assert j.array("x", "x")[0] == 0.0

    def test_exp_chain_rule(self):
        j = jet_eval(lambda x: (x * 2.0).exp(), [0.0], ["x"])
        assert_allclose([j.array()[0], j.array("x")[0], j.array("x", "x")[0]], [1.0, 2.0, 4.0])

    def test_bilinear(self):
        j = jet_eval(lambda x, y: x * y, [3.0, 5.0], ["x", "y"])
        assert j.array()[0] == 15.0
        assert j.array("x")[0] == 5.0
        assert j.array("y")[0] == 3.0
        assert j.array("x", "y")[0] == 1.0
        assert j.array("x", "x")[0] == 0.0

    def test_affine_hessian_is_exactly_zero(self):
        j = jet_eval(lambda x, y, t: x * 2.0 - y * 3.0 + t + 1.5, [0.3, 0.1, 0.9], ["x", "y", "t"])
        for a in "xyt":
            for b in "xyt":
                assert j.array(a, b)[0] == 0.0

    def test_second_derivative_is_symmetric(self):
        j = jet_eval(lambda x, y: (x * y.exp()).sin(), [0.4, -0.3], ["x", "y"])
        assert j.array("x", "y")[0] == j.array("y", "x")[0]

    def test_sin_exp_hessian_matches_central_differences(self):
        def f(x, y):
            return np.sin(np.exp(0.5 * x + 0.3 * y))

        p = np.array([0.7, -0.4])
        h = 1e-4
        j = jet_eval(lambda x, y: (x * 0.5 + y * 0.3).exp().sin(), p, ["x", "y"])
        fxx = (f(p[0] + h, p[1]) - 2 * f(*p) + f(p[0] - h, p[1])) / h ** 2
        fxy = (f(p[0] + h, p[1] + h) - f(p[0] + h, p[1] - h) - f(p[0] - h, p[1] + h) + f(p[0] - h, p[1] - h)) / (4 * h * h)
        assert j.array("x", "x")[0] == pytest.approx(fxx, rel=1e-6)
        assert j.array("x", "y")[0] == pytest.approx(fxy, rel=1e-6)

    def test_unsupported_primitive_rejected(self):
        with pytest.raises(UnsupportedPrimitiveError):
            jet_eval(lambda x: np.log(x), [1.0], ["x"])
        with pytest.raises(UnsupportedPrimitiveError):
            jet_eval(lambda x: x / x, [1.0], ["x"])

    def test_order_zero_jet_has_no_derivatives(self):
        j = jet_eval(lambda x: x.sin(), [0.2], ["x"], order=0)
        with pytest.raises(MissingDerivativeError):
            j.d("x")

    def test_untracked_pair_is_missing(self):
        tape = Tape()
        x, t = seed(tape, np.array([[0.1, 0.2]]), ["x", "t"], pairs={(0, 0)})
        u = x * t
        u.dd("x", "x")
        with pytest.raises(MissingDerivativeError):
            u.dd("t", "t")

    def test_unseeded_variable_is_missing(self):
        j = jet_eval(lambda x: x, [0.0], ["x"])
        assert isinstance(j, Jet)
        with pytest.raises(MissingDerivativeError):
            j.d("y")
