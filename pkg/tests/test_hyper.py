import numpy as np
import pytest
from numpy.testing import assert_allclose

from utils.autodiff import Tape
from utils.config import build_config
from utils.errors import LayoutError, NonFiniteError, NonFiniteLossError, SolverError, TaskRangeError
from utils.expression import evaluate, extract_expression
from utils.hyper import (
    HyperBundle,
    HyperModel,
    HyperNetParams,
    hyper_forward,
    hyper_train,
    hyperpinsn_train,
    multitask_objective,
    task_average,
    task_data,
)
from utils.mlp import const_weights, mlp_init
from utils.models import SymbolicModel
from utils.params import ParamVector
from utils.pdelib import CATALOG
from utils.physics import LossResult, total_loss

TELEGRAPH = CATALOG["telegraph1"].task_spec


def small_hyper(depth=1):
    target = SymbolicModel(("x", "t"), ("u",), depth)
    return HyperModel(target, TELEGRAPH, hidden=(4,), out_scale=1e-1)


def tiny_config(**extra):
    data = {
        "problem": "telegraph1",
        "depth": 1,
        "hidden": [4],
        "epochs": 3,
        "log_every": 100,
        "grid_resolution": 5,
        "collocation": {"n_colloc": 20, "n_ic": 5, "n_bc": 5},
        "hyper": {"hidden": [4], "train_tasks": [1.0, 2.5], "validation_tasks": [1.75], "test_tasks": [1.75]},
    }
    data.update(extra)
    return build_config(data)


class TestForward:
    def test_output_matches_target_layout(self, rng):
        h = small_hyper(2)
        vector = hyper_forward(h.params(h.init_values(rng)), 2.0)
        assert vector.layout == h.target.layout
        assert len(vector) == h.target.layout.size

    def test_zero_hypernet_gives_zero_field(self, rng):
        h = small_hyper()
        vector = hyper_forward(h.params(np.zeros(h.layout.size)), 3.3)
        assert np.all(vector.values == 0.0)
        assert np.all(h.target.predict(vector, rng.random((5, 2))) == 0.0)

    def test_output_depends_on_task(self, rng):
        h = small_hyper()
        params = h.params(h.init_values(rng))
        assert not np.array_equal(hyper_forward(params, 1.0).values, hyper_forward(params, 4.0).values)

    def test_width_mismatch(self):
        h = small_hyper()
        wrong = mlp_init((1, 4, h.target.layout.size + 1), ("lambda",), seed=0)
        with pytest.raises(LayoutError):
            HyperNetParams(wrong, h.target.layout, TELEGRAPH)

    def test_nan_task(self, rng):
        h = small_hyper()
        with pytest.raises(TaskRangeError):
            hyper_forward(h.params(h.init_values(rng)), float("nan"))

    def test_normalized_range(self):
        assert TELEGRAPH.normalize(TELEGRAPH.lo) == -1.0
        assert TELEGRAPH.normalize(TELEGRAPH.hi) == 1.0

    def test_generate_matches_forward(self, rng):
        h = small_hyper()
        values = h.init_values(rng)
        tape = Tape()
        generated = h.generate(h.layout.bind(tape.const(values)), 2.5)
        assert_allclose(generated.data, hyper_forward(h.params(values), 2.5).values, rtol=1e-14)

    def test_continuous_in_task(self, rng):
        h = small_hyper(2)
        params = h.params(h.init_values(rng))
        base = hyper_forward(params, 2.0).values
        steps = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
        gaps = [np.linalg.norm(hyper_forward(params, 2.0 + eps).values - base) for eps in steps]
        assert all(b < a for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] <= 1e-3 * gaps[0]

    @pytest.mark.parametrize("lam", [TELEGRAPH.lo, 0.5 * (TELEGRAPH.lo + TELEGRAPH.hi), TELEGRAPH.hi])
    def test_expression_for_any_task(self, rng, lam):
        h = small_hyper(2)
        vector = hyper_forward(h.params(h.init_values(rng)), lam)
        expr = extract_expression(h.target.symbolic_params(vector, "u"), 0.0, "u")
        pts = rng.random((8, 2))
        env = {"x": pts[:, 0], "t": pts[:, 1]}
        assert_allclose(evaluate(expr, env), h.target.predict(vector, pts)[:, 0], rtol=1e-10, atol=1e-12)


class TestMultitask:
    def test_shared_points(self, rng):
        data = task_data("telegraph1", [1.0, 2.0, 3.0], (30, 6, 6), rng)
        first = data[0][2]
        for _, _, colloc in data[1:]:
            assert np.array_equal(colloc.interior, first.interior)
            assert np.array_equal(colloc.idc_points, first.idc_points)

    def test_objective_is_mean_of_tasks(self, rng):
        h = small_hyper()
        data = task_data("telegraph1", [1.0, 2.0, 4.5], (30, 6, 6), rng)
        values = h.init_values(rng)

        def bind(tape, flat, lam):
            return h.target_weights(h.layout.bind(flat), lam)

        tape = Tape()
        combined = multitask_objective(h.target, data, bind)(tape, tape.const(values)).value
        single = []
        for lam, problem, colloc in data:
            t = Tape()
            single.append(total_loss(problem, h.target, bind(t, t.const(values), lam), colloc).value)
        assert combined == pytest.approx(np.mean(single), rel=1e-12)

    def test_nonfinite_loss_names_task(self):
        def finite(tape, flat):
            return LossResult(tape.const(1.0), {"physics": 1.0})

        def broken(tape, flat):
            raise NonFiniteLossError("physics", 3)

        tape = Tape()
        with pytest.raises(NonFiniteError) as info:
            task_average([(1.0, finite), (2.5, broken)])(tape, tape.const(np.zeros(1)))
        assert info.value.task == 2.5

    def test_box_restricts_shared_points(self, rng):
        box = {"x": (0.0, 0.5), "t": (0.0, 1.0)}
        data = task_data("telegraph1", [1.0, 2.0], (30, 6, 6), rng, box=box)
        interior = data[0][2].interior
        assert np.array_equal(interior, data[1][2].interior)
        assert np.all(interior[:, 0] <= 0.5)
        # x=1 不在盒子里，只剩 x=0 的边界点
        assert np.all(data[0][2].bc_points[:, 0] == 0.0)


class TestTraining:
    def test_hyperpinsn_two_stages(self, rng):
        config = tiny_config(architecture="hyper-pinsn", residual_epochs=2)
        train = task_data("telegraph1", [1.0, 2.5], (20, 5, 5), rng)
        bundle, values, trace, check = hyperpinsn_train("telegraph1", train, [], config, rng)
        assert set(bundle.parts) == {"pisn", "res"}
        assert values.shape == (bundle.layout.size,)
        assert [row["epoch"] for row in trace] == list(range(5))
        out = bundle.predict(values, 1.75, rng.random((4, 2)))
        assert out.shape == (4, 1)
        assert np.all(np.isfinite(out))
        # 两个任务的 H_pisn 输出依次拼接
        assert check.before.shape == (2 * len(check.points), 1)
        assert np.array_equal(check.before, check.final)
        assert np.array_equal(check.before, check.bound)

    def test_hyperpinsn_rejects_moved_stage_one(self, rng, monkeypatch):
        def shifted(tape, vector):
            return const_weights(tape, ParamVector(vector.values + 1e-3, vector.layout))

        monkeypatch.setattr("utils.hyper.const_weights", shifted)
        config = tiny_config(architecture="hyper-pinsn", residual_epochs=1, epochs=1)
        train = task_data("telegraph1", [1.0, 2.5], (20, 5, 5), rng)
        with pytest.raises(SolverError, match="H_pisn"):
            hyperpinsn_train("telegraph1", train, [], config, rng)

    def test_bundle_description_round_trip(self, rng):
        config = tiny_config(architecture="hyper-pinsn", residual_epochs=1, epochs=1)
        train = task_data("telegraph1", [1.0, 2.5], (20, 5, 5), rng)
        bundle, values, _, _ = hyperpinsn_train("telegraph1", train, [], config, rng)
        again = HyperBundle.from_description(bundle.describe())
        pts = rng.random((6, 2))
        assert_allclose(again.predict(values, 3.0, pts), bundle.predict(values, 3.0, pts))

    def test_hyper_pisn_reports_and_expressions(self):
        result = hyper_train(tiny_config(architecture="hyper-pisn"))
        assert [r.task_param for r in result.reports] == [1.0, 2.5, 1.75]
        assert list(result.expressions) == ["u@A=1.75"]
        assert len(result.trace) == 3
        assert np.all(np.isfinite([r.mean for r in result.reports]))

    def test_out_of_range_training_task(self):
        config = tiny_config(architecture="hyper-pisn")
        config.hyper.train_tasks = [1.0, 9.0]
        with pytest.raises(TaskRangeError):
            hyper_train(config)
