import numpy as np
import pytest
from numpy.testing import assert_allclose

from utils.autodiff import Tape
from utils.errors import NonFiniteError
from utils.models import ExactField, MLPModel, SymbolicModel
from utils.params import param_grad
from utils.pdelib import analytical_eval, catalog_get
from utils.physics import (
    TERM_FUNCTIONS,
    CollocationSet,
    LossWeights,
    sample_box,
    sample_collocation,
    total_loss,
)


def loss_and_grad(problem, model, colloc, values):
    tape = Tape()
    flat = tape.param(values)
    result = total_loss(problem, model, model.layout.bind(flat), colloc)
    return result.value, param_grad(result.total, flat, model.layout).values


def loss_value(problem, model, colloc, values):
    tape = Tape()
    return total_loss(problem, model, model.layout.bind(tape.const(values)), colloc).value


def exact_weights():
    return {"_": Tape().const(0.0)}


class TestSampling:
    def test_fp1_has_no_boundary_points(self, rng):
        colloc = sample_collocation(catalog_get("fp1"), (50, 20, 20), rng)
        assert colloc.sizes() == {"physics": 50, "idc": 20, "inc": 0, "bc": 0}
        assert np.all(colloc.idc_points[:, 1] == 0.0)

    def test_heat_boundary_faces(self, rng):
        problem = catalog_get("heat")
        colloc = sample_collocation(problem, (50, 20, 40), rng)
        x = colloc.bc_points[:, 0]
        assert len(x) == 40
        assert np.all((x == 0.0) | (x == np.pi))
        assert_allclose(colloc.bc_targets, 0.0)

    def test_boundary_remainder_goes_to_first_faces(self, rng):
        problem = catalog_get("heat")
        x = sample_collocation(problem, (10, 5, 41), rng).bc_points[:, 0]
        assert len(x) == 41
        assert (np.sum(x == 0.0), np.sum(x == np.pi)) == (21, 20)

    def test_box_keeps_only_outer_faces(self, rng):
        problem = catalog_get("burgers2d-coupled", 5e-3)
        bc = sample_collocation(problem, (10, 5, 7), rng, box={"x": (0.0, 0.4), "y": (0.0, 0.25)}).bc_points
        # 四个面各 1 个点，余下 3 个给 x=0、x=1、y=0；盒子只含 x=0 与 y=0 两个面
        assert len(bc) == 4
        assert (np.sum(bc[:, 0] == 0.0), np.sum(bc[:, 1] == 0.0)) == (2, 2)

    def test_wave_has_neumann_points(self, rng):
        colloc = sample_collocation(catalog_get("wave"), (10, 15, 10), rng)
        assert colloc.sizes()["inc"] == 15
        assert_allclose(colloc.inc_targets[:, 0], np.sin(colloc.inc_points[:, 0]))

    def test_burgers_snaps_to_time_levels(self, rng):
        problem = catalog_get("burgers2d-coupled", 5e-3)
        colloc = sample_collocation(problem, (200, 10, 40), rng)
        t = colloc.interior[:, 2]
        assert set(np.round(t, 12)) <= set(np.round(problem.time_levels, 12))

    @pytest.mark.parametrize("sampler", ["uniform", "grid", "lhs"])
    def test_samplers_stay_in_box(self, sampler, rng):
        pts = sample_box([(0.0, 1.0), (-2.0, 3.0)], 49, rng, sampler)
        assert pts.shape == (49, 2)
        assert np.all((pts[:, 0] >= 0.0) & (pts[:, 0] <= 1.0))
        assert np.all((pts[:, 1] >= -2.0) & (pts[:, 1] <= 3.0))

    def test_unknown_sampler(self, rng):
        with pytest.raises(ValueError):
            sample_box([(0.0, 1.0)], 4, rng, "sobol")


class TestLoss:
    def test_sum_of_terms(self, rng):
        problem = catalog_get("telegraph1", 1.5)
        model = SymbolicModel(problem.inputs, problem.outputs, 2)
        colloc = sample_collocation(problem, (40, 10, 10), rng)
        tape = Tape()
        weights = model.layout.bind(tape.param(model.init_values(rng)))
        total = total_loss(problem, model, weights, colloc).value
        parts = [float(fn(problem, model, weights, colloc).data) for fn in TERM_FUNCTIONS.values()]
        assert total == pytest.approx(sum(parts), rel=1e-12, abs=1e-12)

    def test_zero_weight_term_skipped(self, rng):
        problem = catalog_get("heat")
        model = SymbolicModel(problem.inputs, problem.outputs, 1)
        colloc = sample_collocation(problem, (20, 10, 10), rng)
        tape = Tape()
        weights = model.layout.bind(tape.param(model.init_values(rng)))
        result = total_loss(problem, model, weights, colloc, LossWeights(physics=0.0, idc=2.0))
        assert result.terms["physics"] == 0.0
        only_idc = TERM_FUNCTIONS["idc"](problem, model, weights, colloc)
        assert result.terms["idc"] == pytest.approx(2.0 * float(only_idc.data))

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(bc=-1.0)

    @pytest.mark.parametrize(
        "name,task",
        [("heat", None), ("wave", None), ("telegraph1", 2.0), ("kovasznay", 475.0), ("burgers2d-coupled", 5e-3)],
    )
    def test_exact_solution_has_zero_loss(self, name, task, rng):
        problem = catalog_get(name, task)
        colloc = sample_collocation(problem, (50, 20, 40), rng)
        result = total_loss(problem, ExactField(problem), exact_weights(), colloc)
        assert result.value <= 1e-18

    def test_condition_targets_come_from_problem(self, rng):
        problem = catalog_get("telegraph2", 1.25)
        colloc = CollocationSet.build(problem, rng.random((5, 2)), idc=np.column_stack([rng.random(6), np.zeros(6)]))
        assert_allclose(colloc.idc_targets, analytical_eval(problem, colloc.idc_points))
        assert_allclose(colloc.inc_targets[:, 0], -1.25)

    def test_overflow_flagged(self, rng):
        problem = catalog_get("fp1")
        model = SymbolicModel(problem.inputs, problem.outputs, 1)
        values = np.zeros(model.layout.size)
        seg_w0, seg_out = model.layout["u.W0"], model.layout["u.Wout"]
        # exp 通道的输入为 1000·x，输出接到 exp 通道
        values[seg_w0.offset + 0 * 6 + 1] = 1000.0
        values[seg_out.offset + 1] = 1.0
        colloc = sample_collocation(problem, (30, 10, 0), rng)
        tape = Tape()
        with pytest.raises(NonFiniteError):
            total_loss(problem, model, model.layout.bind(tape.param(values)), colloc)


class TestGradientOracle:
    @pytest.mark.parametrize("name,task", [("fp1", None), ("heat", None), ("telegraph1", 1.5)])
    @pytest.mark.parametrize("kind", ["pisn", "pinn"])
    def test_matches_central_differences(self, name, task, kind):
        rng = np.random.default_rng(42)
        problem = catalog_get(name, task)
        if kind == "pisn":
            model = SymbolicModel(problem.inputs, problem.outputs, 2)
        else:
            model = MLPModel(problem.inputs, problem.outputs, (20,) * 6)
        colloc = sample_collocation(problem, (30, 10, 10), rng)
        values = model.init_values(rng)
        loss, grad = loss_and_grad(problem, model, colloc, values)

        h = 1e-5
        for i in rng.choice(values.size, 20, replace=False):
            up, down = values.copy(), values.copy()
            up[i] += h
            down[i] -= h
            fd = (loss_value(problem, model, colloc, up) - loss_value(problem, model, colloc, down)) / (2 * h)
            assert grad[i] == pytest.approx(fd, rel=1e-5, abs=1e-8 * (1.0 + abs(loss)))
