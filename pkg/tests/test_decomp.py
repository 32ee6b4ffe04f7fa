from functools import partial

import numpy as np
import pytest
from numpy.testing import assert_allclose

from utils.autodiff import Tape
from utils.config import build_config
from utils.decomp import (
    SUBDOMAINS,
    DecompHyper,
    _spec,
    decomp_fit,
    decomp_hyper_train,
    decomp_objective,
    decomp_setup,
    decomp_task_objective,
    decomp_task_setups,
    decomp_train,
    interface_faces,
    interface_loss,
    interface_points,
    locate_many,
    locate_subdomain,
    subdomain_counts,
    subdomain_model,
)
from utils.errors import SolverError
from utils.hyper import HyperBundle, HyperModel
from utils.mlp import const_weights
from utils.models import ExactField, SymbolicModel, build_model
from utils.pdelib import catalog_get
from utils.physics import sample_collocation
from utils.trainer import train_field


class TestPartition:
    @pytest.mark.parametrize("point, index", [((0.5, 0.3), 5), ((0.4, 0.0), 2), ((1.0, 1.0), 12), ((0.0, 0.0), 1), ((0.79, 0.75), 11)])
    def test_locate(self, point, index):
        assert locate_subdomain(point) == index

    def test_outside_rejected(self):
        with pytest.raises(ValueError):
            locate_subdomain((1.2, 0.5))

    def test_grid_partition_is_exhaustive(self):
        axis = np.linspace(0.0, 1.0, 101)
        x, y = np.meshgrid(axis, axis, indexing="ij")
        where = locate_many(np.column_stack([x.ravel(), y.ravel()]))
        assert set(where.tolist()) == set(range(1, 13))
        for spec in SUBDOMAINS:
            mask = where == spec.index
            px, py = x.ravel()[mask], y.ravel()[mask]
            assert np.all((px >= spec.x[0]) & (px <= spec.x[1]))
            assert np.all((py >= spec.y[0]) & (py <= spec.y[1]))

    def test_depth_map(self):
        assert [SUBDOMAINS[i].depth for i in (0, 1, 2)] == [3, 2, 1]
        assert SUBDOMAINS[0].hidden == (20,) * 6

    def test_counts_scale_with_area(self):
        problem = catalog_get("burgers2d-coupled", 5.8e-3)
        assert subdomain_counts(problem, SUBDOMAINS[0], (2601, 200, 320)) == (1000, 20, 32)
        assert subdomain_counts(problem, SUBDOMAINS[2], (2601, 200, 320), 0.5) == (200, 10, 16)


class TestInterface:
    def test_faces(self):
        faces = interface_faces(SUBDOMAINS)
        assert len(faces) == 17
        assert sum(f.axis == "x" for f in faces) == 8
        pairs = {(f.lower, f.upper) for f in faces}
        assert (1, 2) in pairs and (1, 4) in pairs and (8, 11) in pairs
        assert (3, 4) not in pairs

    def test_points_on_face(self):
        problem = catalog_get("burgers2d-conservation", 2.3e-2)
        face = next(f for f in interface_faces(SUBDOMAINS) if (f.lower, f.upper) == (2, 5))
        pts = interface_points(problem, face, 50)
        assert pts.shape == (550, 3)
        assert np.all(pts[:, 1] == 0.25)
        assert pts[:, 0].min() == 0.4 and pts[:, 0].max() == 0.8
        assert len(np.unique(pts[:, 2])) == 11

    def test_exact_solution_is_continuous(self):
        problem = catalog_get("burgers2d-coupled", 5.8e-3)
        faces = interface_faces(SUBDOMAINS)
        points = [interface_points(problem, f, 10) for f in faces]
        tape = Tape()
        nets = {s.index: ExactField(problem) for s in SUBDOMAINS}
        weights = {s.index: {"_": tape.const(0.0)} for s in SUBDOMAINS}
        loss = interface_loss(problem, nets, weights, faces, points)
        assert float(loss.data) == 0.0

    def _constant_pair(self, a, b):
        problem = catalog_get("burgers2d-conservation", 2.3e-2)
        specs = SUBDOMAINS[:2]
        faces = interface_faces(specs)
        points = [interface_points(problem, f, 50) for f in faces]
        model = SymbolicModel(problem.inputs, problem.outputs, depth=1)
        tape = Tape()
        weights = {}
        for index, value in ((1, a), (2, b)):
            values = np.zeros(model.layout.size)
            seg = model.layout["u.Wout"]
            values[seg.offset + seg.size - 1] = value
            weights[index] = model.layout.bind(tape.const(values))
        return problem, {1: model, 2: model}, weights, faces, points

    def test_constant_jump(self):
        problem, nets, weights, faces, points = self._constant_pair(0.3, -0.2)
        loss = interface_loss(problem, nets, weights, faces, points)
        assert float(loss.data) == pytest.approx(550 * 0.25, rel=1e-12)

    def test_symmetric_in_sides(self):
        problem, nets, weights, faces, points = self._constant_pair(0.7, 0.1)
        swapped = {1: weights[2], 2: weights[1]}
        a = interface_loss(problem, nets, weights, faces, points)
        b = interface_loss(problem, nets, swapped, faces, points)
        assert float(a.data) == pytest.approx(float(b.data), rel=1e-14)

    def test_no_terms_enabled(self):
        problem, nets, weights, faces, points = self._constant_pair(0.3, -0.2)
        assert interface_loss(problem, nets, weights, faces, points, 0.0, 0.0, 0.0) is None
        assert interface_loss(problem, nets, weights, [], []) is None


class TestTraining:
    def test_single_box_matches_plain_training(self):
        problem = catalog_get("burgers2d-conservation", 2.3e-2)
        config = build_config({
            "problem": "burgers2d-conservation", "task": 2.3e-2, "architecture": "decomp-pinn",
            "epochs": 4, "schedule": {"lr": 1e-3, "milestones": [2]}, "log_every": 100,
        })
        plain_config = build_config({
            "problem": "burgers2d-conservation", "task": 2.3e-2, "architecture": "pinn", "hidden": [8, 8],
            "epochs": 4, "schedule": {"lr": 1e-3, "milestones": [2]}, "log_every": 100,
        })
        spec = _spec(1, (0.0, 1.0), (0.0, 1.0), 2, 8, 20)

        rng = np.random.default_rng(7)
        setup = decomp_setup(problem, [spec], "pinn", (20, 8, 8), rng)
        assert setup.faces == []
        _, _, _, trace, frozen = decomp_fit(setup, config, rng)
        assert frozen == []

        rng = np.random.default_rng(7)
        colloc = sample_collocation(problem, (20, 8, 8), rng)
        model = build_model("pinn", problem.inputs, problem.outputs, hidden=(8, 8))
        plain = train_field(problem, model, colloc, plain_config, rng)

        assert [row["total"] for row in trace] == [row["total"] for row in plain.trace]

    def _small(self, architecture, problem, task, **extra):
        data = {
            "problem": problem, "task": task, "architecture": architecture,
            "epochs": 2, "log_every": 100, "grid_resolution": 6,
            "collocation": {"n_ic": 100, "n_bc": 400},
            "decomp": {"interface_points": 5, "budget_scale": 0.02},
        }
        data.update(extra)
        return build_config(data)

    def test_all_boxes_pisn(self):
        result = decomp_train(self._small("decomp-pisn", "burgers2d-conservation", 2.3e-2))
        overall, per_domain = result.reports[0], result.reports[1:]
        assert overall.architecture == "decomp-pisn"
        assert len(per_domain) == 12
        _, rows = result.tables["domain_errors.csv"]
        assert [row["domain"] for row in rows] == list(range(1, 13))
        assert all(np.isfinite(row["mean_err"]) for row in rows)
        assert len(result.expressions) == 12
        assert "interface" in result.trace[-1]

    def test_two_boxes_pinsn(self):
        config = self._small("decomp-pinsn", "burgers2d-coupled", 5.8e-3, residual_epochs=1, hidden=[4])
        result = decomp_train(config, SUBDOMAINS[:2])
        assert len(result.trace) == 3
        assert result.values.shape == (result.layout.size,)
        _, predictor, grid = result.heatmap
        assert set(locate_many(grid[:, :2]).tolist()) == {1, 2}
        assert np.all(np.isfinite(predictor(grid)))
        (check,) = result.frozen
        assert np.array_equal(check.before, check.final)
        assert np.array_equal(check.before, check.bound)

    def test_rejects_non_burgers(self):
        with pytest.raises(ValueError):
            decomp_train(self._small("decomp-pinn", "heat", None))


NU = catalog_get("burgers2d-coupled", 5.8e-3).task_spec


def hyper_config(architecture, **extra):
    data = {
        "problem": "burgers2d-coupled", "architecture": architecture,
        "epochs": 2, "log_every": 100, "grid_resolution": 6,
        "collocation": {"n_ic": 100, "n_bc": 400},
        "decomp": {"interface_points": 5, "budget_scale": 0.02},
        "hyper": {
            "hidden": [4], "train_tasks": [2e-3, 8e-3], "validation_tasks": [5e-3],
            "test_tasks": [5.8e-3], "validate_every": 1,
        },
    }
    data.update(extra)
    return build_config(data)


class TestDecompHyper:
    def _setups(self, rng, tasks=(2e-3, 8e-3)):
        problem = catalog_get("burgers2d-coupled", tasks[0])
        specs = SUBDOMAINS[:2]
        models = {s.index: subdomain_model("pinn", problem, s) for s in specs}
        setups = decomp_task_setups(
            "burgers2d-coupled", list(tasks), specs, models, (2601, 100, 400), rng,
            budget_scale=0.02, interface_n=5,
        )
        return specs, models, setups

    def test_tasks_share_points_inside_boxes(self, rng):
        specs, _, setups = self._setups(rng)
        (lo, first), (hi, second) = setups
        assert (lo, hi) == (2e-3, 8e-3)
        assert first.problem.task == 2e-3 and second.problem.task == 8e-3
        for spec in specs:
            a, b = first.collocs[spec.index], second.collocs[spec.index]
            assert np.array_equal(a.interior, b.interior)
            assert np.array_equal(a.bc_points, b.bc_points)
            assert np.all((a.interior[:, 0] >= spec.x[0]) & (a.interior[:, 0] <= spec.x[1]))
            assert np.all((a.interior[:, 1] >= spec.y[0]) & (a.interior[:, 1] <= spec.y[1]))
        assert len(first.faces) == 1
        assert first.face_points[0] is second.face_points[0]

    def test_objective_is_mean_of_task_losses(self, rng):
        specs, models, setups = self._setups(rng)
        arch = "decomp-hyper-pinn"
        net = DecompHyper(arch, specs, {
            i: HyperBundle(arch, {"main": HyperModel(m, NU, hidden=(4,), out_scale=1e-1)}, m)
            for i, m in models.items()
        })
        values = 0.1 * rng.standard_normal(net.layout.size)
        config = hyper_config(arch)

        tape = Tape()
        mean = decomp_task_objective(setups, net.bind, config)(tape, tape.const(values))
        singles = []
        for lam, setup in setups:
            tape = Tape()
            singles.append(decomp_objective(setup, partial(net.bind, lam=lam), config.loss_weights)(tape, tape.const(values)))
        assert mean.value == pytest.approx(np.mean([s.value for s in singles]), rel=1e-12)
        assert mean.terms["interface"] == pytest.approx(np.mean([s.terms["interface"] for s in singles]), rel=1e-12)

    def test_generated_params_follow_task(self, rng):
        specs = SUBDOMAINS[:2]
        arch = "decomp-hyper-pisn"
        sym = {s.index: subdomain_model("pisn", catalog_get("burgers2d-coupled", 5e-3), s) for s in specs}
        net = DecompHyper(arch, specs, {
            i: HyperBundle(arch, {"main": HyperModel(m, NU, hidden=(4,), out_scale=1e-1)}, m) for i, m in sym.items()
        })
        values = 0.1 * rng.standard_normal(net.layout.size)
        a, b = net.main_params(values, 2e-3), net.main_params(values, 8e-3)
        assert a.layout == net.main_layout
        assert not np.array_equal(a.values, b.values)
        again = DecompHyper.from_description(net.describe())
        pts = np.array([[0.1, 0.1, 0.5], [0.6, 0.2, 1.0]])
        assert_allclose(again.predictor(values, 4e-3)(pts), net.predictor(values, 4e-3)(pts))

    def test_two_boxes_pisn(self):
        result = decomp_hyper_train(hyper_config("decomp-hyper-pisn"), SUBDOMAINS[:2])
        assert len(result.trace) == 2
        assert "interface" in result.trace[-1]
        assert result.values.shape == (result.layout.size,)
        overall = [r for r in result.reports if r.architecture == "decomp-hyper-pisn"]
        assert [r.task_param for r in overall] == [2e-3, 8e-3, 5.8e-3]
        per_domain = [r for r in result.reports if r.architecture != "decomp-hyper-pisn"]
        assert [r.architecture for r in per_domain] == ["decomp-hyper-pisn/d1", "decomp-hyper-pisn/d2"]
        _, rows = result.tables["domain_errors.csv"]
        assert {row["domain"] for row in rows} == {1, 2}
        assert set(result.expressions) == {f"{o}@d{i}@nu=0.0058" for o in ("u", "v") for i in (1, 2)}
        problem, predictor, grid = result.heatmap
        assert problem.task == 5.8e-3
        assert set(locate_many(grid[:, :2]).tolist()) == {1, 2}
        assert np.all(np.isfinite(predictor(grid)))
        assert result.frozen == []

    def test_two_boxes_pinsn_freezes_pisn_hypernets(self):
        config = hyper_config("decomp-hyper-pinsn", residual_epochs=1)
        result = decomp_hyper_train(config, SUBDOMAINS[:2])
        assert len(result.trace) == 3
        (check,) = result.frozen
        # 两个训练任务 + 一个验证任务
        assert check.before.shape == (3 * len(check.points), 2)
        assert np.array_equal(check.before, check.final)
        assert np.array_equal(check.before, check.bound)
        assert len(result.expressions) == 4

    def test_rejects_moved_pisn_hypernets(self, monkeypatch):
        def shifted(tape, vector):
            return const_weights(tape, type(vector)(vector.values + 1e-3, vector.layout))

        monkeypatch.setattr("utils.decomp.const_weights", shifted)
        with pytest.raises(SolverError, match="H_pisn"):
            decomp_hyper_train(hyper_config("decomp-hyper-pinsn", residual_epochs=1), SUBDOMAINS[:2])

    def test_needs_task_parameter(self):
        config = hyper_config("decomp-hyper-pinn", problem="heat")
        with pytest.raises(ValueError):
            decomp_hyper_train(config, SUBDOMAINS[:2])
