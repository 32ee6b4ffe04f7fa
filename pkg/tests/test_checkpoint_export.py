import csv

import numpy as np
import pytest
from numpy.testing import assert_allclose

from utils.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from utils.errors import LayoutError
from utils.export import LOG_FLOOR, export_heatmap_grid, write_errors, write_loss_trace
from utils.params import ParamLayout
from utils.pdelib import analytical_eval, catalog_get, evaluate_errors, evaluation_grid

LAYOUT = ParamLayout([("u.W0", (3, 6)), ("u.Wout", (7,))])


def make_checkpoint(rng, best=True):
    return Checkpoint(
        layout=LAYOUT,
        values=rng.normal(size=LAYOUT.size),
        model={"kind": "pisn", "inputs": ["x", "t"], "outputs": ["u"], "depth": 1},
        config={"problem": "fp1", "seed": 0},
        config_hash="ab" * 32,
        best=rng.normal(size=LAYOUT.size) if best else None,
        best_loss=0.25 if best else None,
    )


class TestCheckpoint:
    @pytest.mark.parametrize("best", [True, False])
    def test_round_trip_is_bitwise(self, tmp_path, rng, best):
        ckpt = make_checkpoint(rng, best)
        path = str(tmp_path / "checkpoint.bin")
        save_checkpoint(path, ckpt)
        again = load_checkpoint(path)
        assert again.layout == LAYOUT
        assert np.array_equal(again.values, ckpt.values)
        assert again.model == ckpt.model
        assert again.config_hash == ckpt.config_hash
        if best:
            assert np.array_equal(again.best, ckpt.best)
            assert again.best_loss == 0.25
        else:
            assert again.best is None
            assert np.array_equal(again.best_params.values, ckpt.values)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.bin"
        path.write_bytes(b"NOTACKPT" + b"\0" * 16)
        with pytest.raises(LayoutError):
            load_checkpoint(str(path))

    def test_truncated_body(self, tmp_path, rng):
        path = tmp_path / "checkpoint.bin"
        save_checkpoint(str(path), make_checkpoint(rng))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(LayoutError):
            load_checkpoint(str(path))

    def test_wrong_length_not_saved(self, tmp_path):
        ckpt = Checkpoint(layout=LAYOUT, values=np.zeros(3), model={})
        with pytest.raises(LayoutError):
            save_checkpoint(str(tmp_path / "c.bin"), ckpt)


class TestExport:
    def test_exact_heatmap_hits_floor(self):
        problem = catalog_get("burgers2d-conservation", 2.3e-2)
        grid = evaluation_grid(problem, 4)

        def exact(points):
            return analytical_eval(problem, points)

        columns, data = export_heatmap_grid(exact, problem, grid)
        assert columns == ["x", "y", "t", "output_id", "predicted", "exact", "abs_error", "log10_abs_error"]
        assert data.shape == (len(grid) * len(problem.outputs), len(columns))
        assert np.all(data[:, -2] == 0.0)
        assert np.all(data[:, -1] == LOG_FLOOR)
        assert_allclose(np.unique(data[:, 3]), np.arange(len(problem.outputs)))

    def test_heatmap_log_error(self):
        problem = catalog_get("fp1")
        grid = evaluation_grid(problem, 5)

        def shifted(points):
            return analytical_eval(problem, points) + 1e-3

        _, data = export_heatmap_grid(shifted, problem, grid)
        assert_allclose(data[:, -1], -3.0, atol=1e-9)

    def test_errors_csv(self, tmp_path):
        problem = catalog_get("fp1")
        grid = evaluation_grid(problem, 5)

        def shifted(points):
            return analytical_eval(problem, points) + 0.5

        report = evaluate_errors(problem, shifted, grid, "pisn")
        path = tmp_path / "errors.csv"
        write_errors(str(path), [report])
        with open(path, encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 1
        assert rows[0]["problem"] == "fp1"
        assert rows[0]["architecture"] == "pisn"
        assert float(rows[0]["mean_err"]) == pytest.approx(0.5)

    def test_loss_trace_union_columns(self, tmp_path):
        trace = [
            {"epoch": 0, "lr": 1e-2, "total": 2.0, "physics": 2.0},
            {"epoch": 1, "lr": 1e-2, "total": 1.0, "physics": 0.5, "stage": 2},
        ]
        path = tmp_path / "loss_trace.csv"
        write_loss_trace(str(path), trace)
        with open(path, encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert list(rows[0].keys()) == ["epoch", "lr", "total", "physics", "stage"]
        assert rows[0]["stage"] == ""
        assert rows[1]["total"] == "1.0"
