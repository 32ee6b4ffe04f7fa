"""
结果导出：errors.csv、loss_trace.csv、heatmap_grid.csv、expression.txt/.json、checkpoint.bin
"""

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.checkpoint import Checkpoint, save_checkpoint
from utils.expression import ExpressionNode, expression_render
from utils.optim import FreezeCheck
from utils.params import ParamLayout
from utils.pdelib import ErrorReport, PDEProblem, analytical_eval

# 误差为 0 时 log10 的下限
LOG_FLOOR = -16.0

ERROR_COLUMNS = ["problem", "task_param", "architecture", "output", "mean_err", "max_err"]


@dataclass
class RunResult:
    """一次训练（vanilla / hyper / decomp）的全部产物"""

    config: Dict[str, Any]
    config_hash: str
    model: Dict[str, Any]
    layout: ParamLayout
    values: np.ndarray
    best: Optional[np.ndarray] = None
    best_loss: Optional[float] = None
    trace: List[Dict[str, float]] = field(default_factory=list)
    reports: List[ErrorReport] = field(default_factory=list)
    expressions: Dict[str, ExpressionNode] = field(default_factory=dict)
    # (问题, 预测函数, 网格)：heatmap_grid.csv 的数据来源
    heatmap: Optional[Tuple[PDEProblem, Callable[[np.ndarray], np.ndarray], np.ndarray]] = None
    tables: Dict[str, Tuple[List[str], List[Dict[str, Any]]]] = field(default_factory=dict)
    # 两阶段训练的冻结检查（PINSN 类架构）
    frozen: List[FreezeCheck] = field(default_factory=list)
    status: str = "ok"

    @property
    def final_loss(self) -> Optional[float]:
        return self.trace[-1]["total"] if self.trace else None

    @property
    def summary_error(self) -> float:
        """本架构（不含阶段性、逐子域）报告的平均误差"""
        own = [r.mean for r in self.reports if r.architecture == self.config.get("architecture")]
        return float(np.mean(own)) if own else float("nan")

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            layout=self.layout,
            values=self.values,
            model=self.model,
            config=self.config,
            config_hash=self.config_hash,
            best=self.best,
            best_loss=self.best_loss,
            status=self.status,
        )


def write_csv(path: str, columns: Sequence[str], rows: Sequence[Dict[str, Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def write_errors(path: str, reports: Sequence[ErrorReport]) -> None:
    rows = [row for report in reports for row in report.rows()]
    write_csv(path, ERROR_COLUMNS, rows)


def write_loss_trace(path: str, trace: Sequence[Dict[str, float]]) -> None:
    if not trace:
        write_csv(path, ["epoch", "lr", "total"], [])
        return
    columns = list(trace[0].keys())
    for row in trace:
        columns.extend(k for k in row if k not in columns)
    write_csv(path, columns, trace)


def export_heatmap_grid(
    predict: Callable[[np.ndarray], np.ndarray],
    problem: PDEProblem,
    grid: np.ndarray,
) -> Tuple[List[str], np.ndarray]:
    """
    生成热力图数据

    返回:
        (列名, 数组)；每个输出占 len(grid) 行，列为
        坐标..., output_id, predicted, exact, abs_error, log10_abs_error
    """
    grid = np.asarray(grid, dtype=np.float64)
    pred = np.asarray(predict(grid), dtype=np.float64).reshape(len(grid), -1)
    exact = analytical_eval(problem, grid)
    blocks = []
    for k in range(len(problem.outputs)):
        err = np.abs(pred[:, k] - exact[:, k])
        with np.errstate(divide="ignore"):
            log_err = np.maximum(np.log10(err), LOG_FLOOR)
        ids = np.full(len(grid), float(k))
        blocks.append(np.column_stack([grid, ids, pred[:, k], exact[:, k], err, log_err]))
    columns = list(problem.inputs) + ["output_id", "predicted", "exact", "abs_error", "log10_abs_error"]
    return columns, np.vstack(blocks)


def write_heatmap(path: str, columns: Sequence[str], data: np.ndarray) -> None:
    np.savetxt(path, data, delimiter=",", header=",".join(columns), comments="", fmt="%.10e")


def write_expressions(out_dir: str, expressions: Dict[str, ExpressionNode], precision: int = 3) -> None:
    """expression.txt 为分层文本，expression.json 为结构化树"""
    blocks = []
    for key, expr in expressions.items():
        output = key.split("@")[0]
        blocks.append(f"# {key}\n{expression_render(expr, precision, layered=True, output=output)}")
    with open(os.path.join(out_dir, "expression.txt"), "w", encoding="utf-8") as f:
        f.write("\n\n".join(blocks) + "\n")
    payload = {key: expr.model_dump(mode="json") for key, expr in expressions.items()}
    with open(os.path.join(out_dir, "expression.json"), "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2)


def write_outputs(result: RunResult, out_dir: str) -> Dict[str, str]:
    """把 RunResult 写入输出目录，返回 文件名 → 路径"""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    def target(name: str) -> str:
        paths[name] = os.path.join(out_dir, name)
        return paths[name]

    save_checkpoint(target("checkpoint.bin"), result.checkpoint())
    write_loss_trace(target("loss_trace.csv"), result.trace)
    if result.reports:
        write_errors(target("errors.csv"), result.reports)
    if result.heatmap is not None:
        problem, predict, grid = result.heatmap
        columns, data = export_heatmap_grid(predict, problem, grid)
        write_heatmap(target("heatmap_grid.csv"), columns, data)
    if result.expressions:
        write_expressions(out_dir, result.expressions)
        paths["expression.txt"] = os.path.join(out_dir, "expression.txt")
        paths["expression.json"] = os.path.join(out_dir, "expression.json")
    for name, (columns, rows) in result.tables.items():
        write_csv(target(name), columns, rows)
    return paths
