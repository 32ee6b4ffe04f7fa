"""
训练入口：vanilla PINN / PISN / PINSN，以及 hyper-* 与 decomp-* 的分发、结果落盘和运行登记
"""

import os
from functools import partial
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from utils.autodiff import Tape, Var
from utils.checkpoint import Checkpoint
from utils.config import TrainConfig, config_hash
from utils.db import insert_run
from utils.decomp import DecompHyper, decomp_hyper_train, decomp_train, restore_predictor
from utils.decorator import stage, timer
from utils.errors import ConfigError, DivergenceError
from utils.export import RunResult, write_outputs
from utils.expression import ExpressionNode, extract_expression
from utils.hyper import HyperBundle, hyper_train
from utils.mlp import const_weights
from utils.models import FieldModel, PINSNModel, SymbolicModel, build_model, model_from_description
from utils.optim import FitResult, FreezeCheck, fit
from utils.params import BoundParams, ParamVector
from utils.pdelib import PDEProblem, catalog_get, evaluate_errors, evaluation_grid
from utils.physics import CollocationSet, LossResult, LossWeights, sample_collocation, total_loss

Predictor = Callable[[np.ndarray], np.ndarray]


def field_objective(
    problem: PDEProblem,
    model: FieldModel,
    colloc: CollocationSet,
    loss_weights: Optional[LossWeights] = None,
    bind: Optional[Callable[[Tape, Var], BoundParams]] = None,
) -> Callable[[Tape, Var], LossResult]:
    """单个网络的物理信息损失；bind 缺省时整条参数向量都可训练"""
    bind = bind or (lambda tape, flat: model.layout.bind(flat))

    def objective(tape: Tape, flat: Var) -> LossResult:
        return total_loss(problem, model, bind(tape, flat), colloc, loss_weights)

    return objective


def _fit(objective, init: ParamVector, epochs: int, schedule, config: TrainConfig, label: str) -> FitResult:
    return fit(
        objective, init, epochs, schedule.lr, schedule.gamma, schedule.milestones,
        config.log_every, stage=label, task=config.task,
    )


def train_field(
    problem: PDEProblem,
    model: FieldModel,
    colloc: CollocationSet,
    config: TrainConfig,
    rng: np.random.Generator,
) -> FitResult:
    """PINN、PISN 或联合训练的 PINSN：全部参数一起更新"""
    objective = field_objective(problem, model, colloc, config.loss_weights)
    return _fit(objective, model.init_params(rng), config.epochs, config.schedule, config, config.architecture)


def train_pinsn(
    problem: PDEProblem,
    model: PINSNModel,
    colloc: CollocationSet,
    config: TrainConfig,
    rng: np.random.Generator,
) -> Tuple[FitResult, FitResult, FreezeCheck]:
    """
    两阶段 PINSN

        阶段 1：训练 PISN，取 best 快照
        阶段 2：PISN 参数作为常量，只训练残差网络 F（输出层从 0 开始）

    返回:
        (阶段 1 结果, 阶段 2 结果, PISN 冻结检查)
    """
    with stage("pinsn 1/2", f"训练 PISN ({config.epochs} epochs)"):
        stage1 = _fit(
            field_objective(problem, model.symbolic, colloc, config.loss_weights),
            model.symbolic.init_params(rng), config.epochs, config.schedule, config, "pinsn/1",
        )
    pisn_best = stage1.best.copy()
    check = FreezeCheck.record("PISN", partial(model.symbolic.predict, pisn_best), colloc.interior)
    bound: Dict[str, BoundParams] = {}

    def bind(tape: Tape, flat: Var) -> BoundParams:
        bound["pisn"] = const_weights(tape, pisn_best)
        return BoundParams.merge({"pisn": bound["pisn"], "res": model.residual.layout.bind(flat)})

    with stage("pinsn 2/2", f"冻结 PISN，训练残差网络 ({config.stage2_epochs} epochs)"):
        stage2 = _fit(
            field_objective(problem, model, colloc, config.loss_weights, bind),
            model.residual.init_params(rng), config.stage2_epochs, config.stage2_schedule, config, "pinsn/2",
        )
    final = ParamVector.join({"pisn": stage1.best, "res": stage2.best})
    check.verify(
        partial(model.symbolic.predict, final.sub("pisn")),
        partial(model.symbolic.predict, bound["pisn"].snapshot(model.symbolic.layout)),
    )
    return stage1, stage2, check


def expressions_for(model: FieldModel, values, threshold: float) -> Dict[str, ExpressionNode]:
    """符号部分每个输出一个表达式（PINN 返回空）"""
    vector = values if isinstance(values, ParamVector) else ParamVector(values, model.layout)
    if isinstance(model, PINSNModel):
        model, vector = model.symbolic, vector.sub("pisn")
    if not isinstance(model, SymbolicModel):
        return {}
    return {
        out: extract_expression(model.symbolic_params(vector, out), threshold, out)
        for out in model.outputs
    }


@timer
def train_vanilla(config: TrainConfig) -> RunResult:
    problem = catalog_get(config.problem, config.task, config.allow_out_of_range)
    rng = np.random.default_rng(config.seed)
    counts = config.collocation.counts(problem.default_counts)
    colloc = sample_collocation(problem, counts, rng, config.collocation.sampler)
    print(f"[INFO] {config.architecture} {problem!r}: 配点 {colloc.sizes()}", flush=True)

    model = build_model(config.base, problem.inputs, problem.outputs, config.depth, config.hidden)
    grid = evaluation_grid(problem, config.grid_resolution)
    reports, frozen = [], []
    if config.base == "pinsn" and not config.pinsn_joint:
        stage1, stage2, check = train_pinsn(problem, model, colloc, config, rng)
        frozen.append(check)
        pisn_report = evaluate_errors(
            problem, lambda pts: model.symbolic.predict(stage1.best, pts), grid, "pisn"
        )
        reports.append(pisn_report)
        print(f"[INFO] 阶段 1 PISN mean_err={pisn_report.mean:.3e}", flush=True)
        values = ParamVector.join({"pisn": stage1.best, "res": stage2.params}).values
        best = ParamVector.join({"pisn": stage1.best, "res": stage2.best}).values
        offset = len(stage1.trace)
        trace = stage1.trace + [{**row, "epoch": row["epoch"] + offset} for row in stage2.trace]
        best_loss = stage2.best_loss
    else:
        result = train_field(problem, model, colloc, config, rng)
        values, best, trace, best_loss = result.params.values, result.best.values, result.trace, result.best_loss

    def predict(points: np.ndarray) -> np.ndarray:
        return model.predict(best, points)

    report = evaluate_errors(problem, predict, grid, config.architecture)
    reports.append(report)
    print(f"[INFO] {config.architecture} mean_err={report.mean:.3e}", flush=True)
    return RunResult(
        config=config.model_dump(mode="json"),
        config_hash=config_hash(config),
        model=model.describe(),
        layout=model.layout,
        values=values,
        best=best,
        best_loss=best_loss,
        trace=trace,
        reports=reports,
        expressions=expressions_for(model, best, config.prune_threshold),
        heatmap=(problem, predict, grid),
        frozen=frozen,
    )


def run_dir(config: TrainConfig) -> str:
    task = "" if config.task is None else f"_{config.task:g}"
    return os.path.join(config.output_dir, f"{config.problem}{task}_{config.architecture}_s{config.seed}")


def run_record(config: TrainConfig, out_dir: str, result: Optional[RunResult], status: str) -> Dict[str, Any]:
    """runs.db 中一条运行记录的字段"""
    return {
        "problem": config.problem,
        "architecture": config.architecture,
        "task_param": config.task,
        "output_dir": out_dir,
        "config_hash": config_hash(config),
        "final_loss": None if result is None else result.final_loss,
        "status": status,
        "reports": [] if result is None else [r.model_dump(mode="json") for r in result.reports],
    }


def register_run(output_root: str, record: Dict[str, Any]) -> None:
    try:
        insert_run(output_root, **record)
    except Exception as e:
        print(f"[WARN] 运行登记失败: {e}", flush=True)


def train(config: TrainConfig) -> Tuple[RunResult, Dict[str, str]]:
    """
    按架构分发训练并写出全部产物

    返回:
        (RunResult, 输出文件路径)

    异常:
        DivergenceError: 先把最后一组有限参数写入 checkpoint.bin 再抛出
    """
    out_dir = run_dir(config)
    try:
        if config.family == "hyper":
            result = hyper_train(config)
        elif config.family == "decomp":
            result = decomp_hyper_train(config) if config.uses_hyper else decomp_train(config)
        else:
            result = train_vanilla(config)
    except DivergenceError as e:
        _save_diverged(config, out_dir, e)
        register_run(config.output_dir, run_record(config, out_dir, None, "diverged"))
        raise
    paths = write_outputs(result, out_dir)
    register_run(config.output_dir, run_record(config, out_dir, result, "ok"))
    print(f"[INFO] 结果已写入 {out_dir}", flush=True)
    return result, paths


def _save_diverged(config: TrainConfig, out_dir: str, err: DivergenceError) -> None:
    if err.params is None:
        return
    os.makedirs(out_dir, exist_ok=True)
    vector: ParamVector = err.params
    result = RunResult(
        config=config.model_dump(mode="json"),
        config_hash=config_hash(config),
        model={"kind": config.architecture, "stage_layout": vector.layout.describe()},
        layout=vector.layout,
        values=vector.values,
        status="diverged",
    )
    write_outputs(result, out_dir)
    print(f"[ERROR] 训练发散，最后一组有限参数已写入 {out_dir}", flush=True)


# ----------------------------------------------------------------------
# 从检查点恢复
# ----------------------------------------------------------------------
def restore(ckpt: Checkpoint, task: Optional[float] = None) -> Tuple[Predictor, Optional[FieldModel], ParamVector]:
    """
    由检查点重建预测函数

    返回:
        (预测函数, 主网络模型, 主网络参数)；decomp 检查点没有单一主网络，模型为 None
    """
    kind = ckpt.model.get("kind", "")
    values = ckpt.best_params.values
    if kind.startswith("hyper-"):
        if task is None:
            raise ConfigError("超网络检查点需要指定任务参数 --task")
        bundle = HyperBundle.from_description(ckpt.model)
        main = bundle.main_params(values, task)
        return (lambda pts: bundle.model.predict(main, pts)), bundle.model, main
    if kind.startswith("decomp-hyper-"):
        if task is None:
            raise ConfigError("超网络检查点需要指定任务参数 --task")
        net = DecompHyper.from_description(ckpt.model)
        return net.predictor(values, task), None, net.main_params(values, task)
    if kind.startswith("decomp-"):
        predictor = restore_predictor(ckpt.model, ckpt.layout, values)
        return predictor, None, ckpt.best_params
    if kind in ("pinn", "pisn", "pinsn"):
        model = model_from_description(ckpt.model)
        vector = ParamVector(values, model.layout)
        return (lambda pts: model.predict(vector, pts)), model, vector
    raise ConfigError(f"无法识别的检查点模型类型: {kind!r}")


@timer
def evaluate_checkpoint(ckpt: Checkpoint, problem: PDEProblem, resolution: Optional[int] = None):
    predict, _, _ = restore(ckpt, problem.task)
    grid = evaluation_grid(problem, resolution)
    return evaluate_errors(problem, predict, grid, ckpt.model.get("kind", ""))


def checkpoint_expressions(ckpt: Checkpoint, threshold: float = 1e-6, task: Optional[float] = None) -> Dict[str, ExpressionNode]:
    """extract-expr：vanilla / hyper / decomp 检查点的符号表达式"""
    kind = ckpt.model.get("kind", "")
    if kind.startswith("decomp-"):
        predictor, _, _ = restore(ckpt, task)
        out = {}
        for i, model in predictor.models.items():
            for key, expr in expressions_for(model, predictor.vectors[i], threshold).items():
                out[f"{key}@d{i}"] = expr
        return out
    _, model, vector = restore(ckpt, task)
    return expressions_for(model, vector, threshold)
