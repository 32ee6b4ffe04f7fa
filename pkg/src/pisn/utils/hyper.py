"""
超网络：任务参数 λ（Re、ν、A）→ 主网络的完整参数向量

    HyperPINN   H_pinn(λ) → 6×20 MLP 的参数
    HyperPISN   H_pisn(λ) → 符号网络参数，可对任意 λ 提取表达式
    HyperPINSN  先训练 H_pisn，冻结后再训练 H_res(λ) → 残差 MLP 的参数

λ 先仿射映射到 [-1, 1] 再输入超网络；每个 epoch 对全部训练任务的损失取平均。
"""

from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from utils import autodiff as ad
from utils.autodiff import Tape, Var
from utils.config import TrainConfig, config_hash
from utils.decorator import stage, timer
from utils.errors import ConfigError, LayoutError, NonFiniteError, TaskRangeError
from utils.export import RunResult
from utils.expression import extract_expression
from utils.mlp import MLPParams, const_weights, mlp_init_values, mlp_layout, mlp_sizes, mlp_values
from utils.models import FieldModel, PINSNModel, build_model, model_from_description
from utils.optim import FitResult, FreezeCheck, fit
from utils.params import BoundParams, ParamLayout, ParamVector
from utils.pdelib import CATALOG, PDEProblem, TaskSpec, evaluate_errors, evaluation_grid
from utils.physics import CollocationSet, LossResult, LossWeights, sample_collocation, total_loss

HYPER_HIDDEN = (512, 512, 256, 256, 128)

# (任务参数, 该任务的问题实例, 配点集)
TaskData = List[Tuple[float, PDEProblem, CollocationSet]]


class HyperNetParams:
    """输入宽度为 1 的 MLP 参数 + 目标网络布局"""

    def __init__(self, mlp: MLPParams, target_layout: ParamLayout, task_spec: TaskSpec):
        if mlp.sizes[0] != 1:
            raise LayoutError(f"超网络输入宽度必须为 1，实际为 {mlp.sizes[0]}")
        if mlp.sizes[-1] != target_layout.size:
            raise LayoutError(f"超网络输出维度 {mlp.sizes[-1]} 与目标网络参数量 {target_layout.size} 不一致")
        self.mlp = mlp
        self.target_layout = target_layout
        self.task_spec = task_spec


def hyper_forward(hyper: HyperNetParams, lam: float) -> ParamVector:
    """生成任务 λ 对应的主网络参数"""
    spec = hyper.task_spec
    if not np.isfinite(lam):
        raise TaskRangeError(spec.name, lam, (spec.lo, spec.hi))
    tape = Tape()
    x = np.array([[spec.normalize(lam)]])
    out = mlp_values(const_weights(tape, hyper.mlp.vector), hyper.mlp.sizes, x)
    return ParamVector(out.data.reshape(-1).copy(), hyper.target_layout)


class HyperModel:
    """某个目标网络的超网络"""

    def __init__(
        self,
        target: FieldModel,
        task_spec: TaskSpec,
        hidden: Sequence[int] = HYPER_HIDDEN,
        out_scale: float = 1e-2,
    ):
        self.target = target
        self.task_spec = task_spec
        self.hidden = tuple(hidden)
        self.out_scale = out_scale
        self.sizes = mlp_sizes(1, self.hidden, target.layout.size)
        self.layout = mlp_layout(self.sizes)

    def init_values(self, rng: np.random.Generator) -> np.ndarray:
        # 输出层缩小，生成的主网络权重从小值开始
        return mlp_init_values(self.sizes, rng, self.out_scale)

    def generate(self, weights: Mapping[str, Var], lam: float) -> Var:
        x = np.array([[self.task_spec.normalize(lam)]])
        return ad.reshape(mlp_values(weights, self.sizes, x), (self.target.layout.size,))

    def target_weights(self, weights: Mapping[str, Var], lam: float) -> BoundParams:
        return self.target.layout.bind(self.generate(weights, lam))

    def params(self, values) -> HyperNetParams:
        vector = values if isinstance(values, ParamVector) else ParamVector(values, self.layout)
        return HyperNetParams(MLPParams(self.sizes, ("lambda",), vector), self.target.layout, self.task_spec)

    def describe(self) -> Dict:
        return {
            "hidden": list(self.hidden),
            "out_scale": self.out_scale,
            "task_spec": self.task_spec.model_dump(mode="json"),
            "target": self.target.describe(),
        }

    @classmethod
    def from_description(cls, desc: Mapping) -> "HyperModel":
        return cls(
            model_from_description(desc["target"]),
            TaskSpec.model_validate(desc["task_spec"]),
            desc["hidden"],
            desc["out_scale"],
        )


class HyperBundle:
    """
    一组超网络及其拼出的主网络

    hyper-pinn / hyper-pisn 只有一个部件 main；hyper-pinsn 有 pisn 和 res 两个部件，
    生成的参数按 PINSNModel 的布局拼接。
    """

    def __init__(self, kind: str, parts: Dict[str, HyperModel], model: FieldModel):
        self.kind = kind
        self.parts = parts
        self.model = model
        self.layout = ParamLayout.concat({name: h.layout for name, h in parts.items()})

    @property
    def task_spec(self) -> TaskSpec:
        return next(iter(self.parts.values())).task_spec

    def main_params(self, values, lam: float) -> ParamVector:
        vector = values if isinstance(values, ParamVector) else ParamVector(values, self.layout)
        generated = {name: hyper_forward(h.params(vector.sub(name)), lam) for name, h in self.parts.items()}
        if "main" in generated:
            return generated["main"]
        return ParamVector.join(generated)

    def target_weights(self, weights: BoundParams, lam: float) -> BoundParams:
        """在 tape 上生成主网络权重，weights 按 layout 绑定"""
        generated = {name: h.target_weights(weights.sub(name), lam) for name, h in self.parts.items()}
        if "main" in generated:
            return generated["main"]
        return BoundParams.merge(generated)

    def predict(self, values, lam: float, points: np.ndarray) -> np.ndarray:
        return self.model.predict(self.main_params(values, lam), points)

    def describe(self) -> Dict:
        return {
            "kind": self.kind,
            "model": self.model.describe(),
            "parts": {name: h.describe() for name, h in self.parts.items()},
        }

    @classmethod
    def from_description(cls, desc: Mapping) -> "HyperBundle":
        parts = {name: HyperModel.from_description(d) for name, d in desc["parts"].items()}
        return cls(desc["kind"], parts, model_from_description(desc["model"]))


# ----------------------------------------------------------------------
# 多任务损失
# ----------------------------------------------------------------------
def task_data(
    family: str,
    tasks: Sequence[float],
    counts: Optional[Tuple[int, int, int]],
    rng: np.random.Generator,
    sampler: str = "uniform",
    allow_out_of_range: bool = False,
    box: Optional[Mapping[str, Tuple[float, float]]] = None,
) -> TaskData:
    """所有任务共用一套配点坐标（可限定在子域盒子内），初边值目标按各自的 λ 计算"""
    problems = [CATALOG[family](lam, allow_out_of_range) for lam in tasks]
    if not problems:
        return []
    shared = sample_collocation(problems[0], counts, rng, sampler, box=box)
    data = []
    for lam, problem in zip(tasks, problems):
        colloc = CollocationSet.build(problem, shared.interior, shared.idc_points, shared.bc_points)
        data.append((float(lam), problem, colloc))
    return data


Binder = Callable[[Tape, Var, float], BoundParams]
Objective = Callable[[Tape, Var], LossResult]


def task_average(per_task: Sequence[Tuple[float, Objective]]) -> Objective:
    """对每个任务各自的损失取平均；非有限值错误带上出错的任务参数"""

    def objective(tape: Tape, flat: Var) -> LossResult:
        total = None
        terms: Dict[str, float] = {}
        for lam, task_objective in per_task:
            try:
                res = task_objective(tape, flat)
            except NonFiniteError as e:
                e.task = lam
                raise
            total = res.total if total is None else total + res.total
            for k, v in res.terms.items():
                terms[k] = terms.get(k, 0.0) + v
        scale = 1.0 / len(per_task)
        return LossResult(total * scale, {k: v * scale for k, v in terms.items()})

    return objective


def _single_task(net: FieldModel, lam: float, problem: PDEProblem, colloc: CollocationSet, bind: Binder, loss_weights) -> Objective:
    def objective(tape: Tape, flat: Var) -> LossResult:
        return total_loss(problem, net, bind(tape, flat, lam), colloc, loss_weights)

    return objective


def multitask_objective(
    net: FieldModel,
    data: TaskData,
    bind: Binder,
    loss_weights: Optional[LossWeights] = None,
) -> Objective:
    """
    对所有任务的损失取平均

    参数:
        bind: (tape, flat, λ) → 主网络权重
    """
    return task_average([
        (lam, _single_task(net, lam, problem, colloc, bind, loss_weights)) for lam, problem, colloc in data
    ])


def mean_task_loss(objective: Callable[[Tape, Var], LossResult], values: np.ndarray) -> float:
    tape = Tape()
    return objective(tape, tape.const(values)).value


# ----------------------------------------------------------------------
# 训练
# ----------------------------------------------------------------------
def _fit_hyper(
    hyper: HyperModel,
    net: FieldModel,
    train: TaskData,
    validation: TaskData,
    bind: Binder,
    config: TrainConfig,
    epochs: int,
    schedule,
    rng: np.random.Generator,
    label: str,
) -> FitResult:
    objective = multitask_objective(net, train, bind, config.loss_weights)
    validate = None
    if validation:
        val_objective = multitask_objective(net, validation, bind, config.loss_weights)

        def validate(p: ParamVector) -> float:
            return mean_task_loss(val_objective, p.values)
    return fit(
        objective,
        ParamVector(hyper.init_values(rng), hyper.layout),
        epochs,
        schedule.lr,
        schedule.gamma,
        schedule.milestones,
        config.log_every,
        stage=label,
        validate=validate,
        validate_every=config.hyper.validate_every,
    )


def hyperpinsn_train(
    family: str,
    train: TaskData,
    validation: TaskData,
    config: TrainConfig,
    rng: np.random.Generator,
) -> Tuple[HyperBundle, np.ndarray, List[Dict], FreezeCheck]:
    """
    两阶段 HyperPINSN

    返回:
        (超网络组合, 拼接后的参数值, 两阶段拼接的损失记录, H_pisn 冻结检查)
    """
    problem = train[0][1]
    spec = problem.task_spec
    hcfg = config.hyper
    pinsn = PINSNModel(problem.inputs, problem.outputs, config.depth, config.hidden)
    h_pisn = HyperModel(pinsn.symbolic, spec, hcfg.hidden, hcfg.out_scale)

    with stage(f"hyper-pinsn {family} 1/2", f"训练 H_pisn ({config.epochs} epochs)"):
        stage1 = _fit_hyper(
            h_pisn, pinsn.symbolic, train, validation,
            lambda tape, flat, lam: h_pisn.target_weights(h_pisn.layout.bind(flat), lam),
            config, config.epochs, config.schedule, rng, "hyper-pinsn/1",
        )
    pisn_params = h_pisn.params(stage1.best.values.copy())
    tasks = [lam for lam, _, _ in train + validation]
    generated = {lam: hyper_forward(pisn_params, lam) for lam in tasks}

    def symbolic_outputs(vectors: Mapping[float, ParamVector]) -> Callable[[np.ndarray], np.ndarray]:
        def predict(points: np.ndarray) -> np.ndarray:
            return np.concatenate([pinsn.symbolic.predict(vectors[lam], points) for lam in tasks])

        return predict

    check = FreezeCheck.record("H_pisn", symbolic_outputs(generated), train[0][2].interior)
    h_res = HyperModel(pinsn.residual, spec, hcfg.hidden, hcfg.out_scale)
    bound: Dict[float, BoundParams] = {}

    def bind(tape: Tape, flat: Var, lam: float) -> BoundParams:
        bound[lam] = const_weights(tape, generated[lam])
        return BoundParams.merge({
            "pisn": bound[lam],
            "res": h_res.target_weights(h_res.layout.bind(flat), lam),
        })

    with stage(f"hyper-pinsn {family} 2/2", f"冻结 H_pisn，训练 H_res ({config.stage2_epochs} epochs)"):
        stage2 = _fit_hyper(
            h_res, pinsn, train, validation, bind,
            config, config.stage2_epochs, config.stage2_schedule, rng, "hyper-pinsn/2",
        )

    bundle = HyperBundle("hyper-pinsn", {"pisn": h_pisn, "res": h_res}, pinsn)
    values = np.concatenate([stage1.best.values, stage2.best.values])
    check.verify(
        symbolic_outputs({lam: bundle.main_params(values, lam).sub("pisn") for lam in tasks}),
        symbolic_outputs({lam: bound[lam].snapshot(pinsn.symbolic.layout) for lam in tasks}),
    )
    offset = len(stage1.trace)
    trace = stage1.trace + [{**row, "epoch": row["epoch"] + offset} for row in stage2.trace]
    return bundle, values, trace, check


def task_lists(config: TrainConfig, spec: TaskSpec) -> Tuple[List[float], List[float], List[float]]:
    h = config.hyper
    train = list(h.train_tasks) if h.train_tasks is not None else spec.train_tasks(h.n_train)
    val = list(h.validation_tasks) if h.validation_tasks is not None else spec.validation_tasks(h.n_validation)
    test = list(h.test_tasks) if h.test_tasks is not None else list(spec.test)
    for lam in train:
        if not spec.contains(lam):
            raise TaskRangeError(spec.name, lam, (spec.lo, spec.hi))
    return train, val, test


def _task_predictor(bundle: HyperBundle, values: np.ndarray, lam: float) -> Callable[[np.ndarray], np.ndarray]:
    def predict(points: np.ndarray) -> np.ndarray:
        return bundle.predict(values, lam, points)

    return predict


@timer
def hyper_train(config: TrainConfig) -> RunResult:
    """训练 hyper-pinn / hyper-pisn / hyper-pinsn，并在训练任务与测试任务上评估"""
    if config.problem not in CATALOG:
        raise ConfigError(f"未知的问题: {config.problem}")
    family = config.problem
    spec = CATALOG[family].task_spec
    if spec is None:
        raise ConfigError(f"问题 {family} 没有任务参数，不能使用超网络")
    train_tasks, val_tasks, test_tasks = task_lists(config, spec)
    print(f"[INFO] {config.architecture} {family}: 训练任务 {train_tasks}，验证任务 {val_tasks}，测试任务 {test_tasks}", flush=True)

    rng = np.random.default_rng(config.seed)
    first = CATALOG[family](train_tasks[0])
    counts = config.collocation.counts(first.default_counts)
    train = task_data(family, train_tasks, counts, rng, config.collocation.sampler)
    validation = task_data(family, val_tasks, counts, rng, config.collocation.sampler, allow_out_of_range=True)

    frozen: List[FreezeCheck] = []
    if config.base == "pinsn":
        bundle, values, trace, check = hyperpinsn_train(family, train, validation, config, rng)
        best = values
        frozen.append(check)
    else:
        target = build_model(config.base, first.inputs, first.outputs, config.depth, config.hidden)
        h = HyperModel(target, spec, config.hyper.hidden, config.hyper.out_scale)
        result = _fit_hyper(
            h, target, train, validation,
            lambda tape, flat, lam: h.target_weights(h.layout.bind(flat), lam),
            config, config.epochs, config.schedule, rng, config.architecture,
        )
        bundle = HyperBundle(config.architecture, {"main": h}, target)
        values, best, trace = result.params.values, result.best.values, result.trace

    reports, expressions = [], {}
    heatmap = None
    for lam in list(train_tasks) + list(test_tasks):
        problem = CATALOG[family](lam, allow_out_of_range=True)
        grid = evaluation_grid(problem, config.grid_resolution)
        predict = _task_predictor(bundle, best, lam)
        reports.append(evaluate_errors(problem, predict, grid, config.architecture))
        if lam in test_tasks and heatmap is None:
            heatmap = (problem, predict, grid)
        if lam in test_tasks and config.base in ("pisn", "pinsn"):
            main = bundle.main_params(best, lam)
            symbolic = bundle.model.symbolic if config.base == "pinsn" else bundle.model
            vector = main.sub("pisn") if config.base == "pinsn" else main
            for output in problem.outputs:
                expr = extract_expression(symbolic.symbolic_params(vector, output), config.prune_threshold, output)
                expressions[f"{output}@{spec.name}={lam:g}"] = expr
    for report in reports[len(train_tasks):]:
        print(f"[INFO] 测试任务 {spec.name}={report.task_param}: mean_err={report.mean:.3e}", flush=True)

    return RunResult(
        config=config.model_dump(mode="json"),
        config_hash=config_hash(config),
        model=bundle.describe(),
        layout=bundle.layout,
        values=values,
        best=best,
        best_loss=None,
        trace=trace,
        reports=reports,
        expressions=expressions,
        heatmap=heatmap,
        frozen=frozen,
    )
