"""
二维 Burgers 方程的区域分解训练

[0,1]² 在 x ∈ {0.4, 0.8}、y ∈ {0.25, 0.5, 0.75} 处切成 12 个盒子，每个盒子一个独立网络，
联合最小化：各子域物理损失 + 各子域内的初边值损失 + 界面耦合损失。

界面耦合（每个公共面，默认权重都为 1）:
    值连续       Σ (u_l − u_r)²
    法向导数连续 Σ (∂u_l/∂n − ∂u_r/∂n)²
    残差平均     Σ (R_l − R̄)² + (R_r − R̄)²，R̄ = (R_l + R_r)/2

decomp-hyper-* 在每个子域上换成以 ν 为输入的超网络，每个 epoch 对全部训练任务的分解损失取平均。
"""

import math
from dataclasses import dataclass
from functools import partial
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, model_validator

from utils import autodiff as ad
from utils.autodiff import Tape, Var
from utils.config import TrainConfig, config_hash
from utils.decorator import stage, timer
from utils.errors import ConfigError, NonFiniteError
from utils.export import RunResult
from utils.expression import ExpressionNode, extract_expression
from utils.hyper import (
    HyperBundle,
    HyperModel,
    Objective,
    hyper_forward,
    mean_task_loss,
    task_average,
    task_data,
    task_lists,
)
from utils.mlp import const_weights
from utils.models import FieldModel, MLPModel, PINSNModel, SymbolicModel, model_from_description
from utils.optim import FitResult, FreezeCheck, fit
from utils.params import BoundParams, ParamLayout, ParamVector
from utils.pdelib import CATALOG, ErrorReport, PDEProblem, catalog_get, evaluate_errors, evaluation_grid
from utils.physics import CollocationSet, LossResult, LossWeights, sample_collocation, total_loss

X_SPLITS = (0.4, 0.8)
Y_SPLITS = (0.25, 0.5, 0.75)

# MLP 层数 → 符号网络深度
DEPTH_FOR_LAYERS = {6: 3, 4: 2, 2: 1}


class SubdomainSpec(BaseModel):
    index: int
    x: Tuple[float, float]
    y: Tuple[float, float]
    layers: int
    neurons: int
    points: int

    @model_validator(mode="after")
    def _check(self) -> "SubdomainSpec":
        if not (self.x[0] < self.x[1] and self.y[0] < self.y[1]):
            raise ValueError(f"子域 {self.index} 的范围非法: x={self.x}, y={self.y}")
        if self.layers < 1 or self.neurons < 1 or self.points < 0:
            raise ValueError(f"子域 {self.index} 的网络形状或配点数非法")
        return self

    @property
    def depth(self) -> int:
        return DEPTH_FOR_LAYERS.get(self.layers, max(1, self.layers // 2))

    @property
    def hidden(self) -> Tuple[int, ...]:
        return (self.neurons,) * self.layers

    @property
    def area(self) -> float:
        return (self.x[1] - self.x[0]) * (self.y[1] - self.y[0])

    def box(self) -> Dict[str, Tuple[float, float]]:
        return {"x": self.x, "y": self.y}


def _spec(index, x, y, layers, neurons, points) -> SubdomainSpec:
    return SubdomainSpec(index=index, x=x, y=y, layers=layers, neurons=neurons, points=points)


SUBDOMAINS: List[SubdomainSpec] = [
    _spec(1, (0.0, 0.4), (0.0, 0.25), 6, 20, 1000),
    _spec(2, (0.4, 0.8), (0.0, 0.25), 4, 20, 600),
    _spec(3, (0.8, 1.0), (0.0, 0.25), 2, 20, 400),
    _spec(4, (0.0, 0.4), (0.25, 0.5), 6, 20, 1000),
    _spec(5, (0.4, 0.8), (0.25, 0.5), 6, 20, 1000),
    _spec(6, (0.8, 1.0), (0.25, 0.5), 2, 20, 600),
    _spec(7, (0.0, 0.4), (0.5, 0.75), 4, 20, 400),
    _spec(8, (0.4, 0.8), (0.5, 0.75), 6, 20, 1000),
    _spec(9, (0.8, 1.0), (0.5, 0.75), 4, 20, 600),
    _spec(10, (0.0, 0.4), (0.75, 1.0), 2, 20, 400),
    _spec(11, (0.4, 0.8), (0.75, 1.0), 6, 20, 1000),
    _spec(12, (0.8, 1.0), (0.75, 1.0), 6, 20, 1000),
]


def locate_many(points: np.ndarray) -> np.ndarray:
    """
    批量定位子域编号（1–12）

    盒子左闭右开，每个方向的最后一个盒子两端都闭合
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, np.shape(points)[-1])
    x, y = pts[:, 0], pts[:, 1]
    inside = (x >= 0.0) & (x <= 1.0) & (y >= 0.0) & (y <= 1.0)
    if not inside.all():
        bad = pts[int(np.argmax(~inside))]
        raise ValueError(f"点 ({bad[0]}, {bad[1]}) 不在单位正方形内")
    ix = np.searchsorted(X_SPLITS, x, side="right")
    iy = np.searchsorted(Y_SPLITS, y, side="right")
    return 3 * iy + ix + 1


def locate_subdomain(point: Sequence[float]) -> int:
    return int(locate_many(np.asarray(point, dtype=np.float64).reshape(1, -1))[0])


# ----------------------------------------------------------------------
# 界面
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Face:
    """两个相邻子域的公共面；lower 在法向 axis 的低侧"""

    lower: int
    upper: int
    axis: str
    position: float
    span: Tuple[float, float]


def interface_faces(specs: Sequence[SubdomainSpec]) -> List[Face]:
    faces = []
    for a in specs:
        for b in specs:
            if a.x[1] == b.x[0] and a.y == b.y:
                faces.append(Face(a.index, b.index, "x", a.x[1], a.y))
            if a.y[1] == b.y[0] and a.x == b.x:
                faces.append(Face(a.index, b.index, "y", a.y[1], a.x))
    return faces


def time_slices(problem: PDEProblem, n: int = 11) -> np.ndarray:
    if problem.time_levels is not None:
        return np.asarray(problem.time_levels, dtype=np.float64)
    lo, hi = problem.bounds["t"]
    return np.linspace(lo, hi, n)


def interface_points(problem: PDEProblem, face: Face, n: int = 50) -> np.ndarray:
    """面上等距 n 个点 × 每个时间片，列顺序为 (x, y, t)"""
    along = np.linspace(face.span[0], face.span[1], n)
    a, t = np.meshgrid(along, time_slices(problem), indexing="ij")
    fixed = np.full(a.size, face.position)
    if face.axis == "x":
        return np.column_stack([fixed, a.ravel(), t.ravel()])
    return np.column_stack([a.ravel(), fixed, t.ravel()])


def _sq(d: Var) -> Var:
    return ad.reduce_sum(d * d)


def _accumulate(total: Optional[Var], part: Var, weight: float) -> Var:
    part = part if weight == 1.0 else part * weight
    return part if total is None else total + part


def interface_loss(
    problem: PDEProblem,
    nets: Mapping[int, FieldModel],
    weights: Mapping[int, Mapping[str, Var]],
    faces: Sequence[Face],
    points: Sequence[np.ndarray],
    value_weight: float = 1.0,
    flux_weight: float = 1.0,
    residual_weight: float = 1.0,
) -> Optional[Var]:
    """
    所有界面的耦合损失；没有任何启用的项时返回 None

    参数:
        points: 与 faces 一一对应的界面点
    """
    order = 2 if residual_weight > 0 else (1 if flux_weight > 0 else 0)
    pairs = problem.pair_indices() if order == 2 else None
    total = None
    for face, pts in zip(faces, points):
        if not len(pts):
            continue
        lo = nets[face.lower].forward(weights[face.lower], pts, order, pairs)
        hi = nets[face.upper].forward(weights[face.upper], pts, order, pairs)
        for name in problem.outputs:
            if value_weight > 0:
                total = _accumulate(total, _sq(lo[name].value - hi[name].value), value_weight)
            if flux_weight > 0:
                total = _accumulate(total, _sq(lo[name].d(face.axis) - hi[name].d(face.axis)), flux_weight)
        if residual_weight > 0:
            coords = problem.coords(pts)
            for r_lo, r_hi in zip(problem.residual(lo, coords), problem.residual(hi, coords)):
                # (R_l − R̄)² + (R_r − R̄)² = ½ (R_l − R_r)²
                total = _accumulate(total, _sq(r_lo - r_hi) * 0.5, residual_weight)
    return total


# ----------------------------------------------------------------------
# 联合训练
# ----------------------------------------------------------------------
def subdomain_model(kind: str, problem: PDEProblem, spec: SubdomainSpec) -> FieldModel:
    if kind == "pinn":
        return MLPModel(problem.inputs, problem.outputs, spec.hidden)
    if kind == "pisn":
        return SymbolicModel(problem.inputs, problem.outputs, spec.depth)
    if kind == "pinsn":
        return PINSNModel(problem.inputs, problem.outputs, spec.depth, spec.hidden)
    raise ConfigError(f"未知的子域网络类型: {kind}")


def subdomain_counts(
    problem: PDEProblem,
    spec: SubdomainSpec,
    counts: Tuple[int, int, int],
    budget_scale: float = 1.0,
) -> Tuple[int, int, int]:
    """内部配点取表中预算；初边值点按面积分配"""
    _, n_ic, n_bc = counts
    n_c = max(1, int(round(spec.points * budget_scale)))
    return n_c, int(round(n_ic * spec.area)), int(round(n_bc * spec.area))


@dataclass
class DecompSetup:
    problem: PDEProblem
    specs: List[SubdomainSpec]
    models: Dict[int, FieldModel]
    collocs: Dict[int, CollocationSet]
    faces: List[Face]
    face_points: List[np.ndarray]

    def layout(self, part: Optional[str] = None) -> ParamLayout:
        layouts = {}
        for i, model in self.models.items():
            layouts[f"d{i}"] = model.layout if part is None else getattr(model, part).layout
        return ParamLayout.concat(layouts)


def decomp_setup(
    problem: PDEProblem,
    specs: Sequence[SubdomainSpec],
    kind: str,
    counts: Tuple[int, int, int],
    rng: np.random.Generator,
    sampler: str = "uniform",
    budget_scale: float = 1.0,
    interface_n: int = 50,
) -> DecompSetup:
    """每个子域只在自己的盒子（含边界面）内采样"""
    models, collocs = {}, {}
    for spec in specs:
        models[spec.index] = subdomain_model(kind, problem, spec)
        n = subdomain_counts(problem, spec, counts, budget_scale)
        collocs[spec.index] = sample_collocation(problem, n, rng, sampler, box=spec.box())
        print(f"[INFO] 子域 {spec.index}: x={spec.x} y={spec.y} 配点 {collocs[spec.index].sizes()}", flush=True)
    faces = interface_faces(specs)
    face_points = [interface_points(problem, face, interface_n) for face in faces]
    return DecompSetup(problem, list(specs), models, collocs, faces, face_points)


Binder = Callable[[Tape, Var], BoundParams]


def decomp_objective(
    setup: DecompSetup,
    bind: Binder,
    loss_weights: Optional[LossWeights] = None,
    value_weight: float = 1.0,
    flux_weight: float = 1.0,
    residual_weight: float = 1.0,
) -> Callable[[Tape, Var], LossResult]:
    def objective(tape: Tape, flat: Var) -> LossResult:
        bound = bind(tape, flat)
        weights = {i: bound.sub(f"d{i}") for i in setup.models}
        total = None
        terms: Dict[str, float] = {}
        for i, model in setup.models.items():
            try:
                res = total_loss(setup.problem, model, weights[i], setup.collocs[i], loss_weights)
            except NonFiniteError as e:
                e.subdomain = i
                raise
            total = res.total if total is None else total + res.total
            for k, v in res.terms.items():
                terms[k] = terms.get(k, 0.0) + v
        iface = interface_loss(
            setup.problem, setup.models, weights, setup.faces, setup.face_points,
            value_weight, flux_weight, residual_weight,
        )
        if iface is not None:
            if not math.isfinite(float(iface.data)):
                raise NonFiniteError("界面损失出现非有限值")
            terms["interface"] = float(iface.data)
            total = total + iface
        return LossResult(total, terms)

    return objective


def _symbolic_setup(setup: DecompSetup) -> DecompSetup:
    return DecompSetup(
        setup.problem, setup.specs, {i: m.symbolic for i, m in setup.models.items()},
        setup.collocs, setup.faces, setup.face_points,
    )



def decomp_fit(
    setup: DecompSetup,
    config: TrainConfig,
    rng: np.random.Generator,
) -> Tuple[ParamLayout, np.ndarray, np.ndarray, List[Dict], List[FreezeCheck]]:
    """
    联合训练全部子域

    返回:
        (布局, 最终参数, best 参数, 损失记录, 冻结检查)；PINSN 按两阶段训练（pinsn_joint 时一次训练）
    """
    dc = config.decomp
    iw = (dc.value_weight, dc.flux_weight, dc.residual_weight)
    lw = config.loss_weights
    layout = setup.layout()
    kind = config.base
    two_stage = kind == "pinsn" and not config.pinsn_joint

    if not two_stage:
        init = ParamVector(np.concatenate([m.init_values(rng) for m in setup.models.values()]), layout)
        objective = decomp_objective(setup, lambda tape, flat: layout.bind(flat), lw, *iw)
        result = fit(
            objective, init, config.epochs, config.schedule.lr, config.schedule.gamma,
            config.schedule.milestones, config.log_every, stage=config.architecture,
        )
        return layout, result.params.values, result.best.values, result.trace, []

    sym_layout = setup.layout("symbolic")
    res_layout = setup.layout("residual")
    sym_init = np.concatenate([m.symbolic.init_values(rng) for m in setup.models.values()])
    res_init = np.concatenate([m.residual.init_values(rng) for m in setup.models.values()])
    symbolic = _symbolic_setup(setup)
    with stage(f"{config.architecture} 1/2", "各子域 PISN 联合训练"):
        stage1 = fit(
            decomp_objective(symbolic, lambda tape, flat: sym_layout.bind(flat), lw, *iw),
            ParamVector(sym_init, sym_layout), config.epochs, config.schedule.lr, config.schedule.gamma,
            config.schedule.milestones, config.log_every, stage=f"{config.architecture}/1",
        )
    sym_vectors = {i: stage1.best.sub(f"d{i}") for i in setup.models}
    points = np.concatenate([setup.collocs[i].interior for i in setup.models])
    check = FreezeCheck.record("子域 PISN", _symbolic_outputs(setup, sym_vectors), points)
    bound: Dict[int, BoundParams] = {}

    def bind(tape: Tape, flat: Var) -> BoundParams:
        res = res_layout.bind(flat)
        parts = {}
        for i in setup.models:
            bound[i] = const_weights(tape, sym_vectors[i])
            parts[f"d{i}"] = BoundParams.merge({"pisn": bound[i], "res": res.sub(f"d{i}")})
        return BoundParams.merge(parts)

    s2 = config.stage2_schedule
    with stage(f"{config.architecture} 2/2", "冻结 PISN，训练各子域残差网络"):
        stage2: FitResult = fit(
            decomp_objective(setup, bind, lw, *iw),
            ParamVector(res_init, res_layout), config.stage2_epochs, s2.lr, s2.gamma,
            s2.milestones, config.log_every, stage=f"{config.architecture}/2",
        )

    def joined(res_values: np.ndarray) -> np.ndarray:
        res_vec = ParamVector(res_values, res_layout)
        parts = [
            ParamVector.join({"pisn": sym_vectors[i], "res": res_vec.sub(f"d{i}")}).values
            for i in setup.models
        ]
        return np.concatenate(parts)

    best = ParamVector(joined(stage2.best.values), layout)
    check.verify(
        _symbolic_outputs(setup, {i: best.sub(f"d{i}").sub("pisn") for i in setup.models}),
        _symbolic_outputs(setup, {i: bound[i].snapshot(m.symbolic.layout) for i, m in setup.models.items()}),
    )
    offset = len(stage1.trace)
    trace = stage1.trace + [{**row, "epoch": row["epoch"] + offset} for row in stage2.trace]
    return layout, joined(stage2.params.values), best.values, trace, [check]


def _symbolic_outputs(setup: DecompSetup, vectors: Mapping[int, ParamVector]) -> Callable[[np.ndarray], np.ndarray]:
    """
    各子域符号部分在各自内部配点上的输出，按子域顺序拼接

    points 须是 setup 各子域内部配点按同一顺序的拼接
    """
    sizes = [len(setup.collocs[i].interior) for i in setup.models]

    def predict(points: np.ndarray) -> np.ndarray:
        chunks = np.split(points, np.cumsum(sizes)[:-1])
        return np.concatenate([
            model.symbolic.predict(vectors[i], chunk)
            for (i, model), chunk in zip(setup.models.items(), chunks)
        ])

    return predict


class DecompPredictor:
    """按点所在子域调用对应网络"""

    def __init__(self, models: Mapping[int, FieldModel], layout: ParamLayout, values: np.ndarray):
        self.models = dict(models)
        vector = ParamVector(values, layout)
        self.vectors = {i: vector.sub(f"d{i}") for i in self.models}

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        first = next(iter(self.models.values()))
        out = np.full((len(points), len(first.outputs)), np.nan)
        where = locate_many(points[:, :2])
        for i, model in self.models.items():
            mask = where == i
            if mask.any():
                out[mask] = model.predict(self.vectors[i], points[mask])
        return out


def domain_reports(
    problem: PDEProblem,
    setup_specs: Sequence[SubdomainSpec],
    predictor: DecompPredictor,
    architecture: str,
    resolution: Optional[int] = None,
) -> Tuple[List[ErrorReport], List[Dict]]:
    """每个子域在自己盒子的网格上单独评估"""
    reports, rows = [], []
    for spec in setup_specs:
        model = predictor.models[spec.index]
        vector = predictor.vectors[spec.index]
        grid = evaluation_grid(problem, resolution, spec.box())
        report = evaluate_errors(problem, lambda pts: model.predict(vector, pts), grid, f"{architecture}/d{spec.index}")
        reports.append(report)
        for e in report.errors:
            rows.append({"domain": spec.index, "output": e.output, "mean_err": e.mean_err, "max_err": e.max_err})
    return reports, rows


def restore_predictor(desc: Mapping, layout: ParamLayout, values: np.ndarray) -> DecompPredictor:
    models = {int(d["index"]): model_from_description(d["model"]) for d in desc["subdomains"]}
    return DecompPredictor(models, layout, values)


def _check_inputs(problem: PDEProblem) -> None:
    if tuple(problem.inputs) != ("x", "y", "t"):
        raise ConfigError(f"区域分解只支持 (x, y, t) 问题，{problem.name} 的输入为 {problem.inputs}")


def _selected_specs(config: TrainConfig, specs: Optional[Sequence[SubdomainSpec]]) -> List[SubdomainSpec]:
    if specs is not None:
        return list(specs)
    wanted = config.decomp.subdomains
    return [s for s in SUBDOMAINS if wanted is None or s.index in wanted]


def _domain_grid(problem: PDEProblem, specs: Sequence[SubdomainSpec], resolution: Optional[int]) -> np.ndarray:
    """全域评估网格；只训练了部分子域时只保留落在这些子域里的点"""
    grid = evaluation_grid(problem, resolution)
    if len(specs) < len(SUBDOMAINS):
        grid = grid[np.isin(locate_many(grid[:, :2]), [s.index for s in specs])]
    return grid


def subdomain_expressions(predictor: DecompPredictor, kind: str, threshold: float) -> Dict[str, ExpressionNode]:
    """各子域符号部分的表达式，键为 {输出}@d{子域}；PINN 返回空"""
    if kind not in ("pisn", "pinsn"):
        return {}
    expressions = {}
    for i, model in predictor.models.items():
        symbolic = model.symbolic if kind == "pinsn" else model
        vector = predictor.vectors[i].sub("pisn") if kind == "pinsn" else predictor.vectors[i]
        for output in model.outputs:
            expr = extract_expression(symbolic.symbolic_params(vector, output), threshold, output)
            expressions[f"{output}@d{i}"] = expr
    return expressions


@timer
def decomp_train(config: TrainConfig, specs: Optional[Sequence[SubdomainSpec]] = None) -> RunResult:
    """区域分解训练 + 全局与逐子域误差报告"""
    problem = catalog_get(config.problem, config.task, config.allow_out_of_range)
    _check_inputs(problem)
    specs = _selected_specs(config, specs)
    rng = np.random.default_rng(config.seed)
    counts = config.collocation.counts(problem.default_counts)
    setup = decomp_setup(
        problem, specs, config.base, counts, rng, config.collocation.sampler,
        config.decomp.budget_scale, config.decomp.interface_points,
    )
    layout, values, best, trace, frozen = decomp_fit(setup, config, rng)

    predictor = DecompPredictor(setup.models, layout, best)
    grid = _domain_grid(problem, specs, config.grid_resolution)
    overall = evaluate_errors(problem, predictor, grid, config.architecture)
    per_domain, rows = domain_reports(problem, specs, predictor, config.architecture, config.grid_resolution)
    expressions = subdomain_expressions(predictor, config.base, config.prune_threshold)

    model_desc = {
        "kind": config.architecture,
        "subdomains": [
            {"index": s.index, "spec": s.model_dump(mode="json"), "model": setup.models[s.index].describe()}
            for s in specs
        ],
    }
    return RunResult(
        config=config.model_dump(mode="json"),
        config_hash=config_hash(config),
        model=model_desc,
        layout=layout,
        values=values,
        best=best,
        trace=trace,
        reports=[overall] + per_domain,
        expressions=expressions,
        heatmap=(problem, predictor, grid),
        tables={"domain_errors.csv": (["domain", "output", "mean_err", "max_err"], rows)},
        frozen=frozen,
    )


# ----------------------------------------------------------------------
# 区域分解 + 超网络
# ----------------------------------------------------------------------
class DecompHyper:
    """
    每个子域一组以任务参数 λ 为输入的超网络（HyperBundle）

    参数布局为 d{i}.<部件>.<超网络层>；对给定 λ 生成的主网络参数按 DecompSetup.layout() 排列
    """

    def __init__(self, kind: str, specs: Sequence[SubdomainSpec], bundles: Mapping[int, HyperBundle]):
        self.kind = kind
        self.specs = list(specs)
        self.bundles = dict(bundles)
        self.layout = ParamLayout.concat({f"d{i}": b.layout for i, b in self.bundles.items()})
        self.main_layout = ParamLayout.concat({f"d{i}": b.model.layout for i, b in self.bundles.items()})

    @property
    def models(self) -> Dict[int, FieldModel]:
        return {i: b.model for i, b in self.bundles.items()}

    def bind(self, tape: Tape, flat: Var, lam: float) -> BoundParams:
        weights = self.layout.bind(flat)
        return BoundParams.merge({
            f"d{i}": b.target_weights(weights.sub(f"d{i}"), lam) for i, b in self.bundles.items()
        })

    def main_params(self, values, lam: float) -> ParamVector:
        vector = values if isinstance(values, ParamVector) else ParamVector(values, self.layout)
        return ParamVector.join({f"d{i}": b.main_params(vector.sub(f"d{i}"), lam) for i, b in self.bundles.items()})

    def predictor(self, values, lam: float) -> DecompPredictor:
        return DecompPredictor(self.models, self.main_layout, self.main_params(values, lam).values)

    def describe(self) -> Dict:
        return {
            "kind": self.kind,
            "subdomains": [
                {"index": s.index, "spec": s.model_dump(mode="json"), "bundle": self.bundles[s.index].describe()}
                for s in self.specs
            ],
        }

    @classmethod
    def from_description(cls, desc: Mapping) -> "DecompHyper":
        specs = [SubdomainSpec.model_validate(d["spec"]) for d in desc["subdomains"]]
        bundles = {int(d["index"]): HyperBundle.from_description(d["bundle"]) for d in desc["subdomains"]}
        return cls(desc["kind"], specs, bundles)


TaskSetups = List[Tuple[float, DecompSetup]]


def decomp_task_setups(
    family: str,
    tasks: Sequence[float],
    specs: Sequence[SubdomainSpec],
    models: Mapping[int, FieldModel],
    counts: Tuple[int, int, int],
    rng: np.random.Generator,
    sampler: str = "uniform",
    budget_scale: float = 1.0,
    interface_n: int = 50,
    allow_out_of_range: bool = False,
) -> TaskSetups:
    """
    每个子域在自己的盒子里用 task_data 采样一次，所有任务共用配点、界面点和子域网络

    返回:
        [(λ, 该任务的 DecompSetup)]
    """
    if not tasks:
        return []
    problem = CATALOG[family](tasks[0], allow_out_of_range)
    per_domain = {}
    for spec in specs:
        n = subdomain_counts(problem, spec, counts, budget_scale)
        per_domain[spec.index] = task_data(family, tasks, n, rng, sampler, allow_out_of_range, box=spec.box())
    faces = interface_faces(specs)
    face_points = [interface_points(problem, face, interface_n) for face in faces]
    setups = []
    for k, lam in enumerate(tasks):
        task_problem = per_domain[specs[0].index][k][1]
        collocs = {i: data[k][2] for i, data in per_domain.items()}
        setups.append((float(lam), DecompSetup(task_problem, list(specs), dict(models), collocs, faces, face_points)))
    return setups


def decomp_task_objective(
    setups: TaskSetups,
    bind: Callable[[Tape, Var, float], BoundParams],
    config: TrainConfig,
) -> Objective:
    """对每个任务的区域分解损失（子域 + 界面）取平均"""
    dc = config.decomp
    iw = (dc.value_weight, dc.flux_weight, dc.residual_weight)
    return task_average([
        (lam, decomp_objective(setup, partial(bind, lam=lam), config.loss_weights, *iw)) for lam, setup in setups
    ])


def _fit_decomp_hyper(
    layout: ParamLayout,
    init: np.ndarray,
    train: TaskSetups,
    validation: TaskSetups,
    bind: Callable[[Tape, Var, float], BoundParams],
    config: TrainConfig,
    epochs: int,
    schedule,
    label: str,
) -> FitResult:
    validate = None
    if validation:
        val_objective = decomp_task_objective(validation, bind, config)

        def validate(p: ParamVector) -> float:
            return mean_task_loss(val_objective, p.values)
    return fit(
        decomp_task_objective(train, bind, config),
        ParamVector(init, layout),
        epochs,
        schedule.lr,
        schedule.gamma,
        schedule.milestones,
        config.log_every,
        stage=label,
        validate=validate,
        validate_every=config.hyper.validate_every,
    )


def _hyper_layout(hypers: Mapping[int, HyperModel]) -> ParamLayout:
    return ParamLayout.concat({f"d{i}": h.layout for i, h in hypers.items()})


def _hyper_binder(hypers: Mapping[int, HyperModel]) -> Callable[[Tape, Var, float], BoundParams]:
    layout = _hyper_layout(hypers)

    def bind(tape: Tape, flat: Var, lam: float) -> BoundParams:
        weights = layout.bind(flat)
        return BoundParams.merge({f"d{i}": h.target_weights(weights.sub(f"d{i}"), lam) for i, h in hypers.items()})

    return bind


def decomp_hyper_fit(
    specs: Sequence[SubdomainSpec],
    models: Mapping[int, FieldModel],
    train: TaskSetups,
    validation: TaskSetups,
    config: TrainConfig,
    rng: np.random.Generator,
) -> Tuple[DecompHyper, np.ndarray, np.ndarray, List[Dict], List[FreezeCheck]]:
    """
    各子域超网络联合训练

    返回:
        (超网络组合, 最终参数, best 参数, 损失记录, 冻结检查)；PINSN 先训练各子域 H_pisn，冻结后再训练 H_res
    """
    hc = config.hyper
    task_spec = train[0][1].problem.task_spec
    kind = config.base
    arch = config.architecture

    def hyper(target: FieldModel) -> HyperModel:
        return HyperModel(target, task_spec, hc.hidden, hc.out_scale)

    if kind != "pinsn" or config.pinsn_joint:
        if kind == "pinsn":
            parts = {i: {"pisn": hyper(m.symbolic), "res": hyper(m.residual)} for i, m in models.items()}
        else:
            parts = {i: {"main": hyper(m)} for i, m in models.items()}
        net = DecompHyper(arch, specs, {i: HyperBundle(arch, p, models[i]) for i, p in parts.items()})
        init = np.concatenate([h.init_values(rng) for p in parts.values() for h in p.values()])
        result = _fit_decomp_hyper(
            net.layout, init, train, validation, net.bind, config, config.epochs, config.schedule, arch,
        )
        return net, result.params.values, result.best.values, result.trace, []

    h_pisn = {i: hyper(m.symbolic) for i, m in models.items()}
    symbolic_train = [(lam, _symbolic_setup(s)) for lam, s in train]
    symbolic_val = [(lam, _symbolic_setup(s)) for lam, s in validation]
    pisn_layout = _hyper_layout(h_pisn)
    with stage(f"{arch} 1/2", "各子域 H_pisn 联合训练"):
        stage1 = _fit_decomp_hyper(
            pisn_layout, np.concatenate([h.init_values(rng) for h in h_pisn.values()]),
            symbolic_train, symbolic_val, _hyper_binder(h_pisn), config,
            config.epochs, config.schedule, f"{arch}/1",
        )
    pisn_best = stage1.best.copy()
    tasks = [lam for lam, _ in train + validation]
    generated = {
        lam: {i: hyper_forward(h.params(pisn_best.sub(f"d{i}")), lam) for i, h in h_pisn.items()}
        for lam in tasks
    }
    setup = train[0][1]

    def symbolic_outputs(vectors: Mapping[float, Mapping[int, ParamVector]]) -> Callable[[np.ndarray], np.ndarray]:
        def predict(points: np.ndarray) -> np.ndarray:
            return np.concatenate([_symbolic_outputs(setup, vectors[lam])(points) for lam in tasks])

        return predict

    points = np.concatenate([setup.collocs[i].interior for i in models])
    check = FreezeCheck.record("子域 H_pisn", symbolic_outputs(generated), points)
    h_res = {i: hyper(m.residual) for i, m in models.items()}
    res_layout = _hyper_layout(h_res)
    bound: Dict[float, Dict[int, BoundParams]] = {}

    def bind(tape: Tape, flat: Var, lam: float) -> BoundParams:
        weights = res_layout.bind(flat)
        bound[lam] = {i: const_weights(tape, generated[lam][i]) for i in models}
        return BoundParams.merge({
            f"d{i}": BoundParams.merge({
                "pisn": bound[lam][i],
                "res": h.target_weights(weights.sub(f"d{i}"), lam),
            })
            for i, h in h_res.items()
        })

    s2 = config.stage2_schedule
    with stage(f"{arch} 2/2", "冻结各子域 H_pisn，训练 H_res"):
        stage2 = _fit_decomp_hyper(
            res_layout, np.concatenate([h.init_values(rng) for h in h_res.values()]),
            train, validation, bind, config, config.stage2_epochs, s2, f"{arch}/2",
        )

    net = DecompHyper(arch, specs, {
        i: HyperBundle(arch, {"pisn": h_pisn[i], "res": h_res[i]}, models[i]) for i in models
    })

    def joined(res_values: np.ndarray) -> np.ndarray:
        res_vec = ParamVector(res_values, res_layout)
        return np.concatenate([
            np.concatenate([pisn_best.sub(f"d{i}").values, res_vec.sub(f"d{i}").values]) for i in models
        ])

    best = joined(stage2.best.values)
    check.verify(
        symbolic_outputs({lam: {i: net.main_params(best, lam).sub(f"d{i}").sub("pisn") for i in models} for lam in tasks}),
        symbolic_outputs({
            lam: {i: bound[lam][i].snapshot(m.symbolic.layout) for i, m in models.items()} for lam in tasks
        }),
    )
    offset = len(stage1.trace)
    trace = stage1.trace + [{**row, "epoch": row["epoch"] + offset} for row in stage2.trace]
    return net, joined(stage2.params.values), best, trace, [check]


@timer
def decomp_hyper_train(config: TrainConfig, specs: Optional[Sequence[SubdomainSpec]] = None) -> RunResult:
    """decomp-hyper-*：各子域超网络在全部训练任务上联合训练，并在训练任务与测试任务上评估"""
    family = config.problem
    if family not in CATALOG:
        raise ConfigError(f"未知的问题: {family}")
    task_spec = CATALOG[family].task_spec
    if task_spec is None:
        raise ConfigError(f"问题 {family} 没有任务参数，不能使用超网络")
    train_tasks, val_tasks, test_tasks = task_lists(config, task_spec)
    first = CATALOG[family](train_tasks[0])
    _check_inputs(first)
    specs = _selected_specs(config, specs)
    print(f"[INFO] {config.architecture} {family}: 训练任务 {train_tasks}，验证任务 {val_tasks}，测试任务 {test_tasks}", flush=True)

    rng = np.random.default_rng(config.seed)
    counts = config.collocation.counts(first.default_counts)
    models = {s.index: subdomain_model(config.base, first, s) for s in specs}
    dc = config.decomp
    common = (specs, models, counts, rng, config.collocation.sampler, dc.budget_scale, dc.interface_points)
    train = decomp_task_setups(family, train_tasks, *common)
    validation = decomp_task_setups(family, val_tasks, *common, allow_out_of_range=True)
    net, values, best, trace, frozen = decomp_hyper_fit(specs, models, train, validation, config, rng)

    reports, rows, expressions = [], [], {}
    heatmap = None
    for lam in list(train_tasks) + list(test_tasks):
        problem = CATALOG[family](lam, allow_out_of_range=True)
        predictor = net.predictor(best, lam)
        grid = _domain_grid(problem, specs, config.grid_resolution)
        reports.append(evaluate_errors(problem, predictor, grid, config.architecture))
        if lam not in test_tasks:
            continue
        if heatmap is None:
            heatmap = (problem, predictor, grid)
            per_domain, rows = domain_reports(problem, specs, predictor, config.architecture, config.grid_resolution)
            reports.extend(per_domain)
        for key, expr in subdomain_expressions(predictor, config.base, config.prune_threshold).items():
            expressions[f"{key}@{task_spec.name}={lam:g}"] = expr
    for report in reports[len(train_tasks):]:
        print(f"[INFO] {report.architecture} {task_spec.name}={report.task_param}: mean_err={report.mean:.3e}", flush=True)

    return RunResult(
        config=config.model_dump(mode="json"),
        config_hash=config_hash(config),
        model=net.describe(),
        layout=net.layout,
        values=values,
        best=best,
        trace=trace,
        reports=reports,
        expressions=expressions,
        heatmap=heatmap,
        tables={"domain_errors.csv": (["domain", "output", "mean_err", "max_err"], rows)},
        frozen=frozen,
    )
