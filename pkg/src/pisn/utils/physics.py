"""
物理信息损失：配点采样、PDE 残差和四项损失

    L = λ1·Σ_C Σ_eq N(...)² + λ2·Σ_IDC Σ_out (u − f)² + λ3·Σ_INC (u_t − g)² + λ4·Σ_BC Σ_out (u − h)²

各项都是普通求和（不取平均），按 physics → idc → inc → bc 的固定顺序累加。
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, field_validator
from scipy.stats import qmc

from utils import autodiff as ad
from utils.autodiff import Var
from utils.errors import NonFiniteLossError
from utils.jets import Jet
from utils.pdelib import PDEProblem

TERMS = ("physics", "idc", "inc", "bc")


class FieldNet(Protocol):
    """任何能在点集上给出各输出 Jet 的网络"""

    outputs: Tuple[str, ...]

    def forward(self, weights: Mapping[str, Var], points: np.ndarray, order: int = 2, pairs=None) -> Dict[str, Jet]:
        ...


class LossWeights(BaseModel):
    physics: float = 1.0
    idc: float = 1.0
    inc: float = 1.0
    bc: float = 1.0

    @field_validator("physics", "idc", "inc", "bc")
    @classmethod
    def _non_negative(cls, v: float) -> float:
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"损失权重必须是有限的非负数: {v}")
        return v

    def get(self, term: str) -> float:
        return getattr(self, term)


def _empty(n_in: int, n_out: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    return np.zeros((0, n_in)), np.zeros((0, n_out))


@dataclass
class CollocationSet:
    """C：内部配点；IDC/INC：初始时刻的 Dirichlet/Neumann 点；BC：边界点（均带目标值）"""

    interior: np.ndarray
    idc_points: np.ndarray
    idc_targets: np.ndarray
    inc_points: np.ndarray
    inc_targets: np.ndarray
    bc_points: np.ndarray
    bc_targets: np.ndarray

    @classmethod
    def build(
        cls,
        problem: PDEProblem,
        interior: np.ndarray,
        idc: Optional[np.ndarray] = None,
        bc: Optional[np.ndarray] = None,
    ) -> "CollocationSet":
        """根据点集计算条件目标值（f、g、h）"""
        n_in, n_out = len(problem.inputs), len(problem.outputs)
        idc_p, idc_t = _empty(n_in, n_out)
        inc_p, inc_t = _empty(n_in)
        bc_p, bc_t = _empty(n_in, n_out)
        if idc is not None and len(idc):
            idc_p, idc_t = idc, problem.initial_value(idc)
            if problem.neumann:
                inc_p, inc_t = idc, problem.initial_rate(idc)
        if bc is not None and len(bc):
            bc_p, bc_t = bc, problem.boundary_value(bc)
        return cls(np.asarray(interior, dtype=np.float64), idc_p, idc_t, inc_p, inc_t, bc_p, bc_t)

    def sizes(self) -> Dict[str, int]:
        return {
            "physics": len(self.interior),
            "idc": len(self.idc_points),
            "inc": len(self.inc_points),
            "bc": len(self.bc_points),
        }

    def all_points(self) -> np.ndarray:
        return np.vstack([self.interior, self.idc_points, self.inc_points, self.bc_points])


# ----------------------------------------------------------------------
# 采样
# ----------------------------------------------------------------------
def _snap(values: np.ndarray, levels: np.ndarray) -> np.ndarray:
    idx = np.abs(values[:, None] - levels[None, :]).argmin(axis=1)
    return levels[idx]


def sample_box(
    bounds: Sequence[Tuple[float, float]],
    n: int,
    rng: np.random.Generator,
    sampler: str = "uniform",
) -> np.ndarray:
    """
    在轴对齐盒子内采样

    参数:
        bounds: 每个维度的 (lo, hi)
        sampler: uniform（均匀随机）、grid（等距张量网格，每轴 ⌈n^(1/d)⌉ 个点）、lhs（拉丁超立方）
    """
    d = len(bounds)
    lo = np.array([b[0] for b in bounds], dtype=np.float64)
    hi = np.array([b[1] for b in bounds], dtype=np.float64)
    if n <= 0 or d == 0:
        return np.zeros((0, d))
    if sampler == "uniform":
        return lo + (hi - lo) * rng.random((n, d))
    if sampler == "grid":
        m = int(math.ceil(round(n ** (1.0 / d), 9)))
        axes = [np.linspace(a, b, m) for a, b in zip(lo, hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)
    if sampler == "lhs":
        unit = qmc.LatinHypercube(d=d, seed=rng).random(n)
        return lo + (hi - lo) * unit
    raise ValueError(f"未知的采样方式: {sampler}")


def sample_collocation(
    problem: PDEProblem,
    counts: Optional[Tuple[int, int, int]] = None,
    rng: Optional[np.random.Generator] = None,
    sampler: str = "uniform",
    box: Optional[Dict[str, Tuple[float, float]]] = None,
) -> CollocationSet:
    """
    生成配点集

    参数:
        counts: (内部配点数, 初始条件点数, 边界条件总点数)，默认取问题自带的默认值
        box: 只在子盒子内采样（区域分解用）；只有落在全局边界上的面才施加 BC，
             只有包含初始时刻时才施加初始条件

    返回:
        CollocationSet，初边值目标由问题的 f、g、h 给出
    """
    n_c, n_ic, n_bc = counts or problem.default_counts
    rng = rng if rng is not None else np.random.default_rng(0)
    full = problem.box()
    bounds = dict(full)
    if box:
        bounds.update(box)
    names = problem.inputs
    levels = None
    if problem.time_levels is not None:
        t_lo, t_hi = bounds["t"]
        levels = np.array([t for t in problem.time_levels if t_lo <= t <= t_hi])

    def draw(fixed: Dict[str, float], n: int) -> np.ndarray:
        free = [name for name in names if name not in fixed]
        pts = sample_box([bounds[name] for name in free], n, rng, sampler)
        out = np.empty((len(pts), len(names)))
        for i, name in enumerate(names):
            out[:, i] = fixed[name] if name in fixed else pts[:, free.index(name)]
        if levels is not None and "t" not in fixed:
            k = names.index("t")
            out[:, k] = _snap(out[:, k], levels)
        return out

    interior = draw({}, n_c)

    idc = None
    if problem.has_time and n_ic > 0 and bounds["t"][0] == full["t"][0]:
        idc = draw({"t": full["t"][0]}, n_ic)

    bc_parts = []
    faces = [(name, end) for name in problem.boundary_vars for end in full[name]]
    if faces and n_bc > 0:
        # 余数分给前几个面
        share, extra = divmod(n_bc, len(faces))
        for k, (name, end) in enumerate(faces):
            if end in bounds[name]:
                bc_parts.append(draw({name: end}, share + (k < extra)))
    bc = np.vstack(bc_parts) if bc_parts else None
    return CollocationSet.build(problem, interior, idc, bc)


# ----------------------------------------------------------------------
# 残差与损失
# ----------------------------------------------------------------------
def physics_residual(problem: PDEProblem, fields: Mapping[str, Jet], points: np.ndarray) -> List[Var]:
    """每个控制方程一个残差数组 (N,)"""
    return problem.residual(dict(fields), problem.coords(points))


def _checked_sum(term: str, per_point: Var) -> Var:
    bad = ~np.isfinite(per_point.data)
    if bad.any():
        raise NonFiniteLossError(term, int(np.argmax(bad)))
    return ad.reduce_sum(per_point)


def _zero(weights: Mapping[str, Var]) -> Var:
    return next(iter(weights.values())).tape.const(0.0)


def physics_term(problem: PDEProblem, net: FieldNet, weights: Mapping[str, Var], colloc: CollocationSet) -> Var:
    if not len(colloc.interior):
        return _zero(weights)
    fields = net.forward(weights, colloc.interior, 2, problem.pair_indices())
    res = physics_residual(problem, fields, colloc.interior)
    sq = res[0] * res[0]
    for r in res[1:]:
        sq = sq + r * r
    return _checked_sum("physics", sq)


def _mismatch(term: str, net: FieldNet, weights, points: np.ndarray, targets: np.ndarray) -> Var:
    fields = net.forward(weights, points, 0)
    sq = None
    for k, name in enumerate(net.outputs):
        diff = fields[name].value - targets[:, k]
        sq = diff * diff if sq is None else sq + diff * diff
    return _checked_sum(term, sq)


def idc_term(problem: PDEProblem, net: FieldNet, weights: Mapping[str, Var], colloc: CollocationSet) -> Var:
    if not len(colloc.idc_points):
        return _zero(weights)
    return _mismatch("idc", net, weights, colloc.idc_points, colloc.idc_targets)


def inc_term(problem: PDEProblem, net: FieldNet, weights: Mapping[str, Var], colloc: CollocationSet) -> Var:
    if not len(colloc.inc_points):
        return _zero(weights)
    fields = net.forward(weights, colloc.inc_points, 1)
    diff = fields[net.outputs[0]].d("t") - colloc.inc_targets[:, 0]
    return _checked_sum("inc", diff * diff)


def bc_term(problem: PDEProblem, net: FieldNet, weights: Mapping[str, Var], colloc: CollocationSet) -> Var:
    if not len(colloc.bc_points):
        return _zero(weights)
    return _mismatch("bc", net, weights, colloc.bc_points, colloc.bc_targets)


TERM_FUNCTIONS = {"physics": physics_term, "idc": idc_term, "inc": inc_term, "bc": bc_term}


@dataclass
class LossResult:
    total: Var
    terms: Dict[str, float] = field(default_factory=dict)

    @property
    def value(self) -> float:
        return float(self.total.data)


def total_loss(
    problem: PDEProblem,
    net: FieldNet,
    weights: Mapping[str, Var],
    colloc: CollocationSet,
    loss_weights: Optional[LossWeights] = None,
) -> LossResult:
    """
    加权四项损失之和

    返回:
        LossResult：total 为 Tape 上的标量节点，terms 为各项加权后的数值
    """
    lw = loss_weights or LossWeights()
    total = None
    terms = {}
    for name in TERMS:
        w = lw.get(name)
        if w == 0.0:
            terms[name] = 0.0
            continue
        part = TERM_FUNCTIONS[name](problem, net, weights, colloc)
        part = part if w == 1.0 else part * w
        terms[name] = float(part.data)
        total = part if total is None else total + part
    if total is None:
        total = _zero(weights)
    return LossResult(total, terms)
