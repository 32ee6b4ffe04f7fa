"""
Adam 优化器、阶梯衰减学习率与全批量训练循环
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from utils.autodiff import Tape, Var
from utils.errors import DivergenceError, LayoutError, NonFiniteError, SolverError
from utils.params import ParamGradient, ParamVector, param_grad
from utils.physics import LossResult


class AdamState(BaseModel):
    """一阶/二阶矩累积量与步数；与参数向量同长度"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @field_validator("step")
    @classmethod
    def _non_negative(cls, v: int) -> int:
        if v < 0:
            raise ValueError("步数不能为负")
        return v

    @classmethod
    def zeros(cls, size: int, **kwargs) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), **kwargs)

    def copy(self) -> "AdamState":
        return self.model_copy(update={"m": self.m.copy(), "v": self.v.copy()})


def adam_step(
    params: ParamVector,
    grad: ParamGradient,
    state: AdamState,
    lr: float,
) -> Tuple[ParamVector, AdamState]:
    """
    一次带偏差校正的 Adam 更新（纯函数，不修改传入对象）

    参数:
        params: 当前参数
        grad: 同布局的梯度
        state: 当前优化器状态
        lr: 学习率，须 > 0

    返回:
        (新参数, 新状态)

    异常:
        NonFiniteError: 梯度含 NaN/Inf，此时不产生任何更新
    """
    if grad.layout != params.layout or state.m.shape != params.values.shape:
        raise LayoutError("梯度/优化器状态与参数布局不一致")
    if not lr > 0:
        raise ValueError(f"学习率必须为正: {lr}")
    g = grad.values
    if not np.all(np.isfinite(g)):
        raise NonFiniteError(f"梯度中出现非有限值（第 {int(np.argmax(~np.isfinite(g)))} 个分量）")

    b1, b2 = state.beta1, state.beta2
    step = state.step + 1
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1 ** step)
    v_hat = v / (1.0 - b2 ** step)
    values = params.values - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = state.model_copy(update={"m": m, "v": v, "step": step})
    return ParamVector(values, params.layout), new_state


def step_decay_lr(epoch: int, start: float, gamma: float, milestones: Sequence[int]) -> float:
    """lr(e) = start · γ^(到 e 为止已经过的里程碑个数)"""
    passed = sum(1 for m in milestones if m <= epoch)
    return start * gamma ** passed


# ----------------------------------------------------------------------
# 全批量训练循环
# ----------------------------------------------------------------------
Objective = Callable[[Tape, Var], LossResult]


@dataclass
class FitResult:
    params: ParamVector
    best: ParamVector
    best_loss: float
    trace: List[Dict[str, float]] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.trace[-1]["total"] if self.trace else float("nan")


def fit(
    objective: Objective,
    init: ParamVector,
    epochs: int,
    lr: float,
    gamma: float = 0.1,
    milestones: Sequence[int] = (),
    log_every: int = 1000,
    stage: str = "",
    task: Optional[float] = None,
    subdomain: Optional[int] = None,
    validate: Optional[Callable[[ParamVector], float]] = None,
    validate_every: int = 100,
) -> FitResult:
    """
    每个 epoch 新建一条 Tape，记录损失、反向求梯度、做一次 Adam 更新

    参数:
        objective: (tape, flat) → LossResult，flat 为已注册的扁平参数叶子
        validate: 给定时按验证分数（越小越好）挑选 best，否则按训练损失

    返回:
        FitResult：最终参数、best 快照与逐 epoch 的损失记录

    异常:
        DivergenceError: 损失或梯度出现非有限值，携带最后一组有限参数
    """
    params = init.copy()
    state = AdamState.zeros(len(params))
    best, best_score = params.copy(), math.inf
    best_loss = math.inf
    trace: List[Dict[str, float]] = []
    for epoch in range(epochs):
        rate = step_decay_lr(epoch, lr, gamma, milestones)
        tape = Tape()
        flat = tape.param(params.values)
        try:
            result = objective(tape, flat)
            loss = result.value
            if not math.isfinite(loss):
                raise NonFiniteError(f"损失为 {loss}")
            grad = param_grad(result.total, flat, params.layout)
            new_params, state = adam_step(params, grad, state, rate)
            if validate is None:
                score = loss
            elif epoch % validate_every == 0 or epoch == epochs - 1:
                score = validate(params)
            else:
                score = math.inf
        except NonFiniteError as e:
            print(f"[ERROR] {stage} 第 {epoch} 轮发散: {e}", flush=True)
            raise DivergenceError(
                f"{stage or '训练'} 发散: {e}",
                epoch,
                task if task is not None else getattr(e, "task", None),
                subdomain if subdomain is not None else getattr(e, "subdomain", None),
                params=params.copy(),
            ) from e

        trace.append({"epoch": epoch, "lr": rate, "total": loss, **result.terms})
        if score < best_score:
            best, best_score, best_loss = params.copy(), score, loss
        if epoch % log_every == 0 or epoch == epochs - 1:
            print(f"[TRAIN] {stage} epoch={epoch} loss={loss:.6e} lr={rate:.1e}", flush=True)
        params = new_params
    return FitResult(params, best, best_loss, trace)


def assert_frozen(before: np.ndarray, after: np.ndarray, label: str) -> None:
    """冻结参数逐位不变"""
    if not np.array_equal(before, after):
        raise SolverError(f"{label} 在冻结阶段被修改")


Predict = Callable[[np.ndarray], np.ndarray]


@dataclass
class FreezeCheck:
    """
    两阶段训练中冻结部分的输出快照

    阶段 2 开始前在固定点上记录冻结网络的输出 before；阶段 2 结束后分别用
    最终参数中的同一部分（final）和阶段 2 实际绑定的常量权重（bound）重算，
    两者都须与 before 逐位相同
    """

    label: str
    points: np.ndarray
    before: np.ndarray
    final: Optional[np.ndarray] = None
    bound: Optional[np.ndarray] = None

    @classmethod
    def record(cls, label: str, predict: Predict, points: np.ndarray) -> "FreezeCheck":
        points = np.asarray(points, dtype=np.float64)
        return cls(label, points, np.asarray(predict(points)).copy())

    def verify(self, final: Predict, bound: Predict) -> None:
        self.final = np.asarray(final(self.points))
        self.bound = np.asarray(bound(self.points))
        assert_frozen(self.before, self.final, f"{self.label}（最终参数）")
        assert_frozen(self.before, self.bound, f"{self.label}（阶段 2 绑定的权重）")
