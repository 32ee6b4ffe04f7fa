"""
文法松弛符号网络（PISN 的主体）

文法: α → sin α | exp α | α + α | α × α | 终结符（x, y, t, 1）
每个隐藏单元对 6 个线性形式 A_0..A_5 取
    [sin(A_0), exp(A_1), A_2 + A_3, A_4 · A_5]
再拼接激活的输入变量与常数 1，作为下一层的增广隐藏状态。
"""

from typing import List, Mapping, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from utils.autodiff import Tape, Var
from utils.errors import ConfigError, LayoutError
from utils.jets import Jet, input_linear, jet_concat, jet_linear, jet_take, seed
from utils.params import ParamLayout, ParamVector

OPERATORS: Tuple[str, ...] = ("sin", "exp", "add", "multiply")
TERMINALS: Tuple[str, ...] = ("x", "y", "t", "1")
# 每个隐藏单元需要的线性形式个数：sin 1 + exp 1 + add 2 + multiply 2
N_FORMS = 6
N_OPS = len(OPERATORS)


class Grammar(BaseModel):
    """激活的终结符；未激活的变量直接从文法中移除"""

    model_config = ConfigDict(frozen=True)

    inputs: Tuple[str, ...]

    @field_validator("inputs")
    @classmethod
    def _check_inputs(cls, v: Tuple[str, ...]) -> Tuple[str, ...]:
        if not v:
            raise ValueError("至少需要一个激活的输入变量")
        order = [TERMINALS.index(name) for name in v if name in TERMINALS[:3]]
        if len(order) != len(v) or sorted(order) != order or len(set(v)) != len(v):
            raise ValueError(f"输入变量必须是 x, y, t 的有序子集: {v}")
        return v

    @property
    def n_inputs(self) -> int:
        return len(self.inputs)

    @property
    def hidden_width(self) -> int:
        """增广隐藏状态宽度：4 个算子输出 + 输入变量 + 常数 1"""
        return N_OPS + self.n_inputs + 1

    def hidden_terms(self) -> List[str]:
        return list(OPERATORS) + list(self.inputs) + ["1"]


def symnet_param_count(depth: int, n_inputs: int) -> int:
    return N_FORMS * (n_inputs + 1) + (depth - 1) * N_FORMS * (N_OPS + n_inputs + 1) + (N_OPS + n_inputs + 1)


def symnet_layout(depth: int, grammar: Grammar) -> ParamLayout:
    if depth < 1:
        raise ConfigError(f"符号网络深度必须 ≥ 1，当前为 {depth}")
    segments = [("W0", (grammar.n_inputs + 1, N_FORMS))]
    segments += [(f"W{j}", (grammar.hidden_width, N_FORMS)) for j in range(1, depth)]
    segments.append(("Wout", (grammar.hidden_width,)))
    return ParamLayout(segments)


class SymbolicNetParams:
    """深度 d 的符号网络权重：W0 (n+1, 6)，W1..W{d-1} (n+5, 6)，Wout (n+5,)"""

    def __init__(self, depth: int, grammar: Grammar, vector: ParamVector):
        layout = symnet_layout(depth, grammar)
        if vector.layout != layout:
            raise LayoutError(f"参数布局与深度 {depth}、输入 {grammar.inputs} 的符号网络不一致")
        self.depth = depth
        self.grammar = grammar
        self.vector = vector

    @classmethod
    def from_blocks(cls, depth: int, grammar: Grammar, blocks: Mapping[str, np.ndarray]) -> "SymbolicNetParams":
        """按段名给出权重，未给出的段为 0"""
        layout = symnet_layout(depth, grammar)
        vec = ParamVector.zeros(layout)
        for name, block in blocks.items():
            seg = layout[name]
            block = np.asarray(block, dtype=np.float64)
            if block.shape != seg.shape:
                raise LayoutError(f"{name} 形状应为 {seg.shape}，实际为 {block.shape}")
            vec.values[seg.offset: seg.offset + seg.size] = block.ravel()
        return cls(depth, grammar, vec)

    def block(self, name: str) -> np.ndarray:
        return self.vector.segment(name)

    def hidden_names(self) -> List[str]:
        return [f"W{j}" for j in range(1, self.depth)]

    def __len__(self) -> int:
        return len(self.vector)


def symnet_init(depth: int, grammar: Grammar, seed: int) -> SymbolicNetParams:
    """权重 i.i.d. 取自 U[-0.5, 0.5]"""
    layout = symnet_layout(depth, grammar)
    rng = np.random.default_rng(seed)
    return SymbolicNetParams(depth, grammar, ParamVector(rng.uniform(-0.5, 0.5, layout.size), layout))


def _hidden_state(A: Jet, inputs: Sequence[Jet]) -> Jet:
    a = [jet_take(A, k) for k in range(N_FORMS)]
    ops = [a[0].sin(), a[1].exp(), a[2] + a[3], a[4] * a[5]]
    one = Jet.constant(A.tape, np.ones(A.shape[0]), A.names, A.order, A.pairs)
    return jet_concat(ops + list(inputs) + [one])


def symnet_apply(
    weights: Mapping[str, Var],
    grammar: Grammar,
    depth: int,
    points: np.ndarray,
    order: int = 2,
    pairs=None,
) -> Jet:
    """
    在一批点上计算 u_pisn = Wout · h^d（带导数）

    参数:
        weights: 段名 → Tape 上的权重（可训练参数或常数）
        points: (N, n) 坐标，列顺序与 grammar.inputs 一致
        order: 需要的导数阶数
        pairs: 需要跟踪的二阶变量对（None 为全部）

    返回:
        值形状为 (N,) 的 Jet
    """
    tape = weights["W0"].tape
    points = np.asarray(points, dtype=np.float64)
    inputs = seed(tape, points, grammar.inputs, order, pairs)
    augmented = np.hstack([points, np.ones((points.shape[0], 1))])
    A = input_linear(augmented, weights["W0"], grammar.inputs, order, pairs)
    H = _hidden_state(A, inputs)
    for j in range(1, depth):
        A = jet_linear(H, weights[f"W{j}"])
        H = _hidden_state(A, inputs)
    return jet_linear(H, weights["Wout"])


def symnet_forward(params: SymbolicNetParams, points: np.ndarray, order: int = 2, pairs=None) -> Jet:
    tape = Tape()
    weights = {seg.name: tape.const(params.block(seg.name)) for seg in params.vector.layout}
    return symnet_apply(weights, params.grammar, params.depth, points, order, pairs)
