"""
多层感知机：PINN 基线、PINSN 的残差项 F(x; θ_res)、外推演示
"""

from typing import Mapping, Sequence, Tuple

import numpy as np

from utils import autodiff as ad
from utils.autodiff import Tape, Var
from utils.errors import ConfigError, LayoutError
from utils.jets import Jet, input_linear, jet_linear, jet_take
from utils.params import BoundParams, ParamLayout, ParamVector
from utils.symnet import SymbolicNetParams, symnet_apply

# PINN 基线与残差网络的默认形状：6 个隐藏层 × 20 个神经元
DEFAULT_HIDDEN = (20,) * 6


def mlp_layout(sizes: Sequence[int]) -> ParamLayout:
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ConfigError(f"非法的网络形状: {list(sizes)}")
    segments = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        segments.append((f"L{i}.W", (fan_in, fan_out)))
        segments.append((f"L{i}.b", (fan_out,)))
    return ParamLayout(segments)


class MLPParams:
    """各层权重与偏置；隐藏层使用 tanh，输出层为恒等映射"""

    activation = "tanh"

    def __init__(self, sizes: Sequence[int], inputs: Sequence[str], vector: ParamVector):
        sizes = tuple(int(s) for s in sizes)
        if sizes[0] != len(inputs):
            raise LayoutError(f"输入层宽度 {sizes[0]} 与输入变量 {tuple(inputs)} 不一致")
        if vector.layout != mlp_layout(sizes):
            raise LayoutError(f"参数布局与网络形状 {list(sizes)} 不一致")
        self.sizes = sizes
        self.inputs = tuple(inputs)
        self.vector = vector

    @classmethod
    def from_blocks(cls, sizes: Sequence[int], inputs: Sequence[str], blocks: Mapping[str, np.ndarray]) -> "MLPParams":
        layout = mlp_layout(sizes)
        vec = ParamVector.zeros(layout)
        for name, block in blocks.items():
            seg = layout[name]
            vec.values[seg.offset: seg.offset + seg.size] = np.asarray(block, dtype=np.float64).reshape(seg.shape).ravel()
        return cls(sizes, inputs, vec)

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def block(self, name: str) -> np.ndarray:
        return self.vector.segment(name)


def mlp_sizes(n_inputs: int, hidden: Sequence[int], n_outputs: int) -> Tuple[int, ...]:
    return (n_inputs, *hidden, n_outputs)


def mlp_init_values(
    sizes: Sequence[int],
    rng: np.random.Generator,
    last_scale: float = 1.0,
) -> np.ndarray:
    """权重与偏置取 U[-1/√fan_in, 1/√fan_in]；输出层整体乘以 last_scale"""
    layout = mlp_layout(sizes)
    values = np.empty(layout.size)
    n = len(sizes) - 1
    for i, fan_in in enumerate(sizes[:-1]):
        bound = 1.0 / np.sqrt(fan_in)
        scale = last_scale if i == n - 1 else 1.0
        for name in (f"L{i}.W", f"L{i}.b"):
            seg = layout[name]
            values[seg.offset: seg.offset + seg.size] = scale * rng.uniform(-bound, bound, seg.size)
    return values


def mlp_init(
    sizes: Sequence[int],
    inputs: Sequence[str],
    seed: int,
    last_scale: float = 1.0,
) -> MLPParams:
    rng = np.random.default_rng(seed)
    return MLPParams(sizes, inputs, ParamVector(mlp_init_values(sizes, rng, last_scale), mlp_layout(sizes)))


def mlp_apply(
    weights: Mapping[str, Var],
    sizes: Sequence[int],
    inputs: Sequence[str],
    points: np.ndarray,
    order: int = 2,
    pairs=None,
) -> Jet:
    """
    tanh MLP 的 Jet 前向

    返回:
        输出宽度为 1 时值形状 (N,)，否则 (N, K)
    """
    n = len(sizes) - 1
    J = input_linear(points, weights["L0.W"], inputs, order, pairs, bias=weights["L0.b"])
    for i in range(1, n):
        J = jet_linear(J.tanh(), weights[f"L{i}.W"], weights[f"L{i}.b"])
    if sizes[-1] == 1:
        J = jet_take(J, 0)
    return J


def mlp_values(weights: Mapping[str, Var], sizes: Sequence[int], X) -> Var:
    """不带输入导数的普通前向，X 为 (N, n) 常数或 Var"""
    n = len(sizes) - 1
    h = X
    for i in range(n):
        h = ad.add(ad.matmul(h, weights[f"L{i}.W"]), weights[f"L{i}.b"])
        if i < n - 1:
            h = ad.tanh(h)
    return h


def const_weights(tape: Tape, vector: ParamVector) -> BoundParams:
    return BoundParams({seg.name: tape.const(vector.segment(seg.name)) for seg in vector.layout})


def mlp_forward(params: MLPParams, points: np.ndarray, order: int = 2, pairs=None) -> Jet:
    tape = Tape()
    return mlp_apply(const_weights(tape, params.vector), params.sizes, params.inputs, points, order, pairs)


def mlp_predict(params: MLPParams, points: np.ndarray) -> np.ndarray:
    tape = Tape()
    out = mlp_values(const_weights(tape, params.vector), params.sizes, np.asarray(points, dtype=np.float64))
    return out.data[:, 0] if params.sizes[-1] == 1 else out.data


def pinsn_forward(
    symparams: SymbolicNetParams,
    resparams: MLPParams,
    points: np.ndarray,
    order: int = 2,
    pairs=None,
) -> Jet:
    """u_pinsn = u_pisn + F(x; θ_res)"""
    if symparams.grammar.inputs != resparams.inputs:
        raise LayoutError(f"符号网络输入 {symparams.grammar.inputs} 与残差网络输入 {resparams.inputs} 不一致")
    tape = Tape()
    u_pisn = symnet_apply(const_weights(tape, symparams.vector), symparams.grammar, symparams.depth, points, order, pairs)
    u_res = mlp_apply(const_weights(tape, resparams.vector), resparams.sizes, resparams.inputs, points, order, pairs)
    return u_pisn + u_res
