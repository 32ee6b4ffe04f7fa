"""
场模型：把参数布局和前向计算打包成统一接口，供损失、训练、超网络和区域分解使用

    SymbolicModel  每个输出一个独立的符号网络（PISN）
    MLPModel       一个多输出 tanh MLP（PINN）
    PINSNModel     符号网络 + MLP 残差 F(x; θ_res)
"""

from typing import Dict, Mapping, Sequence

import numpy as np

from utils.autodiff import Tape, Var
from utils.jets import Jet, jet_take, seed
from utils.mlp import DEFAULT_HIDDEN, MLPParams, const_weights, mlp_apply, mlp_init_values, mlp_layout, mlp_sizes
from utils.params import ParamLayout, ParamVector
from utils.pdelib import PDEProblem, analytical_eval
from utils.symnet import Grammar, SymbolicNetParams, symnet_apply, symnet_layout


def _sub(weights: Mapping[str, Var], prefix: str) -> Dict[str, Var]:
    head = prefix + "."
    return {k[len(head):]: v for k, v in weights.items() if k.startswith(head)}


class FieldModel:
    """
    模型接口

    属性:
        kind: pinn / pisn / pinsn
        inputs, outputs: 输入变量和输出场
        layout: 全部可训练参数的布局
    """

    kind = ""

    def __init__(self, inputs: Sequence[str], outputs: Sequence[str]):
        self.inputs = tuple(inputs)
        self.outputs = tuple(outputs)
        self.layout: ParamLayout = ParamLayout([])

    def init_values(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def init_params(self, rng: np.random.Generator) -> ParamVector:
        return ParamVector(self.init_values(rng), self.layout)

    def forward(self, weights: Mapping[str, Var], points: np.ndarray, order: int = 2, pairs=None) -> Dict[str, Jet]:
        raise NotImplementedError

    def predict(self, values, points: np.ndarray) -> np.ndarray:
        """数值输出 (N, n_outputs)"""
        vector = values if isinstance(values, ParamVector) else ParamVector(values, self.layout)
        tape = Tape()
        fields = self.forward(const_weights(tape, vector), np.asarray(points, dtype=np.float64), 0)
        n = len(points)
        return np.stack([np.broadcast_to(fields[name].array(), (n,)) for name in self.outputs], axis=1)

    def describe(self) -> Dict:
        return {"kind": self.kind, "inputs": list(self.inputs), "outputs": list(self.outputs)}


class SymbolicModel(FieldModel):
    kind = "pisn"

    def __init__(self, inputs: Sequence[str], outputs: Sequence[str], depth: int = 2):
        super().__init__(inputs, outputs)
        self.grammar = Grammar(inputs=self.inputs)
        self.depth = depth
        sub = symnet_layout(depth, self.grammar)
        self.layout = ParamLayout.concat({name: sub for name in self.outputs})

    def init_values(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-0.5, 0.5, self.layout.size)

    def forward(self, weights, points, order=2, pairs=None):
        return {
            name: symnet_apply(_sub(weights, name), self.grammar, self.depth, points, order, pairs)
            for name in self.outputs
        }

    def symbolic_params(self, values, output: str) -> SymbolicNetParams:
        vector = values if isinstance(values, ParamVector) else ParamVector(values, self.layout)
        return SymbolicNetParams(self.depth, self.grammar, vector.sub(output))

    def describe(self) -> Dict:
        return {**super().describe(), "depth": self.depth}


class MLPModel(FieldModel):
    kind = "pinn"

    def __init__(
        self,
        inputs: Sequence[str],
        outputs: Sequence[str],
        hidden: Sequence[int] = DEFAULT_HIDDEN,
        last_scale: float = 1.0,
    ):
        super().__init__(inputs, outputs)
        self.hidden = tuple(hidden)
        self.sizes = mlp_sizes(len(self.inputs), self.hidden, len(self.outputs))
        self.last_scale = last_scale
        self.layout = mlp_layout(self.sizes)

    def init_values(self, rng: np.random.Generator) -> np.ndarray:
        return mlp_init_values(self.sizes, rng, self.last_scale)

    def forward(self, weights, points, order=2, pairs=None):
        J = mlp_apply(weights, self.sizes, self.inputs, points, order, pairs)
        if len(self.outputs) == 1:
            return {self.outputs[0]: J}
        return {name: jet_take(J, k) for k, name in enumerate(self.outputs)}

    def mlp_params(self, values) -> MLPParams:
        vector = values if isinstance(values, ParamVector) else ParamVector(values, self.layout)
        return MLPParams(self.sizes, self.inputs, vector)

    def describe(self) -> Dict:
        return {**super().describe(), "hidden": list(self.hidden)}


class PINSNModel(FieldModel):
    """u_pinsn = u_pisn + F(x; θ_res)；参数段前缀为 pisn. 和 res."""

    kind = "pinsn"

    def __init__(
        self,
        inputs: Sequence[str],
        outputs: Sequence[str],
        depth: int = 2,
        hidden: Sequence[int] = DEFAULT_HIDDEN,
    ):
        super().__init__(inputs, outputs)
        self.symbolic = SymbolicModel(inputs, outputs, depth)
        # 残差网络输出层初始化为 0，训练开始时 u_pinsn 与 u_pisn 相同
        self.residual = MLPModel(inputs, outputs, hidden, last_scale=0.0)
        self.layout = ParamLayout.concat({"pisn": self.symbolic.layout, "res": self.residual.layout})

    @property
    def depth(self) -> int:
        return self.symbolic.depth

    def init_values(self, rng: np.random.Generator) -> np.ndarray:
        return np.concatenate([self.symbolic.init_values(rng), self.residual.init_values(rng)])

    def forward(self, weights, points, order=2, pairs=None):
        u_pisn = self.symbolic.forward(_sub(weights, "pisn"), points, order, pairs)
        u_res = self.residual.forward(_sub(weights, "res"), points, order, pairs)
        return {name: u_pisn[name] + u_res[name] for name in self.outputs}

    def describe(self) -> Dict:
        return {**super().describe(), "depth": self.depth, "hidden": list(self.residual.hidden)}


def build_model(kind: str, inputs: Sequence[str], outputs: Sequence[str], depth: int = 2, hidden=DEFAULT_HIDDEN) -> FieldModel:
    if kind == "pisn":
        return SymbolicModel(inputs, outputs, depth)
    if kind == "pinn":
        return MLPModel(inputs, outputs, hidden)
    if kind == "pinsn":
        return PINSNModel(inputs, outputs, depth, hidden)
    raise ValueError(f"未知的模型类型: {kind}")


def model_from_description(desc: Mapping) -> FieldModel:
    return build_model(
        desc["kind"],
        desc["inputs"],
        desc["outputs"],
        int(desc.get("depth", 2)),
        tuple(desc.get("hidden", DEFAULT_HIDDEN)),
    )


class ExactField:
    """把问题的解析解包装成与网络相同的接口（不含可训练参数）"""

    kind = "exact"

    def __init__(self, problem: PDEProblem):
        self.problem = problem
        self.inputs = problem.inputs
        self.outputs = problem.outputs
        self.layout = ParamLayout([])

    def forward(self, weights, points, order=2, pairs=None):
        tape = next(iter(weights.values())).tape if weights else Tape()
        jets = seed(tape, points, self.inputs, order, pairs)
        return self.problem.exact(dict(zip(self.inputs, jets)))

    def predict(self, values, points: np.ndarray) -> np.ndarray:
        return analytical_eval(self.problem, points)
