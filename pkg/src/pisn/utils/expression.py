"""
从符号网络权重中提取闭式表达式，并按分层格式渲染

分层格式示例（深度 2，输入 x, y）:
    l_1 = 0.006x - 2.985y - 0.066
    ...
    h_11 = 0.022x - 0.685y + 0.047sin(l_1) - 0.22exp(l_2) - 0.182(l_3 + l_4) + 1.366l_5*l_6 + 0.634
    ...
    u = -0.063x - 0.115y + 1.113sin(h_11) + ... - 0.331
"""

from typing import Dict, List, Literal, Mapping

import numpy as np
from pydantic import BaseModel, model_validator

from utils.symnet import N_FORMS, N_OPS, SymbolicNetParams

Kind = Literal["constant", "variable", "sin", "exp", "sum", "product", "linear"]

_ARITY = {"constant": 0, "variable": 0, "sin": 1, "exp": 1, "sum": 2, "product": 2}


class ExpressionNode(BaseModel):
    """
    表达式树节点

    linear 节点表示 Σ coefficients[i]·children[i] + value；
    label 只在线性节点上使用（l_1、h_11 等），分层渲染时作为行名。
    """

    kind: Kind
    value: float = 0.0
    name: str = ""
    label: str = ""
    coefficients: List[float] = []
    children: List["ExpressionNode"] = []

    @model_validator(mode="after")
    def _check_arity(self) -> "ExpressionNode":
        if self.kind == "linear":
            if len(self.coefficients) != len(self.children):
                raise ValueError("linear 节点的系数与子节点数量不一致")
        elif len(self.children) != _ARITY[self.kind]:
            raise ValueError(f"{self.kind} 节点需要 {_ARITY[self.kind]} 个子节点")
        if self.kind == "variable" and not self.name:
            raise ValueError("variable 节点缺少变量名")
        return self

    @classmethod
    def const(cls, value: float) -> "ExpressionNode":
        return cls(kind="constant", value=float(value))

    @classmethod
    def var(cls, name: str) -> "ExpressionNode":
        return cls(kind="variable", name=name)

    def is_zero(self) -> bool:
        return self.kind == "constant" and self.value == 0.0


ExpressionNode.model_rebuild()


def _linear(terms: List[ExpressionNode], coeffs: np.ndarray, threshold: float, label: str) -> ExpressionNode:
    """构造线性节点；最后一个系数对应常数 1"""
    keep_children, keep_coeffs = [], []
    for child, c in zip(terms[:-1], coeffs[:-1]):
        c = float(c)
        if c == 0.0 or abs(c) < threshold or child.is_zero():
            continue
        keep_children.append(child)
        keep_coeffs.append(c)
    offset = float(coeffs[-1])
    if offset != 0.0 and abs(offset) < threshold:
        offset = 0.0
    if not keep_children:
        return ExpressionNode.const(offset)
    if offset == 0.0 and len(keep_children) == 1 and keep_coeffs[0] == 1.0:
        # 单个单位系数项直接取子表达式
        return keep_children[0]
    return ExpressionNode(kind="linear", value=offset, label=label, coefficients=keep_coeffs, children=keep_children)


def _ops(forms: List[ExpressionNode]) -> List[ExpressionNode]:
    return [
        ExpressionNode(kind="sin", children=[forms[0]]),
        ExpressionNode(kind="exp", children=[forms[1]]),
        ExpressionNode(kind="sum", children=[forms[2], forms[3]]),
        ExpressionNode(kind="product", children=[forms[4], forms[5]]),
    ]


def extract_expression(params: SymbolicNetParams, prune_threshold: float = 0.0, output: str = "u") -> ExpressionNode:
    """
    逐层把权重翻译成表达式树

    参数:
        params: 符号网络权重
        prune_threshold: |w| 小于该值的系数被丢弃；恰为 0 的系数总是丢弃
        output: 输出行名

    返回:
        ExpressionNode，第一层线性形式标记为 l_k，第 j 个隐藏层标记为 h_jk
    """
    if prune_threshold < 0:
        raise ValueError("prune_threshold 必须 ≥ 0")
    inputs = [ExpressionNode.var(name) for name in params.grammar.inputs]
    one = ExpressionNode.const(1.0)

    n = len(inputs)
    # 隐藏状态顺序为 [算子..., 输入..., 1]，渲染时输入项排在前面
    perm = list(range(N_OPS, N_OPS + n)) + list(range(N_OPS)) + [N_OPS + n]

    W0 = params.block("W0")
    forms = [_linear(inputs + [one], W0[:, k], prune_threshold, f"l_{k + 1}") for k in range(N_FORMS)]
    for j in range(1, params.depth):
        Wj = params.block(f"W{j}")[perm]
        hidden = inputs + _ops(forms) + [one]
        forms = [_linear(hidden, Wj[:, k], prune_threshold, f"h_{j}{k + 1}") for k in range(N_FORMS)]
    hidden = inputs + _ops(forms) + [one]
    return _linear(hidden, params.block("Wout")[perm], prune_threshold, output)


# ----------------------------------------------------------------------
# 求值
# ----------------------------------------------------------------------
def evaluate(expr: ExpressionNode, env: Mapping[str, np.ndarray]) -> np.ndarray:
    """在变量取值 env（变量名 → 数组）上对表达式求值；共享子树只计算一次"""
    cache: Dict[int, np.ndarray] = {}
    shape = np.shape(next(iter(env.values()))) if env else ()

    def ev(node: ExpressionNode) -> np.ndarray:
        key = id(node)
        if key in cache:
            return cache[key]
        if node.kind == "constant":
            out = np.full(shape, node.value)
        elif node.kind == "variable":
            out = np.asarray(env[node.name], dtype=np.float64)
        elif node.kind == "sin":
            out = np.sin(ev(node.children[0]))
        elif node.kind == "exp":
            with np.errstate(over="ignore"):
                out = np.exp(ev(node.children[0]))
        elif node.kind == "sum":
            out = ev(node.children[0]) + ev(node.children[1])
        elif node.kind == "product":
            out = ev(node.children[0]) * ev(node.children[1])
        else:
            out = np.full(shape, node.value)
            for c, child in zip(node.coefficients, node.children):
                out = out + c * ev(child)
        cache[key] = out
        return out

    return ev(expr)


# ----------------------------------------------------------------------
# 渲染
# ----------------------------------------------------------------------
def _coef(c: float, precision: int) -> str:
    text = f"{abs(c):.{precision}f}"
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return text


def _join(terms: List[tuple]) -> str:
    """terms: [(sign, body)]，首项负号紧贴，其余用 ' + ' / ' - ' 连接"""
    if not terms:
        return "0"
    out = ("-" if terms[0][0] < 0 else "") + terms[0][1]
    for sign, body in terms[1:]:
        out += (" - " if sign < 0 else " + ") + body
    return out


class _Renderer:
    def __init__(self, precision: int, layered: bool):
        self.precision = precision
        self.layered = layered
        self.lines: List[str] = []
        self.defined: Dict[str, str] = {}

    def ref(self, node: ExpressionNode) -> str:
        """把节点渲染成可以放在函数参数里的文本"""
        if self.layered and node.kind == "linear" and node.label:
            if node.label not in self.defined:
                body = self.body(node)
                self.defined[node.label] = body
                self.lines.append(f"{node.label} = {body}")
            return node.label
        return self.body(node)

    def atom(self, node: ExpressionNode) -> str:
        """乘积或带系数位置上的文本；多项式需要括号"""
        text = self.ref(node)
        if node.kind == "sum" or (node.kind == "linear" and not (self.layered and node.label)):
            return f"({text})"
        if node.kind == "constant" and node.value < 0:
            return f"({text})"
        return text

    def body(self, node: ExpressionNode) -> str:
        p = self.precision
        if node.kind == "constant":
            return _join([(np.sign(node.value) or 1, _coef(node.value, p))])
        if node.kind == "variable":
            return node.name
        if node.kind in ("sin", "exp"):
            return f"{node.kind}({self.ref(node.children[0])})"
        if node.kind == "sum":
            if self.layered:
                return f"{self.ref(node.children[0])} + {self.ref(node.children[1])}"
            return f"{self.ref(node.children[0])} + {self.atom(node.children[1])}"
        if node.kind == "product":
            return f"{self.atom(node.children[0])}*{self.atom(node.children[1])}"
        terms = []
        for c, child in zip(node.coefficients, node.children):
            mag = _coef(c, p)
            text = self.atom(child)
            terms.append((-1 if c < 0 else 1, text if mag == "1" else f"{mag}{text}"))
        if node.value != 0.0:
            terms.append((-1 if node.value < 0 else 1, _coef(node.value, p)))
        return _join(terms)


def expression_render(expr: ExpressionNode, precision: int = 3, layered: bool = False, output: str = "u") -> str:
    """
    渲染表达式

    layered=False 时输出单行内联表达式（如 "x + t"）；
    layered=True 时逐行输出 l_k、h_jk 的定义，最后一行为 "u = ..."。
    """
    r = _Renderer(precision, layered)
    if not layered:
        return r.body(expr)
    r.lines.append(f"{output} = {r.body(expr)}")
    return "\n".join(r.lines)


def expression_json(expr: ExpressionNode) -> str:
    return expr.model_dump_json(indent=2)
