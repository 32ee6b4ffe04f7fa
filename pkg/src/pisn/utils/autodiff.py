"""
反向模式自动微分（计算记录 / Tape）

所有数组运算在 float64 下进行。每个训练轮次新建一个 Tape，
只有依赖可训练参数的运算才会被记录；常量之间的运算直接求值、不入带。
前向的 Jet（输入空间导数）在 utils.jets 中基于这里的原语构建，
因此参数梯度可以穿过输入导数的计算（forward-over-reverse）。
"""

from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from utils.errors import NonFiniteGradientError, UnsupportedPrimitiveError

ArrayLike = Union[float, int, np.ndarray]
VJP = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Record:
    """一条计算记录：原语名称、操作数引用（只指向更早的记录）和 VJP 闭包"""

    __slots__ = ("index", "op", "parents", "vjp")

    def __init__(self, index: int, op: str, parents: Tuple[Optional[int], ...], vjp: Optional[VJP]):
        self.index = index
        self.op = op
        self.parents = parents
        self.vjp = vjp


class Tape:
    """有序计算记录，足以回放反向累积"""

    def __init__(self) -> None:
        self.records: List[Record] = []

    def __len__(self) -> int:
        return len(self.records)

    def param(self, values: ArrayLike) -> "Var":
        """注册一个可训练的叶子节点（op = input）"""
        data = np.array(values, dtype=np.float64)
        index = len(self.records)
        self.records.append(Record(index, "input", (), None))
        return Var(data, self, index)

    def const(self, values: ArrayLike) -> "Var":
        return Var(np.asarray(values, dtype=np.float64), self, None)

    def push(self, op: str, data: np.ndarray, parents: Sequence["Var"], vjp: VJP) -> "Var":
        refs = tuple(p.index for p in parents)
        if all(r is None for r in refs):
            # 纯常量运算不入带
            return Var(data, self, None)
        index = len(self.records)
        self.records.append(Record(index, op, refs, vjp))
        return Var(data, self, index)

    def backward(self, loss: "Var", wrt: Sequence["Var"]) -> List[np.ndarray]:
        """
        从标量 loss 做一次反向扫描，返回 wrt 中每个叶子的梯度

        参数:
            loss: 标量节点
            wrt: 由 param() 创建的叶子节点列表

        返回:
            与 wrt 一一对应的梯度数组（与叶子同形状；无依赖时为全 0）
        """
        if loss.data.size != 1:
            raise ValueError("backward 只接受标量 loss")
        grads: List[Optional[np.ndarray]] = [None] * len(self.records)
        if loss.index is not None:
            grads[loss.index] = np.ones_like(loss.data)
            # 每条记录恰好访问一次
            for rec in reversed(self.records[: loss.index + 1]):
                g = grads[rec.index]
                if g is None:
                    continue
                if not np.all(np.isfinite(g)):
                    raise NonFiniteGradientError(rec.index, rec.op)
                if rec.vjp is None:
                    continue
                for ref, pg in zip(rec.parents, rec.vjp(g)):
                    if ref is None or pg is None:
                        continue
                    grads[ref] = pg if grads[ref] is None else grads[ref] + pg
        out = []
        for leaf in wrt:
            g = grads[leaf.index] if leaf.index is not None else None
            out.append(np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=np.float64))
        return out


class Var:
    """Tape 上的数组节点；index 为 None 表示常量"""

    __slots__ = ("data", "tape", "index")
    __array_ufunc__ = None

    def __init__(self, data: np.ndarray, tape: Tape, index: Optional[int]):
        self.data = data
        self.tape = tape
        self.index = index

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_const(self) -> bool:
        return self.index is None

    def __repr__(self) -> str:
        kind = "const" if self.index is None else f"#{self.index}"
        return f"Var({kind}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / other)
        raise UnsupportedPrimitiveError("除法只支持除以常数标量")

    def __pow__(self, power):
        if power == 2:
            return mul(self, self)
        raise UnsupportedPrimitiveError("不支持的幂运算")

    def sum(self, axis: Optional[int] = None) -> "Var":
        return reduce_sum(self, axis)


def _tape_of(*items) -> Tape:
    for item in items:
        if isinstance(item, Var):
            return item.tape
    raise TypeError("至少需要一个 Var 操作数")


def lift(tape: Tape, x) -> Var:
    if isinstance(x, Var):
        return x
    if isinstance(x, (int, float, np.ndarray, np.floating)):
        return tape.const(x)
    raise UnsupportedPrimitiveError(f"不支持的操作数类型: {type(x).__name__}")


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = lift(tape, a), lift(tape, b)
    sa, sb = a.shape, b.shape
    return tape.push("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = lift(tape, a), lift(tape, b)
    sa, sb = a.shape, b.shape
    return tape.push("sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def neg(a: Var) -> Var:
    return a.tape.push("neg", -a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = lift(tape, a), lift(tape, b)
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.index is not None else None
        gb = _unbroadcast(g * ad, bd.shape) if b.index is not None else None
        return ga, gb

    return tape.push("multiply", ad * bd, (a, b), vjp)


def matmul(a, b) -> Var:
    """矩阵乘（点积）：支持 (N,C)@(C,K)、(N,C)@(C,)、(C,)@(C,K)"""
    tape = _tape_of(a, b)
    a, b = lift(tape, a), lift(tape, b)
    ad, bd = a.data, b.data

    def vjp(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return bd @ g, np.outer(ad, g)
        raise UnsupportedPrimitiveError("不支持的点积维度")

    return tape.push("dot", ad @ bd, (a, b), vjp)


def sin(a: Var) -> Var:
    ad = a.data
    return a.tape.push("sin", np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


def cos(a: Var) -> Var:
    ad = a.data
    return a.tape.push("cos", np.cos(ad), (a,), lambda g: (-g * np.sin(ad),))


def exp(a: Var) -> Var:
    # 溢出得到 Inf，由非有限值检查负责拦截，这里不做截断
    with np.errstate(over="ignore"):
        e = np.exp(a.data)
    return a.tape.push("exp", e, (a,), lambda g: (g * e,))


def tanh(a: Var) -> Var:
    t = np.tanh(a.data)
    return a.tape.push("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def sigmoid(a: Var) -> Var:
    s = expit(a.data)
    return a.tape.push("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def reduce_sum(a: Var, axis: Optional[int] = None) -> Var:
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.full(shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return a.tape.push("sum", np.sum(a.data, axis=axis), (a,), vjp)


def take(a: Var, index: Union[int, slice], axis: int = -1) -> Var:
    """沿 axis 取一列（int）或一段（slice）"""
    shape = a.shape
    key = [slice(None)] * a.ndim
    key[axis] = index
    key = tuple(key)

    def vjp(g):
        full = np.zeros(shape)
        full[key] = g
        return (full,)

    return a.tape.push("take", a.data[key], (a,), vjp)


def concat(parts: Sequence[Var], axis: int = -1) -> Var:
    tape = _tape_of(*parts)
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            key = [slice(None)] * g.ndim
            key[axis] = slice(lo, hi)
            out.append(g[tuple(key)])
        return tuple(out)

    return tape.push("concat", np.concatenate([p.data for p in parts], axis=axis), parts, vjp)


def segment(flat: Var, offset: int, shape: Tuple[int, ...]) -> Var:
    """从扁平参数向量中切出一个权重块"""
    size = int(np.prod(shape)) if shape else 1
    total = flat.shape

    def vjp(g):
        full = np.zeros(total)
        full[offset: offset + size] = np.reshape(g, -1)
        return (full,)

    data = flat.data[offset: offset + size].reshape(shape)
    return flat.tape.push("segment", data, (flat,), vjp)


def reshape(a: Var, shape: Tuple[int, ...]) -> Var:
    old = a.shape
    return a.tape.push("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))
