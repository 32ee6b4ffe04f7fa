"""
前向模式 Jet：值 + 对输入变量 (x, y, t) 的一阶、二阶偏导

每个槽位都是 Tape 上的 Var，所以参数梯度可以穿过导数计算。
槽位为 None 表示结构性的 0（例如仿射函数的二阶导），读取时才展开成数组。
二阶导按排序后的变量对存储，second[(i, j)] 与 second[(j, i)] 是同一个对象。
"""

from itertools import combinations_with_replacement
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils import autodiff as ad
from utils.autodiff import Tape, Var
from utils.errors import MissingDerivativeError, UnsupportedPrimitiveError

Pair = Tuple[int, int]
Slot = Optional[Var]


def all_pairs(n: int) -> FrozenSet[Pair]:
    return frozenset(combinations_with_replacement(range(n), 2))


def _pair(i: int, j: int) -> Pair:
    return (i, j) if i <= j else (j, i)


def _plus(*terms: Slot) -> Slot:
    out = None
    for term in terms:
        if term is None:
            continue
        out = term if out is None else ad.add(out, term)
    return out


def _times(a: Slot, b) -> Slot:
    if a is None or b is None:
        return None
    return ad.mul(a, b)


def _expand(var: Var, shape: Tuple[int, ...]) -> Var:
    """把广播形状的槽位展开到完整形状"""
    if var.shape == shape:
        return var
    if var.is_const:
        return var.tape.const(np.broadcast_to(var.data, shape).copy())
    return ad.mul(var, np.ones(shape))


class Jet:
    """
    截断到二阶的 Taylor 表示

    属性:
        names: 输入变量名（如 ("x", "t")），位置即变量编号
        value: 值 (N,) 或 (N, C)
        first: 每个变量一个槽位
        second: 排序变量对 → 槽位，只包含被跟踪的变量对
        order: 0/1/2，表示计算到了几阶导数
    """

    __slots__ = ("names", "value", "first", "second", "order", "pairs")
    __array_ufunc__ = None

    def __init__(
        self,
        names: Sequence[str],
        value: Var,
        first: Sequence[Slot],
        second: Dict[Pair, Slot],
        order: int = 2,
        pairs: Optional[Iterable[Pair]] = None,
    ):
        self.names = tuple(names)
        self.value = value
        self.first = list(first) if order >= 1 else [None] * len(self.names)
        self.order = order
        self.pairs = all_pairs(len(self.names)) if pairs is None else frozenset(pairs)
        self.second = {p: second.get(p) for p in self.pairs} if order >= 2 else {}

    # ------------------------------------------------------------------
    # 构造
    # ------------------------------------------------------------------
    @property
    def tape(self) -> Tape:
        return self.value.tape

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @classmethod
    def constant(cls, tape: Tape, value, names: Sequence[str], order: int = 2, pairs=None) -> "Jet":
        v = value if isinstance(value, Var) else tape.const(value)
        return cls(names, v, [None] * len(names), {}, order, pairs)

    def _like(self, value: Var, first: Sequence[Slot], second: Dict[Pair, Slot]) -> "Jet":
        return Jet(self.names, value, first, second, self.order, self.pairs)

    def _lift(self, other) -> "Jet":
        if isinstance(other, Jet):
            if other.names != self.names:
                raise MissingDerivativeError(f"Jet 变量不一致: {self.names} vs {other.names}")
            return other
        if isinstance(other, (int, float, np.floating, np.ndarray, Var)):
            return Jet.constant(self.tape, other, self.names, self.order, self.pairs)
        raise UnsupportedPrimitiveError(f"不支持的 Jet 操作数类型: {type(other).__name__}")

    # ------------------------------------------------------------------
    # 读取
    # ------------------------------------------------------------------
    def _index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise MissingDerivativeError(f"变量 {name} 没有被播种（已播种: {self.names}）") from None

    def d(self, name: str) -> Var:
        """∂/∂name"""
        if self.order < 1:
            raise MissingDerivativeError(f"Jet 只计算到 {self.order} 阶，无法读取 d{name}")
        slot = self.first[self._index(name)]
        if slot is None:
            return self.tape.const(np.zeros(self.shape))
        return _expand(slot, self.shape)

    def dd(self, a: str, b: str) -> Var:
        """∂²/∂a∂b"""
        key = _pair(self._index(a), self._index(b))
        if self.order < 2 or key not in self.pairs:
            raise MissingDerivativeError(f"二阶导 d{a}d{b} 没有被跟踪")
        slot = self.second[key]
        if slot is None:
            return self.tape.const(np.zeros(self.shape))
        return _expand(slot, self.shape)

    def array(self, *names: str) -> np.ndarray:
        """数值读取：无参数为值，一个变量名为一阶导，两个为二阶导"""
        if not names:
            return self.value.data
        if len(names) == 1:
            return self.d(names[0]).data
        return self.dd(names[0], names[1]).data

    # ------------------------------------------------------------------
    # 算术
    # ------------------------------------------------------------------
    def __add__(self, other) -> "Jet":
        o = self._lift(other)
        return Jet(
            self.names,
            ad.add(self.value, o.value),
            [_plus(a, b) for a, b in zip(self.first, o.first)],
            {p: _plus(self.second[p], o.second.get(p)) for p in self.second},
            min(self.order, o.order),
            self.pairs & o.pairs,
        )

    __radd__ = __add__

    def __neg__(self) -> "Jet":
        return self._like(
            ad.neg(self.value),
            [None if a is None else ad.neg(a) for a in self.first],
            {p: None if s is None else ad.neg(s) for p, s in self.second.items()},
        )

    def __sub__(self, other) -> "Jet":
        return self + (-self._lift(other))

    def __rsub__(self, other) -> "Jet":
        return self._lift(other) + (-self)

    def __mul__(self, other) -> "Jet":
        if isinstance(other, (int, float, np.floating)):
            return self.scale(float(other))
        o = self._lift(other)
        a, b = self, o
        order = min(a.order, b.order)
        pairs = a.pairs & b.pairs
        first = [_plus(_times(da, b.value), _times(db, a.value)) for da, db in zip(a.first, b.first)]
        second = {}
        if order >= 2:
            for i, j in pairs:
                second[(i, j)] = _plus(
                    _times(a.second.get((i, j)), b.value),
                    _times(a.first[i], b.first[j]),
                    _times(a.first[j], b.first[i]),
                    _times(b.second.get((i, j)), a.value),
                )
        return Jet(self.names, ad.mul(a.value, b.value), first, second, order, pairs)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Jet":
        if isinstance(other, (int, float, np.floating)):
            return self.scale(1.0 / float(other))
        raise UnsupportedPrimitiveError("Jet 除法只支持除以常数标量")

    def __pow__(self, power) -> "Jet":
        if power == 2:
            return self * self
        raise UnsupportedPrimitiveError("Jet 只支持平方")

    def scale(self, c: float) -> "Jet":
        return self._like(
            ad.mul(self.value, c),
            [_times(a, c) for a in self.first],
            {p: _times(s, c) for p, s in self.second.items()},
        )

    # ------------------------------------------------------------------
    # 一元原语
    # ------------------------------------------------------------------
    def _chain(self, value: Var, d1: Var, d2: Optional[Callable[[], Var]]) -> "Jet":
        """f(a) 的链式法则：first_i = f'·a_i，second_ij = f''·a_i·a_j + f'·a_ij"""
        first = [_times(a, d1) for a in self.first]
        second = {}
        if self.order >= 2:
            f2 = None
            for i, j in self.pairs:
                cross = _times(self.first[i], self.first[j])
                if cross is not None:
                    f2 = d2() if f2 is None else f2
                    cross = ad.mul(cross, f2)
                second[(i, j)] = _plus(cross, _times(self.second[(i, j)], d1))
        return self._like(value, first, second)

    def sin(self) -> "Jet":
        s = ad.sin(self.value)
        c = ad.cos(self.value)
        return self._chain(s, c, lambda: ad.neg(s))

    def cos(self) -> "Jet":
        return (self + np.pi / 2).sin()

    def exp(self) -> "Jet":
        e = ad.exp(self.value)
        return self._chain(e, e, lambda: e)

    def tanh(self) -> "Jet":
        th = ad.tanh(self.value)
        d1 = ad.sub(1.0, ad.mul(th, th))
        return self._chain(th, d1, lambda: ad.mul(-2.0, ad.mul(th, d1)))

    def sigmoid(self) -> "Jet":
        s = ad.sigmoid(self.value)
        d1 = ad.mul(s, ad.sub(1.0, s))
        return self._chain(s, d1, lambda: ad.mul(d1, ad.sub(1.0, ad.mul(2.0, s))))

    def sum(self, axis: int = -1) -> "Jet":
        def red(v: Slot) -> Slot:
            if v is None:
                return None
            return ad.reduce_sum(_expand(v, self.shape), axis)

        return self._like(
            ad.reduce_sum(self.value, axis),
            [red(a) for a in self.first],
            {p: red(s) for p, s in self.second.items()},
        )

    def __repr__(self) -> str:
        return f"Jet(names={self.names}, shape={self.shape}, order={self.order})"


def sin(j: Jet) -> Jet:
    return j.sin()


def cos(j: Jet) -> Jet:
    return j.cos()


def exp(j: Jet) -> Jet:
    return j.exp()


def tanh(j: Jet) -> Jet:
    return j.tanh()


def sigmoid(j: Jet) -> Jet:
    return j.sigmoid()


# ----------------------------------------------------------------------
# 播种与线性层
# ----------------------------------------------------------------------
def seed(
    tape: Tape,
    points: np.ndarray,
    names: Sequence[str],
    order: int = 2,
    pairs: Optional[Iterable[Pair]] = None,
) -> List[Jet]:
    """
    为每个输入变量生成一个 Jet：first[i] = 1，其余一阶与全部二阶为 0

    参数:
        points: (N, n) 输入坐标，列顺序与 names 一致
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != len(names):
        raise MissingDerivativeError(f"输入坐标形状 {points.shape} 与播种变量 {tuple(names)} 不一致")
    jets = []
    one = tape.const(1.0)
    for i in range(len(names)):
        first: List[Slot] = [None] * len(names)
        first[i] = one
        jets.append(Jet(names, tape.const(points[:, i].copy()), first, {}, order, pairs))
    return jets


def input_linear(
    X: np.ndarray,
    W: Var,
    names: Sequence[str],
    order: int = 2,
    pairs: Optional[Iterable[Pair]] = None,
    bias: Optional[Var] = None,
) -> Jet:
    """
    输入层仿射变换 X @ W (+ b)，X 为常数坐标

    X 的前 len(names) 列是被播种的变量，其后的列（如常数 1）没有导数。
    对第 i 个变量的一阶导就是 W 的第 i 行，二阶导为结构性 0。
    """
    X = np.asarray(X, dtype=np.float64)
    value = ad.matmul(X, W)
    if bias is not None:
        value = ad.add(value, bias)
    first = [ad.take(W, i, axis=0) for i in range(len(names))]
    return Jet(names, value, first, {}, order, pairs)


def jet_linear(J: Jet, W: Var, b: Optional[Var] = None) -> Jet:
    """J (N, C) 上的线性层：值与每个导数槽位都右乘 W"""
    shape = J.shape

    def lin(v: Slot) -> Slot:
        if v is None:
            return None
        return ad.matmul(_expand(v, shape), W)

    value = ad.matmul(J.value, W)
    if b is not None:
        value = ad.add(value, b)
    return J._like(value, [lin(a) for a in J.first], {p: lin(s) for p, s in J.second.items()})


def jet_take(J: Jet, index: Union[int, slice]) -> Jet:
    def pick(v: Slot) -> Slot:
        if v is None:
            return None
        if v.ndim == 0:
            return v if isinstance(index, int) else _expand(v, ad.take(J.value, index, axis=-1).shape)
        if v.shape[-1] != J.shape[-1]:
            v = _expand(v, J.shape)
        # 形如 (C,) 的广播槽位取出后仍可广播
        return ad.take(v, index, axis=-1)

    return J._like(ad.take(J.value, index, axis=-1), [pick(a) for a in J.first], {p: pick(s) for p, s in J.second.items()})


def jet_concat(parts: Sequence[Jet]) -> Jet:
    """
    沿最后一维拼接；一维 (N,) 的部分视为一列
    """
    head = parts[0]
    tape = head.tape
    order = min(p.order for p in parts)
    pairs = frozenset.intersection(*[p.pairs for p in parts])

    def column(v: Var, shape: Tuple[int, ...]) -> Var:
        v = _expand(v, shape)
        return ad.reshape(v, shape + (1,)) if len(shape) == 1 else v

    def cat(slots: Sequence[Slot]) -> Slot:
        if all(s is None for s in slots):
            return None
        cols = []
        for s, part in zip(slots, parts):
            if s is None:
                s = tape.const(np.zeros(part.shape))
            cols.append(column(s, part.shape))
        return ad.concat(cols, axis=-1)

    value = ad.concat([column(p.value, p.shape) for p in parts], axis=-1)
    first = [cat([p.first[i] for p in parts]) for i in range(len(head.names))]
    second = {}
    if order >= 2:
        second = {q: cat([p.second.get(q) for p in parts]) for q in pairs}
    return Jet(head.names, value, first, second, order, pairs)


def jet_eval(
    f: Callable[..., Jet],
    point: Sequence[float],
    seeds: Sequence[str],
    order: int = 2,
) -> Jet:
    """
    在单点上对 f 做 Jet 求值，返回值、梯度和 Hessian

    f 按 seeds 的顺序接收每个变量的 Jet；使用不支持的原语（log、除以 Jet 等）
    会在构图时抛出 UnsupportedPrimitiveError。

    示例:
        jet_eval(lambda x, y: x * y, [3.0, 5.0], ["x", "y"]).array("x", "y")  # [1.0]
    """
    tape = Tape()
    point = np.asarray(point, dtype=np.float64).reshape(1, -1)
    jets = seed(tape, point, seeds, order)
    try:
        out = f(*jets)
    except UnsupportedPrimitiveError:
        raise
    except TypeError as e:
        raise UnsupportedPrimitiveError(f"不支持的原语: {e}") from e
    if not isinstance(out, Jet):
        out = Jet.constant(tape, np.broadcast_to(np.asarray(out, dtype=np.float64), (1,)).copy(), seeds, order)
    return out
