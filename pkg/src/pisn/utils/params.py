"""
扁平参数存储：布局（ParamLayout）、参数向量（ParamVector）与梯度（ParamGradient）
"""

from typing import Dict, Iterator, List, Mapping, NamedTuple, Sequence, Tuple

import numpy as np

from utils.autodiff import Var, segment
from utils.errors import LayoutError


class Segment(NamedTuple):
    name: str
    offset: int
    shape: Tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


class ParamLayout:
    """命名段 → (偏移, 形状)；各段互不重叠且恰好覆盖整个数组"""

    def __init__(self, segments: Sequence[Tuple[str, Tuple[int, ...]]]):
        self.segments: List[Segment] = []
        self._index: Dict[str, Segment] = {}
        offset = 0
        for name, shape in segments:
            if name in self._index:
                raise LayoutError(f"重复的参数段名称: {name}")
            seg = Segment(name, offset, tuple(int(s) for s in shape))
            self.segments.append(seg)
            self._index[name] = seg
            offset += seg.size
        self.size = offset

    @classmethod
    def concat(cls, parts: Mapping[str, "ParamLayout"]) -> "ParamLayout":
        """把多个子布局按 `前缀.段名` 拼接成一个布局"""
        segments = []
        for prefix, layout in parts.items():
            segments.extend((f"{prefix}.{seg.name}", seg.shape) for seg in layout.segments)
        return cls(segments)

    def __getitem__(self, name: str) -> Segment:
        try:
            return self._index[name]
        except KeyError:
            raise LayoutError(f"布局中不存在参数段: {name}") from None

    def __iter__(self) -> Iterator[Segment]:
        return iter(self.segments)

    def __len__(self) -> int:
        return len(self.segments)

    def __eq__(self, other) -> bool:
        return isinstance(other, ParamLayout) and self.describe() == other.describe()

    def names(self) -> List[str]:
        return [seg.name for seg in self.segments]

    def sub(self, prefix: str) -> "ParamLayout":
        head = prefix + "."
        return ParamLayout([(s.name[len(head):], s.shape) for s in self.segments if s.name.startswith(head)])

    def span(self, prefix: str) -> slice:
        """前缀对应的连续区间（concat 生成的布局中各前缀连续）"""
        head = prefix + "."
        segs = [s for s in self.segments if s.name.startswith(head)]
        if not segs:
            raise LayoutError(f"布局中不存在前缀: {prefix}")
        return slice(segs[0].offset, segs[-1].offset + segs[-1].size)

    def validate(self) -> None:
        cursor = 0
        for seg in self.segments:
            if seg.offset != cursor:
                raise LayoutError(f"参数段 {seg.name} 偏移不连续")
            cursor += seg.size
        if cursor != self.size:
            raise LayoutError("参数段没有恰好覆盖整个数组")

    def bind(self, flat: Var) -> "BoundParams":
        if flat.shape != (self.size,):
            raise LayoutError(f"参数向量长度 {flat.shape} 与布局长度 {self.size} 不一致")
        return BoundParams({seg.name: segment(flat, seg.offset, seg.shape) for seg in self.segments})

    def describe(self) -> List[Dict]:
        return [{"name": s.name, "offset": s.offset, "shape": list(s.shape)} for s in self.segments]

    @classmethod
    def from_description(cls, desc: Sequence[Mapping]) -> "ParamLayout":
        layout = cls([(d["name"], tuple(d["shape"])) for d in desc])
        for seg, d in zip(layout.segments, desc):
            if seg.offset != int(d["offset"]):
                raise LayoutError(f"布局描述中的偏移不一致: {seg.name}")
        return layout


class ParamVector:
    """某个网络的全部可训练参数（float64 扁平数组 + 布局）"""

    def __init__(self, values: np.ndarray, layout: ParamLayout):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (layout.size,):
            raise LayoutError(f"参数数量 {values.size} 与布局声明 {layout.size} 不一致")
        self.values = values
        self.layout = layout

    def __len__(self) -> int:
        return self.values.size

    def segment(self, name: str) -> np.ndarray:
        seg = self.layout[name]
        return self.values[seg.offset: seg.offset + seg.size].reshape(seg.shape)

    def sub(self, prefix: str) -> "ParamVector":
        return ParamVector(self.values[self.layout.span(prefix)].copy(), self.layout.sub(prefix))

    def copy(self) -> "ParamVector":
        return type(self)(self.values.copy(), self.layout)

    @classmethod
    def zeros(cls, layout: ParamLayout) -> "ParamVector":
        return cls(np.zeros(layout.size), layout)

    @classmethod
    def join(cls, parts: Mapping[str, "ParamVector"]) -> "ParamVector":
        layout = ParamLayout.concat({k: v.layout for k, v in parts.items()})
        return cls(np.concatenate([v.values for v in parts.values()]), layout)


class ParamGradient(ParamVector):
    """与 ParamVector 同布局的 ∂loss/∂θ"""


class BoundParams(dict):
    """段名 → Tape 上的权重节点"""

    def snapshot(self, layout: ParamLayout) -> ParamVector:
        """按布局读回当前绑定的数值"""
        parts = [np.asarray(self[seg.name].data, dtype=np.float64).ravel() for seg in layout]
        return ParamVector(np.concatenate(parts) if parts else np.zeros(0), layout)

    def sub(self, prefix: str) -> "BoundParams":
        head = prefix + "."
        return BoundParams({k[len(head):]: v for k, v in self.items() if k.startswith(head)})

    @classmethod
    def merge(cls, parts: Mapping[str, "BoundParams"]) -> "BoundParams":
        merged = cls()
        for prefix, bound in parts.items():
            merged.update({f"{prefix}.{k}": v for k, v in bound.items()})
        return merged


def param_grad(loss: Var, flat: Var, layout: ParamLayout) -> ParamGradient:
    """
    对一次记录下来的标量损失做反向扫描，得到与参数同布局的梯度

    参数:
        loss: 标量损失节点（须经由 flat 读取参数）
        flat: Tape.param() 注册的扁平参数叶子
        layout: flat 的布局

    返回:
        ParamGradient，条目为 ∂loss/∂θ_i
    """
    (grad,) = loss.tape.backward(loss, [flat])
    return ParamGradient(grad, layout)
