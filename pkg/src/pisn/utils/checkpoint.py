"""
检查点文件 checkpoint.bin

    8 字节魔数 b"PISNCKPT"
    4 字节小端 uint32：JSON 头长度
    JSON 头（UTF-8）：layout、config、config_hash、model、has_best、best_loss、status、meta
    float64 小端：最终参数；has_best 时紧跟同长度的 best 快照
"""

import json
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from utils.errors import LayoutError
from utils.params import ParamLayout, ParamVector

MAGIC = b"PISNCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    layout: ParamLayout
    values: np.ndarray
    model: Dict[str, Any]
    config: Dict[str, Any] = field(default_factory=dict)
    config_hash: str = ""
    best: Optional[np.ndarray] = None
    best_loss: Optional[float] = None
    status: str = "ok"
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def params(self) -> ParamVector:
        return ParamVector(self.values, self.layout)

    @property
    def best_params(self) -> ParamVector:
        return ParamVector(self.values if self.best is None else self.best, self.layout)


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    values = np.ascontiguousarray(ckpt.values, dtype="<f8")
    if values.shape != (ckpt.layout.size,):
        raise LayoutError(f"参数长度 {values.size} 与布局 {ckpt.layout.size} 不一致")
    header = {
        "version": VERSION,
        "layout": ckpt.layout.describe(),
        "config": ckpt.config,
        "config_hash": ckpt.config_hash,
        "model": ckpt.model,
        "has_best": ckpt.best is not None,
        "best_loss": ckpt.best_loss,
        "status": ckpt.status,
        "meta": ckpt.meta,
    }
    raw = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        f.write(values.tobytes())
        if ckpt.best is not None:
            f.write(np.ascontiguousarray(ckpt.best, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MAGIC:
        raise LayoutError(f"不是有效的检查点文件: {path}")
    (n,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12:12 + n].decode("utf-8"))
    layout = ParamLayout.from_description(header["layout"])
    body = np.frombuffer(blob[12 + n:], dtype="<f8").astype(np.float64)
    expected = layout.size * (2 if header["has_best"] else 1)
    if body.size != expected:
        raise LayoutError(f"检查点数据长度 {body.size} 与布局声明 {expected} 不一致")
    values = body[:layout.size].copy()
    best = body[layout.size:].copy() if header["has_best"] else None
    return Checkpoint(
        layout=layout,
        values=values,
        model=header["model"],
        config=header.get("config", {}),
        config_hash=header.get("config_hash", ""),
        best=best,
        best_loss=header.get("best_loss"),
        status=header.get("status", "ok"),
        meta=header.get("meta", {}),
    )
