"""
实验配置：pydantic 模型 + TOML 文件 + 命令行 --set 覆盖

预设:
    full   完整规模（125k epochs，按原始超参数设置学习率与衰减节点）
    desk   桌面规模（epochs 缩短，衰减节点按比例缩放）
"""

import copy
import hashlib
import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from utils.errors import ConfigError
from utils.physics import LossWeights

ARCHITECTURES = (
    "pinn", "pisn", "pinsn",
    "hyper-pinn", "hyper-pisn", "hyper-pinsn",
    "decomp-pinn", "decomp-pisn", "decomp-pinsn",
    "decomp-hyper-pinn", "decomp-hyper-pisn", "decomp-hyper-pinsn",
)
Architecture = Literal[
    "pinn", "pisn", "pinsn",
    "hyper-pinn", "hyper-pisn", "hyper-pinsn",
    "decomp-pinn", "decomp-pisn", "decomp-pinsn",
    "decomp-hyper-pinn", "decomp-hyper-pisn", "decomp-hyper-pinsn",
]

FULL_EPOCHS = 125_000

# 完整规模的学习率计划（起始 lr, γ, 衰减节点）
FULL_SCHEDULES: Dict[str, Tuple[float, float, Tuple[int, ...]]] = {
    "pinn": (1e-4, 0.1, (40_000, 80_000, 120_000)),
    "pisn": (1e-2, 0.1, (25_000, 50_000, 75_000, 100_000)),
    "hyper": (1e-4, 0.1, (50_000, 100_000)),
}

# 桌面规模：epochs 与起始学习率
DESK_EPOCHS = {"pinn": 20_000, "pisn": 20_000, "hyper": 10_000, "decomp": 2_000}
DESK_LR = {"pinn": 1e-3, "pisn": 1e-2, "hyper": 1e-3}


class ScheduleConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = 1e-2
    gamma: float = 0.1
    milestones: List[int] = Field(default_factory=list)

    @field_validator("lr")
    @classmethod
    def _positive_lr(cls, v: float) -> float:
        if not v > 0:
            raise ValueError(f"学习率必须为正: {v}")
        return v

    @field_validator("milestones")
    @classmethod
    def _increasing(cls, v: List[int]) -> List[int]:
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f"衰减节点必须严格递增: {v}")
        return v


class CollocationConfig(BaseModel):
    """None 表示使用问题自带的默认点数"""

    model_config = ConfigDict(extra="forbid")

    n_colloc: Optional[int] = None
    n_ic: Optional[int] = None
    n_bc: Optional[int] = None
    sampler: Literal["uniform", "grid", "lhs"] = "uniform"

    def counts(self, defaults: Tuple[int, int, int]) -> Tuple[int, int, int]:
        given = (self.n_colloc, self.n_ic, self.n_bc)
        return tuple(d if g is None else g for g, d in zip(given, defaults))


class HyperConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    hidden: List[int] = Field(default_factory=lambda: [512, 512, 256, 256, 128])
    out_scale: float = 1e-2
    train_tasks: Optional[List[float]] = None
    validation_tasks: Optional[List[float]] = None
    test_tasks: Optional[List[float]] = None
    n_train: int = 10
    n_validation: int = 5
    validate_every: int = 100


class DecompConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    interface_points: int = 50
    value_weight: float = 1.0
    flux_weight: float = 1.0
    residual_weight: float = 1.0
    budget_scale: float = 1.0
    subdomains: Optional[List[int]] = None

    @field_validator("value_weight", "flux_weight", "residual_weight", "budget_scale")
    @classmethod
    def _non_negative(cls, v: float) -> float:
        if v < 0:
            raise ValueError(f"权重不能为负: {v}")
        return v


class TrainConfig(BaseModel):
    """未给出的 epochs 与学习率计划取所选架构的 desk 预设"""

    model_config = ConfigDict(extra="forbid")

    problem: str
    task: Optional[float] = None
    architecture: Architecture = "pisn"
    depth: int = 2
    hidden: List[int] = Field(default_factory=lambda: [20] * 6)
    epochs: int = DESK_EPOCHS["pisn"]
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    # PINSN 第二阶段（残差网络）的训练轮数与学习率计划
    residual_epochs: Optional[int] = None
    residual_schedule: Optional[ScheduleConfig] = None
    pinsn_joint: bool = False
    collocation: CollocationConfig = Field(default_factory=CollocationConfig)
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    hyper: HyperConfig = Field(default_factory=HyperConfig)
    decomp: DecompConfig = Field(default_factory=DecompConfig)
    seed: int = 0
    output_dir: str = "outputs"
    log_every: int = 1000
    grid_resolution: Optional[int] = None
    prune_threshold: float = 1e-6
    allow_out_of_range: bool = False

    @model_validator(mode="before")
    @classmethod
    def _preset_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict) or data.get("architecture", "pisn") not in ARCHITECTURES:
            return data
        return _with_preset(data, "desk")

    @field_validator("depth")
    @classmethod
    def _depth(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"符号网络深度至少为 1: {v}")
        return v

    @field_validator("epochs", "log_every")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"必须为正整数: {v}")
        return v

    @model_validator(mode="after")
    def _milestones_within(self) -> "TrainConfig":
        if self.schedule.milestones and self.schedule.milestones[-1] >= self.epochs:
            raise ValueError(f"衰减节点必须小于 epochs={self.epochs}: {self.schedule.milestones}")
        if self.residual_schedule is not None and self.residual_schedule.milestones:
            if self.residual_schedule.milestones[-1] >= self.stage2_epochs:
                raise ValueError(f"残差阶段衰减节点必须小于 {self.stage2_epochs}")
        return self

    @property
    def base(self) -> str:
        """去掉 hyper-/decomp- 前缀后的网络类型"""
        return self.architecture.split("-")[-1]

    @property
    def family(self) -> str:
        return self.architecture.split("-")[0] if "-" in self.architecture else "vanilla"

    @property
    def uses_hyper(self) -> bool:
        """hyper-* 与 decomp-hyper-*：网络参数由超网络按任务参数生成"""
        return "hyper" in self.architecture.split("-")

    @property
    def stage2_epochs(self) -> int:
        return self.residual_epochs if self.residual_epochs is not None else self.epochs

    @property
    def stage2_schedule(self) -> ScheduleConfig:
        return self.residual_schedule if self.residual_schedule is not None else self.schedule


def _scaled(milestones: Sequence[int], epochs: int) -> List[int]:
    out = []
    for m in milestones:
        v = max(1, int(round(m * epochs / FULL_EPOCHS)))
        if v < epochs and (not out or v > out[-1]):
            out.append(v)
    return out


def schedule_preset(kind: str, scale: str = "desk", epochs: Optional[int] = None) -> Tuple[int, Dict[str, Any]]:
    """
    某类网络的预设 epochs 与学习率计划

    参数:
        kind: pinn / pisn / hyper（pinsn 残差阶段使用 pinn 的计划）
        scale: full / desk
    """
    if kind not in FULL_SCHEDULES:
        raise ConfigError(f"未知的预设类型: {kind}")
    lr, gamma, milestones = FULL_SCHEDULES[kind]
    if scale == "full":
        n = epochs or FULL_EPOCHS
        return n, {"lr": lr, "gamma": gamma, "milestones": _scaled(milestones, n) if n != FULL_EPOCHS else list(milestones)}
    if scale == "desk":
        n = epochs or DESK_EPOCHS[kind]
        return n, {"lr": DESK_LR[kind], "gamma": gamma, "milestones": _scaled(milestones, n)}
    raise ConfigError(f"未知的预设规模: {scale}（可选 full / desk）")


def preset(architecture: str, scale: str = "desk") -> Dict[str, Any]:
    """返回某个架构的默认配置字典（不含 problem）"""
    if architecture not in ARCHITECTURES:
        raise ConfigError(f"未知的架构: {architecture}（可选 {', '.join(ARCHITECTURES)}）")
    family = architecture.split("-")[0] if "-" in architecture else "vanilla"
    base = architecture.split("-")[-1]
    epochs = DESK_EPOCHS["decomp"] if family == "decomp" and scale == "desk" else None
    n, schedule = schedule_preset(_main_kind(architecture), scale, epochs)
    data: Dict[str, Any] = {"architecture": architecture, "epochs": n, "schedule": schedule}
    if base == "pinsn":
        n2, schedule2 = schedule_preset(_residual_kind(architecture), scale, epochs)
        data["residual_epochs"] = n2
        data["residual_schedule"] = schedule2
    data["log_every"] = max(1, n // 20)
    return data


def _deep_merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _parse_value(raw: str) -> Any:
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def parse_overrides(items: Sequence[str]) -> Dict[str, Any]:
    """把 ["schedule.lr=1e-3", "seed=2"] 解析成嵌套字典"""
    out: Dict[str, Any] = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set 参数格式应为 key=value: {item}")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _parse_value(raw.strip())
    return out


def build_config(data: Dict[str, Any], overrides: Sequence[str] = ()) -> TrainConfig:
    """
    预设 ← 文件内容 ← 命令行覆盖，依次合并后校验

    文件中可用 preset = "full" / "desk" 选择预设（默认 desk）
    """
    merged = _deep_merge(data, parse_overrides(overrides))
    scale = merged.pop("preset", "desk")
    try:
        return TrainConfig.model_validate(_with_preset(merged, scale))
    except ValidationError as e:
        raise ConfigError(f"配置校验失败:\n{e}") from e


def _main_kind(architecture: str) -> str:
    if "hyper" in architecture.split("-"):
        return "hyper"
    return "pisn" if architecture.split("-")[-1] in ("pisn", "pinsn") else "pinn"


def _residual_kind(architecture: str) -> str:
    """PINSN 残差阶段：超网络架构用 hyper 的计划，其余用 pinn 的计划"""
    return "hyper" if "hyper" in architecture.split("-") else "pinn"


def _epochs(value: Any) -> Optional[int]:
    try:
        return int(value)
    except (TypeError, ValueError):
        return None


def _with_preset(data: Dict[str, Any], scale: str) -> Dict[str, Any]:
    """
    预设 ← data

    data 只给 epochs（或 residual_epochs）而没有对应的学习率计划时，衰减节点按给定的 epochs 缩放
    """
    arch = data.get("architecture", "pisn")
    base = preset(arch, scale)
    epochs = _epochs(data.get("epochs"))
    if epochs is not None and "schedule" not in data:
        _, base["schedule"] = schedule_preset(_main_kind(arch), scale, epochs)
    residual_epochs = _epochs(data.get("residual_epochs"))
    if residual_epochs is not None and "residual_schedule" not in data and "residual_schedule" in base:
        _, base["residual_schedule"] = schedule_preset(_residual_kind(arch), scale, residual_epochs)
    return _deep_merge(base, data)


def load_config(path: str, overrides: Sequence[str] = ()) -> TrainConfig:
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"配置文件不存在: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"配置文件解析失败: {path}: {e}") from e
    return build_config(data, overrides)


def config_hash(config: TrainConfig) -> str:
    """规范化 JSON 的 SHA-256"""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
