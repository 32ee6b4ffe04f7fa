"""
求解器统一异常定义
"""

from typing import Any, Optional, Tuple


class SolverError(Exception):
    """所有求解器异常的基类"""


class UnsupportedPrimitiveError(SolverError, TypeError):
    """在构图阶段使用了不支持的原语（如 log、除法）"""


class MissingDerivativeError(SolverError):
    """残差算子需要的导数槽位没有被播种"""


class LayoutError(SolverError):
    """参数布局与目标网络不一致"""


class TaskRangeError(SolverError, ValueError):
    """任务参数超出允许范围"""

    def __init__(self, name: str, value: float, valid: Tuple[float, float]):
        self.name = name
        self.value = value
        self.valid = valid
        super().__init__(f"任务参数 {name}={value} 超出范围 [{valid[0]}, {valid[1]}]")


class ConfigError(SolverError, ValueError):
    """配置文件或命令行参数错误（CLI 退出码 2）"""


class NonFiniteError(SolverError, ArithmeticError):
    """计算中出现 NaN/Inf"""


class NonFiniteGradientError(NonFiniteError):
    """反向传播时某条记录的梯度出现 NaN/Inf"""

    def __init__(self, index: int, op: str):
        self.index = index
        self.op = op
        super().__init__(f"反向传播在记录 #{index} ({op}) 处出现非有限梯度")


class NonFiniteLossError(NonFiniteError):
    """损失项在某个点上出现 NaN/Inf"""

    def __init__(self, term: str, index: int):
        self.term = term
        self.index = index
        super().__init__(f"损失项 {term} 在第 {index} 个点上出现非有限值")


class DivergenceError(SolverError):
    """训练发散（CLI 退出码 3）"""

    def __init__(
        self,
        message: str,
        epoch: int,
        task: Optional[float] = None,
        subdomain: Optional[int] = None,
        params: Any = None,
    ):
        self.epoch = epoch
        # 发散前最后一组有限参数
        self.params = params
        self.task = task
        self.subdomain = subdomain
        where = f"epoch={epoch}"
        if task is not None:
            where += f", task={task}"
        if subdomain is not None:
            where += f", subdomain={subdomain}"
        super().__init__(f"{message} ({where})")
