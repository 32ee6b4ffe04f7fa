"""
耗时统计：入口函数装饰器与训练阶段上下文
"""

import functools
import time
from contextlib import contextmanager
from typing import Any, Callable, Iterator, TypeVar

# 类型变量，用于泛型函数
F = TypeVar('F', bound=Callable[..., Any])


def timer(func: F) -> F:
    """
    统计训练、评估等长耗时入口的执行时间
    使用秒单位，保留4位小数，不显示函数参数；异常退出时同样打印

    使用示例:
        @timer
        def train_vanilla(config):
            ...
        # [TIMER] train_vanilla: 812.3051 s
    """
    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        start_time = time.perf_counter()
        try:
            return func(*args, **kwargs)
        finally:
            elapsed: float = time.perf_counter() - start_time
            print(f"[TIMER] {func.__qualname__}: {elapsed:.4f} s", flush=True)

    return wrapper  # type: ignore


@contextmanager
def stage(label: str, detail: str = "") -> Iterator[None]:
    """
    两阶段训练中的单个阶段

        with stage("pinsn 1/2", "训练 PISN"):
            ...
        # [STAGE] pinsn 1/2: 训练 PISN
        # [TIMER] pinsn 1/2: 95.2210 s
    """
    print(f"[STAGE] {label}" + (f": {detail}" if detail else ""), flush=True)
    start_time = time.perf_counter()
    try:
        yield
    finally:
        print(f"[TIMER] {label}: {time.perf_counter() - start_time:.4f} s", flush=True)
