"""
参数扫描：任务参数或符号网络深度的网格，独立运行用 joblib 并行
"""

import itertools
import json
import os
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from utils.config import build_config
from utils.errors import ConfigError, DivergenceError
from utils.export import write_csv
from utils.trainer import register_run, run_dir, run_record, train

SWEEPABLE = ("task", "depth", "seed")


def parse_param(text: str) -> Tuple[str, List[Any]]:
    """
    解析 --param

        task=100:1000:10   等距 10 个值
        task=125,475,975   逗号列表
        depth=2,3,4
    """
    if "=" not in text:
        raise ConfigError(f"--param 格式应为 name=values: {text}")
    name, spec = (s.strip() for s in text.split("=", 1))
    if name not in SWEEPABLE:
        raise ConfigError(f"不支持扫描参数 {name}（可选 {', '.join(SWEEPABLE)}）")
    cast = float if name == "task" else int
    try:
        if ":" in spec:
            lo, hi, n = spec.split(":")
            values = [cast(v) for v in np.linspace(float(lo), float(hi), int(n))]
        else:
            values = [cast(v) for v in spec.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"--param 取值无法解析: {text}") from e
    if not values:
        raise ConfigError(f"--param 没有取值: {text}")
    return name, values


def sweep_grid(params: Sequence[str]) -> List[Dict[str, Any]]:
    parsed = [parse_param(p) for p in params]
    names = [n for n, _ in parsed]
    return [dict(zip(names, combo)) for combo in itertools.product(*(v for _, v in parsed))]


def _run_one(
    data: Dict[str, Any], overrides: Sequence[str], point: Dict[str, Any], root: str,
) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """训练一个扫描点，返回 (汇总行, 登记到扫描根目录 runs.db 的记录)"""
    tag = "_".join(f"{k}{v:g}" if isinstance(v, float) else f"{k}{v}" for k, v in point.items())
    extra = [f"{k}={v}" for k, v in point.items()]
    extra.append(f"output_dir={json.dumps(os.path.join(root, tag))}")
    row: Dict[str, Any] = dict(point)
    config = build_config(data, list(overrides) + extra)
    try:
        result, _ = train(config)
        row.update(status="ok", mean_err=result.summary_error, final_loss=result.final_loss)
        record = run_record(config, run_dir(config), result, "ok")
    except DivergenceError as e:
        row.update(status="diverged", mean_err=float("nan"), final_loss=float("nan"), epoch=e.epoch)
        record = run_record(config, run_dir(config), None, "diverged")
    return row, record


def run_sweep(
    data: Dict[str, Any],
    params: Sequence[str],
    overrides: Sequence[str] = (),
    n_jobs: int = 1,
) -> List[Dict[str, Any]]:
    """
    对参数网格逐点训练（每个点单独的输出目录），汇总写入 sweep_summary.csv，
    每个点（含发散的点）同时登记到扫描根目录的 runs.db

    配置错误在启动前统一检查，任意一个点的配置非法都会直接报错
    """
    grid = sweep_grid(params)
    base = build_config(data, overrides)
    root = base.output_dir
    for point in grid:
        build_config(data, list(overrides) + [f"{k}={v}" for k, v in point.items()])
    print(f"[INFO] 扫描 {len(grid)} 个点，n_jobs={n_jobs}", flush=True)
    results = Parallel(n_jobs=n_jobs)(delayed(_run_one)(data, overrides, point, root) for point in grid)
    os.makedirs(root, exist_ok=True)
    rows = [row for row, _ in results]
    for _, record in results:
        register_run(root, record)
    columns = list(grid[0].keys()) + ["status", "mean_err", "final_loss"]
    write_csv(os.path.join(root, "sweep_summary.csv"), columns, rows)
    for row in rows:
        print(f"[INFO] {row}", flush=True)
    return rows
