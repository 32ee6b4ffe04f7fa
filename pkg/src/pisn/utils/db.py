import json
import os
import sqlite3
from contextlib import contextmanager
from datetime import datetime
from typing import Any, Dict, List, Optional


DB_FILENAME = "runs.db"


def get_db_path(output_root: str) -> str:
    """
    获取运行登记数据库路径。
    放在输出根目录下，和各次运行的结果目录在一起。
    """
    os.makedirs(output_root, exist_ok=True)
    return os.path.join(output_root, DB_FILENAME)


@contextmanager
def get_connection(output_root: str):
    """获取 SQLite 连接的上下文管理器，自动提交和关闭。"""
    conn = sqlite3.connect(get_db_path(output_root))
    try:
        yield conn
        conn.commit()
    finally:
        conn.close()


def init_db(output_root: str) -> None:
    """
    初始化运行登记表。

    表结构说明（runs）：
      - id: 主键
      - created_at: 创建时间
      - problem: 问题名
      - architecture: 架构（pinn / pisn / hyper-pisn / decomp-pinn ...）
      - task_param: 任务参数（无参数问题为空）
      - output_dir: 本次运行的结果目录
      - config_hash: 配置 SHA-256
      - final_loss: 最后一轮的总损失
      - status: ok / diverged
      - report_json: 误差报告 JSON
    """
    with get_connection(output_root) as conn:
        cur = conn.cursor()
        cur.execute(
            """
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                created_at TEXT NOT NULL,
                problem TEXT NOT NULL,
                architecture TEXT NOT NULL,
                task_param REAL,
                output_dir TEXT NOT NULL,
                config_hash TEXT NOT NULL,
                final_loss REAL,
                status TEXT NOT NULL,
                report_json TEXT NOT NULL
            )
            """
        )
        cur.execute("CREATE INDEX IF NOT EXISTS idx_runs_problem ON runs(problem, architecture)")


def insert_run(
    output_root: str,
    problem: str,
    architecture: str,
    task_param: Optional[float],
    output_dir: str,
    config_hash: str,
    final_loss: Optional[float],
    status: str,
    reports: List[Dict[str, Any]],
) -> int:
    """插入一条运行记录，返回新纪录的 id。"""
    init_db(output_root)
    created_at = datetime.utcnow().isoformat(timespec="seconds") + "Z"
    with get_connection(output_root) as conn:
        cur = conn.cursor()
        cur.execute(
            """
            INSERT INTO runs (
                created_at, problem, architecture, task_param, output_dir,
                config_hash, final_loss, status, report_json
            )
            VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
            """,
            (
                created_at,
                problem,
                architecture,
                task_param,
                output_dir,
                config_hash,
                final_loss,
                status,
                json.dumps(reports, ensure_ascii=False),
            ),
        )
        return int(cur.lastrowid)


def get_runs(output_root: str, problem: Optional[str] = None) -> List[Dict[str, Any]]:
    """按时间倒序列出运行记录（不含报告 JSON）。"""
    init_db(output_root)
    with get_connection(output_root) as conn:
        cur = conn.cursor()
        sql = """
            SELECT id, created_at, problem, architecture, task_param, output_dir,
                   config_hash, final_loss, status
            FROM runs
        """
        params: List[Any] = []
        if problem:
            sql += " WHERE problem = ?"
            params.append(problem)
        sql += " ORDER BY id DESC"
        cur.execute(sql, params)
        keys = ["id", "created_at", "problem", "architecture", "task_param", "output_dir",
                "config_hash", "final_loss", "status"]
        return [dict(zip(keys, row)) for row in cur.fetchall()]


def get_run_report(output_root: str, run_id: int) -> Optional[List[Dict[str, Any]]]:
    """获取指定运行的误差报告"""
    with get_connection(output_root) as conn:
        cur = conn.cursor()
        cur.execute("SELECT report_json FROM runs WHERE id = ?", (run_id,))
        row = cur.fetchone()
        return json.loads(row[0]) if row else None
