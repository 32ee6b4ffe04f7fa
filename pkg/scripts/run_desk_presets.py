"""
按 configs/ 下的全部配置依次训练（desk 预设），汇总每个运行的误差

用法:
  python scripts/run_desk_presets.py [configs/*.toml ...] [--set key=value ...]
"""

from __future__ import annotations

import argparse
import glob
import os
import sys


def _repo_root() -> str:
    return os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))


sys.path.insert(0, os.path.join(_repo_root(), "src", "pisn"))

from utils.config import load_config  # noqa: E402
from utils.errors import DivergenceError, SolverError  # noqa: E402
from utils.trainer import train  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description="批量运行 desk 预设")
    parser.add_argument("configs", nargs="*")
    parser.add_argument("--set", action="append", default=[])
    args = parser.parse_args()

    paths = args.configs or sorted(glob.glob(os.path.join(_repo_root(), "configs", "*.toml")))
    failed = 0
    summary = []
    for path in paths:
        print(f"[STAGE] {os.path.basename(path)}", flush=True)
        try:
            config = load_config(path, args.set)
            result, _ = train(config)
            summary.append((path, "ok", result.summary_error))
        except DivergenceError as e:
            print(f"[ERROR] {e}", flush=True)
            summary.append((path, "diverged", float("nan")))
            failed += 1
        except (SolverError, ValueError) as e:
            print(f"[ERROR] {path}: {e}", flush=True)
            summary.append((path, "error", float("nan")))
            failed += 1

    print("=" * 60)
    for path, status, err in summary:
        print(f"[INFO] {os.path.basename(path):40s} {status:9s} mean_err={err:.3e}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
