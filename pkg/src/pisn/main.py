"""
PISN 命令行入口
物理信息符号网络（PISN / PINSN / PINN）训练、评估、表达式提取、外推演示与参数扫描

用法:
    python src/pisn/main.py train configs/fp1_pisn.toml --set epochs=5000
    python src/pisn/main.py eval outputs/fp1_pisn_s0/checkpoint.bin fp1
    python src/pisn/main.py extract-expr outputs/fp1_pisn_s0/checkpoint.bin
    python src/pisn/main.py demo-extrapolation sin
    python src/pisn/main.py sweep configs/kovasznay_pisn.toml --param task=125,475,975 --jobs 3

退出码: 0 成功，2 配置错误，3 训练发散
"""

import argparse
import json
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import List, Optional

from utils.checkpoint import load_checkpoint
from utils.config import load_config
from utils.demo import DEMO_FUNCTIONS, demo_extrapolation
from utils.errors import DivergenceError, LayoutError, SolverError
from utils.export import write_errors, write_expressions
from utils.expression import expression_render
from utils.pdelib import CATALOG, catalog_get
from utils.sweep import run_sweep
from utils.trainer import checkpoint_expressions, evaluate_checkpoint, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set)
    print(f"[INFO] 训练 {config.architecture} on {config.problem} (task={config.task}, seed={config.seed})", flush=True)
    result, paths = train(config)
    for name, path in paths.items():
        print(f"[INFO]   {name}: {path}")
    for report in result.reports:
        for row in report.rows():
            print(f"[INFO] {row['architecture']} {row['output']}: mean={row['mean_err']:.3e} max={row['max_err']:.3e}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    problem = catalog_get(args.problem, args.task, allow_out_of_range=True)
    report = evaluate_checkpoint(ckpt, problem, args.resolution)
    for row in report.rows():
        print(f"[INFO] {row['output']}: mean_err={row['mean_err']:.3e} max_err={row['max_err']:.3e}")
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        write_errors(args.out, [report])
        print(f"[INFO] 误差报告已写入 {args.out}")
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    expressions = checkpoint_expressions(ckpt, args.threshold, args.task)
    if not expressions:
        print("[WARN] 该检查点没有符号网络部分（PINN），无法提取表达式")
        return EXIT_OK
    for key, expr in expressions.items():
        output = key.split("@")[0]
        print(f"# {key}")
        print(expression_render(expr, args.precision, layered=not args.inline, output=output))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_expressions(args.out, expressions, args.precision)
        print(f"[INFO] 表达式已写入 {args.out}")
    return EXIT_OK


def cmd_demo(args: argparse.Namespace) -> int:
    result = demo_extrapolation(
        args.function,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        out_dir=args.out,
    )
    print(json.dumps(result.model_dump(), ensure_ascii=False))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    with open(args.config, "rb") as f:
        data = tomllib.load(f)
    rows = run_sweep(data, args.param, args.set, args.jobs)
    return EXIT_DIVERGED if any(r["status"] == "diverged" for r in rows) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pisn", description="物理信息符号网络求解器")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="按配置文件训练")
    p.add_argument("config", help="TOML 配置文件")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="覆盖配置项（支持 a.b=c）")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="在评估网格上计算检查点的误差")
    p.add_argument("checkpoint")
    p.add_argument("problem", choices=sorted(CATALOG))
    p.add_argument("--task", type=float, default=None, help="任务参数（Re / ν / A）")
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--out", default=None, help="errors.csv 输出路径")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("extract-expr", help="从检查点提取符号表达式")
    p.add_argument("checkpoint")
    p.add_argument("--threshold", type=float, default=1e-6, help="剪枝阈值")
    p.add_argument("--precision", type=int, default=3)
    p.add_argument("--task", type=float, default=None, help="超网络检查点的任务参数")
    p.add_argument("--inline", action="store_true", help="单行输出")
    p.add_argument("--out", default=None, help="expression.txt/.json 输出目录")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("demo-extrapolation", help="MLP 外推演示")
    p.add_argument("function", choices=sorted(DEMO_FUNCTIONS))
    p.add_argument("--epochs", type=int, default=5000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="outputs/demo")
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("sweep", help="参数扫描（joblib 并行）")
    p.add_argument("config")
    p.add_argument("--param", action="append", required=True, help="task=lo:hi:n、task=a,b,c 或 depth=2,3,4")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as e:
        print(f"[ERROR] {e}", file=sys.stderr, flush=True)
        return EXIT_DIVERGED
    except (ValueError, LayoutError, FileNotFoundError, tomllib.TOMLDecodeError) as e:
        # ConfigError / TaskRangeError 都是 ValueError
        print(f"[ERROR] {e}", file=sys.stderr, flush=True)
        return EXIT_CONFIG
    except SolverError as e:
        print(f"[ERROR] {e}", file=sys.stderr, flush=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
