"""
PDE 问题目录：控制方程、定义域、初边值条件、解析解与误差统计

每个问题的解析解都写成 Jet 程序（exact），因此同一份代码既能给出数值，
也能直接代入残差算子检查解析解是否满足方程。
"""

from typing import Callable, Dict, List, Optional, Tuple, Type

import numpy as np
from pydantic import BaseModel, model_validator

from utils.autodiff import Tape, Var
from utils.errors import ConfigError, TaskRangeError
from utils.jets import Jet, seed

Coords = Dict[str, np.ndarray]
Fields = Dict[str, Jet]


class TaskSpec(BaseModel):
    """标量任务参数（Re、ν、A）的名称、范围和默认测试任务"""

    name: str
    lo: float
    hi: float
    test: Tuple[float, ...]

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi

    def train_tasks(self, n: int = 10) -> List[float]:
        return [float(v) for v in np.linspace(self.lo, self.hi, n)]

    def validation_tasks(self, n: int = 5) -> List[float]:
        return [float(v) for v in np.linspace(self.lo, self.hi, n + 2)[1:-1]]

    def normalize(self, value: float) -> float:
        """把任务参数仿射映射到 [-1, 1]"""
        return 2.0 * (value - self.lo) / (self.hi - self.lo) - 1.0


class PDEProblem:
    """
    PDE 问题基类

    子类声明:
        name, inputs, outputs, bounds: 问题名、输入变量、输出变量、各输入的区间
        second_pairs: 残差算子读取的二阶导（变量名对）
        boundary_vars: 带边界条件的空间变量（在其两端的面上施加 BC）
        neumann: 是否有 u_t(x, 0) = g(x) 初始条件
        task_spec: 参数化问题的任务参数描述
    """

    name: str = ""
    inputs: Tuple[str, ...] = ()
    outputs: Tuple[str, ...] = ("u",)
    bounds: Dict[str, Tuple[float, float]] = {}
    second_pairs: Tuple[Tuple[str, str], ...] = ()
    boundary_vars: Tuple[str, ...] = ()
    neumann: bool = False
    task_spec: Optional[TaskSpec] = None
    time_levels: Optional[Tuple[float, ...]] = None
    # (collocation, ic, bc) 默认采样数
    default_counts: Tuple[int, int, int] = (1000, 100, 100)
    grid_resolution: int = 101

    def __init__(self, task: Optional[float] = None, allow_out_of_range: bool = False):
        spec = self.task_spec
        if spec is None:
            if task is not None:
                raise ConfigError(f"问题 {self.name} 没有任务参数，不能指定 task={task}")
        else:
            if task is None:
                raise ConfigError(f"问题 {self.name} 需要任务参数 {spec.name} ∈ [{spec.lo}, {spec.hi}]")
            task = float(task)
            if not np.isfinite(task):
                raise TaskRangeError(spec.name, task, (spec.lo, spec.hi))
            if not spec.contains(task):
                if not allow_out_of_range:
                    raise TaskRangeError(spec.name, task, (spec.lo, spec.hi))
                print(f"[WARN] {self.name}: {spec.name}={task} 超出范围 [{spec.lo}, {spec.hi}]，继续计算", flush=True)
        self.task = task

    def __repr__(self) -> str:
        if self.task_spec is None:
            return f"{type(self).__name__}()"
        return f"{type(self).__name__}({self.task_spec.name}={self.task})"

    # ------------------------------------------------------------------
    # 几何
    # ------------------------------------------------------------------
    @property
    def n_equations(self) -> int:
        return 1

    @property
    def has_time(self) -> bool:
        return "t" in self.inputs

    def pair_indices(self) -> frozenset:
        idx = {name: i for i, name in enumerate(self.inputs)}
        return frozenset(tuple(sorted((idx[a], idx[b]))) for a, b in self.second_pairs)

    def box(self) -> Dict[str, Tuple[float, float]]:
        return {name: tuple(self.bounds[name]) for name in self.inputs}

    def coords(self, points: np.ndarray) -> Coords:
        return {name: points[:, i] for i, name in enumerate(self.inputs)}

    def with_task(self, task: Optional[float], allow_out_of_range: bool = False) -> "PDEProblem":
        return type(self)(task, allow_out_of_range)

    # ------------------------------------------------------------------
    # 方程与解析解（子类实现）
    # ------------------------------------------------------------------
    def exact(self, v: Fields) -> Fields:
        raise NotImplementedError

    def residual(self, f: Fields, c: Coords) -> List[Var]:
        raise NotImplementedError

    # ------------------------------------------------------------------
    # 条件数据：默认取自解析解
    # ------------------------------------------------------------------
    def initial_value(self, points: np.ndarray) -> np.ndarray:
        """f(x)：u(x, t0)"""
        return analytical_eval(self, points)

    def initial_rate(self, points: np.ndarray) -> np.ndarray:
        """g(x)：∂u/∂t(x, t0)，形状 (M, 1)"""
        raise NotImplementedError

    def boundary_value(self, points: np.ndarray) -> np.ndarray:
        """h(x_bc, t)"""
        return analytical_eval(self, points)


# ----------------------------------------------------------------------
# 一维 + 时间的消融问题
# ----------------------------------------------------------------------
class Wave(PDEProblem):
    name = "wave"
    inputs = ("x", "t")
    bounds = {"x": (0.0, float(np.pi)), "t": (0.0, 1.0)}
    second_pairs = (("x", "x"), ("t", "t"))
    boundary_vars = ("x",)
    neumann = True

    def exact(self, v):
        return {"u": v["x"].sin() * v["t"].sin()}

    def residual(self, f, c):
        u = f["u"]
        return [u.dd("t", "t") - u.dd("x", "x")]

    def initial_value(self, points):
        return np.zeros((len(points), 1))

    def initial_rate(self, points):
        return np.sin(points[:, [0]])

    def boundary_value(self, points):
        return np.zeros((len(points), 1))


class Heat(PDEProblem):
    name = "heat"
    inputs = ("x", "t")
    bounds = {"x": (0.0, float(np.pi)), "t": (0.0, 1.0)}
    second_pairs = (("x", "x"),)
    boundary_vars = ("x",)

    def exact(self, v):
        return {"u": v["x"].sin() * (-v["t"]).exp()}

    def residual(self, f, c):
        u = f["u"]
        return [u.d("t") - u.dd("x", "x")]

    def initial_value(self, points):
        return np.sin(points[:, [0]])

    def boundary_value(self, points):
        return np.zeros((len(points), 1))


class FokkerPlanck1(PDEProblem):
    """u_t = u_x + u_xx，无边界条件"""

    name = "fp1"
    inputs = ("x", "t")
    bounds = {"x": (0.0, 1.0), "t": (0.0, 1.0)}
    second_pairs = (("x", "x"),)

    def exact(self, v):
        return {"u": v["x"] + v["t"]}

    def residual(self, f, c):
        u = f["u"]
        return [u.d("t") - u.d("x") - u.dd("x", "x")]

    def initial_value(self, points):
        return points[:, [0]].copy()


class FokkerPlanck2(FokkerPlanck1):
    """u_t = x·u_x + x²·u_xx"""

    name = "fp2"

    def exact(self, v):
        return {"u": v["x"] * v["t"].exp()}

    def residual(self, f, c):
        u, x = f["u"], c["x"]
        return [u.d("t") - x * u.d("x") - (x * x) * u.dd("x", "x")]


class FokkerPlanck3(FokkerPlanck1):
    """u_t = (x+1)·u_x + x²·eᵗ·u_xx"""

    name = "fp3"

    def exact(self, v):
        return {"u": (v["x"] + 1.0) * v["t"].exp()}

    def residual(self, f, c):
        u, x, t = f["u"], c["x"], c["t"]
        return [u.d("t") - (x + 1.0) * u.d("x") - (x * x * np.exp(t)) * u.dd("x", "x")]

    def initial_value(self, points):
        return points[:, [0]] + 1.0


# ----------------------------------------------------------------------
# Kovasznay 流（定常二维 Navier-Stokes）
# ----------------------------------------------------------------------
class Kovasznay(PDEProblem):
    name = "kovasznay"
    inputs = ("x", "y")
    outputs = ("u", "v", "p")
    bounds = {"x": (-0.5, 1.0), "y": (-0.5, 1.5)}
    second_pairs = (("x", "x"), ("y", "y"))
    boundary_vars = ("x", "y")
    task_spec = TaskSpec(name="Re", lo=100.0, hi=1000.0, test=(125.0, 375.0, 475.0, 725.0, 975.0))
    # 2601 个配点，每个面 80 个边界点
    default_counts = (2601, 0, 320)

    @property
    def n_equations(self) -> int:
        return 3

    @property
    def lam(self) -> float:
        re = self.task
        return re / 2.0 - np.sqrt(re * re / 4.0 + 4.0 * np.pi ** 2)

    def exact(self, v):
        lam = self.lam
        e = (v["x"] * lam).exp()
        w = v["y"] * (2.0 * np.pi)
        return {
            "u": 1.0 - e * w.cos(),
            "v": e * w.sin() * (lam / (2.0 * np.pi)),
            "p": (1.0 - (v["x"] * (2.0 * lam)).exp()) * 0.5,
        }

    def residual(self, f, c):
        u, v, p = f["u"], f["v"], f["p"]
        re = self.task
        ux, uy, vx, vy = u.d("x"), u.d("y"), v.d("x"), v.d("y")
        return [
            ux + vy,
            u.value * ux + v.value * uy + p.d("x") - (u.dd("x", "x") + u.dd("y", "y")) * (1.0 / re),
            u.value * vx + v.value * vy + p.d("y") - (v.dd("x", "x") + v.dd("y", "y")) * (1.0 / re),
        ]


# ----------------------------------------------------------------------
# 二维 Burgers 方程
# ----------------------------------------------------------------------
class BurgersCoupled(PDEProblem):
    name = "burgers2d-coupled"
    inputs = ("x", "y", "t")
    outputs = ("u", "v")
    bounds = {"x": (0.0, 1.0), "y": (0.0, 1.0), "t": (0.0, 1.0)}
    second_pairs = (("x", "x"), ("y", "y"))
    boundary_vars = ("x", "y")
    task_spec = TaskSpec(name="nu", lo=1e-3, hi=1e-2, test=(2.2e-3, 4.3e-3, 5.8e-3, 7.5e-3, 9.3e-3))
    # 时间方向取步长 0.1 的时间片
    time_levels = tuple(float(t) for t in np.linspace(0.0, 1.0, 11))
    default_counts = (2601, 200, 320)
    grid_resolution = 26

    @property
    def n_equations(self) -> int:
        return 2

    def exact(self, v):
        nu = self.task
        s = (v["y"] * 4.0 - v["x"] * 4.0 - v["t"]) * (1.0 / (32.0 * nu))
        sig = (-s).sigmoid()
        return {"u": 0.75 - sig * 0.25, "v": 0.75 + sig * 0.25}

    def residual(self, f, c):
        u, v = f["u"], f["v"]
        nu = self.task
        out = []
        for w in (u, v):
            out.append(
                w.d("t") + u.value * w.d("x") + v.value * w.d("y") - (w.dd("x", "x") + w.dd("y", "y")) * nu
            )
        return out


class BurgersConservation(PDEProblem):
    """u_t + (u²/2)_x + (u²/2)_y = ν(u_xx + u_yy)"""

    name = "burgers2d-conservation"
    inputs = ("x", "y", "t")
    bounds = {"x": (0.0, 1.0), "y": (0.0, 1.0), "t": (0.0, 1.0)}
    second_pairs = (("x", "x"), ("y", "y"))
    boundary_vars = ("x", "y")
    task_spec = TaskSpec(name="nu", lo=5e-3, hi=5e-2, test=(5.3e-3, 9.4e-3, 1.1e-2, 2.3e-2, 3.7e-2))
    default_counts = (2601, 200, 320)
    grid_resolution = 26

    def exact(self, v):
        nu = self.task
        return {"u": ((v["t"] - v["x"] - v["y"]) * (1.0 / (2.0 * nu))).sigmoid()}

    def residual(self, f, c):
        u = f["u"]
        nu = self.task
        return [u.d("t") + u.value * (u.d("x") + u.d("y")) - (u.dd("x", "x") + u.dd("y", "y")) * nu]


# ----------------------------------------------------------------------
# 电报方程
# ----------------------------------------------------------------------
class Telegraph1(PDEProblem):
    """u_xx = u_tt + 2u_t + u"""

    name = "telegraph1"
    inputs = ("x", "t")
    bounds = {"x": (0.0, 1.0), "t": (0.0, 1.0)}
    second_pairs = (("x", "x"), ("t", "t"))
    boundary_vars = ("x",)
    neumann = True
    task_spec = TaskSpec(name="A", lo=0.5, hi=5.0, test=(0.7, 1.5, 2.4, 3.6, 4.7))
    default_counts = (2601, 40, 40)

    def exact(self, v):
        a = self.task
        return {"u": (v["x"] * a - v["t"] * (a + 1.0)).exp()}

    def residual(self, f, c):
        u = f["u"]
        return [u.dd("x", "x") - u.dd("t", "t") - u.d("t") * 2.0 - u.value]

    def initial_value(self, points):
        return np.exp(self.task * points[:, [0]])

    def initial_rate(self, points):
        return -(self.task + 1.0) * np.exp(self.task * points[:, [0]])


class Telegraph2(PDEProblem):
    """u_xx = u_tt + 2A·u_t + A²·u"""

    name = "telegraph2"
    inputs = ("x", "t")
    bounds = {"x": (0.0, 1.0), "t": (0.0, 1.0)}
    second_pairs = (("x", "x"), ("t", "t"))
    boundary_vars = ("x",)
    neumann = True
    task_spec = TaskSpec(name="A", lo=0.2, hi=3.2, test=(0.27, 0.51, 0.88, 1.25, 1.71))
    default_counts = (2601, 40, 40)

    def exact(self, v):
        a = self.task
        return {"u": (v["x"] * a).exp() + (v["t"] * (-a)).exp()}

    def residual(self, f, c):
        u = f["u"]
        a = self.task
        return [u.dd("x", "x") - u.dd("t", "t") - u.d("t") * (2.0 * a) - u.value * (a * a)]

    def initial_value(self, points):
        return 1.0 + np.exp(self.task * points[:, [0]])

    def initial_rate(self, points):
        return np.full((len(points), 1), -self.task)


CATALOG: Dict[str, Type[PDEProblem]] = {
    cls.name: cls
    for cls in (
        Wave,
        Heat,
        FokkerPlanck1,
        FokkerPlanck2,
        FokkerPlanck3,
        Kovasznay,
        BurgersCoupled,
        BurgersConservation,
        Telegraph1,
        Telegraph2,
    )
}


def catalog_get(name: str, task_param: Optional[float] = None, allow_out_of_range: bool = False) -> PDEProblem:
    try:
        cls = CATALOG[name]
    except KeyError:
        raise ConfigError(f"未知的问题: {name}（可选: {', '.join(CATALOG)}）") from None
    return cls(task_param, allow_out_of_range)


# ----------------------------------------------------------------------
# 解析解求值
# ----------------------------------------------------------------------
def exact_jets(problem: PDEProblem, points: np.ndarray, order: int = 2) -> Fields:
    """把解析解作为 Jet 程序在一批点上求值（带导数）"""
    tape = Tape()
    jets = seed(tape, points, problem.inputs, order, problem.pair_indices())
    return problem.exact(dict(zip(problem.inputs, jets)))


def analytical_eval(problem: PDEProblem, points: np.ndarray) -> np.ndarray:
    """
    解析解数值

    参数:
        points: (N, n) 或单点 (n,)

    返回:
        (N, n_outputs)；单点输入时为 (n_outputs,)
    """
    points = np.asarray(points, dtype=np.float64)
    single = points.ndim == 1
    pts = points.reshape(1, -1) if single else points
    fields = exact_jets(problem, pts, order=0)
    out = np.stack([np.broadcast_to(fields[name].array(), (len(pts),)) for name in problem.outputs], axis=1)
    return out[0] if single else out


# ----------------------------------------------------------------------
# 评估网格与误差报告
# ----------------------------------------------------------------------
def evaluation_grid(
    problem: PDEProblem,
    resolution: Optional[int] = None,
    box: Optional[Dict[str, Tuple[float, float]]] = None,
) -> np.ndarray:
    """等距张量网格；有时间片的问题在 t 方向直接取时间片"""
    n = resolution or problem.grid_resolution
    bounds = dict(problem.box())
    if box:
        bounds.update(box)
    axes = []
    for name in problem.inputs:
        lo, hi = bounds[name]
        if name == "t" and problem.time_levels is not None:
            axes.append(np.array([t for t in problem.time_levels if lo <= t <= hi]))
        else:
            axes.append(np.linspace(lo, hi, n))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


class OutputError(BaseModel):
    output: str
    mean_err: float
    max_err: float

    @model_validator(mode="after")
    def _check_order(self) -> "OutputError":
        if not (np.isfinite(self.mean_err) and np.isfinite(self.max_err)):
            return self
        # 均值的求和舍入允许略超最大值
        if self.mean_err < 0.0 or self.max_err < self.mean_err * (1.0 - 1e-12):
            raise ValueError("误差统计需满足 max ≥ mean ≥ 0")
        return self


class ErrorReport(BaseModel):
    problem: str
    task_param: Optional[float] = None
    architecture: str = ""
    grid: str = ""
    errors: List[OutputError]

    def get(self, output: str) -> OutputError:
        for e in self.errors:
            if e.output == output:
                return e
        raise KeyError(output)

    @property
    def mean(self) -> float:
        """所有输出的平均误差（用于汇总比较）"""
        return float(np.mean([e.mean_err for e in self.errors]))

    def rows(self) -> List[Dict]:
        return [
            {
                "problem": self.problem,
                "task_param": "" if self.task_param is None else self.task_param,
                "architecture": self.architecture,
                "output": e.output,
                "mean_err": e.mean_err,
                "max_err": e.max_err,
            }
            for e in self.errors
        ]


Predictor = Callable[[np.ndarray], np.ndarray]


def evaluate_errors(
    problem: PDEProblem,
    predict: Predictor,
    grid: np.ndarray,
    architecture: str = "",
) -> ErrorReport:
    """
    逐点绝对误差 |u_net − u_exact| 的均值与最大值（每个输出分别统计）

    参数:
        predict: 点集 (N, n) → 网络输出 (N, n_outputs)
    """
    pred = np.asarray(predict(grid), dtype=np.float64).reshape(len(grid), -1)
    exact = analytical_eval(problem, grid)
    err = np.abs(pred - exact)
    lo, hi = grid.min(axis=0), grid.max(axis=0)
    desc = f"{len(grid)} pts " + " ".join(f"{n}∈[{a:g},{b:g}]" for n, a, b in zip(problem.inputs, lo, hi))
    return ErrorReport(
        problem=problem.name,
        task_param=problem.task,
        architecture=architecture,
        grid=desc,
        errors=[
            OutputError(output=name, mean_err=float(err[:, k].mean()), max_err=float(err[:, k].max()))
            for k, name in enumerate(problem.outputs)
        ],
    )
