"""下界的两层搜索：每个 x 的最小根，再对 x 取最小"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from joblib import Parallel, delayed
from scipy import optimize
from scipy.interpolate import PchipInterpolator

from ..errors import GlobalInfeasible, InfeasibleX, NoConvergence
from ..utils.file_utils import resolve_n_jobs

logger = logging.getLogger(__name__)

ROOTSCAN_SETTINGS = {
    "x_points": 64,        # Chebyshev 网格点数
    "x_margin": 1e-6,      # x 上限取 (1 − margin)/δ
    "ratio": 1.05,         # 几何扫描公比
    "a_min": 1e-4,
    "a_max": 1e4,
    "chunk": 32,           # 每次扩展的剖面点数
    "polish_xtol": 1e-13,
}

# crossing(a, x, I(a))：最小根处由负变正
Crossing = Callable[[np.ndarray, float, np.ndarray], np.ndarray]


class FisherProfile:
    """
    几何网格上按需计算的 a ↦ I(a)

    中间点用 log-log PCHIP 插值；数值只依赖分布，跨 δ 复用
    """

    def __init__(self, fisher: Callable[[float], float], n_jobs: Optional[int] = None):
        s = ROOTSCAN_SETTINGS
        count = int(math.ceil(math.log(s["a_max"] / s["a_min"]) / math.log(s["ratio"]))) + 1
        self.fisher = fisher
        self.grid = s["a_min"] * s["ratio"] ** np.arange(count)
        self.values = np.full(count, np.nan)
        self.computed = 0
        self.n_jobs = resolve_n_jobs(n_jobs)
        self._interp = None

    @property
    def exhausted(self) -> bool:
        return self.computed >= self.grid.size

    def extend(self) -> None:
        """再计算一段"""
        lo = self.computed
        hi = min(lo + ROOTSCAN_SETTINGS["chunk"], self.grid.size)
        if lo >= hi:
            return
        if self.n_jobs > 1:
            vals = Parallel(n_jobs=self.n_jobs, prefer="threads")(
                delayed(self.fisher)(float(a)) for a in self.grid[lo:hi]
            )
        else:
            vals = [self.fisher(float(a)) for a in self.grid[lo:hi]]
        self.values[lo:hi] = vals
        self.computed = hi
        self._interp = None

    def __call__(self, a) -> np.ndarray:
        """插值得到的 I(a)"""
        if self._interp is None:
            while self.computed < 2:
                self.extend()
            n = self.computed
            self._interp = PchipInterpolator(np.log(self.grid[:n]), np.log(self.values[:n]), extrapolate=True)
        return np.exp(self._interp(np.log(np.asarray(a, dtype=float))))


@dataclass
class XRecord:
    x: float
    root: Optional[float]
    status: str = "ok"


@dataclass
class ScanResult:
    root: float
    x_star: float
    fisher_at_root: float
    table: List[XRecord] = field(default_factory=list)

    def diagnostics(self) -> List[dict]:
        return [{"x": r.x, "root": r.root, "status": r.status} for r in self.table]


def chebyshev_grid(x_hi: float, count: int = ROOTSCAN_SETTINGS["x_points"]) -> np.ndarray:
    """[0, x_hi] 上的 Chebyshev–Lobatto 点"""
    j = np.arange(count)
    return 0.5 * x_hi * (1.0 - np.cos(np.pi * j / (count - 1)))


class RootScanner:
    """
    对给定 x 求 crossing(·, x) 的最小根

    先在剖面网格上找第一次变号，再在插值剖面上 brentq；
    polish 用精确 Fisher 重新求根
    """

    def __init__(
        self,
        profile: FisherProfile,
        crossing: Crossing,
        floor: Callable[[float], float],
        exact_fisher: Callable[[float], float],
    ):
        self.profile = profile
        self.crossing = crossing
        self.floor = floor
        self.exact_fisher = exact_fisher

    def _bracket(self, x: float):
        a0 = self.floor(x)
        grid = self.profile.grid
        start = int(np.searchsorted(grid, a0, side="right"))
        idx = start
        while True:
            while self.profile.computed <= idx and not self.profile.exhausted:
                self.profile.extend()
            stop = self.profile.computed
            if idx >= stop:
                return None
            a = grid[idx:stop]
            g = self.crossing(a, x, self.profile.values[idx:stop])
            hit = np.flatnonzero(g >= 0)
            if hit.size:
                j = idx + int(hit[0])
                left = grid[j - 1] if j > start else max(a0 * (1.0 + 1e-12), grid[0] / ROOTSCAN_SETTINGS["ratio"])
                return float(left), float(grid[j])
            idx = stop
            if self.profile.exhausted:
                return None

    def root(self, x: float) -> float:
        """插值剖面上的最小根；无根时抛 InfeasibleX"""
        br = self._bracket(x)
        if br is None:
            raise InfeasibleX(f"x={x:.6g} 在 a ≤ {ROOTSCAN_SETTINGS['a_max']:g} 内无根")
        left, right = br

        def g(a):
            return float(self.crossing(np.array([a]), x, self.profile(np.array([a])))[0])

        if g(left) >= 0:
            return left
        return optimize.brentq(g, left, right, xtol=1e-14, rtol=1e-13)

    def exact_root(self, x: float, guess: float) -> float:
        """用精确 Fisher 在 guess 附近求根"""

        def g(a):
            return float(self.crossing(np.array([a]), x, np.array([self.exact_fisher(a)]))[0])

        ratio = ROOTSCAN_SETTINGS["ratio"]
        lo = max(guess / ratio, self.floor(x) * (1.0 + 1e-12))
        hi = guess * ratio
        for _ in range(20):
            if g(lo) < 0 <= g(hi):
                return optimize.brentq(g, lo, hi, xtol=ROOTSCAN_SETTINGS["polish_xtol"], rtol=1e-14)
            if g(lo) >= 0:
                lo = max(lo / ratio, self.floor(x) * (1.0 + 1e-12))
            if g(hi) < 0:
                hi *= ratio
        raise NoConvergence(f"x={x:.6g} 处精确求根找不到变号区间")


def minimize_roots(scanner: RootScanner, x_hi: float, label: str = "") -> ScanResult:
    """
    外层：Chebyshev 网格取最小，再在相邻点之间黄金分割，
    最后在 x⋆ 处用精确 Fisher 求根
    """
    xs = chebyshev_grid(x_hi)
    table: List[XRecord] = []
    for x in xs:
        try:
            table.append(XRecord(float(x), scanner.root(float(x))))
        except InfeasibleX as exc:
            logger.debug("%s %s", label, exc)
            table.append(XRecord(float(x), None, "infeasible"))
    feasible = [i for i, r in enumerate(table) if r.root is not None]
    if not feasible:
        raise GlobalInfeasible(f"{label} 所有 x 均无根，Fisher 剖面可能有误")
    skipped = len(table) - len(feasible)
    if skipped:
        logger.warning("%s 有 %d 个 x 网格点无根，已排除", label, skipped)

    best = min(feasible, key=lambda i: table[i].root)

    def objective(x):
        try:
            return scanner.root(float(x))
        except InfeasibleX:
            return math.inf

    lo = xs[max(best - 1, 0)]
    hi = xs[min(best + 1, len(xs) - 1)]
    try:
        if not 0 < best < len(xs) - 1:
            raise ValueError("边界点")
        res = optimize.minimize_scalar(objective, bracket=(lo, xs[best], hi), method="golden", tol=1e-10)
        x_star = float(np.clip(res.x, lo, hi))
    except ValueError:
        res = optimize.minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        x_star = float(res.x)
    if not objective(x_star) <= table[best].root:
        x_star = float(xs[best])

    root = scanner.exact_root(x_star, objective(x_star))
    logger.debug("%s 最小根 %.10g 位于 x=%.10g", label, root, x_star)
    return ScanResult(root, x_star, scanner.exact_fisher(root), table)
