"""损失函数、近端算子与 Moreau 包络"""
import csv
import json
import logging
import math
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy import optimize, special
from scipy.interpolate import CubicHermiteSpline

from ..errors import ConfigError, DomainError, NonCoercive

logger = logging.getLogger(__name__)

ArrayFn = Callable[[np.ndarray], np.ndarray]

PROX_SETTINGS = {
    "tol": 1e-12,          # 内层导数相对残差
    "max_iter": 100,
    "max_expand": 60,      # 括号几何扩张次数
    "fd_step": 1e-5,
}


class Loss:
    """
    可求值的损失 L，可选导数、二阶导数和近端算子闭式

    curvature_bound 为 sup L''，梯度下降用它估计初始步长
    """

    def __init__(
        self,
        name: str,
        value: ArrayFn,
        derivative: Optional[ArrayFn] = None,
        second_derivative: Optional[ArrayFn] = None,
        prox_closed_form: Optional[Callable[[np.ndarray, float], np.ndarray]] = None,
        convex: bool = True,
        lower_bounded: bool = True,
        curvature_bound: Optional[float] = None,
    ):
        self.name = name
        self._value = value
        self._derivative = derivative
        self._second = second_derivative
        self.prox_closed_form = prox_closed_form
        self.convex = convex
        self.lower_bounded = lower_bounded
        self.curvature_bound = curvature_bound

    def __repr__(self) -> str:
        return f"Loss({self.name})"

    def __call__(self, t) -> np.ndarray:
        return self._value(np.asarray(t, dtype=float))

    @property
    def has_derivative(self) -> bool:
        return self._derivative is not None

    @property
    def has_second_derivative(self) -> bool:
        return self._second is not None

    def derivative(self, t) -> np.ndarray:
        if self._derivative is None:
            raise DomainError(f"损失 {self.name} 没有导数")
        return self._derivative(np.asarray(t, dtype=float))

    def second_derivative(self, t) -> np.ndarray:
        if self._second is None:
            raise DomainError(f"损失 {self.name} 没有二阶导数")
        return self._second(np.asarray(t, dtype=float))


def _huber_parts(c: float):
    def value(t):
        a = np.abs(t)
        return np.where(a <= c, 0.5 * t * t, c * a - 0.5 * c * c)

    def deriv(t):
        return np.clip(t, -c, c)

    def second(t):
        return (np.abs(t) <= c).astype(float)

    def prox(x, tau):
        return np.where(np.abs(x) <= c * (1.0 + tau), x / (1.0 + tau), x - tau * c * np.sign(x))

    return value, deriv, second, prox


def square_loss() -> Loss:
    return Loss(
        "square",
        lambda t: t * t,
        lambda t: 2.0 * t,
        lambda t: np.full_like(t, 2.0),
        lambda x, tau: x / (1.0 + 2.0 * tau),
        curvature_bound=2.0,
    )


def square_margin_loss() -> Loss:
    """(t − 1)²"""
    return Loss(
        "square-margin",
        lambda t: (t - 1.0) ** 2,
        lambda t: 2.0 * (t - 1.0),
        lambda t: np.full_like(t, 2.0),
        lambda x, tau: (x + 2.0 * tau) / (1.0 + 2.0 * tau),
        curvature_bound=2.0,
    )


def absolute_loss() -> Loss:
    return Loss(
        "absolute",
        np.abs,
        np.sign,
        None,
        lambda x, tau: np.sign(x) * np.maximum(np.abs(x) - tau, 0.0),
    )


def huber_loss(c: float = 1.0) -> Loss:
    value, deriv, second, prox = _huber_parts(c)
    return Loss(f"huber:{c:g}", value, deriv, second, prox, curvature_bound=1.0)


def huber_margin_loss(c: float = 1.0) -> Loss:
    """huber(t − 1)，二分类用，L′(0) ≠ 0"""
    value, deriv, second, prox = _huber_parts(c)
    return Loss(
        f"huber-margin:{c:g}",
        lambda t: value(t - 1.0),
        lambda t: deriv(t - 1.0),
        lambda t: second(t - 1.0),
        lambda x, tau: 1.0 + prox(x - 1.0, tau),
        curvature_bound=1.0,
    )


def logistic_loss() -> Loss:
    """log(1 + e^{−t})"""
    return Loss(
        "logistic",
        lambda t: np.logaddexp(0.0, -t),
        lambda t: -special.expit(-t),
        lambda t: special.expit(t) * special.expit(-t),
        curvature_bound=0.25,
    )


def logcosh_loss() -> Loss:
    return Loss(
        "logcosh",
        lambda t: np.logaddexp(t, -t) - math.log(2.0),
        np.tanh,
        lambda t: 1.0 - np.tanh(t) ** 2,
        curvature_bound=1.0,
    )


# 内置损失表
LOSS_FACTORIES = {
    "square": square_loss,
    "square-margin": square_margin_loss,
    "absolute": absolute_loss,
    "huber": huber_loss,
    "huber-margin": huber_margin_loss,
    "logistic": logistic_loss,
    "logcosh": logcosh_loss,
}


def named_loss(spec: str) -> Loss:
    """解析 square / huber:1.5 这类写法"""
    key, _, arg = spec.partition(":")
    factory = LOSS_FACTORIES.get(key.strip().lower())
    if factory is None:
        raise ConfigError(f"未知损失: {spec}")
    if arg:
        try:
            return factory(float(arg))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"损失参数无效: {spec}") from exc
    return factory()


class TabulatedLoss(Loss):
    """
    网格上给出 L 与 L′ 的损失，网格内三次 Hermite 插值

    网格外二次延拓，值与斜率连续，曲率取端点曲率 (至少为正)
    """

    def __init__(self, grid, values, derivatives, metadata: Optional[dict] = None, name: str = "tabulated"):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        derivatives = np.asarray(derivatives, dtype=float)
        if grid.ndim != 1 or grid.size < 4 or np.any(np.diff(grid) <= 0):
            raise DomainError("损失表网格必须严格递增且至少 4 个点")
        if not (grid.shape == values.shape == derivatives.shape):
            raise DomainError("损失表各列长度不一致")
        self.grid = grid
        self.values = values
        self.derivatives = derivatives
        self.metadata = dict(metadata or {})
        self._spline = CubicHermiteSpline(grid, values, derivatives)
        self._d1 = self._spline.derivative()
        self._d2 = self._spline.derivative(2)
        floor = 1e-8
        self._kappa_lo = max(float((derivatives[1] - derivatives[0]) / (grid[1] - grid[0])), floor)
        self._kappa_hi = max(float((derivatives[-1] - derivatives[-2]) / (grid[-1] - grid[-2])), floor)
        curv = max(float(np.max(self._d2(grid))), self._kappa_lo, self._kappa_hi)
        super().__init__(
            name,
            self._eval,
            self._eval_d1,
            self._eval_d2,
            convex=self.min_second_difference() >= -1e-8,
            curvature_bound=curv,
        )

    def _split(self, t: np.ndarray):
        lo, hi = self.grid[0], self.grid[-1]
        return t < lo, t > hi, np.clip(t, lo, hi)

    def _eval(self, t):
        below, above, inside = self._split(t)
        out = self._spline(inside)
        dl, dh = t - self.grid[0], t - self.grid[-1]
        out = np.where(below, self.values[0] + self.derivatives[0] * dl + 0.5 * self._kappa_lo * dl * dl, out)
        return np.where(above, self.values[-1] + self.derivatives[-1] * dh + 0.5 * self._kappa_hi * dh * dh, out)

    def _eval_d1(self, t):
        below, above, inside = self._split(t)
        out = self._d1(inside)
        out = np.where(below, self.derivatives[0] + self._kappa_lo * (t - self.grid[0]), out)
        return np.where(above, self.derivatives[-1] + self._kappa_hi * (t - self.grid[-1]), out)

    def _eval_d2(self, t):
        below, above, inside = self._split(t)
        out = self._d2(inside)
        return np.where(below, self._kappa_lo, np.where(above, self._kappa_hi, out))

    @property
    def grid_range(self) -> Tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])

    def min_second_difference(self) -> float:
        """网格上的最小二阶差分 (按步长平方归一)"""
        h = np.diff(self.grid)
        slopes = np.diff(self.values) / h
        return float(np.min(np.diff(slopes) / (0.5 * (h[1:] + h[:-1]))))

    def derivative_consistency(self) -> float:
        """L′ 与中心差分的最大相对偏差"""
        fd = (self.values[2:] - self.values[:-2]) / (self.grid[2:] - self.grid[:-2])
        ref = np.maximum(np.abs(self.derivatives[1:-1]), np.max(np.abs(self.derivatives)) * 1e-3)
        return float(np.max(np.abs(fd - self.derivatives[1:-1]) / ref))

    def rescaled(self, mode: str = "nonneg-unit") -> "TabulatedLoss":
        """
        仿射缩放以便和最小二乘比较形状

        nonneg-unit: 平移使 L ≥ 0，缩放使 L(1) = 1
        unit-at-1-2: 缩放使 L(1) = 0、L(2) = 1
        """
        if mode == "nonneg-unit":
            base = float(np.min(self.values))
            span = float(self(1.0)) - base
        elif mode == "unit-at-1-2":
            base = float(self(1.0))
            span = float(self(2.0)) - base
        else:
            raise DomainError(f"未知缩放方式: {mode}")
        if abs(span) < 1e-300:
            raise DomainError("缩放基准退化")
        return TabulatedLoss(
            self.grid,
            (self.values - base) / span,
            self.derivatives / span,
            metadata={**self.metadata, "rescaled": mode},
            name=f"{self.name}[{mode}]",
        )

    def quadratic_fit_deviation(self, lo: Optional[float] = None, hi: Optional[float] = None) -> float:
        """最佳二次拟合的最大偏差占取值范围的比例"""
        lo = self.grid[0] if lo is None else lo
        hi = self.grid[-1] if hi is None else hi
        mask = (self.grid >= lo) & (self.grid <= hi)
        v, l = self.grid[mask], self.values[mask]
        fit = np.polyval(np.polyfit(v, l, 2), v)
        span = float(np.max(l) - np.min(l))
        return float(np.max(np.abs(l - fit)) / span) if span > 0 else 0.0

    def to_csv(self, path: Union[str, Path]) -> Path:
        """写出 v,loss,dloss 以及同名 JSON 元数据"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["v", "loss", "dloss"])
            for row in zip(self.grid, self.values, self.derivatives):
                writer.writerow([repr(float(x)) for x in row])
        sidecar = path.with_suffix(".json")
        meta = {**self.metadata, "grid_range": list(self.grid_range), "convex": self.convex}
        sidecar.write_text(json.dumps(meta, indent=2, ensure_ascii=False, default=float))
        return path

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "TabulatedLoss":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"找不到损失表: {path}")
        cols = {"v": [], "loss": [], "dloss": []}
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or not set(cols) <= set(reader.fieldnames):
                raise ConfigError(f"{path} 需要表头 v,loss,dloss")
            for row in reader:
                for key in cols:
                    cols[key].append(float(row[key]))
        sidecar = path.with_suffix(".json")
        meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
        return cls(cols["v"], cols["loss"], cols["dloss"], metadata=meta, name=path.stem)


# ---- 近端算子 ----

def _bracket(loss: Loss, x: np.ndarray, tau: float) -> Tuple[np.ndarray, np.ndarray]:
    """扩张括号直到内层目标的导数变号"""
    d = loss.derivative
    width = 10.0 * tau * (1.0 + np.abs(d(x)))
    lo, hi = x - width, x + width
    for k in range(PROX_SETTINGS["max_expand"]):
        bad_lo = (lo - x) / tau + d(lo) > 0
        bad_hi = (hi - x) / tau + d(hi) < 0
        if not (bad_lo.any() or bad_hi.any()):
            return lo, hi
        step = width * 2.0 ** (k + 1)
        lo = np.where(bad_lo, x - step, lo)
        hi = np.where(bad_hi, x + step, hi)
    bad = ((lo - x) / tau + d(lo) > 0) | ((hi - x) / tau + d(hi) < 0)
    raise NonCoercive(f"损失 {loss.name} 的近端目标在括号上无下界", x=float(x[bad][0]))


def _prox_newton(loss: Loss, x: np.ndarray, tau: float) -> np.ndarray:
    """向量化的带保护 Newton / 二分"""
    d = loss.derivative
    lo, hi = _bracket(loss, x, tau)
    v = np.clip(x - tau * d(x), lo, hi)
    tol = PROX_SETTINGS["tol"]
    for _ in range(PROX_SETTINGS["max_iter"]):
        hv = (v - x) / tau + d(v)
        pos = hv > 0
        hi = np.where(pos, v, hi)
        lo = np.where(pos, lo, v)
        done = (np.abs(hv) * tau <= tol * (1.0 + np.abs(v))) | (hi - lo <= 1e-14 * (1.0 + np.abs(v)))
        if done.all():
            break
        if loss.has_second_derivative:
            slope = 1.0 / tau + loss.second_derivative(v)
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = v - hv / slope
            ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
            nxt = np.where(ok, newton, 0.5 * (lo + hi))
        else:
            nxt = 0.5 * (lo + hi)
        v = np.where(done, v, nxt)
    return v


def _prox_scalar(loss: Loss, x: np.ndarray, tau: float) -> np.ndarray:
    """只有函数值时逐点做有界 Brent"""
    out = np.empty_like(x)
    for i, xi in enumerate(x):
        width = 10.0 * tau
        for _ in range(PROX_SETTINGS["max_expand"]):
            lo, hi = xi - width, xi + width
            res = optimize.minimize_scalar(
                lambda v: (xi - v) ** 2 / (2.0 * tau) + float(loss(v)),
                bounds=(lo, hi),
                method="bounded",
                options={"xatol": 1e-12},
            )
            if lo + 1e-6 * width < res.x < hi - 1e-6 * width:
                out[i] = res.x
                break
            width *= 2.0
        else:
            raise NonCoercive(f"损失 {loss.name} 的近端目标在括号上无下界", x=float(xi))
    return out


def prox(loss: Loss, x, tau: float):
    """argmin_v (x − v)²/(2τ) + L(v)"""
    if not tau > 0:
        raise DomainError(f"τ 必须为正: {tau}")
    arr = np.asarray(x, dtype=float)
    flat = np.atleast_1d(arr).ravel()
    if loss.prox_closed_form is not None:
        out = np.asarray(loss.prox_closed_form(flat, tau), dtype=float)
    elif loss.has_derivative:
        out = _prox_newton(loss, flat, tau)
    else:
        out = _prox_scalar(loss, flat, tau)
    out = out.reshape(arr.shape)
    return float(out) if arr.ndim == 0 else out


def envelope(loss: Loss, x, tau: float):
    """M_L(x; τ)"""
    p = prox(loss, x, tau)
    return (np.asarray(x) - p) ** 2 / (2.0 * tau) + loss(p)


def envelope_dx(loss: Loss, x, tau: float):
    """M′ = (x − prox)/τ"""
    return (np.asarray(x) - prox(loss, x, tau)) / tau


def envelope_dtau(loss: Loss, x, tau: float):
    """∂M/∂τ = −M′²/2"""
    return -0.5 * envelope_dx(loss, x, tau) ** 2


def envelope_ddx(loss: Loss, x, tau: float):
    """M″ = L″(p)/(1 + τL″(p))，无二阶导时用 M′ 的中心差分"""
    if loss.has_second_derivative:
        l2 = loss.second_derivative(prox(loss, x, tau))
        return l2 / (1.0 + tau * l2)
    h = PROX_SETTINGS["fd_step"]
    x = np.asarray(x, dtype=float)
    return (envelope_dx(loss, x + h, tau) - envelope_dx(loss, x - h, tau)) / (2.0 * h)


# ---- 包络反演 ----

def _numeric_derivative(fn: ArrayFn, h: float = 1e-6) -> ArrayFn:
    def deriv(t):
        step = h * (1.0 + np.abs(t))
        return (fn(t + step) - fn(t - step)) / (2.0 * step)

    return deriv


def invert_envelope(
    g: ArrayFn,
    tau: float,
    grid=None,
    dg: Optional[ArrayFn] = None,
    d2g: Optional[ArrayFn] = None,
    name: str = "inverted",
    metadata: Optional[dict] = None,
) -> TabulatedLoss:
    """
    求 f 使 M_f(·; τ) = g，即 f(x) = max_w [g(w) − (x − w)²/(2τ)]

    用参数化 x(w) = w − τg′(w) 建表，再对目标网格做 Newton 校正。
    x(w) 不单调说明内层最大化不是凹的，报 NonCoercive
    """
    if not tau > 0:
        raise DomainError(f"τ 必须为正: {tau}")
    grid = np.linspace(-10.0, 10.0, 4001) if grid is None else np.asarray(grid, dtype=float)
    dg = dg or _numeric_derivative(g)
    d2g = d2g or _numeric_derivative(dg)
    vmin, vmax = float(grid[0]), float(grid[-1])
    span = vmax - vmin

    lo_w, hi_w = vmin, vmax
    for k in range(PROX_SETTINGS["max_expand"]):
        ok_lo = float(lo_w - tau * dg(np.array([lo_w]))[0]) <= vmin
        ok_hi = float(hi_w - tau * dg(np.array([hi_w]))[0]) >= vmax
        if ok_lo and ok_hi:
            break
        if not ok_lo:
            lo_w = vmin - span * 2.0 ** k
        if not ok_hi:
            hi_w = vmax + span * 2.0 ** k
    else:
        raise NonCoercive("包络反演的内层最大化发散", x=vmin if not ok_lo else vmax)

    w_dense = np.linspace(lo_w, hi_w, 8 * grid.size + 1)
    x_dense = w_dense - tau * dg(w_dense)
    drop = np.diff(x_dense) < -1e-9 * (1.0 + np.abs(x_dense[1:]))
    if drop.any():
        i = int(np.argmax(drop))
        raise NonCoercive("包络反演的内层目标非凹 (g″ ≥ 1/τ)", x=float(x_dense[i]))
    x_mono = np.maximum.accumulate(x_dense)
    w = np.interp(grid, x_mono, w_dense)

    for _ in range(8):
        resid = w - tau * dg(w) - grid
        slope = 1.0 - tau * d2g(w)
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = np.where(slope > 1e-10, w - resid / slope, w)
        cand = np.clip(cand, lo_w, hi_w)
        better = np.abs(cand - tau * dg(cand) - grid) < np.abs(resid)
        w = np.where(better, cand, w)

    values = g(w) - (grid - w) ** 2 / (2.0 * tau)
    derivs = (w - grid) / tau
    return TabulatedLoss(grid, values, derivs, metadata=metadata, name=name)
