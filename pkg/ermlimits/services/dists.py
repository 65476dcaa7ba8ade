"""噪声分布、二元链接函数与 S·f(S) 的有效标签密度"""
import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
from scipy import integrate, special
from scipy.interpolate import PchipInterpolator
from scipy.stats import norm

from ..errors import (
    AssumptionViolated,
    InvalidDistribution,
    QuadratureFailure,
    UnsupportedSampling,
)
from ..utils.quadrature import (
    composite_gauss_legendre,
    gauss_hermite_normal,
    gauss_laguerre,
    refined_edges,
)

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.Generator, np.random.SeedSequence, None]

# 截断尾部质量
TAIL_MASS = 1e-12
NU_F_GATE = 1e-10
LOG_2PI_HALF = 0.5 * math.log(2.0 * math.pi)


class NoiseKind(str, Enum):
    """噪声类型"""
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    CUSTOM = "custom"


class LinkKind(str, Enum):
    """链接函数类型"""
    SIGN = "sign"
    LOGISTIC = "logistic"
    PROBIT = "probit"
    CUSTOM = "custom"


def as_generator(seed: SeedLike) -> np.random.Generator:
    """把种子统一成 Generator"""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _segment_mass(h: np.ndarray, l0: np.ndarray, l1: np.ndarray) -> np.ndarray:
    """log 线性插值段上的积分 ∫ exp(线性)"""
    d = l1 - l0
    small = np.abs(d) < 1e-10
    ratio = np.where(small, 1.0 + 0.5 * d, np.expm1(d) / np.where(small, 1.0, d))
    return h * np.exp(l0) * ratio


def _fingerprint(*parts) -> str:
    digest = hashlib.sha1()
    for part in parts:
        if isinstance(part, np.ndarray):
            digest.update(np.ascontiguousarray(part, dtype=float).tobytes())
        else:
            digest.update(repr(part).encode())
    return digest.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """
    零均值噪声分布 Z

    param 含义: GAUSSIAN 为方差 ζ²，LAPLACE 为尺度 b，CUSTOM 不使用
    """
    kind: NoiseKind
    param: float = 1.0
    grid_x: Optional[np.ndarray] = field(default=None, repr=False)
    grid_logp: Optional[np.ndarray] = field(default=None, repr=False)
    tail_slopes: Tuple[float, float] = (0.0, 0.0)
    label: str = ""
    allow_sampling: bool = True

    # ---- 构造 ----
    @classmethod
    def gaussian(cls, variance: float = 1.0) -> "NoiseModel":
        if not variance > 0:
            raise InvalidDistribution(f"高斯方差必须为正: {variance}")
        return cls(NoiseKind.GAUSSIAN, float(variance))

    @classmethod
    def laplace(cls, scale: float = 1.0) -> "NoiseModel":
        if not scale > 0:
            raise InvalidDistribution(f"Laplace 尺度必须为正: {scale}")
        return cls(NoiseKind.LAPLACE, float(scale))

    @classmethod
    def from_grid(
        cls,
        x,
        p,
        label: str = "custom",
        mean_tol: float = 1e-6,
        allow_sampling: bool = True,
    ) -> "NoiseModel":
        """
        由网格 (x, p(x)) 构造自定义密度

        网格内对 log p 线性插值，两侧用指数尾外推，斜率由最外侧一成网格点拟合
        """
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        if x.ndim != 1 or x.shape != p.shape or x.size < 8:
            raise InvalidDistribution("自定义密度至少需要 8 个网格点")
        if np.any(np.diff(x) <= 0):
            raise InvalidDistribution("网格 x 必须严格递增")
        if np.any(~np.isfinite(p)) or np.any(p <= 0):
            raise InvalidDistribution("自定义密度在网格上必须为正")
        logp = np.log(p)
        k = max(3, x.size // 10)
        left = np.polyfit(x[:k], logp[:k], 1)[0]
        right = np.polyfit(x[-k:], logp[-k:], 1)[0]
        if not (left > 0 and right < 0):
            raise InvalidDistribution("尾部不衰减，无法做指数外推")
        mass = (
            np.exp(logp[0]) / left
            + np.sum(_segment_mass(np.diff(x), logp[:-1], logp[1:]))
            + np.exp(logp[-1]) / (-right)
        )
        logp = logp - math.log(mass)
        model = cls(
            NoiseKind.CUSTOM,
            1.0,
            grid_x=x,
            grid_logp=logp,
            tail_slopes=(float(left), float(right)),
            label=label,
            allow_sampling=allow_sampling,
        )
        model.validate(mean_tol=mean_tol)
        return model

    @classmethod
    def from_csv(cls, path: Union[str, Path], **kwargs) -> "NoiseModel":
        """读取表头为 x,p 的 CSV"""
        path = Path(path)
        if not path.exists():
            raise InvalidDistribution(f"找不到密度文件: {path}")
        xs, ps = [], []
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or not {"x", "p"} <= set(reader.fieldnames):
                raise InvalidDistribution(f"{path} 需要表头 x,p")
            for row in reader:
                xs.append(float(row["x"]))
                ps.append(float(row["p"]))
        return cls.from_grid(xs, ps, label=path.stem, **kwargs)

    # ---- 基本量 ----
    @property
    def name(self) -> str:
        if self.kind == NoiseKind.CUSTOM:
            return f"custom:{self.label}"
        return f"{self.kind.value}:{self.param:g}"

    @cached_property
    def fingerprint(self) -> str:
        return "noise:" + _fingerprint(self.kind.value, self.param, self.grid_x, self.grid_logp)

    @cached_property
    def _moments(self) -> Tuple[float, float, float]:
        """数值积分得到 (质量, 均值, 二阶矩)"""
        nodes, weights = self._integration_nodes()
        p = self.pdf(nodes)
        return (
            float(np.sum(weights * p)),
            float(np.sum(weights * nodes * p)),
            float(np.sum(weights * nodes ** 2 * p)),
        )

    @property
    def second_moment(self) -> float:
        if self.kind == NoiseKind.GAUSSIAN:
            return self.param
        if self.kind == NoiseKind.LAPLACE:
            return 2.0 * self.param ** 2
        return self._moments[2]

    @property
    def mean(self) -> float:
        return 0.0 if self.kind != NoiseKind.CUSTOM else self._moments[1]

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean ** 2

    @property
    def scale(self) -> float:
        return math.sqrt(self.variance)

    @property
    def closed_form_fisher(self) -> Optional[float]:
        if self.kind == NoiseKind.GAUSSIAN:
            return 1.0 / self.param
        if self.kind == NoiseKind.LAPLACE:
            return 1.0 / self.param ** 2
        return None

    def fisher(self) -> float:
        """I(Z)"""
        closed = self.closed_form_fisher
        if closed is not None:
            return closed
        # log p 分段线性: 每段贡献 k·(p1 − p0)，尾部贡献 |k|·p_end
        x, lp = self.grid_x, self.grid_logp
        k = np.diff(lp) / np.diff(x)
        p = np.exp(lp)
        left, right = self.tail_slopes
        return float(np.sum(k * np.diff(p)) + left * p[0] + (-right) * p[-1])

    def validate(self, mean_tol: float = 1e-8) -> None:
        """检查归一化和零均值"""
        mass, mean, m2 = self._moments
        if abs(mass - 1.0) > 1e-6:
            raise InvalidDistribution(f"{self.name} 积分为 {mass:.8f}，不是 1")
        if abs(mean) > mean_tol * max(1.0, math.sqrt(m2)):
            raise InvalidDistribution(f"{self.name} 均值 {mean:.3e} 不为零")
        if not m2 > 0:
            raise InvalidDistribution(f"{self.name} 二阶矩必须为正")

    # ---- 密度 ----
    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == NoiseKind.GAUSSIAN:
            return norm.logpdf(x, scale=math.sqrt(self.param))
        if self.kind == NoiseKind.LAPLACE:
            b = self.param
            return -np.abs(x) / b - math.log(2.0 * b)
        gx, gl = self.grid_x, self.grid_logp
        left, right = self.tail_slopes
        inside = np.interp(x, gx, gl)
        out = np.where(x < gx[0], gl[0] + left * (x - gx[0]), inside)
        return np.where(x > gx[-1], gl[-1] + right * (x - gx[-1]), out)

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def tail_bound(self, eps: float = TAIL_MASS) -> float:
        """P(|Z| > t) < eps 的 t，且至少 10 个标准差"""
        if self.kind == NoiseKind.GAUSSIAN:
            t = math.sqrt(self.param) * norm.isf(eps / 2.0)
        elif self.kind == NoiseKind.LAPLACE:
            t = self.param * math.log(1.0 / eps)
        else:
            left, right = self.tail_slopes
            p0, pn = math.exp(self.grid_logp[0]), math.exp(self.grid_logp[-1])
            lo = self.grid_x[0] + min(0.0, math.log(eps * left / p0) / left)
            hi = self.grid_x[-1] + max(0.0, math.log(eps * (-right) / pn) / right)
            t = max(-lo, hi)
        return max(t, 10.0 * self.scale)

    def feature_points(self) -> Tuple[float, ...]:
        return (0.0,) if self.kind == NoiseKind.LAPLACE else ()

    @property
    def feature_scale(self) -> float:
        # Laplace 在 0 处有尖点
        return 0.0 if self.kind == NoiseKind.LAPLACE else self.scale

    def convolved(self, v, a: float) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """
        aG + Z 的解析卷积

        Returns:
            (log p, score)；没有闭式时返回 None
        """
        v = np.asarray(v, dtype=float)
        if self.kind == NoiseKind.GAUSSIAN:
            var = self.param + a * a
            return norm.logpdf(v, scale=math.sqrt(var)), -v / var
        if self.kind == NoiseKind.LAPLACE:
            b = self.param
            c = a * a / (2.0 * b * b)
            log_e1 = c - v / b + special.log_ndtr(v / a - a / b)
            log_e2 = c + v / b + special.log_ndtr(-v / a - a / b)
            logp = np.logaddexp(log_e1, log_e2) - math.log(2.0 * b)
            score = np.tanh(0.5 * (log_e2 - log_e1)) / b
            return logp, score
        return None

    # ---- 期望与采样 ----
    def _integration_nodes(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.kind == NoiseKind.CUSTOM:
            left, right = self.tail_slopes
            p0, pn = math.exp(self.grid_logp[0]), math.exp(self.grid_logp[-1])
            lo = self.grid_x[0] + min(0.0, math.log(TAIL_MASS * left / p0) / left)
            hi = self.grid_x[-1] + max(0.0, math.log(TAIL_MASS * (-right) / pn) / right)
            edges = np.unique(np.concatenate([np.linspace(lo, hi, 241), self.grid_x]))
            return composite_gauss_legendre(edges, order=4)
        t = self.tail_bound()
        return composite_gauss_legendre(refined_edges(-t, t, 400, self.feature_points(), 1e-3))

    def quadrature(self) -> Tuple[np.ndarray, np.ndarray]:
        """E[h(Z)] ≈ Σ w·h(z) 的节点与权重"""
        if self.kind == NoiseKind.GAUSSIAN:
            g, w = gauss_hermite_normal()
            return g * math.sqrt(self.param), w
        if self.kind == NoiseKind.LAPLACE:
            t, w = gauss_laguerre()
            b = self.param
            return np.concatenate([-b * t[::-1], b * t]), np.concatenate([w[::-1], w]) * 0.5
        edges = refined_edges(-self.tail_bound(), self.tail_bound(), 120)
        z, w = composite_gauss_legendre(edges)
        w = w * self.pdf(z)
        return z, w / w.sum()

    @cached_property
    def _cdf_table(self) -> Tuple[np.ndarray, float]:
        seg = _segment_mass(np.diff(self.grid_x), self.grid_logp[:-1], self.grid_logp[1:])
        left_mass = math.exp(self.grid_logp[0]) / self.tail_slopes[0]
        return left_mass + np.concatenate([[0.0], np.cumsum(seg)]), left_mass

    def sample(self, n: int, seed: SeedLike = None) -> np.ndarray:
        """独立同分布采样，给定种子时确定"""
        if n < 1:
            raise ValueError("n 必须 ≥ 1")
        rng = as_generator(seed)
        if self.kind == NoiseKind.GAUSSIAN:
            return rng.normal(0.0, math.sqrt(self.param), size=n)
        if self.kind == NoiseKind.LAPLACE:
            return rng.laplace(0.0, self.param, size=n)
        if not self.allow_sampling:
            raise UnsupportedSampling(f"{self.name} 没有分位数表，不能采样")
        return self._sample_inverse_cdf(rng.uniform(size=n))

    def _sample_inverse_cdf(self, u: np.ndarray) -> np.ndarray:
        x, lp = self.grid_x, self.grid_logp
        left, right = self.tail_slopes
        cdf, left_mass = self._cdf_table
        out = np.empty_like(u)
        lo = u < left_mass
        hi = u >= cdf[-1]
        mid = ~(lo | hi)
        out[lo] = x[0] + np.log(u[lo] * left / math.exp(lp[0])) / left
        out[hi] = x[-1] + np.log((1.0 - u[hi]) * (-right) / math.exp(lp[-1])) / right
        idx = np.clip(np.searchsorted(cdf, u[mid], side="right") - 1, 0, x.size - 2)
        slope = (lp[idx + 1] - lp[idx]) / (x[idx + 1] - x[idx])
        excess = (u[mid] - cdf[idx]) * np.exp(-lp[idx])
        flat = np.abs(slope) < 1e-12
        step = np.where(flat, excess, np.log1p(excess * slope) / np.where(flat, 1.0, slope))
        out[mid] = x[idx] + step
        return out

    def scaled(self, c: float) -> "NoiseModel":
        """cZ 的分布 (c > 0)"""
        if not c > 0:
            raise InvalidDistribution("缩放系数必须为正")
        if self.kind == NoiseKind.GAUSSIAN:
            return NoiseModel.gaussian(self.param * c * c)
        if self.kind == NoiseKind.LAPLACE:
            return NoiseModel.laplace(self.param * c)
        left, right = self.tail_slopes
        return NoiseModel(
            NoiseKind.CUSTOM,
            1.0,
            grid_x=self.grid_x * c,
            grid_logp=self.grid_logp - math.log(c),
            tail_slopes=(left / c, right / c),
            label=f"{self.label}*{c:g}",
            allow_sampling=self.allow_sampling,
        )


@dataclass(frozen=True, eq=False)
class BinaryLink:
    """
    ±1 链接函数，由 f̂(x) = P(f(x) = +1) 描述

    strength 即 r = ‖x₀‖，被吸收进链接函数
    """
    kind: LinkKind
    strength: float = 1.0
    fhat_fn: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    dfhat_fn: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    label: str = ""

    @classmethod
    def sign(cls) -> "BinaryLink":
        return cls(LinkKind.SIGN)

    @classmethod
    def logistic(cls, r: float = 1.0) -> "BinaryLink":
        if not r > 0:
            raise InvalidDistribution(f"logistic 强度必须为正: {r}")
        return cls(LinkKind.LOGISTIC, float(r))

    @classmethod
    def probit(cls, r: float = 1.0) -> "BinaryLink":
        if not r > 0:
            raise InvalidDistribution(f"probit 强度必须为正: {r}")
        return cls(LinkKind.PROBIT, float(r))

    @classmethod
    def custom(cls, fhat: Callable, dfhat: Optional[Callable] = None, label: str = "custom") -> "BinaryLink":
        return cls(LinkKind.CUSTOM, 1.0, fhat_fn=fhat, dfhat_fn=dfhat, label=label)

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "BinaryLink":
        """读取表头为 x,fhat 的 CSV，用 PCHIP 插值"""
        path = Path(path)
        if not path.exists():
            raise InvalidDistribution(f"找不到链接文件: {path}")
        xs, fs = [], []
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or not {"x", "fhat"} <= set(reader.fieldnames):
                raise InvalidDistribution(f"{path} 需要表头 x,fhat")
            for row in reader:
                xs.append(float(row["x"]))
                fs.append(float(row["fhat"]))
        x, fv = np.asarray(xs), np.asarray(fs)
        if x.size < 2 or np.any(np.diff(x) <= 0):
            raise InvalidDistribution("链接网格 x 必须严格递增")
        if np.any(fv < 0) or np.any(fv > 1):
            raise InvalidDistribution("f̂ 必须位于 [0, 1]")
        interp = PchipInterpolator(x, fv, extrapolate=False)
        deriv = interp.derivative()
        lo_val, hi_val = float(fv[0]), float(fv[-1])

        def fhat(t):
            t = np.asarray(t, dtype=float)
            val = interp(t)
            return np.where(t < x[0], lo_val, np.where(t > x[-1], hi_val, val))

        def dfhat(t):
            t = np.asarray(t, dtype=float)
            return np.nan_to_num(deriv(t), nan=0.0)

        return cls.custom(fhat, dfhat, label=path.stem)

    @property
    def name(self) -> str:
        if self.kind == LinkKind.SIGN:
            return "sign"
        if self.kind == LinkKind.CUSTOM:
            return f"custom:{self.label}"
        return f"{self.kind.value}:{self.strength:g}"

    @cached_property
    def fingerprint(self) -> str:
        if self.kind == LinkKind.CUSTOM:
            grid = np.linspace(-8.0, 8.0, 257)
            return "link:" + _fingerprint(self.label, self.fhat(grid))
        return "link:" + _fingerprint(self.kind.value, self.strength)

    @property
    def is_smooth(self) -> bool:
        return self.kind != LinkKind.SIGN

    @property
    def feature_scale(self) -> float:
        """f̂ 过渡区宽度"""
        if self.kind in (LinkKind.LOGISTIC, LinkKind.PROBIT):
            return 1.0 / self.strength
        if self.kind == LinkKind.SIGN:
            return 0.0
        return 0.05

    def fhat(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == LinkKind.SIGN:
            return (x > 0).astype(float)
        if self.kind == LinkKind.LOGISTIC:
            return special.expit(self.strength * x)
        if self.kind == LinkKind.PROBIT:
            return special.ndtr(self.strength * x)
        return np.clip(np.broadcast_to(self.fhat_fn(x), x.shape).astype(float), 0.0, 1.0)

    def dfhat(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r = self.strength
        if self.kind == LinkKind.SIGN:
            raise AssumptionViolated("sign 链接在 0 处不可导")
        if self.kind == LinkKind.LOGISTIC:
            return r * special.expit(r * x) * special.expit(-r * x)
        if self.kind == LinkKind.PROBIT:
            return r * norm.pdf(r * x)
        if self.dfhat_fn is not None:
            return np.broadcast_to(self.dfhat_fn(x), x.shape).astype(float)
        h = 1e-5
        return (self.fhat(x + h) - self.fhat(x - h)) / (2.0 * h)

    def sample_labels(self, inner_products, seed: SeedLike = None) -> np.ndarray:
        """y_i = +1 的概率为 f̂(⟨a_i, x₀⟩)"""
        s = np.asarray(inner_products, dtype=float)
        rng = as_generator(seed)
        u = rng.uniform(size=s.shape)
        return np.where(u < self.fhat(s), 1.0, -1.0)


_NU_CACHE: Dict[str, float] = {}


def nu_f(link: BinaryLink) -> float:
    """ν_f = E[S f(S)] = 2∫_0^∞ s φ(s) (f̂(s) − f̂(−s)) ds"""
    cached = _NU_CACHE.get(link.fingerprint)
    if cached is not None:
        return cached

    def integrand(s):
        return 2.0 * s * norm.pdf(s) * float(link.fhat(s) - link.fhat(-s))

    points = None
    scale = link.feature_scale
    if scale > 0:
        points = [scale * k for k in (0.5, 1.0, 2.0, 4.0) if scale * k < 12.0]
    value, abserr = integrate.quad(integrand, 0.0, 12.0, points=points, limit=400, epsabs=1e-13, epsrel=1e-11)
    if not np.isfinite(value) or abserr > 1e-9:
        raise QuadratureFailure(f"ν_f 积分未收敛 ({link.name}, 误差 {abserr:.2e})")
    _NU_CACHE[link.fingerprint] = value
    return value


def check_assumption4(link: BinaryLink) -> float:
    """检查 ν_f ≠ 0，返回 ν_f"""
    nu = nu_f(link)
    if abs(nu) <= NU_F_GATE:
        raise AssumptionViolated(f"链接 {link.name} 的 ν_f = {nu:.3e}，不满足 ν_f ≠ 0")
    return nu


def _skew_normal(w: np.ndarray, omega: float, shape: float) -> Tuple[np.ndarray, np.ndarray]:
    """偏正态密度 (2/ω)φ(w/ω)Φ(shape·w/ω) 的 (log p, score)"""
    z = w / omega
    t = shape * z
    log_cdf = special.log_ndtr(t)
    logp = math.log(2.0 / omega) - 0.5 * z * z - LOG_2PI_HALF + log_cdf
    mills = np.exp(-0.5 * t * t - LOG_2PI_HALF - log_cdf)
    score = -z / omega + (shape / omega) * mills
    return logp, score


@dataclass(frozen=True, eq=False)
class EffectiveLabelDensity:
    """S·f(S) 的密度 p(x) = (1 + f̂(x) − f̂(−x))·φ(x)"""
    link: BinaryLink

    @property
    def name(self) -> str:
        return f"Sf(S)[{self.link.name}]"

    @cached_property
    def fingerprint(self) -> str:
        return "sfs:" + self.link.fingerprint

    def _q(self, x: np.ndarray) -> np.ndarray:
        return 1.0 + self.link.fhat(x) - self.link.fhat(-x)

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self._q(x) * norm.pdf(x)

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return np.log(self._q(x)) + norm.logpdf(x)

    def dpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        dq = self.link.dfhat(x) + self.link.dfhat(-x)
        return dq * norm.pdf(x) - x * self.pdf(x)

    @property
    def mean(self) -> float:
        return nu_f(self.link)

    @property
    def second_moment(self) -> float:
        return 1.0

    @property
    def variance(self) -> float:
        return 1.0 - nu_f(self.link) ** 2

    @property
    def scale(self) -> float:
        return math.sqrt(max(self.variance, 1e-12))

    def tail_bound(self, eps: float = TAIL_MASS) -> float:
        # p ≤ 2φ
        return max(float(norm.isf(eps / 4.0)), 10.0)

    def feature_points(self) -> Tuple[float, ...]:
        return (0.0,)

    @property
    def feature_scale(self) -> float:
        return self.link.feature_scale

    def fisher(self) -> float:
        """I(Sf(S))；密度不可导或有零点时为 +∞"""
        if not self.link.is_smooth:
            return math.inf
        t = self.tail_bound()
        x, w = composite_gauss_legendre(
            refined_edges(-t, t, 400, (0.0,), max(self.feature_scale, 1e-3))
        )
        p = self.pdf(x)
        if np.any(p[np.abs(x) < 3.0] <= 1e-300):
            return math.inf
        dp = self.dpdf(x)
        keep = p > 1e-300
        return float(np.sum(w[keep] * dp[keep] ** 2 / p[keep]))

    def convolved(self, w, s: float) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """sG + Sf(S)；sign 与 probit 链接是偏正态，有闭式"""
        w = np.asarray(w, dtype=float)
        omega = math.sqrt(1.0 + s * s)
        if self.link.kind == LinkKind.SIGN:
            return _skew_normal(w, omega, 1.0 / s)
        if self.link.kind == LinkKind.PROBIT:
            r = self.link.strength
            return _skew_normal(w, omega, r / math.sqrt(1.0 + s * s * (1.0 + r * r)))
        return None

    def quadrature(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        E[h(Sf(S))] 的节点与权重

        在 s > 0 上积分，两个分支 y = ±s 的权重分别为
        φ(s)(1 + f̂(s) − f̂(−s)) 与 φ(s)(1 − f̂(s) + f̂(−s))
        """
        scale = self.feature_scale
        extra = [scale * k for k in (0.25, 0.5, 1.0, 2.0, 4.0)] if scale > 0 else []
        edges = np.unique(np.concatenate([np.linspace(0.0, 10.0, 41), [e for e in extra if e < 10.0]]))
        s, w = composite_gauss_legendre(edges)
        base = w * norm.pdf(s)
        diff = self.link.fhat(s) - self.link.fhat(-s)
        y = np.concatenate([s, -s])
        weights = np.concatenate([base * (1.0 + diff), base * (1.0 - diff)])
        keep = weights > 0
        return y[keep], weights[keep]


def effective_label_density(link: BinaryLink) -> EffectiveLabelDensity:
    return EffectiveLabelDensity(link)


def sample_noise(model: NoiseModel, n: int, seed: SeedLike = None) -> np.ndarray:
    return model.sample(n, seed)


def sample_labels(link: BinaryLink, inner_products, seed: SeedLike = None) -> np.ndarray:
    return link.sample_labels(inner_products, seed)


def parse_noise_spec(spec: str) -> NoiseModel:
    """解析 gaussian:ζ² / laplace:b / custom:path.csv"""
    kind, _, arg = spec.partition(":")
    kind = kind.strip().lower()
    try:
        if kind == NoiseKind.GAUSSIAN.value:
            return NoiseModel.gaussian(float(arg) if arg else 1.0)
        if kind == NoiseKind.LAPLACE.value:
            return NoiseModel.laplace(float(arg) if arg else 1.0)
    except ValueError as exc:
        raise InvalidDistribution(f"无法解析噪声参数: {spec}") from exc
    if kind == NoiseKind.CUSTOM.value and arg:
        return NoiseModel.from_csv(arg)
    raise InvalidDistribution(f"未知噪声类型: {spec}")


def parse_link_spec(spec: str) -> BinaryLink:
    """解析 sign / logistic:r / probit:r / custom:path.csv"""
    kind, _, arg = spec.partition(":")
    kind = kind.strip().lower()
    try:
        if kind == LinkKind.SIGN.value:
            return BinaryLink.sign()
        if kind == LinkKind.LOGISTIC.value:
            return BinaryLink.logistic(float(arg) if arg else 1.0)
        if kind == LinkKind.PROBIT.value:
            return BinaryLink.probit(float(arg) if arg else 1.0)
    except ValueError as exc:
        raise InvalidDistribution(f"无法解析链接参数: {spec}") from exc
    if kind == LinkKind.CUSTOM.value and arg:
        return BinaryLink.from_csv(arg)
    raise InvalidDistribution(f"未知链接类型: {spec}")
