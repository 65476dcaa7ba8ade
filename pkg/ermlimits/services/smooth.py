"""高斯卷积密度 V_a = aG + Z、W_s = sG + Sf(S) 及其 Fisher 信息"""
import logging
import math
import threading
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, Hashable, Optional, Tuple, Union

import numpy as np
from scipy import special
from scipy.stats import norm

from ..errors import DomainError, QuadratureFailure
from ..utils.quadrature import (
    composite_gauss_legendre,
    refined_edges,
    standard_normal_kernel_nodes,
)
from .dists import BinaryLink, EffectiveLabelDensity, NoiseKind, NoiseModel, effective_label_density

logger = logging.getLogger(__name__)

Base = Union[NoiseModel, EffectiveLabelDensity]

FISHER_SETTINGS = {
    "panels": 160,         # 均匀段数
    "p_floor": 1e-300,     # 密度下限
    "block": 256,          # 卷积分块行数
    "z_panels": 240,       # 基密度节点段数
    "max_rel_error": 1e-6, # 加倍检查的目标相对精度
    "max_panels": 2560,    # 加倍上限
}

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _weighted_log_sum(log_terms: np.ndarray, coef: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    按行计算 log Σ e^{ℓ} 与以 e^{ℓ} 为权的 coef 均值

    整行为 −inf 时返回 (−inf, 0)
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = special.logsumexp(log_terms, axis=1)
        score = np.sum(coef * np.exp(log_terms - logp[:, None]), axis=1)
    ok = np.isfinite(logp)
    return np.where(ok, logp, -np.inf), np.where(ok, score, 0.0)


def _generic_convolution(base: Base, v: np.ndarray, a: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    没有闭式时的数值卷积，返回 (log p, score)

    p′ 通过对高斯核求导得到，不对基密度差分
    """
    flat = np.atleast_1d(np.asarray(v, dtype=float)).ravel()
    logp = np.empty_like(flat)
    score = np.empty_like(flat)
    block = FISHER_SETTINGS["block"]

    if isinstance(base, EffectiveLabelDensity):
        # φ_a(w−x)φ(x) = φ_ω(w)·φ_τ(x − w/ω²)，对 x 的期望只剩有界函数 q
        t, wt = standard_normal_kernel_nodes()
        omega2 = 1.0 + a * a
        omega = math.sqrt(omega2)
        tau = a / omega
        log_w = np.log(wt) - 0.5 * t * t - _LOG_SQRT_2PI
        for i in range(0, flat.size, block):
            w = flat[i:i + block, None]
            x = w / omega2 + tau * t[None, :]
            with np.errstate(divide="ignore"):
                log_q = np.log(1.0 + base.link.fhat(x) - base.link.fhat(-x))
            coef = -w / omega2 + t[None, :] / (a * omega)
            lp, sc = _weighted_log_sum(log_w[None, :] + log_q, coef)
            logp[i:i + block] = lp + norm.logpdf(w[:, 0], scale=omega)
            score[i:i + block] = sc
    elif a <= base.scale:
        # 核窄：对标准正态变量 t 积分 p_Z(v − a t)
        t, wt = standard_normal_kernel_nodes()
        log_w = np.log(wt) - 0.5 * t * t - _LOG_SQRT_2PI
        coef = (-t / a)[None, :]
        for i in range(0, flat.size, block):
            w = flat[i:i + block, None]
            lp, sc = _weighted_log_sum(log_w[None, :] + base.logpdf(w - a * t[None, :]), coef)
            logp[i:i + block] = lp
            score[i:i + block] = sc
    else:
        # 核宽：对基密度的节点 z 积分
        tail = base.tail_bound()
        z, wz = composite_gauss_legendre(
            refined_edges(-tail, tail, FISHER_SETTINGS["z_panels"], base.feature_points(), base.scale / 20.0)
        )
        log_w = np.log(wz) + base.logpdf(z)
        for i in range(0, flat.size, block):
            w = flat[i:i + block, None]
            diff = w - z[None, :]
            log_k = -0.5 * (diff / a) ** 2 - math.log(a) - _LOG_SQRT_2PI
            lp, sc = _weighted_log_sum(log_w[None, :] + log_k, -diff / (a * a))
            logp[i:i + block] = lp
            score[i:i + block] = sc

    shape = np.shape(v)
    return logp.reshape(shape), score.reshape(shape)


@dataclass(frozen=True, eq=False)
class SmoothDensity:
    """基密度与 N(0, a²) 的卷积"""
    base: Base
    a: float

    @property
    def name(self) -> str:
        return f"{self.base.name}*N(0,{self.a:g}²)"

    @cached_property
    def fingerprint(self) -> str:
        return f"{self.base.fingerprint}|a={self.a:.12g}"

    def log_and_score(self, v) -> Tuple[np.ndarray, np.ndarray]:
        analytic = self.base.convolved(v, self.a)
        if analytic is not None:
            return analytic
        return _generic_convolution(self.base, v, self.a)

    def logpdf(self, v) -> np.ndarray:
        return self.log_and_score(v)[0]

    def pdf(self, v) -> np.ndarray:
        return np.exp(self.logpdf(v))

    def score(self, v) -> np.ndarray:
        """ξ = p′/p"""
        return self.log_and_score(v)[1]

    def dpdf(self, v) -> np.ndarray:
        logp, score = self.log_and_score(v)
        return np.exp(logp) * score

    @property
    def mean(self) -> float:
        return self.base.mean

    @property
    def second_moment(self) -> float:
        return self.base.second_moment + self.a ** 2

    @property
    def variance(self) -> float:
        return self.base.variance + self.a ** 2

    def support(self, eps: float = 1e-12) -> Tuple[float, float]:
        """截断区间：尾部质量 < eps 且至少 10 个标准差"""
        gauss = float(norm.isf(eps / 4.0))
        half = max(self.base.tail_bound(eps) + gauss * self.a, 10.0 * math.sqrt(self.second_moment))
        return -half, half

    def feature_points(self) -> Tuple[float, ...]:
        return self.base.feature_points()

    @property
    def refine_scale(self) -> float:
        return max(self.a, self.base.feature_scale)

    def affine(self, shift: float = 0.0, scale: float = 1.0) -> "AffineDensity":
        return AffineDensity(self, float(shift), float(scale))


@dataclass(frozen=True, eq=False)
class AffineDensity:
    """c + kX 的密度，用于平移与缩放检查"""
    inner: SmoothDensity
    shift: float = 0.0
    scale: float = 1.0

    def log_and_score(self, v) -> Tuple[np.ndarray, np.ndarray]:
        u = (np.asarray(v, dtype=float) - self.shift) / self.scale
        logp, score = self.inner.log_and_score(u)
        return logp - math.log(self.scale), score / self.scale

    def pdf(self, v) -> np.ndarray:
        return np.exp(self.log_and_score(v)[0])

    @property
    def second_moment(self) -> float:
        k, c = self.scale, self.shift
        return k * k * self.inner.second_moment + 2.0 * k * c * self.inner.mean + c * c

    def support(self, eps: float = 1e-12) -> Tuple[float, float]:
        lo, hi = self.inner.support(eps)
        return self.shift + self.scale * lo, self.shift + self.scale * hi

    def feature_points(self) -> Tuple[float, ...]:
        return tuple(self.shift + self.scale * c for c in self.inner.feature_points())

    @property
    def refine_scale(self) -> float:
        return self.scale * self.inner.refine_scale


def convolve(base: Base, a: float) -> SmoothDensity:
    """构造 V_a = aG + Z (或 W_s = sG + Sf(S))"""
    if not a > 0:
        raise DomainError(f"高斯分量标准差必须为正: {a}")
    return SmoothDensity(base, float(a))


def evaluation_table(d, panels: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """截断区间上的自适应求积表 (x, 权重, p, p′)，特征点附近加密"""
    panels = FISHER_SETTINGS["panels"] if panels is None else panels
    lo, hi = d.support()
    x, w = composite_gauss_legendre(refined_edges(lo, hi, panels, d.feature_points(), d.refine_scale))
    logp, score = d.log_and_score(x)
    p = np.exp(logp)
    return x, w, p, p * score


def _fisher_once(d, panels: int) -> float:
    x, w, p, dp = evaluation_table(d, panels)
    keep = p > FISHER_SETTINGS["p_floor"]
    integral = float(np.sum(w[keep] * dp[keep] * (dp[keep] / p[keep])))
    # 截断点以外按指数尾估计: ∫_L^∞ p′²/p ≈ |p′(L)|
    ends_logp, ends_score = d.log_and_score(np.array(d.support()))
    remainder = float(np.sum(np.exp(ends_logp) * np.abs(ends_score)))
    return integral + remainder


def fisher_information(d, with_error: bool = False):
    """
    I(X) = ∫ p′²/p

    Args:
        d: SmoothDensity 或 AffineDensity
        with_error: 逐次加倍段数直到相对变化不超过 max_rel_error

    Returns:
        Fisher 信息，或 (Fisher 信息, 达到的相对精度)
    """
    panels = FISHER_SETTINGS["panels"]
    value = _fisher_once(d, panels)
    if not np.isfinite(value) or value <= 0:
        raise QuadratureFailure(f"Fisher 信息积分失败: {getattr(d, 'name', d)} -> {value}")
    if not with_error:
        return value
    target = FISHER_SETTINGS["max_rel_error"]
    while True:
        panels *= 2
        fine = _fisher_once(d, panels)
        err = abs(fine - value) / fine
        if err <= target:
            return fine, err
        if panels >= FISHER_SETTINGS["max_panels"]:
            raise QuadratureFailure(f"Fisher 信息未达到精度: {panels} 段时相对变化 {err:.2e}")
        logger.debug("Fisher 信息 %d 段相对变化 %.2e，继续加倍", panels, err)
        value = fine


class FisherCache:
    """(分布指纹, a) → I 的线程安全缓存"""

    def __init__(self):
        self._store: Dict[Hashable, float] = {}
        self._lock = threading.Lock()

    def get_or_compute(self, key: Hashable, compute: Callable[[], float]) -> float:
        with self._lock:
            if key in self._store:
                return self._store[key]
        value = compute()
        with self._lock:
            self._store[key] = value
        return value

    def clear(self) -> None:
        with self._lock:
            self._store.clear()

    def __len__(self) -> int:
        return len(self._store)


FISHER_CACHE = FisherCache()


def memo_key(fingerprint: str, a: float) -> Tuple[str, float]:
    """a 取 12 位有效数字"""
    return fingerprint, float(f"{a:.12g}")


def fisher_of_Va(noise: NoiseModel, a: float) -> float:
    """I(aG + Z)"""
    if not a > 0:
        raise DomainError(f"a 必须为正: {a}")
    if noise.kind == NoiseKind.GAUSSIAN:
        return 1.0 / (noise.param + a * a)
    return FISHER_CACHE.get_or_compute(
        memo_key(noise.fingerprint, a), lambda: fisher_information(convolve(noise, a))
    )


def fisher_of_Ws(link: BinaryLink, s: float) -> float:
    """I(sG + Sf(S))"""
    if not s > 0:
        raise DomainError(f"s 必须为正: {s}")
    density = effective_label_density(link)
    return FISHER_CACHE.get_or_compute(
        memo_key(density.fingerprint, s), lambda: fisher_information(convolve(density, s))
    )
