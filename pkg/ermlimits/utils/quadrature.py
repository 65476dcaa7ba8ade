"""求积节点工具"""
from functools import lru_cache
from typing import Iterable, Tuple

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.laguerre import laggauss
from numpy.polynomial.legendre import leggauss

# 默认求积阶数
QUADRATURE_SETTINGS = {
    "hermite_order": 48,       # 标准正态期望
    "laguerre_order": 48,      # Laplace 半轴
    "legendre_order": 8,       # 复合 Gauss-Legendre 每段节点数
    "kernel_half_width": 9.0,  # 标准正态核截断 (φ(9) ≈ 1e-18)
    "kernel_panels": 180,
    "density_panels": 160,
}


@lru_cache(maxsize=32)
def _hermite(order: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = hermegauss(order)
    return x, w / np.sqrt(2.0 * np.pi)


def gauss_hermite_normal(order: int = QUADRATURE_SETTINGS["hermite_order"]) -> Tuple[np.ndarray, np.ndarray]:
    """
    标准正态分布的 Gauss-Hermite 节点 (概率论版本)

    Returns:
        (节点, 权重)，权重之和为 1
    """
    x, w = _hermite(int(order))
    return x.copy(), w.copy()


def gauss_laguerre(order: int = QUADRATURE_SETTINGS["laguerre_order"]) -> Tuple[np.ndarray, np.ndarray]:
    """∫_0^∞ e^{-t} g(t) dt 的节点和权重"""
    t, w = laggauss(int(order))
    return t, w


@lru_cache(maxsize=32)
def _legendre(order: int) -> Tuple[np.ndarray, np.ndarray]:
    return leggauss(order)


def composite_gauss_legendre(
    edges: Iterable[float],
    order: int = QUADRATURE_SETTINGS["legendre_order"],
) -> Tuple[np.ndarray, np.ndarray]:
    """
    在给定分段边界上做复合 Gauss-Legendre

    Args:
        edges: 分段边界 (会排序去重)
        order: 每段节点数

    Returns:
        (节点, 权重)
    """
    e = np.unique(np.asarray(list(edges), dtype=float))
    if e.size < 2:
        raise ValueError("至少需要两个分段边界")
    ref_x, ref_w = _legendre(int(order))
    lo, hi = e[:-1, None], e[1:, None]
    half = 0.5 * (hi - lo)
    nodes = (lo + hi) * 0.5 + half * ref_x[None, :]
    weights = half * ref_w[None, :]
    return nodes.ravel(), weights.ravel()


def refined_edges(
    lo: float,
    hi: float,
    panels: int,
    features: Iterable[float] = (),
    scale: float = 1.0,
) -> np.ndarray:
    """
    均匀分段并在特征点附近按几何级数加密

    特征点 c 附近加入 c ± scale·2^k，直到超过均匀段宽
    """
    base = np.linspace(lo, hi, int(panels) + 1)
    width = (hi - lo) / panels
    extra = []
    scale = max(float(scale), 1e-12 * max(abs(lo), abs(hi), 1.0))
    for c in features:
        if not lo < c < hi:
            continue
        extra.append(c)
        step = scale / 8.0
        while step < width:
            for e in (c - step, c + step):
                if lo < e < hi:
                    extra.append(e)
            step *= 2.0
    return np.unique(np.concatenate([base, np.asarray(extra, dtype=float)]))


def standard_normal_kernel_nodes() -> Tuple[np.ndarray, np.ndarray]:
    """[-9, 9] 上的复合节点 (权重不含 φ(t))"""
    half = QUADRATURE_SETTINGS["kernel_half_width"]
    t, w = composite_gauss_legendre(
        np.linspace(-half, half, QUADRATURE_SETTINGS["kernel_panels"] + 1)
    )
    return t, w
