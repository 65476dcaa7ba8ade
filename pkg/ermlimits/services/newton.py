"""阻尼 Newton 与多起点求解"""
import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from ..errors import ErmLimitsError, MultipleSolutions, NoConvergence
from ..utils.file_utils import resolve_n_jobs

logger = logging.getLogger(__name__)

# 全局容差
TOLERANCES = {
    "residual": 1e-7,      # 方程组残差
    "uniqueness": 1e-5,    # 多起点一致性
    "fisher": 1e-6,
    "prox": 1e-10,
    "substitution": 1e-5,  # 最优损失代入检查
}

NEWTON_SETTINGS = {
    "max_iter": 60,
    "fd_step": 1e-6,
    "min_step": 1e-6,      # 回溯步长下限
}

Residual = Callable[[np.ndarray], np.ndarray]


def _safe_norm(residual: Residual, u: np.ndarray) -> Tuple[np.ndarray, float]:
    try:
        with np.errstate(all="ignore"):
            r = np.asarray(residual(u), dtype=float)
    except (ErmLimitsError, FloatingPointError, OverflowError):
        return np.full(u.shape, np.nan), np.inf
    n = float(np.linalg.norm(r))
    return r, (n if np.isfinite(n) else np.inf)


def jacobian_fd(residual: Residual, u: np.ndarray, r0: Optional[np.ndarray] = None) -> np.ndarray:
    """中心差分 Jacobian"""
    cols = []
    for i in range(u.size):
        h = NEWTON_SETTINGS["fd_step"] * max(1.0, abs(u[i]))
        e = np.zeros_like(u)
        e[i] = h
        cols.append((np.asarray(residual(u + e)) - np.asarray(residual(u - e))) / (2.0 * h))
    return np.column_stack(cols)


def damped_newton(residual: Residual, u0: Sequence[float], tol: float = TOLERANCES["residual"]) -> Tuple[np.ndarray, float]:
    """
    回溯线搜索的 Newton 迭代

    Returns:
        (解, 残差范数)
    """
    u = np.asarray(u0, dtype=float).copy()
    r, norm = _safe_norm(residual, u)
    if not np.isfinite(norm):
        raise NoConvergence(f"初值 {u} 处残差不可求值")
    for it in range(NEWTON_SETTINGS["max_iter"]):
        if norm < tol:
            logger.debug("Newton 第 %d 步收敛，残差 %.3e", it, norm)
            return u, norm
        try:
            jac = jacobian_fd(residual, u, r)
        except ErmLimitsError as exc:
            raise NoConvergence(f"Jacobian 求值失败: {exc}") from exc
        try:
            du = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            du = np.linalg.lstsq(jac, -r, rcond=None)[0]
        if not np.all(np.isfinite(du)):
            raise NoConvergence("Newton 方向非有限")
        t = 1.0
        while t >= NEWTON_SETTINGS["min_step"]:
            cand = u + t * du
            rc, nc = _safe_norm(residual, cand)
            if nc < (1.0 - 1e-4 * t) * norm:
                u, r, norm = cand, rc, nc
                break
            t *= 0.5
        else:
            raise NoConvergence(f"残差停滞于 {norm:.3e}")
    if norm < tol:
        return u, norm
    raise NoConvergence(f"{NEWTON_SETTINGS['max_iter']} 步后残差仍为 {norm:.3e}")


def multistart(
    residual: Residual,
    starts: List[Sequence[float]],
    canonical: Callable[[np.ndarray], np.ndarray],
    tol: float = TOLERANCES["residual"],
    label: str = "",
    n_jobs: Optional[int] = None,
) -> Tuple[np.ndarray, float, int]:
    """
    从多个初值求解并检查是否收敛到同一点

    Returns:
        (残差最小的解, 残差范数, 收敛的起点数)
    """

    def attempt(u0):
        try:
            return damped_newton(residual, u0, tol)
        except NoConvergence as exc:
            logger.warning("%s 起点 %s 未收敛: %s", label, np.round(u0, 4).tolist(), exc)
            return None

    jobs = resolve_n_jobs(n_jobs)
    if jobs > 1:
        results = Parallel(n_jobs=min(jobs, len(starts)), prefer="threads")(delayed(attempt)(u0) for u0 in starts)
    else:
        results = [attempt(u0) for u0 in starts]
    found = [res for res in results if res is not None]
    if not found:
        raise NoConvergence(f"{label} 所有 {len(starts)} 个起点均未收敛")

    points = np.array([canonical(u) for u, _ in found])
    ref = points[int(np.argmin([n for _, n in found]))]
    spread = np.max(np.abs(points - ref) / np.maximum(np.abs(ref), 1.0))
    if spread > TOLERANCES["uniqueness"]:
        raise MultipleSolutions(f"{label} 找到不同的不动点 (相对差 {spread:.2e})，损失可能不在适用类中")
    best = min(found, key=lambda item: item[1])
    return best[0], best[1], len(found)
