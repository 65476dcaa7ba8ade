"""线性模型的高维极限：不动点方程组、α⋆ 下界与最优损失"""
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import special

from ..errors import DomainError, ErmLimitsError, NonCoercive, with_delta
from ..utils.quadrature import gauss_hermite_normal
from .dists import NoiseModel
from .moreau import Loss, TabulatedLoss, envelope_dx, invert_envelope, prox
from .newton import TOLERANCES, multistart
from .rootscan import ROOTSCAN_SETTINGS, FisherProfile, RootScanner, minimize_roots
from .smooth import convolve, fisher_information, fisher_of_Va

logger = logging.getLogger(__name__)

LINEAR_SETTINGS = {
    "alpha_starts": (0.2, 0.5, 1.0, 2.0),
    "ratio_starts": (0.3, 0.7),      # τλδ 初值
    "tau_starts": (0.5, 2.0),        # λ = 0 时的 τ 初值
    "loss_grid_points": 4001,
    "loss_tail_mass": 1e-10,
}


@dataclass
class LinearSolution:
    """方程组的解 (α, τ)"""
    alpha: float
    tau: float
    residual_norm: float
    loss: str
    lam: float
    delta: float
    starts_converged: int = 0

    @property
    def alpha_sq(self) -> float:
        return self.alpha ** 2

    def to_record(self) -> dict:
        return {
            "model": "linear",
            "loss": self.loss,
            "lambda": self.lam,
            "delta": self.delta,
            "alpha": self.alpha,
            "alpha_sq": self.alpha_sq,
            "tau": self.tau,
            "residual_norm": self.residual_norm,
        }


@dataclass
class LinearBound:
    """α⋆ 与取得它的 x⋆ (即 λ⋆)"""
    alpha_star: float
    x_star: float
    delta: float
    noise: str
    fisher_at_star: float
    diagnostics: List[dict] = field(default_factory=list)

    @property
    def alpha_star_sq(self) -> float:
        return self.alpha_star ** 2

    @property
    def lambda_star(self) -> float:
        return self.x_star


# ---- 方程组 ----

def _joint_nodes(noise: NoiseModel) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(G, Z) 的张量积节点"""
    g, wg = gauss_hermite_normal()
    z, wz = noise.quadrature()
    gg, zz = np.meshgrid(g, z, indexing="ij")
    return gg.ravel(), zz.ravel(), np.outer(wg, wz).ravel()


def linear_moments(loss: Loss, alpha: float, tau: float, noise: NoiseModel) -> Tuple[float, float]:
    """(E[M′²], E[G·M′])，M′ 在 αG + Z 处取值"""
    g, z, w = _joint_nodes(noise)
    d = envelope_dx(loss, alpha * g + z, tau)
    return float(np.sum(w * d * d)), float(np.sum(w * g * d))


def linear_residuals(loss: Loss, alpha: float, tau: float, lam: float, delta: float, noise: NoiseModel) -> np.ndarray:
    """两个方程的残差，分别按 α² 与 α 归一"""
    m2, mg = linear_moments(loss, alpha, tau, noise)
    r1 = delta * tau * tau * m2 - (alpha * alpha - lam * lam * delta * delta * tau * tau)
    r2 = delta * tau * mg - alpha * (1.0 - lam * delta * tau)
    return np.array([r1 / alpha ** 2, r2 / alpha])


def _check_problem(lam: float, delta: float) -> None:
    if not delta > 0:
        raise DomainError(f"δ 必须为正: {delta}")
    if lam < 0:
        raise DomainError(f"λ 不能为负: {lam}")
    if lam == 0 and delta <= 1:
        raise DomainError("λ = 0 仅在 δ > 1 时有定义", delta=delta)


def solve_system_linear(
    loss: Loss,
    lam: float,
    delta: float,
    noise: NoiseModel,
    tol: Optional[float] = None,
    n_jobs: Optional[int] = None,
) -> LinearSolution:
    """
    求解 (α, τ)

    未知量取 (log α, logit(τλδ))，τ < 1/(λδ) 自动满足；λ = 0 时第二个
    未知量换成 log τ
    """
    _check_problem(lam, delta)
    if not loss.convex:
        raise DomainError(f"损失 {loss.name} 不是凸的")
    tol = TOLERANCES["residual"] if tol is None else tol
    s = LINEAR_SETTINGS

    if lam > 0:
        def unpack(u):
            return math.exp(u[0]), float(special.expit(u[1])) / (lam * delta)

        starts = [[math.log(a), float(special.logit(r))] for a in s["alpha_starts"] for r in s["ratio_starts"]]
    else:
        def unpack(u):
            return math.exp(u[0]), math.exp(u[1])

        starts = [[math.log(a), math.log(t)] for a in s["alpha_starts"] for t in s["tau_starts"]]

    def residual(u):
        alpha, tau = unpack(u)
        return linear_residuals(loss, alpha, tau, lam, delta, noise)

    label = f"线性[{loss.name}, λ={lam:g}, δ={delta:g}]"
    try:
        u, norm, ok = multistart(residual, starts, lambda v: np.array(unpack(v)), tol, label, n_jobs)
    except ErmLimitsError as exc:
        with_delta(exc, delta)
        raise
    alpha, tau = unpack(u)
    logger.debug("%s α=%.8g τ=%.8g 残差 %.2e", label, alpha, tau, norm)
    return LinearSolution(alpha, tau, norm, loss.name, lam, delta, ok)


# ---- 下界 ----

def psi(a, x: float, delta: float, noise: NoiseModel):
    """Ψ(a, x) = (a² − x²δ²)·I(V_a)/(1 − xδ)²"""
    if not 0 <= x < 1.0 / delta:
        raise DomainError(f"x 必须位于 [0, 1/δ): {x}", delta=delta)
    a_arr = np.atleast_1d(np.asarray(a, dtype=float))
    fisher = np.array([fisher_of_Va(noise, float(v)) for v in a_arr])
    out = (a_arr ** 2 - x * x * delta * delta) * fisher / (1.0 - x * delta) ** 2
    return float(out[0]) if np.ndim(a) == 0 else out


_PROFILES: Dict[str, FisherProfile] = {}
_PROFILE_LOCK = threading.Lock()


def _profile(noise: NoiseModel, n_jobs: Optional[int]) -> FisherProfile:
    with _PROFILE_LOCK:
        prof = _PROFILES.get(noise.fingerprint)
        if prof is None:
            prof = FisherProfile(lambda a: fisher_of_Va(noise, a), n_jobs)
            _PROFILES[noise.fingerprint] = prof
        return prof


def _scanner(delta: float, noise: NoiseModel, n_jobs: Optional[int]) -> RootScanner:
    def crossing(a, x, fisher):
        return (a * a - x * x * delta * delta) * fisher / (1.0 - x * delta) ** 2 - 1.0 / delta

    return RootScanner(
        _profile(noise, n_jobs),
        crossing,
        floor=lambda x: x * delta,
        exact_fisher=lambda a: fisher_of_Va(noise, a),
    )


def alpha_star(delta: float, noise: NoiseModel, n_jobs: Optional[int] = None) -> LinearBound:
    """
    α⋆ = min over x ∈ [0, 1/δ) 的最小根 a > xδ，Ψ(a, x) = 1/δ
    """
    if not delta > 0:
        raise DomainError(f"δ 必须为正: {delta}")

    scanner = _scanner(delta, noise, n_jobs)
    x_hi = (1.0 - ROOTSCAN_SETTINGS["x_margin"]) / delta
    try:
        res = minimize_roots(scanner, x_hi, label=f"α⋆[{noise.name}, δ={delta:g}]")
    except ErmLimitsError as exc:
        with_delta(exc, delta)
        raise
    return LinearBound(res.root, res.x_star, delta, noise.name, res.fisher_at_root, res.diagnostics())


def alpha_ureg_sq(delta: float, noise: NoiseModel, n_jobs: Optional[int] = None) -> float:
    """无正则化最优 ERM 的 α²：x = 0 处的最小根，a²·I(V_a) = 1/δ"""
    if not delta > 1:
        raise DomainError("无正则化最优误差要求 δ > 1", delta=delta)
    scanner = _scanner(delta, noise, n_jobs)
    try:
        root = scanner.exact_root(0.0, scanner.root(0.0))
    except ErmLimitsError as exc:
        with_delta(exc, delta)
        raise
    return root * root


def h_delta(delta: float, x):
    """h_δ(x) = ½(1 − x − δ + √((1 + δ + x)² − 4δ))"""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise DomainError(f"h_δ 的自变量必须非负: {x}")
    out = 0.5 * (1.0 - x_arr - delta + np.sqrt((1.0 + delta + x_arr) ** 2 - 4.0 * delta))
    return float(out) if out.ndim == 0 else out


def rls_lambda_opt(delta: float, second_moment: float) -> float:
    """λ_opt = 2E[Z²]/δ"""
    return 2.0 * second_moment / delta


def rls_alpha_sq(delta: float, lam, second_moment: float):
    """
    岭回归最小二乘 (损失 t²) 的 α² 闭式

    λ 与方程组、梯度下降同一约定 (1/m)ΣL + (λ/2)‖x‖²；常见的闭式写法对应
    正则系数 δλ，这里按 δλ 代入
    """
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(lam_arr < 0):
        raise DomainError(f"λ 不能为负: {lam}")
    if delta <= 1 and np.any(lam_arr == 0):
        raise DomainError("λ = 0 仅在 δ > 1 时有定义", delta=delta)
    m, d = second_moment, delta
    lam_arr = d * lam_arr
    root = np.sqrt((lam_arr + 2.0 * d - 2.0) ** 2 + 8.0 * lam_arr)
    out = 0.5 * (1.0 - m - d) + (m * (lam_arr + 2.0 * d + 2.0) + 2.0 * (d - 1.0) ** 2 + lam_arr * (d + 1.0)) / (2.0 * root)
    return float(out) if out.ndim == 0 else out


@dataclass
class OmegaLinear:
    omega: float
    lower_bound: float
    cramer_rao_bound: float   # h_δ(1/I(Z))
    rls_opt: float            # h_δ(E[Z²])


def omega_delta(delta: float, noise: NoiseModel) -> OmegaLinear:
    """ω_δ = h_δ(1/I(Z))/h_δ(E[Z²]) 及其下界 max{1 − δ, 1/(I(Z)E[Z²])}"""
    fisher = noise.fisher()
    m = noise.second_moment
    lower = h_delta(delta, 1.0 / fisher)
    upper = h_delta(delta, m)
    return OmegaLinear(lower / upper, max(1.0 - delta, 1.0 / (fisher * m)), lower, upper)


# ---- 最优损失 ----

def check_envelope_identity(loss: Loss, density, c: float, points: np.ndarray) -> float:
    """max |M′_L(v; 1) + c·ξ_V(v)|"""
    return float(np.max(np.abs(envelope_dx(loss, points, 1.0) + c * density.score(points))))


def _check_inner_concavity(curvature: np.ndarray, edge: np.ndarray) -> None:
    """g″ < 1 是内层最大化有界的条件"""
    bad = curvature >= 1.0
    if np.any(bad):
        raise NonCoercive("内层目标的二次尾系数不小于 1", x=float(edge[np.argmax(bad)]))


def optimal_loss_linear(
    delta: float,
    noise: NoiseModel,
    bound: Optional[LinearBound] = None,
    grid: Optional[np.ndarray] = None,
    n_jobs: Optional[int] = None,
) -> Tuple[TabulatedLoss, float]:
    """
    构造使 (α, τ) = (α⋆, 1) 的损失 L⋆ 与 λ⋆

    M_{L⋆}(·; 1) = −c·log p_{V⋆}，c = (α⋆² − λ⋆²δ²)/(1 − λ⋆δ)
    """
    bound = bound or alpha_star(delta, noise, n_jobs)
    a, lam = bound.alpha_star, bound.lambda_star
    v_star = convolve(noise, a)
    c = (a * a - lam * lam * delta * delta) / (1.0 - lam * delta)

    if grid is None:
        half = v_star.support(LINEAR_SETTINGS["loss_tail_mass"])[1]
        grid = np.linspace(-half, half, LINEAR_SETTINGS["loss_grid_points"])
    edge = np.array([grid[0], grid[-1]])
    h = 1e-4 * max(1.0, float(np.max(np.abs(edge))))
    _check_inner_concavity(-c * (v_star.score(edge + h) - v_star.score(edge - h)) / (2.0 * h), edge)

    meta = {
        "model": "linear",
        "delta": delta,
        "noise": noise.name,
        "lambda_star": lam,
        "alpha_star_sq": a * a,
        "c": c,
    }
    try:
        loss = invert_envelope(
            lambda w: -c * v_star.logpdf(w),
            1.0,
            grid,
            dg=lambda w: -c * v_star.score(w),
            name=f"Lstar[linear,{noise.name},δ={delta:g}]",
            metadata=meta,
        )
    except ErmLimitsError as exc:
        with_delta(exc, delta)
        raise

    if not loss.convex:
        logger.warning("δ=%g 的最优损失表不是凸的 (最小二阶差分 %.3e)", delta, loss.min_second_difference())
    resid = float(np.linalg.norm(linear_residuals(loss, a, 1.0, lam, delta, noise)))
    loss.metadata["substitution_residual"] = resid
    if resid > TOLERANCES["substitution"]:
        logger.warning("δ=%g 代入检查残差 %.3e 超过 %.0e", delta, resid, TOLERANCES["substitution"])
    return loss, lam


# ---- 无正则化对比 ----

@dataclass
class GapBounds:
    lower: float
    upper: float
    ureg_lower: float   # 无正则化误差的下界


def unreg_gap_linear(delta: float, noise: NoiseModel) -> GapBounds:
    """α⋆²/α²_ureg 的上下界"""
    if not delta > 1:
        raise DomainError("无正则化对比要求 δ > 1", delta=delta)
    fisher = noise.fisher()
    lower = (delta - 1.0) * h_delta(delta, 1.0 / fisher) / noise.second_moment
    upper = min((delta - 1.0) * fisher, 1.0)
    return GapBounds(lower, upper, 1.0 / ((delta - 1.0) * fisher))


def ls_unregularized_alpha_sq(delta: float, noise: NoiseModel) -> float:
    """无正则化最小二乘的 α² = E[Z²]/(δ − 1)"""
    if not delta > 1:
        raise DomainError("无正则化最小二乘要求 δ > 1", delta=delta)
    return noise.second_moment / (delta - 1.0)


def rescale_problem(loss: Loss, lam: float, noise: NoiseModel, r: float) -> Tuple[Loss, float, NoiseModel]:
    """
    ‖x₀‖ = r 的问题换成 ‖x₀‖ = 1：L̃(t) = L(rt)，λ̃ = r²λ，Z̃ = Z/r
    """
    if not r > 0:
        raise DomainError(f"r 必须为正: {r}")
    scaled = Loss(
        f"{loss.name}(r={r:g})",
        lambda t: loss(r * t),
        (lambda t: r * loss.derivative(r * t)) if loss.has_derivative else None,
        (lambda t: r * r * loss.second_derivative(r * t)) if loss.has_second_derivative else None,
        lambda x, tau: np.asarray(prox(loss, r * x, r * r * tau)) / r,
        convex=loss.convex,
        lower_bounded=loss.lower_bounded,
        curvature_bound=None if loss.curvature_bound is None else r * r * loss.curvature_bound,
    )
    return scaled, r * r * lam, noise.scaled(1.0 / r)


def linear_report(delta: float, noise: NoiseModel, n_jobs: Optional[int] = None) -> dict:
    """一个 δ 的 JSON 记录"""
    bound = alpha_star(delta, noise, n_jobs)
    omega = omega_delta(delta, noise)
    _, achieved = fisher_information(convolve(noise, bound.alpha_star), with_error=True)
    return {
        "delta": delta,
        "model": "linear",
        "noise": noise.name,
        "alpha_star_sq": bound.alpha_star_sq,
        "x_star": bound.x_star,
        "bound_closed_form": omega.cramer_rao_bound,
        "rls_opt": omega.rls_opt,
        "ratio": bound.alpha_star_sq / omega.rls_opt,
        "omega": omega.omega,
        "achieved_tol": achieved,
    }
