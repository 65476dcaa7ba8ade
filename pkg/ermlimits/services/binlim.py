"""二分类模型的高维极限：三方程组、σ⋆ 下界、H_δ 与最优损失"""
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import special

from ..errors import (
    AssumptionViolated,
    DegenerateEta,
    DomainError,
    ErmLimitsError,
    NonCoercive,
    with_delta,
)
from ..utils.quadrature import gauss_hermite_normal
from .dists import BinaryLink, check_assumption4, effective_label_density
from .moreau import Loss, TabulatedLoss, envelope_dx, invert_envelope
from .newton import TOLERANCES, multistart
from .rootscan import ROOTSCAN_SETTINGS, FisherProfile, RootScanner, minimize_roots
from .smooth import convolve, fisher_information, fisher_of_Ws

logger = logging.getLogger(__name__)

BINARY_SETTINGS = {
    "alpha_starts": (0.5, 1.5),     # 乘以 1/(1 + λ)
    "ratio_starts": (0.3, 0.7),     # τλδ 初值
    "loss_grid_points": 4001,
    "loss_tail_mass": 1e-10,
    "eta_gap": 1e-10,
    "mu_floor": 1e-12,
}


@dataclass
class BinarySolution:
    """方程组的解 (α, μ, τ) 及导出量"""
    alpha: float
    mu: float
    tau: float
    residual_norm: float
    loss: str
    lam: float
    delta: float
    link: str
    class_error: float
    starts_converged: int = 0

    @property
    def sigma(self) -> float:
        return self.alpha / abs(self.mu)

    @property
    def sigma_sq(self) -> float:
        return self.sigma ** 2

    @property
    def rho(self) -> float:
        return correlation(self.sigma)

    def to_record(self) -> dict:
        return {
            "model": "binary",
            "loss": self.loss,
            "link": self.link,
            "lambda": self.lam,
            "delta": self.delta,
            "alpha": self.alpha,
            "mu": self.mu,
            "tau": self.tau,
            "sigma_sq": self.sigma_sq,
            "rho": self.rho,
            "class_error": self.class_error,
            "residual_norm": self.residual_norm,
        }


@dataclass
class BinaryBound:
    """σ⋆、x⋆ (即 λ⋆) 与 η"""
    sigma_star: float
    x_star: float
    eta: float
    delta: float
    link: str
    fisher_at_star: float
    diagnostics: List[dict] = field(default_factory=list)

    @property
    def sigma_star_sq(self) -> float:
        return self.sigma_star ** 2

    @property
    def lambda_star(self) -> float:
        return self.x_star


def correlation(sigma):
    """ρ = 1/√(1 + σ²)"""
    return 1.0 / np.sqrt(1.0 + np.asarray(sigma, dtype=float) ** 2)


# ---- 方程组 ----

def _joint_nodes(link: BinaryLink) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(G, Sf(S)) 的张量积节点，随机链接按分支权重积分"""
    g, wg = gauss_hermite_normal()
    y, wy = effective_label_density(link).quadrature()
    gg, yy = np.meshgrid(g, y, indexing="ij")
    return gg.ravel(), yy.ravel(), np.outer(wg, wy).ravel()


def binary_moments(loss: Loss, alpha: float, mu: float, tau: float, link: BinaryLink) -> Tuple[float, float, float]:
    """(E[Sf(S)·M′], E[M′²], E[G·M′])，M′ 在 αG + μSf(S) 处取值"""
    g, y, w = _joint_nodes(link)
    d = envelope_dx(loss, alpha * g + mu * y, tau)
    return float(np.sum(w * y * d)), float(np.sum(w * d * d)), float(np.sum(w * g * d))


def binary_residuals(
    loss: Loss, alpha: float, mu: float, tau: float, lam: float, delta: float, link: BinaryLink
) -> np.ndarray:
    """三个方程的残差，后两个按 α² 与 α 归一"""
    my, m2, mg = binary_moments(loss, alpha, mu, tau, link)
    r1 = my + lam * mu
    r2 = tau * tau * delta * m2 - alpha * alpha
    r3 = tau * delta * mg - alpha * (1.0 - lam * tau * delta)
    return np.array([r1, r2 / alpha ** 2, r3 / alpha])


def solve_system_binary(
    loss: Loss,
    lam: float,
    delta: float,
    link: BinaryLink,
    tol: Optional[float] = None,
    n_jobs: Optional[int] = None,
) -> BinarySolution:
    """
    求解 (α, μ, τ)

    未知量取 (log α, μ/α, logit(τλδ))；μ/α 让 λ 很大时 α、μ 同时趋零仍然良态
    """
    if not delta > 0:
        raise DomainError(f"δ 必须为正: {delta}")
    if not lam > 0:
        raise DomainError(f"λ 必须为正: {lam}", delta=delta)
    if not loss.convex:
        raise DomainError(f"损失 {loss.name} 不是凸的")
    if not loss.lower_bounded:
        raise AssumptionViolated(f"损失 {loss.name} 无下界")
    if loss.has_derivative and abs(float(loss.derivative(0.0))) < 1e-12:
        raise AssumptionViolated(f"损失 {loss.name} 满足 L′(0) = 0")
    nu = check_assumption4(link)
    sign = 1.0 if nu > 0 else -1.0
    tol = TOLERANCES["residual"] if tol is None else tol
    s = BINARY_SETTINGS

    def unpack(u):
        alpha = math.exp(u[0])
        return alpha, u[1] * alpha, float(special.expit(u[2])) / (lam * delta)

    def residual(u):
        alpha, mu, tau = unpack(u)
        return binary_residuals(loss, alpha, mu, tau, lam, delta, link)

    starts = []
    for b in s["alpha_starts"]:
        a0 = b / (1.0 + lam)
        for m in (nu, -nu):
            for r in s["ratio_starts"]:
                starts.append([math.log(a0), m / b, float(special.logit(r))])

    def canonical(u):
        alpha, mu, tau = unpack(u)
        return np.array([alpha, abs(mu), tau])

    label = f"二分类[{loss.name}, {link.name}, λ={lam:g}, δ={delta:g}]"
    try:
        u, norm, ok = multistart(residual, starts, canonical, tol, label, n_jobs)
    except ErmLimitsError as exc:
        with_delta(exc, delta)
        raise
    alpha, mu, tau = unpack(u)
    if abs(mu) < s["mu_floor"] * alpha:
        raise AssumptionViolated(f"{label} μ ≈ 0，估计与 x₀ 正交", delta=delta)
    if mu * sign < 0:
        logger.debug("%s 收敛到镜像解，μ 取正", label)
        mu = -mu
    sigma = alpha / abs(mu)
    logger.debug("%s α=%.8g μ=%.8g τ=%.8g σ²=%.8g 残差 %.2e", label, alpha, mu, tau, sigma ** 2, norm)
    return BinarySolution(alpha, mu, tau, norm, loss.name, lam, delta, link.name, classification_error(sigma, link), ok)


# ---- 下界 ----

def _phi_values(s, x: float, delta: float, fisher):
    s2 = s * s
    head = (1.0 - s2 * (1.0 - s2 * fisher)) / (delta * s2 * (s2 * fisher + fisher - 1.0))
    return head - 2.0 * x + x * x * delta * (1.0 + 1.0 / s2)


def phi(s, x: float, delta: float, link: BinaryLink):
    """Φ(s, x)"""
    if not 0 <= x < 1.0 / delta:
        raise DomainError(f"x 必须位于 [0, 1/δ): {x}", delta=delta)
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s_arr <= 0):
        raise DomainError(f"s 必须为正: {s}")
    fisher = np.array([fisher_of_Ws(link, float(v)) for v in s_arr])
    out = _phi_values(s_arr, x, delta, fisher)
    return float(out[0]) if np.ndim(s) == 0 else out


_PROFILES: Dict[str, FisherProfile] = {}
_PROFILE_LOCK = threading.Lock()


def _profile(link: BinaryLink, n_jobs: Optional[int]) -> FisherProfile:
    with _PROFILE_LOCK:
        prof = _PROFILES.get(link.fingerprint)
        if prof is None:
            prof = FisherProfile(lambda s: fisher_of_Ws(link, s), n_jobs)
            _PROFILES[link.fingerprint] = prof
        return prof


def _scanner(delta: float, link: BinaryLink, n_jobs: Optional[int]) -> RootScanner:
    def crossing(s, x, fisher):
        return 1.0 - _phi_values(s, x, delta, fisher)

    return RootScanner(
        _profile(link, n_jobs),
        crossing,
        floor=lambda x: 0.0,
        exact_fisher=lambda s: fisher_of_Ws(link, s),
    )


def sigma_star(delta: float, link: BinaryLink, n_jobs: Optional[int] = None) -> BinaryBound:
    """σ⋆ = min over x ∈ [0, 1/δ) 的最小根 s，Φ(s, x) = 1"""
    if not delta > 0:
        raise DomainError(f"δ 必须为正: {delta}")
    check_assumption4(link)

    scanner = _scanner(delta, link, n_jobs)
    x_hi = (1.0 - ROOTSCAN_SETTINGS["x_margin"]) / delta
    try:
        res = minimize_roots(scanner, x_hi, label=f"σ⋆[{link.name}, δ={delta:g}]")
    except ErmLimitsError as exc:
        with_delta(exc, delta)
        raise
    s2, ld = res.root ** 2, res.x_star * delta
    eta = 1.0 - res.fisher_at_root * (s2 - s2 * ld - ld) - ld
    return BinaryBound(res.root, res.x_star, eta, delta, link.name, res.fisher_at_root, res.diagnostics())


def sigma_ureg_sq(delta: float, link: BinaryLink, n_jobs: Optional[int] = None) -> float:
    """无正则化最优 ERM 的 σ²：x = 0 处 Φ(s, 0) = 1 的最小根"""
    if not delta > 1:
        raise DomainError("无正则化最优误差要求 δ > 1", delta=delta)
    check_assumption4(link)
    scanner = _scanner(delta, link, n_jobs)
    try:
        root = scanner.exact_root(0.0, scanner.root(0.0))
    except ErmLimitsError as exc:
        with_delta(exc, delta)
        raise
    return root * root


def H_delta(delta: float, x):
    """H_δ(x) = 2/(−δ − x + δx + √((−δ − x + δx)² + 4δ(x − 1)))，x 可取 +∞"""
    x_arr = np.asarray(x, dtype=float)
    if np.any(~(x_arr > 1)):
        raise DomainError(f"H_δ 要求 x > 1: {x}")
    finite = np.isfinite(x_arr)
    xf = np.where(finite, x_arr, 2.0)
    a = (delta - 1.0) * xf - delta
    b = 4.0 * delta * (xf - 1.0)
    r = np.sqrt(a * a + b)
    # a < 0 时有理化避免相消
    den = np.where(a >= 0, a + r, b / (r - a))
    out = np.where(finite, 2.0 / den, max(0.0, (1.0 - delta) / delta))
    return float(out) if out.ndim == 0 else out


def rls_lambda_opt(delta: float, nu: float) -> float:
    """λ_opt = 2(1 − ν_f²)/(δν_f²)"""
    return 2.0 * (1.0 - nu * nu) / (delta * nu * nu)


def rls_sigma_sq(delta: float, lam, nu: float):
    """损失 (t − 1)² 的岭回归 σ² 闭式"""
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(lam_arr < 0):
        raise DomainError(f"λ 不能为负: {lam}")
    if delta <= 1 and np.any(lam_arr == 0):
        raise DomainError("λ = 0 仅在 δ > 1 时有定义", delta=delta)
    if nu == 0:
        raise AssumptionViolated("ν_f = 0")
    d, n2 = delta, nu * nu
    root = np.sqrt(4.0 + 4.0 * d * (lam_arr - 2.0) + d * d * (lam_arr + 2.0) ** 2)
    num = 2.0 + 2.0 * d + lam_arr * d + d * n2 * ((2.0 + lam_arr) * d - 6.0)
    out = (1.0 - d * n2 + num / root) / (2.0 * d * n2)
    return float(out) if out.ndim == 0 else out


@dataclass
class OmegaBinary:
    omega: float
    closed_form_bound: float    # H_δ(I(Sf(S)))
    fisher_sfs: float
    rls_opt: float              # H_δ(1/(1 − ν_f²))


def omega_big_delta(delta: float, link: BinaryLink) -> OmegaBinary:
    """Ω_δ = H_δ(I(Sf(S)))/H_δ(1/(1 − ν_f²))"""
    nu = check_assumption4(link)
    fisher = effective_label_density(link).fisher()
    if not fisher > 1:
        raise DomainError(f"I(Sf(S)) = {fisher:.6g} ≤ 1", delta=delta)
    bound = H_delta(delta, fisher)
    rls = H_delta(delta, 1.0 / (1.0 - nu * nu))
    omega = bound / rls
    if omega > 1.0 + 1e-9:
        logger.warning("δ=%g 的 Ω_δ = %.8f > 1，Fisher 积分可能不准", delta, omega)
    return OmegaBinary(omega, bound, fisher, rls)


# ---- 最优损失 ----

def optimal_loss_binary(
    delta: float,
    link: BinaryLink,
    bound: Optional[BinaryBound] = None,
    grid: Optional[np.ndarray] = None,
    n_jobs: Optional[int] = None,
) -> Tuple[TabulatedLoss, float]:
    """
    构造使 (α, μ, τ) = (σ⋆, 1, 1) 的损失 L⋆ 与 λ⋆

    M_{L⋆}(·; 1) = −c₁w²/2 − c₂·log p_{W⋆}
    """
    bound = bound or sigma_star(delta, link, n_jobs)
    sigma, lam, eta, fisher = bound.sigma_star, bound.lambda_star, bound.eta, bound.fisher_at_star
    if abs(eta - fisher) < BINARY_SETTINGS["eta_gap"]:
        raise DegenerateEta(f"η = {eta:.12g} 与 I(W⋆) 几乎相等", delta=delta)
    w_star = convolve(effective_label_density(link), sigma)
    c1 = eta * (lam * delta - 1.0) / (delta * (eta - fisher))
    c2 = (lam * delta - 1.0) / (delta * (eta - fisher))

    if grid is None:
        half = w_star.support(BINARY_SETTINGS["loss_tail_mass"])[1]
        grid = np.linspace(-half, half, BINARY_SETTINGS["loss_grid_points"])
    edge = np.array([grid[0], grid[-1]])
    h = 1e-4 * max(1.0, float(np.max(np.abs(edge))))
    curvature = -c1 - c2 * (w_star.score(edge + h) - w_star.score(edge - h)) / (2.0 * h)
    bad = curvature >= 1.0
    if np.any(bad):
        raise NonCoercive("内层目标的二次尾系数不小于 1", x=float(edge[np.argmax(bad)]), delta=delta)

    meta = {
        "model": "binary",
        "delta": delta,
        "link": link.name,
        "lambda_star": lam,
        "sigma_star_sq": sigma * sigma,
        "eta": eta,
        "c1": c1,
        "c2": c2,
    }
    try:
        loss = invert_envelope(
            lambda w: -0.5 * c1 * w * w - c2 * w_star.logpdf(w),
            1.0,
            grid,
            dg=lambda w: -c1 * w - c2 * w_star.score(w),
            name=f"Lstar[binary,{link.name},δ={delta:g}]",
            metadata=meta,
        )
    except ErmLimitsError as exc:
        with_delta(exc, delta)
        raise

    if not loss.convex:
        logger.warning("δ=%g 的最优损失表不是凸的 (最小二阶差分 %.3e)", delta, loss.min_second_difference())
    resid = float(np.linalg.norm(binary_residuals(loss, sigma, 1.0, 1.0, lam, delta, link)))
    loss.metadata["substitution_residual"] = resid
    if resid > TOLERANCES["substitution"]:
        logger.warning("δ=%g 代入检查残差 %.3e 超过 %.0e", delta, resid, TOLERANCES["substitution"])
    return loss, lam


# ---- 分类误差与平均估计 ----

def classification_error(sigma, link: BinaryLink):
    """P(σG + Sf(S) < 0)"""
    s = np.asarray(sigma, dtype=float)
    if np.any(s <= 0):
        raise DomainError(f"σ 必须为正: {sigma}")
    y, w = effective_label_density(link).quadrature()
    w = w / w.sum()
    flat = np.atleast_1d(s).ravel()
    with np.errstate(divide="ignore"):
        vals = np.array([0.5 if np.isinf(v) else float(np.sum(w * special.ndtr(-y / v))) for v in flat])
    return float(vals[0]) if s.ndim == 0 else vals.reshape(s.shape)


def averaging_sigma_sq(delta: float, link: BinaryLink) -> float:
    """平均估计 (1/m)Σ yᵢaᵢ 的 σ² = 1/(δν_f²)"""
    nu = check_assumption4(link)
    return 1.0 / (delta * nu * nu)


def averaging_crossover(link: BinaryLink) -> float:
    """δ = ν_f⁻² 处平均估计与无正则化最小二乘一样好"""
    nu = check_assumption4(link)
    return 1.0 / (nu * nu)


def averaging_sandwich(delta: float, link: BinaryLink) -> Tuple[float, float]:
    """1 ≥ σ⋆²/σ²_ave ≥ δν_f²·H_δ(I(Sf(S)))"""
    nu = check_assumption4(link)
    fisher = effective_label_density(link).fisher()
    return delta * nu * nu * H_delta(delta, fisher), 1.0


def binary_unregularized_ls_sigma_sq(delta: float, nu: float) -> float:
    """无正则化最小二乘的 σ² = (ν_f⁻² − 1)/(δ − 1)"""
    if not delta > 1:
        raise DomainError("无正则化最小二乘要求 δ > 1", delta=delta)
    return (1.0 / (nu * nu) - 1.0) / (delta - 1.0)


@dataclass
class BinaryGapBounds:
    lower: float
    upper: float


def unreg_gap_binary(delta: float, link: BinaryLink) -> BinaryGapBounds:
    """σ⋆²/σ²_ureg 的上下界"""
    if not delta > 1:
        raise DomainError("无正则化对比要求 δ > 1", delta=delta)
    nu = check_assumption4(link)
    n2 = nu * nu
    fisher = effective_label_density(link).fisher()
    lower = (delta - 1.0) * n2 * H_delta(delta, fisher) / (1.0 - n2)
    upper = min((delta - 1.0) / delta * (fisher - 1.0) / n2, 1.0)
    return BinaryGapBounds(lower, upper)


def binary_report(delta: float, link: BinaryLink, n_jobs: Optional[int] = None) -> dict:
    """一个 δ 的 JSON 记录"""
    bound = sigma_star(delta, link, n_jobs)
    nu = check_assumption4(link)
    rls = H_delta(delta, 1.0 / (1.0 - nu * nu))
    try:
        omega = omega_big_delta(delta, link).omega
    except DomainError:
        omega = math.nan
    _, achieved = fisher_information(convolve(effective_label_density(link), bound.sigma_star), with_error=True)
    return {
        "delta": delta,
        "model": "binary",
        "link": link.name,
        "r": link.strength,
        "sigma_star_sq": bound.sigma_star_sq,
        "x_star": bound.x_star,
        "eta": bound.eta,
        "rls_opt_sq": rls,
        "ratio": bound.sigma_star_sq / rls,
        "omega_big": omega,
        "averaging_sq": averaging_sigma_sq(delta, link),
        "class_error_at_opt": classification_error(math.sqrt(rls), link),
        "class_error_at_star": classification_error(bound.sigma_star, link),
        "achieved_tol": achieved,
    }