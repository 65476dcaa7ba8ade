"""有限维 Monte-Carlo 验证：生成数据、梯度下降求解 RERM、汇总经验误差"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from ..errors import ConfigError, Diverged, ErmLimitsError, ZeroEstimate
from ..utils.config import GDConfig, ExperimentConfig, ModelKind, is_loss_path
from ..utils.file_utils import resolve_n_jobs
from . import binlim, linlim
from .dists import BinaryLink, NoiseModel, SeedLike, as_generator, check_assumption4, parse_link_spec, parse_noise_spec
from .moreau import Loss, TabulatedLoss, named_loss

logger = logging.getLogger(__name__)

SIMLAB_SETTINGS = {
    "power_iters": 100,
    "power_rtol": 1e-6,
    "zero_norm": 1e-12,
    "test_chunk": 10_000,
    "stall_grad": 1e-4,     # 线搜索失败时，梯度范数低于 stall_grad·√n 视为精度极限
    "rls_small": 0.1,
    "rls_large": 10.0,
}

OPTIMAL_LOSS_NAMES = ("optimal", "opt", "lstar")

Source = Union[NoiseModel, BinaryLink]


# ---- 数据 ----

@dataclass
class SyntheticData:
    """一组观测 (A, y) 与真实 x₀"""
    features: np.ndarray
    responses: np.ndarray
    x0: np.ndarray
    model: ModelKind

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]


def _check_sizes(n: int, m: int) -> None:
    if n < 1 or m < 1:
        raise ConfigError(f"m, n 必须 ≥ 1: m={m}, n={n}")


def unit_vector(n: int, seed: SeedLike = None) -> np.ndarray:
    """单位球面上的均匀随机向量"""
    rng = as_generator(seed)
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def generate_linear(n: int, m: int, noise: NoiseModel, seed: SeedLike = None) -> SyntheticData:
    """y = A x₀ + z，A 的元素独立 N(0, 1)"""
    _check_sizes(n, m)
    rng = as_generator(seed)
    x0 = unit_vector(n, rng)
    features = rng.standard_normal((m, n))
    responses = features @ x0 + noise.sample(m, rng)
    return SyntheticData(features, responses, x0, ModelKind.LINEAR)


def generate_binary(n: int, m: int, link: BinaryLink, seed: SeedLike = None) -> SyntheticData:
    """y = f(⟨a, x₀⟩) ∈ {±1}，信号强度 r 在链接函数里"""
    _check_sizes(n, m)
    rng = as_generator(seed)
    x0 = unit_vector(n, rng)
    features = rng.standard_normal((m, n))
    labels = link.sample_labels(features @ x0, rng)
    return SyntheticData(features, labels, x0, ModelKind.BINARY)


# ---- 梯度下降 ----

@dataclass
class FitResult:
    estimate: np.ndarray
    objective: float
    grad_norm: float
    iterations: int
    status: str             # converged / precision / max_iter


def rerm_objective(data: SyntheticData, loss: Loss, lam: float):
    """(1/m)Σ L(·) + (λ/2)‖x‖² 的 (值, 梯度)"""
    A, y = data.features, data.responses
    m = data.m

    if data.model == ModelKind.LINEAR:
        def fg(x):
            t = y - A @ x
            return float(np.mean(loss(t))) + 0.5 * lam * float(x @ x), -(A.T @ loss.derivative(t)) / m + lam * x
    else:
        def fg(x):
            t = y * (A @ x)
            return float(np.mean(loss(t))) + 0.5 * lam * float(x @ x), (A.T @ (y * loss.derivative(t))) / m + lam * x

    return fg


def gram_spectral_norm(features: np.ndarray) -> float:
    """幂迭代估计 ‖AᵀA‖/m"""
    m, n = features.shape
    v = np.ones(n) / math.sqrt(n)
    est = 0.0
    for _ in range(SIMLAB_SETTINGS["power_iters"]):
        w = features.T @ (features @ v)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(norm - est) <= SIMLAB_SETTINGS["power_rtol"] * norm:
            est = norm
            break
        est = norm
    return est / m


def initial_step(data: SyntheticData, loss: Loss, lam: float) -> float:
    """1/L̂，L̂ = ‖AᵀA‖/m · sup L″ + λ"""
    curvature = loss.curvature_bound if loss.curvature_bound is not None else 1.0
    lip = gram_spectral_norm(data.features) * curvature + lam
    return 1.0 / lip if lip > 0 else 1.0


def fit_rerm(
    data: SyntheticData,
    loss: Loss,
    lam: float,
    gd: Optional[GDConfig] = None,
    x_init: Optional[np.ndarray] = None,
) -> FitResult:
    """
    带 Armijo 回溯的梯度下降

    每步从上一步接受的步长的两倍开始回溯，目标值每步不增
    """
    gd = gd or GDConfig()
    if not loss.has_derivative:
        raise ConfigError(f"损失 {loss.name} 没有导数，不能做梯度下降")
    if lam < 0:
        raise ConfigError(f"λ 不能为负: {lam}")
    fg = rerm_objective(data, loss, lam)
    x = np.zeros(data.n) if x_init is None else np.asarray(x_init, dtype=float).copy()
    f, g = fg(x)
    if not math.isfinite(f):
        raise Diverged("初始目标值不是有限数")
    tol = gd.grad_tol * math.sqrt(data.n)
    step = 0.5 * initial_step(data, loss, lam)

    for it in range(gd.max_iter):
        gnorm = float(np.linalg.norm(g))
        if gnorm < tol:
            return FitResult(x, f, gnorm, it, "converged")
        slope = gnorm * gnorm
        t = 2.0 * step
        accepted = False
        for _ in range(gd.max_backtrack):
            x_try = x - t * g
            f_try, g_try = fg(x_try)
            if math.isfinite(f_try) and f_try <= f - gd.armijo * t * slope:
                accepted = True
                break
            t *= gd.shrink
        if not accepted:
            if gnorm <= SIMLAB_SETTINGS["stall_grad"] * math.sqrt(data.n):
                logger.debug("第 %d 步线搜索到达浮点精度，梯度范数 %.3e", it, gnorm)
                return FitResult(x, f, gnorm, it, "precision")
            raise Diverged(f"回溯 {gd.max_backtrack} 次后目标值仍不下降 (梯度范数 {gnorm:.3e})")
        x, f, g, step = x_try, f_try, g_try, t

    gnorm = float(np.linalg.norm(g))
    logger.warning("梯度下降 %d 步未收敛，梯度范数 %.3e", gd.max_iter, gnorm)
    return FitResult(x, f, gnorm, gd.max_iter, "max_iter")


def ridge_solution(data: SyntheticData, lam: float) -> np.ndarray:
    """损失 t² 时的正规方程解 (2AᵀA/m + λI) x = 2Aᵀy/m"""
    A, y, m = data.features, data.responses, data.m
    return np.linalg.solve(2.0 * A.T @ A / m + lam * np.eye(data.n), 2.0 * A.T @ y / m)


# ---- 经验指标 ----

@dataclass
class Metrics:
    squared_error: float
    correlation: float
    sigma_sq: float
    class_error: Optional[float] = None

    def to_record(self) -> dict:
        return {
            "squared_error": self.squared_error,
            "correlation": self.correlation,
            "sigma_sq": self.sigma_sq,
            "class_error": self.class_error,
        }


def holdout_error(estimate: np.ndarray, x0: np.ndarray, link: BinaryLink, points: int, seed: SeedLike = None) -> float:
    """新测试集上 sign(⟨a, x̂⟩) ≠ y 的比例"""
    rng = as_generator(seed)
    chunk = SIMLAB_SETTINGS["test_chunk"]
    wrong, done = 0, 0
    while done < points:
        k = min(chunk, points - done)
        a = rng.standard_normal((k, x0.size))
        y = link.sample_labels(a @ x0, rng)
        pred = np.where(a @ estimate >= 0, 1.0, -1.0)
        wrong += int(np.count_nonzero(pred != y))
        done += k
    return wrong / points


def empirical_metrics(
    estimate: np.ndarray,
    x0: np.ndarray,
    model: ModelKind,
    link: Optional[BinaryLink] = None,
    test_points: int = 100_000,
    seed: SeedLike = None,
) -> Metrics:
    """平方误差、相关系数 |⟨x̂, x₀⟩|/(‖x̂‖‖x₀‖)、有效误差 σ² = 1/ρ² − 1 与测试分类误差"""
    norm = float(np.linalg.norm(estimate))
    if norm < SIMLAB_SETTINGS["zero_norm"]:
        raise ZeroEstimate(f"‖x̂‖ = {norm:.3e}，相关系数无定义")
    err = float(np.sum((estimate - x0) ** 2))
    rho = min(abs(float(estimate @ x0)) / (norm * float(np.linalg.norm(x0))), 1.0)
    sigma_sq = math.inf if rho == 0 else 1.0 / (rho * rho) - 1.0
    class_err = None
    if model == ModelKind.BINARY:
        if link is None:
            raise ConfigError("二分类指标需要链接函数")
        class_err = holdout_error(estimate, x0, link, test_points, seed)
    return Metrics(err, rho, sigma_sq, class_err)


# ---- 损失与理论值 ----

def parse_source(model: ModelKind, spec: str) -> Source:
    return parse_noise_spec(spec) if model == ModelKind.LINEAR else parse_link_spec(spec)


@dataclass
class TheoryTargets:
    """某个 δ 上的理论值"""
    loss: Loss
    lam: float
    prediction: float       # 所用 (损失, λ) 的 α² 或 σ²
    bound: float            # α⋆² 或 σ⋆²
    rls_opt: float          # 最优岭回归的 α² 或 σ²
    class_error: Optional[float] = None


def _square_name(model: ModelKind) -> str:
    return "square" if model == ModelKind.LINEAR else "square-margin"


def resolve_loss(
    model: ModelKind,
    source: Source,
    loss_spec: str,
    lam_spec: Union[float, str],
    delta: float,
    tol: Optional[float] = None,
    n_jobs: Optional[int] = None,
) -> TheoryTargets:
    """
    把损失与 λ 的描述解析成具体对象并算出理论值

    optimal 取构造出的 L⋆ 与 λ⋆；平方损失配 opt 取岭回归最优 λ；
    损失表配 opt 取表元数据中的 lambda_star
    """
    if model == ModelKind.LINEAR:
        bound = linlim.alpha_star(delta, source, n_jobs)
        bound_value = bound.alpha_star_sq
        rls_opt = linlim.h_delta(delta, source.second_moment)
    else:
        bound = binlim.sigma_star(delta, source, n_jobs)
        bound_value = bound.sigma_star_sq
        nu = check_assumption4(source)
        rls_opt = binlim.H_delta(delta, 1.0 / (1.0 - nu * nu))

    spec = loss_spec.strip()
    prediction: Optional[float] = None
    if spec.lower() in OPTIMAL_LOSS_NAMES:
        if model == ModelKind.LINEAR:
            loss, lam_star = linlim.optimal_loss_linear(delta, source, bound, n_jobs=n_jobs)
        else:
            loss, lam_star = binlim.optimal_loss_binary(delta, source, bound, n_jobs=n_jobs)
        lam = lam_star if lam_spec == "opt" else float(lam_spec)
        if lam_spec == "opt":
            prediction = bound_value
    elif is_loss_path(spec):
        loss = TabulatedLoss.from_csv(spec)
        if lam_spec == "opt":
            if "lambda_star" not in loss.metadata:
                raise ConfigError(f"损失表 {spec} 的元数据里没有 lambda_star，请给出数值 λ")
            lam = float(loss.metadata["lambda_star"])
        else:
            lam = float(lam_spec)
    else:
        loss = named_loss(spec)
        square = loss.name == _square_name(model)
        if lam_spec == "opt":
            if not square:
                raise ConfigError(f"λ = opt 只适用于 optimal、{_square_name(model)} 或带 lambda_star 的损失表")
            lam = (
                linlim.rls_lambda_opt(delta, source.second_moment)
                if model == ModelKind.LINEAR
                else binlim.rls_lambda_opt(delta, nu)
            )
        else:
            lam = float(lam_spec)
        if square and (lam > 0 or delta > 1):
            prediction = (
                linlim.rls_alpha_sq(delta, lam, source.second_moment)
                if model == ModelKind.LINEAR
                else binlim.rls_sigma_sq(delta, lam, nu)
            )

    if prediction is None:
        prediction = _solve_prediction(model, loss, lam, delta, source, tol, n_jobs)
    class_err = None
    if model == ModelKind.BINARY and math.isfinite(prediction):
        class_err = float(binlim.classification_error(math.sqrt(prediction), source))
    return TheoryTargets(loss, lam, prediction, bound_value, rls_opt, class_err)


def _solve_prediction(model, loss, lam, delta, source, tol, n_jobs) -> float:
    try:
        if model == ModelKind.LINEAR:
            return linlim.solve_system_linear(loss, lam, delta, source, tol, n_jobs).alpha_sq
        return binlim.solve_system_binary(loss, lam, delta, source, tol, n_jobs).sigma_sq
    except ErmLimitsError as exc:
        logger.warning("δ=%g 的理论预测不可用: %s", delta, exc)
        return math.nan


# ---- Monte-Carlo ----

def trial_seed(entropy: int, delta_index: int, trial: int) -> np.random.SeedSequence:
    """(δ 序号, 试验序号) 计数派生的种子，与调度顺序无关"""
    return np.random.SeedSequence(entropy, spawn_key=(delta_index, trial))


def run_trial(
    config: ExperimentConfig,
    source: Source,
    loss: Loss,
    lam: float,
    delta: float,
    delta_index: int,
    trial: int,
    entropy: int,
) -> Dict[str, Any]:
    """单次试验；发散时记为失败而不抛出"""
    rng = np.random.default_rng(trial_seed(entropy, delta_index, trial))
    n, m = config.n, config.sample_size(delta)
    record: Dict[str, Any] = {"delta": delta, "trial": trial, "m": m, "n": n}
    if config.model == ModelKind.LINEAR:
        data = generate_linear(n, m, source, rng)
    else:
        data = generate_binary(n, m, source, rng)
    try:
        fit = fit_rerm(data, loss, lam, config.gd)
        metrics = empirical_metrics(
            fit.estimate,
            data.x0,
            config.model,
            source if config.model == ModelKind.BINARY else None,
            config.gd.test_points,
            rng,
        )
    except Diverged as exc:
        logger.warning("δ=%g 第 %d 次试验发散: %s", delta, trial, exc)
        record["status"] = "diverged"
        record["error"] = str(exc)
        return record
    except ZeroEstimate as exc:
        logger.warning("δ=%g 第 %d 次试验估计为零: %s", delta, trial, exc)
        record["status"] = "zero_estimate"
        record["error"] = str(exc)
        return record
    record.update(metrics.to_record())
    record.update({
        "status": fit.status,
        "iterations": fit.iterations,
        "objective": fit.objective,
        "grad_norm": fit.grad_norm,
    })
    return record


def _mean_std(values: List[float]) -> Tuple[float, float]:
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


@dataclass
class ExperimentReport:
    """按 δ 汇总的理论值与经验值，以及全部单次试验记录"""
    model: ModelKind
    source: str
    loss: str
    entropy: int
    rows: List[Dict[str, Any]] = field(default_factory=list)
    trials: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def failures(self) -> List[Tuple[float, int]]:
        return [(r["delta"], r["trial"]) for r in self.trials if r.get("status") in ("diverged", "zero_estimate")]

    def failed_trials(self) -> List[int]:
        return [t for _, t in self.failures]

    def table(self) -> List[Dict[str, Any]]:
        """与表格同布局的行"""
        return self.rows

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.model.value,
            "source": self.source,
            "loss": self.loss,
            "entropy": str(self.entropy),
            "rows": self.rows,
            "trials": self.trials,
        }


def summarize(
    model: ModelKind,
    delta: float,
    targets: TheoryTargets,
    records: List[Dict[str, Any]],
) -> Dict[str, Any]:
    """一个 δ 的汇总行"""
    ok = [r for r in records if "squared_error" in r]
    key = "squared_error" if model == ModelKind.LINEAR else "sigma_sq"
    mean, std = _mean_std([r[key] for r in ok])
    row: Dict[str, Any] = {
        "delta": delta,
        "m": records[0]["m"] if records else None,
        "n": records[0]["n"] if records else None,
        "lambda": targets.lam,
        "bound": targets.bound,
        "prediction": targets.prediction,
        "rls_opt": targets.rls_opt,
        "ratio_theory": targets.prediction / targets.rls_opt,
        "empirical_mean": mean,
        "empirical_std": std,
        "ratio_empirical": mean / targets.rls_opt,
        "trials": len(records),
        "completed": len(ok),
        "failed": [r["trial"] for r in records if "squared_error" not in r],
    }
    if model == ModelKind.BINARY:
        row["class_error_theory"] = targets.class_error
        row["class_error_mean"], row["class_error_std"] = _mean_std([r["class_error"] for r in ok])
        row["correlation_mean"], _ = _mean_std([r["correlation"] for r in ok])
        row["correlation_theory"] = float(binlim.correlation(math.sqrt(targets.prediction))) if math.isfinite(targets.prediction) else math.nan
    return row


def run_monte_carlo(
    config: ExperimentConfig,
    tol: Optional[float] = None,
    n_jobs: Optional[int] = None,
) -> ExperimentReport:
    """
    对每个 δ 先算理论目标，再并行跑 trials 次试验，按试验序号汇总

    单次发散不会中断其余试验，失败记录在报告里
    """
    source = parse_source(config.model, config.source)
    root = np.random.SeedSequence(config.seed)
    report = ExperimentReport(config.model, source.name, config.loss, int(root.entropy))
    jobs = resolve_n_jobs(n_jobs if n_jobs is not None else config.n_jobs)

    for di, delta in enumerate(config.delta):
        targets = resolve_loss(config.model, source, config.loss, config.lam, delta, tol, n_jobs)
        logger.info(
            "δ=%g: λ=%.6g, 理论 %.6g, 下界 %.6g, 开始 %d 次试验",
            delta, targets.lam, targets.prediction, targets.bound, config.trials,
        )
        args = (config, source, targets.loss, targets.lam, delta, di)
        if jobs > 1 and config.trials > 1:
            records = Parallel(n_jobs=min(jobs, config.trials), prefer="threads")(
                delayed(run_trial)(*args, t, report.entropy) for t in range(config.trials)
            )
        else:
            records = [run_trial(*args, t, report.entropy) for t in range(config.trials)]
        report.trials.extend(records)
        row = summarize(config.model, delta, targets, records)
        report.rows.append(row)
        logger.info(
            "δ=%g: 经验均值 %.6g ± %.3g，比值 %.4f (理论 %.4f)",
            delta, row["empirical_mean"], row["empirical_std"], row["ratio_empirical"], row["ratio_theory"],
        )
    return report


# ---- 理论曲线 ----

def _safe(fn, *args) -> float:
    try:
        return float(fn(*args))
    except ErmLimitsError as exc:
        logger.debug("曲线点不可用: %s", exc)
        return math.nan


def linear_curves(noise: NoiseModel, deltas, n_jobs: Optional[int] = None) -> List[Dict[str, Any]]:
    """α² 曲线：下界、闭式下界、岭回归 (小/大/最优 λ)、无正则化"""
    s = SIMLAB_SETTINGS
    fisher = noise.fisher()
    m2 = noise.second_moment
    rows = []
    for d in deltas:
        bound = linlim.alpha_star(d, noise, n_jobs)
        row = {
            "delta": d,
            "alpha_star_sq": bound.alpha_star_sq,
            "lambda_star": bound.lambda_star,
            "cramer_rao": linlim.h_delta(d, 1.0 / fisher),
            "rls_small": linlim.rls_alpha_sq(d, s["rls_small"], m2),
            "rls_large": linlim.rls_alpha_sq(d, s["rls_large"], m2),
            "rls_opt": linlim.h_delta(d, m2),
            "ureg": math.nan,
            "ureg_lower": math.nan,
            "ls_ureg": math.nan,
        }
        if d > 1:
            row["ureg"] = _safe(linlim.alpha_ureg_sq, d, noise, n_jobs)
            row["ureg_lower"] = linlim.unreg_gap_linear(d, noise).ureg_lower
            row["ls_ureg"] = linlim.ls_unregularized_alpha_sq(d, noise)
        rows.append(row)
    return rows


def binary_curves(link: BinaryLink, deltas, measure: str = "sigma_sq", n_jobs: Optional[int] = None) -> List[Dict[str, Any]]:
    """
    σ² 曲线：下界、闭式下界、岭回归 (小/大/最优 λ)、平均估计、无正则化

    measure 为 class_error 或 rho 时把每条 σ² 曲线换算成分类误差或相关系数
    """
    s = SIMLAB_SETTINGS
    nu = check_assumption4(link)
    fisher = binlim.effective_label_density(link).fisher()
    if measure == "sigma_sq":
        def convert(v):
            return v
    elif measure == "class_error":
        def convert(v):
            return float(binlim.classification_error(math.sqrt(v), link)) if math.isfinite(v) else math.nan
    elif measure == "rho":
        def convert(v):
            return float(binlim.correlation(math.sqrt(v))) if math.isfinite(v) else math.nan
    else:
        raise ConfigError(f"未知曲线度量: {measure}")

    rows = []
    for d in deltas:
        bound = binlim.sigma_star(d, link, n_jobs)
        curves = {
            "star": bound.sigma_star_sq,
            "closed_form": _safe(binlim.H_delta, d, fisher),
            "rls_small": binlim.rls_sigma_sq(d, s["rls_small"], nu),
            "rls_large": binlim.rls_sigma_sq(d, s["rls_large"], nu),
            "rls_opt": binlim.H_delta(d, 1.0 / (1.0 - nu * nu)),
            "averaging": binlim.averaging_sigma_sq(d, link),
            "ureg": math.nan,
            "ls_ureg": math.nan,
        }
        if d > 1:
            curves["ureg"] = _safe(binlim.sigma_ureg_sq, d, link, n_jobs)
            curves["ls_ureg"] = binlim.binary_unregularized_ls_sigma_sq(d, nu)
        row: Dict[str, Any] = {"delta": d, "lambda_star": bound.lambda_star}
        row["ratio"] = curves["rls_opt"] / curves["star"]
        row.update({f"{k}_{measure}": convert(v) for k, v in curves.items()})
        rows.append(row)
    return rows


def figure_curves(model: ModelKind, source: Source, deltas, measure: str = "sigma_sq", n_jobs: Optional[int] = None):
    """按模型分派的理论曲线表"""
    if model == ModelKind.LINEAR:
        return linear_curves(source, deltas, n_jobs)
    return binary_curves(source, deltas, measure, n_jobs)
