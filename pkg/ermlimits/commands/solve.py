"""solve 子命令：给定损失与 λ 求解不动点方程组"""
import logging
from pathlib import Path

from ..services import binlim, linlim
from ..services.moreau import Loss, TabulatedLoss, named_loss
from ..utils.config import ModelKind, is_loss_path
from .context import RunContext, slug

logger = logging.getLogger(__name__)


def load_loss(spec: str) -> Loss:
    """内置名称或损失表路径"""
    return TabulatedLoss.from_csv(spec) if is_loss_path(spec) else named_loss(spec)


def cmd_solve(ctx: RunContext) -> Path:
    spec = ctx.spec
    source = ctx.source()
    loss = load_loss(spec.loss)
    lam = float(spec.lam)
    records = []
    for delta in spec.delta:
        if spec.model == ModelKind.LINEAR:
            sol = linlim.solve_system_linear(loss, lam, delta, source, ctx.residual_tol, ctx.n_jobs)
            record = sol.to_record()
            record["noise"] = source.name
            if loss.name == "square":
                record["closed_form"] = linlim.rls_alpha_sq(delta, lam, source.second_moment)
            logger.info("δ=%g: α² = %.8g, τ = %.8g", delta, sol.alpha_sq, sol.tau)
        else:
            sol = binlim.solve_system_binary(loss, lam, delta, source, ctx.residual_tol, ctx.n_jobs)
            record = sol.to_record()
            if loss.name == "square-margin":
                record["closed_form"] = binlim.rls_sigma_sq(delta, lam, binlim.check_assumption4(source))
            logger.info("δ=%g: σ² = %.8g, μ = %.8g, τ = %.8g", delta, sol.sigma_sq, sol.mu, sol.tau)
        records.append(record)
    return ctx.write(
        f"solve_{spec.model.value}_{slug(source.name)}_{slug(loss.name)}",
        records,
        model=spec.model.value,
        source=source.name,
        loss=loss.name,
    )
