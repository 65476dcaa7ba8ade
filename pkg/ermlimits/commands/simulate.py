"""simulate 子命令：按配置文件跑 Monte-Carlo"""
import logging
from pathlib import Path
from typing import List

from ..errors import Diverged
from ..services.simlab import ExperimentReport, run_monte_carlo
from ..utils.config import ExperimentConfig, load_experiment_config
from ..utils.file_utils import write_json
from .context import RunContext, slug

logger = logging.getLogger(__name__)


def write_report(ctx: RunContext, name: str, config: ExperimentConfig, report: ExperimentReport) -> List[Path]:
    """CSV 汇总表 + 含全部试验记录的 JSON"""
    extra = {
        "model": config.model.value,
        "source": report.source,
        "loss": config.loss,
        "n": config.n,
        "trials": config.trials,
        "entropy": str(report.entropy),
        "gd": config.gd.model_dump(),
    }
    table = ctx.write(name, report.table(), fmt="csv", seed=config.seed, **extra)
    full = write_json(ctx.out_dir / f"{name}.json", report.to_dict(), ctx.metadata(config.seed, **extra))
    ctx.register(full)
    return [table, full]


def raise_on_failures(report: ExperimentReport) -> None:
    """报告写完后，有发散试验则以数值错误退出"""
    if report.failures:
        raise Diverged(f"{len(report.failures)} 次试验失败", trials=report.failed_trials())


def cmd_simulate(ctx: RunContext) -> List[Path]:
    spec = ctx.spec
    config = load_experiment_config(spec.config, spec.overrides())
    report = run_monte_carlo(config, ctx.residual_tol, ctx.n_jobs)
    name = f"simulate_{slug(Path(spec.config).stem)}"
    paths = write_report(ctx, name, config, report)
    raise_on_failures(report)
    return paths
