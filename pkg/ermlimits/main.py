"""命令行主入口"""
import argparse
import json
import logging
import sys
import time
from typing import List, Optional

from pydantic import ValidationError

from .commands import COMMANDS, ReproduceTarget, RunContext
from .errors import EXIT_OK, EXIT_USER, ErmLimitsError
from .utils import format_duration
from .utils.config import CommandSpec

logger = logging.getLogger(__name__)


def _common(parser: argparse.ArgumentParser, model: bool = True) -> None:
    if model:
        parser.add_argument("--model", choices=["linear", "binary"], help="观测模型")
        parser.add_argument("--noise", help="线性模型噪声: gaussian:ζ² | laplace:b | custom:path.csv")
        parser.add_argument("--link", help="链接函数: sign | logistic:r | probit:r | custom:path.csv")
    parser.add_argument("--delta", help="δ: 单个值、逗号列表或 a:b:step")
    parser.add_argument("--out", help="输出目录 (默认 output/<运行编号>)")
    parser.add_argument("--format", dest="fmt", choices=["csv", "json"], default="json", help="结果格式")
    parser.add_argument("--tol", type=float, help="方程组残差容差")
    parser.add_argument("--jobs", dest="n_jobs", type=int, help="并行数 (受 ERMLIMITS_THREADS 限制)")
    parser.add_argument("--reproducible", action="store_true", help="元数据中不写墙钟时间")


def _experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, help="主种子")
    parser.add_argument("--trials", type=int, help="试验次数")
    parser.add_argument("--n", type=int, help="维数 n")
    parser.add_argument("--loss", help="损失: 名称 | optimal | 损失表路径")
    parser.add_argument("--lambda", dest="lam", help="λ: 数值 | opt")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ermlimits",
        description="正则化 ERM 的高维渐近误差、下界与最优损失",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="输出调试日志")
    parser.add_argument("-q", "--quiet", action="store_true", help="只输出警告和错误")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("bound", help="计算 α⋆ / σ⋆ 与闭式对照")
    _common(p)

    p = sub.add_parser("solve", help="给定损失与 λ 求解不动点方程组")
    _common(p)
    p.add_argument("--loss", required=True, help="损失: 名称 | 损失表路径")
    p.add_argument("--lambda", dest="lam", required=True, help="λ")

    p = sub.add_parser("design-loss", help="构造最优损失表")
    _common(p)

    p = sub.add_parser("simulate", help="按配置文件跑 Monte-Carlo")
    _common(p)
    _experiment_flags(p)
    p.add_argument("--config", required=True, help="TOML 实验配置")

    p = sub.add_parser("reproduce", help="预置的表格与曲线")
    p.add_argument("target", choices=[t.value for t in ReproduceTarget], help="目标")
    _common(p, model=False)
    _experiment_flags(p)
    p.add_argument("--theory-only", action="store_true", help="只算理论值，不跑实验")
    return parser


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    """日志写到 stderr，stdout 只留机器可读输出"""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def build_spec(args: argparse.Namespace) -> CommandSpec:
    """argparse 结果转成 CommandSpec，未给出的参数不传"""
    fields = set(CommandSpec.model_fields)
    data = {k: v for k, v in vars(args).items() if k in fields and v is not None}
    return CommandSpec.model_validate(data)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose, args.quiet)
    started = time.perf_counter()
    try:
        spec = build_spec(args)
        ctx = RunContext.from_spec(spec)
        COMMANDS[spec.subcommand](ctx)
    except ValidationError as exc:
        logger.error("参数无效: %s", exc)
        return EXIT_USER
    except ErmLimitsError as exc:
        logger.error("%s 失败: %s", args.subcommand, exc)
        return exc.exit_code
    print(json.dumps({"out_dir": str(ctx.out_dir), "files": [str(p) for p in ctx.written]}, ensure_ascii=False))
    logger.info("完成，用时 %s", format_duration(time.perf_counter() - started))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
