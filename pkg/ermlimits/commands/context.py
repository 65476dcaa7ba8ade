"""一次命令调用共享的输出目录、计时与元数据"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from ..services.dists import parse_link_spec, parse_noise_spec
from ..services.newton import TOLERANCES
from ..utils.config import CommandSpec, ModelKind
from ..utils.file_utils import (
    RunClock,
    build_metadata,
    ensure_output_dir,
    generate_run_id,
    get_run_dir,
    write_records,
)

logger = logging.getLogger(__name__)


def slug(text: str) -> str:
    """可用作文件名的片段"""
    return "".join(c if c.isalnum() or c in ".-" else "-" for c in text).strip("-")


@dataclass
class RunContext:
    spec: CommandSpec
    out_dir: Path
    clock: RunClock
    written: List[Path] = field(default_factory=list)

    @classmethod
    def from_spec(cls, spec: CommandSpec) -> "RunContext":
        """未给 --out 时写到 output/<运行编号>/"""
        if spec.out is not None:
            out_dir = ensure_output_dir(spec.out)
        else:
            out_dir = get_run_dir(generate_run_id())
        return cls(spec, out_dir, RunClock(spec.reproducible))

    @property
    def tolerances(self) -> Dict[str, float]:
        tol = dict(TOLERANCES)
        if self.spec.tol is not None:
            tol["residual"] = self.spec.tol
        return tol

    @property
    def residual_tol(self) -> Optional[float]:
        return self.spec.tol

    @property
    def n_jobs(self) -> Optional[int]:
        return self.spec.n_jobs

    def source(self):
        """--noise 或 --link 对应的分布"""
        if self.spec.model == ModelKind.LINEAR:
            return parse_noise_spec(self.spec.noise)
        return parse_link_spec(self.spec.link)

    def metadata(self, seed: Optional[int] = None, **extra: Any) -> Dict[str, Any]:
        return build_metadata(self.spec.subcommand, seed, self.tolerances, self.clock, **extra)

    def write(self, name: str, records: List[Mapping[str, Any]], fmt: Optional[str] = None, seed: Optional[int] = None, **extra: Any) -> Path:
        """写出一个结果文件并登记"""
        path = write_records(self.out_dir / name, fmt or self.spec.fmt, records, self.metadata(seed, **extra))
        self.written.append(path)
        logger.info("已写出 %s", path)
        return path

    def register(self, path: Path) -> Path:
        self.written.append(Path(path))
        logger.info("已写出 %s", path)
        return Path(path)

