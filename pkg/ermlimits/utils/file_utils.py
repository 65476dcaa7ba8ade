"""输出目录、运行编号与结果文件"""
import csv
import json
import logging
import os
import subprocess
import time
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from ..errors import ConfigError

# 项目根目录
BASE_DIR = Path(__file__).resolve().parent.parent.parent
OUTPUT_DIR = BASE_DIR / "output"

# 可写出的结果格式
ALLOWED_FORMATS = {"csv", "json"}
THREADS_ENV = "ERMLIMITS_THREADS"

logger = logging.getLogger(__name__)


def ensure_output_dir(out_dir: Optional[Path] = None) -> Path:
    """确保输出目录存在"""
    target = Path(out_dir) if out_dir is not None else OUTPUT_DIR
    target.mkdir(parents=True, exist_ok=True)
    return target


def generate_run_id() -> str:
    """生成运行编号"""
    return str(uuid.uuid4())[:8]


def get_run_dir(run_id: str, out_dir: Optional[Path] = None) -> Path:
    """获取本次运行的目录"""
    run_dir = ensure_output_dir(out_dir) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def validate_format(fmt: str) -> Tuple[bool, str]:
    """
    检查输出格式
    返回: (是否有效, 错误信息)
    """
    if fmt not in ALLOWED_FORMATS:
        return False, f"不支持的输出格式: {fmt}，仅支持 csv 和 json"
    return True, ""


def resolve_n_jobs(requested: Optional[int] = None) -> int:
    """joblib 并行数，受 ERMLIMITS_THREADS 限制"""
    cap = os.environ.get(THREADS_ENV)
    n = requested if requested is not None else (os.cpu_count() or 1)
    if cap:
        try:
            n = min(n, max(int(cap), 1))
        except ValueError:
            logger.warning("忽略无效的 %s=%r，需为整数", THREADS_ENV, cap)
    return max(int(n), 1)


def git_describe() -> str:
    """当前代码版本；不在 git 仓库中时返回 unknown"""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=BASE_DIR,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


class RunClock:
    """墙钟计时；reproducible 时固定为 0"""

    def __init__(self, reproducible: bool = False):
        self.reproducible = reproducible
        self._start = time.perf_counter()

    def elapsed(self) -> float:
        return 0.0 if self.reproducible else round(time.perf_counter() - self._start, 3)

    def timestamp(self) -> str:
        if self.reproducible:
            return "1970-01-01T00:00:00+00:00"
        return datetime.now(timezone.utc).isoformat(timespec="seconds")


def build_metadata(
    command: str,
    seed: Optional[int],
    tolerances: Mapping[str, float],
    clock: RunClock,
    **extra: Any,
) -> Dict[str, Any]:
    """结果文件的元数据块"""
    return {
        "command": command,
        "version": git_describe(),
        "seed": seed,
        "tolerances": dict(tolerances),
        "wall_time_s": clock.elapsed(),
        "timestamp": clock.timestamp(),
        **extra,
    }


def _plain(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


def _plain_tree(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {str(k): _plain_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain_tree(v) for v in obj]
    return _plain(obj)


def write_json(path: Path, records: Any, metadata: Optional[Mapping[str, Any]] = None) -> Path:
    """写出 {metadata, records}，键排序以便逐字节比较"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"metadata": _plain_tree(metadata or {}), "records": _plain_tree(records)}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n")
    return path


def write_csv(path: Path, rows: Iterable[Mapping[str, Any]], metadata: Optional[Mapping[str, Any]] = None) -> Path:
    """
    写出 CSV；元数据以 # 开头的注释行放在表头之前
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows: List[Mapping[str, Any]] = list(rows)
    fields: List[str] = []
    for row in rows:
        for key in row:
            if key not in fields:
                fields.append(key)
    with open(path, "w", newline="") as f:
        for key, value in sorted((metadata or {}).items()):
            f.write(f"# {key}: {json.dumps(_plain_tree(value), sort_keys=True, ensure_ascii=False)}\n")
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _plain(v) for k, v in row.items()})
    return path


def write_records(path: Path, fmt: str, records: List[Mapping[str, Any]], metadata: Mapping[str, Any]) -> Path:
    """按格式写出记录"""
    ok, msg = validate_format(fmt)
    if not ok:
        raise ConfigError(msg)
    if fmt == "json":
        return write_json(path.parent / f"{path.name}.json", records, metadata)
    return write_csv(path.parent / f"{path.name}.csv", records, metadata)


def format_duration(seconds: float) -> str:
    """格式化耗时"""
    if seconds < 1:
        return f"{seconds * 1000:.0f} ms"
    elif seconds < 60:
        return f"{seconds:.1f} s"
    else:
        return f"{seconds / 60:.1f} min"
