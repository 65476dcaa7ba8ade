"""命令行参数与实验配置文件的校验"""
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..errors import ConfigError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ModelKind(str, Enum):
    """观测模型"""
    LINEAR = "linear"
    BINARY = "binary"


# 梯度下降默认设置
GD_SETTINGS = {
    "max_iter": 50_000,
    "grad_tol": 1e-8,      # 乘以 √n
    "armijo": 1e-4,
    "shrink": 0.5,
    "max_backtrack": 60,
    "test_points": 100_000,
}

LambdaSpec = Union[float, Literal["opt"]]


def parse_delta_list(spec: Union[str, float, int, List[float]]) -> List[float]:
    """
    解析 δ 列表：单个值 "2"、逗号列表 "0.5,2,4" 或区间 "a:b:step" (含端点)
    """
    if isinstance(spec, (int, float)):
        values = [float(spec)]
    elif isinstance(spec, (list, tuple)):
        values = [float(v) for v in spec]
    else:
        text = str(spec).strip()
        try:
            if ":" in text:
                parts = [float(p) for p in text.split(":")]
                if len(parts) != 3:
                    raise ConfigError(f"区间格式应为 a:b:step: {text}")
                lo, hi, step = parts
                if not step > 0 or hi < lo:
                    raise ConfigError(f"区间无效: {text}")
                count = int(math.floor((hi - lo) / step + 1e-9)) + 1
                values = [round(lo + i * step, 12) for i in range(count)]
            else:
                values = [float(p) for p in text.split(",") if p.strip()]
        except ValueError as exc:
            raise ConfigError(f"无法解析 δ: {text}") from exc
    if not values:
        raise ConfigError("δ 列表为空")
    bad = [v for v in values if not (v > 0 and math.isfinite(v))]
    if bad:
        raise ConfigError(f"δ 必须为正: {bad}")
    return values


def parse_lambda(value: Any) -> LambdaSpec:
    """λ 取数值或 opt"""
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("opt", "optimal"):
            return "opt"
        try:
            value = float(text)
        except ValueError as exc:
            raise ConfigError(f"无法解析 λ: {value}") from exc
    value = float(value)
    if value < 0 or not math.isfinite(value):
        raise ConfigError(f"λ 必须非负: {value}")
    return value


def is_loss_path(spec: str) -> bool:
    """损失参数是文件路径而非内置名称"""
    return spec.endswith(".csv") or "/" in spec or "\\" in spec


class GDConfig(BaseModel):
    """梯度下降设置"""
    model_config = ConfigDict(extra="forbid")

    max_iter: int = Field(GD_SETTINGS["max_iter"], ge=1)
    grad_tol: float = Field(GD_SETTINGS["grad_tol"], gt=0)
    armijo: float = Field(GD_SETTINGS["armijo"], gt=0, lt=1)
    shrink: float = Field(GD_SETTINGS["shrink"], gt=0, lt=1)
    max_backtrack: int = Field(GD_SETTINGS["max_backtrack"], ge=1)
    test_points: int = Field(GD_SETTINGS["test_points"], ge=1)


class ExperimentConfig(BaseModel):
    """一次 Monte-Carlo 实验的完整配置"""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    model: ModelKind
    n: int = Field(100, ge=10)
    delta: List[float]
    noise: Optional[str] = None
    link: Optional[str] = None
    loss: str = "optimal"
    lam: LambdaSpec = Field("opt", alias="lambda")
    trials: int = Field(50, ge=1)
    seed: Optional[int] = 0
    n_jobs: Optional[int] = Field(None, ge=1)
    gd: GDConfig = Field(default_factory=GDConfig)

    @field_validator("delta", mode="before")
    @classmethod
    def _parse_delta(cls, v):
        return parse_delta_list(v)

    @field_validator("lam", mode="before")
    @classmethod
    def _parse_lambda(cls, v):
        return parse_lambda(v)

    @model_validator(mode="after")
    def _check(self) -> "ExperimentConfig":
        if self.model == ModelKind.LINEAR and not self.noise:
            raise ValueError("线性模型需要 noise")
        if self.model == ModelKind.BINARY and not self.link:
            raise ValueError("二分类模型需要 link")
        for d in self.delta:
            if round(d * self.n) < 1:
                raise ValueError(f"δ={d:g}, n={self.n} 时 m = round(δn) < 1")
        if is_loss_path(self.loss) and not Path(self.loss).exists():
            raise ValueError(f"找不到损失表: {self.loss}")
        return self

    def sample_size(self, delta: float) -> int:
        """m = round(δn)"""
        return int(round(delta * self.n))

    @property
    def source(self) -> str:
        """噪声或链接的描述串"""
        return self.noise if self.model == ModelKind.LINEAR else self.link


class CommandSpec(BaseModel):
    """一次命令行调用，计算开始前整体校验"""
    model_config = ConfigDict(extra="forbid")

    subcommand: Literal["bound", "solve", "design-loss", "simulate", "reproduce"]
    model: Optional[ModelKind] = None
    delta: Optional[List[float]] = None
    noise: Optional[str] = None
    link: Optional[str] = None
    loss: Optional[str] = None
    lam: Optional[LambdaSpec] = None
    out: Optional[Path] = None
    fmt: Literal["csv", "json"] = "json"
    seed: Optional[int] = None
    tol: Optional[float] = Field(None, gt=0)
    trials: Optional[int] = Field(None, ge=1)
    n: Optional[int] = Field(None, ge=10)
    config: Optional[Path] = None
    target: Optional[str] = None
    n_jobs: Optional[int] = Field(None, ge=1)
    reproducible: bool = False
    theory_only: bool = False

    @field_validator("delta", mode="before")
    @classmethod
    def _parse_delta(cls, v):
        return None if v is None else parse_delta_list(v)

    @field_validator("lam", mode="before")
    @classmethod
    def _parse_lambda(cls, v):
        return None if v is None else parse_lambda(v)

    @model_validator(mode="after")
    def _check(self) -> "CommandSpec":
        if self.subcommand in ("bound", "solve", "design-loss"):
            if self.model is None:
                raise ValueError(f"{self.subcommand} 需要 --model")
            if self.delta is None:
                raise ValueError(f"{self.subcommand} 需要 --delta")
            if self.model == ModelKind.LINEAR and not self.noise:
                raise ValueError("线性模型需要 --noise")
            if self.model == ModelKind.BINARY and not self.link:
                raise ValueError("二分类模型需要 --link")
        if self.subcommand == "solve":
            if not self.loss:
                raise ValueError("solve 需要 --loss")
            if self.lam is None or self.lam == "opt":
                raise ValueError("solve 需要数值 --lambda")
        if self.subcommand == "simulate" and self.config is None:
            raise ValueError("simulate 需要 --config")
        if self.subcommand == "reproduce" and not self.target:
            raise ValueError("reproduce 需要目标名")
        if self.loss and is_loss_path(self.loss) and not Path(self.loss).exists():
            raise ValueError(f"找不到损失表: {self.loss}")
        return self

    def overrides(self) -> Dict[str, Any]:
        """显式给出的参数，覆盖配置文件里的值"""
        mapping = {
            "model": self.model,
            "delta": self.delta,
            "noise": self.noise,
            "link": self.link,
            "loss": self.loss,
            "lambda": self.lam,
            "seed": self.seed,
            "trials": self.trials,
            "n": self.n,
            "n_jobs": self.n_jobs,
        }
        return {k: (v.value if isinstance(v, Enum) else v) for k, v in mapping.items() if v is not None}


def read_toml(path: Union[str, Path]) -> Dict[str, Any]:
    """读取 TOML 文件"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"找不到配置文件: {path}")
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path} 不是合法的 TOML: {exc}") from exc


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err.get("loc", ())) or "配置"
        parts.append(f"{loc}: {err.get('msg')}")
    return "; ".join(parts)


def build_experiment_config(data: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """合并覆盖项并校验"""
    merged = {**data, **(overrides or {})}
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigError(f"实验配置无效: {_describe(exc)}") from exc


def load_experiment_config(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """读取 TOML 实验配置；命令行显式参数优先"""
    return build_experiment_config(read_toml(path), overrides)
