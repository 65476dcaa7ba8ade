"""异常定义与退出码"""
from typing import Optional

# 退出码约定
EXIT_OK = 0
EXIT_USER = 2
EXIT_NUMERICAL = 3


class ErmLimitsError(Exception):
    """所有错误的基类"""
    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str = "", delta: Optional[float] = None):
        self.delta = delta
        if delta is not None:
            message = f"δ={delta:g}: {message}"
        super().__init__(message)


# 用户 / 定义域错误 (退出码 2)
class DomainError(ErmLimitsError):
    exit_code = EXIT_USER


class ConfigError(ErmLimitsError):
    exit_code = EXIT_USER


class InvalidDistribution(ErmLimitsError):
    exit_code = EXIT_USER


class AssumptionViolated(ErmLimitsError):
    exit_code = EXIT_USER


class UnsupportedSampling(ErmLimitsError):
    exit_code = EXIT_USER


class ZeroEstimate(ErmLimitsError):
    exit_code = EXIT_USER


# 数值错误 (退出码 3)
class QuadratureFailure(ErmLimitsError):
    pass


class NonCoercive(ErmLimitsError):
    def __init__(self, message: str = "", x: Optional[float] = None, delta: Optional[float] = None):
        self.x = x
        if x is not None:
            message = f"{message} (x={x:.6g})"
        super().__init__(message, delta=delta)


class NoConvergence(ErmLimitsError):
    pass


class MultipleSolutions(ErmLimitsError):
    pass


class InfeasibleX(ErmLimitsError):
    """某个网格点 x 上不存在根，仅记录，不致命"""
    pass


class GlobalInfeasible(ErmLimitsError):
    pass


class DegenerateEta(ErmLimitsError):
    pass


class Diverged(ErmLimitsError):
    def __init__(self, message: str = "", trials: Optional[list] = None, delta: Optional[float] = None):
        self.trials = list(trials or [])
        if self.trials:
            message = f"{message} (trials {self.trials})"
        super().__init__(message, delta=delta)


def with_delta(exc: ErmLimitsError, delta: float) -> ErmLimitsError:
    """给异常补上失败的 δ (原地修改，之后直接 raise)"""
    if exc.delta is None:
        exc.delta = delta
        exc.args = (f"δ={delta:g}: {exc}",)
    return exc
