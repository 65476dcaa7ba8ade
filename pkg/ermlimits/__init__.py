# 正则化 ERM 高维极限的数值工具
import logging

from .errors import ErmLimitsError, EXIT_OK, EXIT_USER, EXIT_NUMERICAL

logging.getLogger(__name__).addHandler(logging.NullHandler())

__version__ = "1.0.0"
