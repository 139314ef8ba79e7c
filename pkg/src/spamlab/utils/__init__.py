"""
工具函数模块
"""

from .csv_utils import CSVUtils
from .hash_utils import HashUtils
from .tensor_container import TensorContainer

__all__ = ['CSVUtils', 'HashUtils', 'TensorContainer']
