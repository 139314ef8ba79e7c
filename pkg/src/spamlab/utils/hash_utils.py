"""
哈希工具函数
"""

import hashlib
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Union

from ..core.exceptions import ProfileIOError

logger = logging.getLogger(__name__)


class HashUtils:
    """哈希工具类"""

    @staticmethod
    def calculate_hash(data: Union[str, bytes], algorithm: str = 'sha256') -> str:
        """计算字符串或字节串哈希值"""
        if isinstance(data, str):
            data = data.encode('utf-8')
        return hashlib.new(algorithm, data).hexdigest()

    @staticmethod
    def calculate_file_hash(file_path: Union[str, Path], algorithm: str = 'sha256') -> str:
        """计算文件哈希值，读取失败时抛出 ProfileIOError"""
        try:
            hash_obj = hashlib.new(algorithm)
            with open(file_path, 'rb') as f:
                for chunk in iter(lambda: f.read(65536), b""):
                    hash_obj.update(chunk)
            return hash_obj.hexdigest()
        except OSError as e:
            logger.error(f"计算文件哈希失败 {file_path}: {e}")
            raise ProfileIOError(f"计算文件哈希失败 {file_path}: {e}") from e

    @staticmethod
    def verify_file_hash(file_path: Union[str, Path], expected_hash: str, algorithm: str = 'sha256') -> bool:
        """验证文件哈希值"""
        return HashUtils.calculate_file_hash(file_path, algorithm) == expected_hash

    @staticmethod
    def digest_outputs(paths: Iterable[Union[str, Path]]) -> List[Dict[str, str]]:
        """清单用的 [{path, sha256}]，按路径排序"""
        return [{'path': str(p), 'sha256': HashUtils.calculate_file_hash(p)}
                for p in sorted(Path(p) for p in paths)]
