"""
可按标签拆分的计数器型随机数发生器
"""

import hashlib
import logging
from typing import Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


def _label_key(label: str) -> int:
    """将标签稳定映射为 32 位整数"""
    digest = hashlib.sha256(label.encode('utf-8')).digest()
    return int.from_bytes(digest[:4], 'little')


class Rng:
    """
    基于 Philox 的随机源。

    同一 seed 与同一标签序列在任意运行、任意线程数下给出逐位相同的抽样。
    """

    def __init__(self, seed: int, path: Sequence[str] = ()):
        if seed < 0 or seed >= 2 ** 64:
            raise ValueError(f"seed 必须是 64 位无符号整数: {seed}")
        self.seed = int(seed)
        self.path: Tuple[str, ...] = tuple(path)
        spawn_key = tuple(_label_key(label) for label in self.path)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=spawn_key)
        self._generator = np.random.Generator(np.random.Philox(sequence))

    def split(self, label: str) -> 'Rng':
        """派生一个独立子流"""
        return Rng(self.seed, self.path + (str(label),))

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        """标准正态抽样，可乘以尺度"""
        return self._generator.standard_normal(shape) * scale

    def half_normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return np.abs(self._generator.standard_normal(shape)) * scale

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._generator.uniform(low, high, size=shape)

    def integers(self, low: int, high: Optional[int] = None, size=None):
        return self._generator.integers(low, high, size=size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._generator.choice(n, size=size, replace=replace)

    def draw_weights(self, shape, distribution: str = "normal") -> np.ndarray:
        """按配置的分布抽取仿真权重"""
        if distribution == "normal":
            return self.normal(shape)
        if distribution == "half_normal":
            return self.half_normal(shape)
        if distribution == "uniform":
            return self.uniform(shape)
        raise ValueError(f"未知的权重分布: {distribution}")

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={'/'.join(self.path) or '-'})"
