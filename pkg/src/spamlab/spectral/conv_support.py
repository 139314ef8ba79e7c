"""
卷积支撑矩阵: 基矩阵 B^(z)、C = Σ k^(z) B^(z)，以及滑窗卷积参照实现
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from ..core.exceptions import DimensionMismatch, ShapeError

logger = logging.getLogger(__name__)

# 稠密化上限(节点数)
DENSE_LIMIT = 4096


def output_size(size: int, kernel_size: int, padding: int, stride: int = 1) -> int:
    """⌊(size + 2p - m)/s⌋ + 1"""
    out = (size + 2 * padding - kernel_size) // stride + 1
    if out < 1:
        raise ShapeError(f"输出尺寸无效: size={size}, m={kernel_size}, p={padding}, s={stride}")
    return out


@dataclass(frozen=True)
class KernelSpec:
    """m×m 卷积核，步长 1，padding ⌊(m-1)/2⌋"""
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ShapeError(f"卷积核必须为方阵: {w.shape}")
        if w.shape[0] % 2 == 0:
            raise ShapeError(f"卷积核尺寸必须为奇数: {w.shape[0]}")
        object.__setattr__(self, 'weights', w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def padding(self) -> int:
        return (self.size - 1) // 2

    @property
    def stride(self) -> int:
        return 1

    def flat(self) -> np.ndarray:
        """按 z = r·m + t 展开"""
        return self.weights.ravel()

    @classmethod
    def identity(cls, size: int = 3) -> 'KernelSpec':
        w = np.zeros((size, size))
        w[size // 2, size // 2] = 1.0
        return cls(w)


@dataclass
class ConvSupport:
    """卷积支撑矩阵及组成它的基矩阵"""
    matrix: sp.csr_matrix
    bases: List[sp.csr_matrix]
    kernel: KernelSpec
    height: int
    width: int

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)

    def to_dense(self) -> np.ndarray:
        n = self.matrix.shape[1]
        if n > DENSE_LIMIT:
            raise ShapeError(f"节点数 {n} 超过稠密化上限 {DENSE_LIMIT}")
        return self.matrix.toarray()

    def row_entries(self, row: int) -> Tuple[np.ndarray, np.ndarray]:
        """返回第 row 行的 (列索引, 值)"""
        start, end = self.matrix.indptr[row], self.matrix.indptr[row + 1]
        return self.matrix.indices[start:end], self.matrix.data[start:end]


def build_basis(z: int, kernel_size: int, height: int, width: int) -> sp.csr_matrix:
    """
    构建第 z 个核元素的二值基矩阵 B^(z)。

    a = y·W + x, b = (y+r-p)·W + (x+t-p)，当两个坐标都在界内时 B_{a,b} = 1。
    """
    if not 0 <= z < kernel_size * kernel_size:
        raise ValueError(f"z 超出范围 [0, {kernel_size * kernel_size}): {z}")
    r, t = divmod(z, kernel_size)
    p = (kernel_size - 1) // 2
    ys, xs = np.divmod(np.arange(height * width), width)
    iy, ix = ys + r - p, xs + t - p
    valid = (iy >= 0) & (iy < height) & (ix >= 0) & (ix < width)
    rows = np.flatnonzero(valid)
    cols = iy[valid] * width + ix[valid]
    n = height * width
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))


def assemble_support(kernel: KernelSpec, height: int, width: int) -> ConvSupport:
    """C = Σ_z k^(z) B^(z)"""
    m = kernel.size
    bases = [build_basis(z, m, height, width) for z in range(m * m)]
    n = height * width
    matrix = sp.csr_matrix((n, n))
    for weight, basis in zip(kernel.flat(), bases):
        if weight != 0.0:
            matrix = matrix + weight * basis
    matrix.sum_duplicates()
    matrix.sort_indices()
    return ConvSupport(sp.csr_matrix(matrix), bases, kernel, height, width)


def conv_via_support(support: ConvSupport, x: np.ndarray) -> np.ndarray:
    """以稀疏矩阵乘法计算卷积: C·X_d"""
    flat = np.asarray(x, dtype=np.float64).ravel()
    if flat.size != support.matrix.shape[1]:
        raise DimensionMismatch(f"输入长度 {flat.size} 与支撑矩阵列数 {support.matrix.shape[1]} 不匹配")
    out = support.matrix @ flat
    return out.reshape(support.height, support.width) if np.ndim(x) == 2 else out


def direct_conv(x: np.ndarray, kernel: KernelSpec, stride: int = 1,
                padding: Optional[int] = None) -> np.ndarray:
    """单通道滑窗互相关(零填充，无偏置)"""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"direct_conv 需要单通道 (H, W) 输入，实际 {x.shape}")
    return conv2d(x[None], kernel.weights[None, None], stride=stride,
                  padding=kernel.padding if padding is None else padding)[0]


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (padding, padding), (padding, padding)))


def conv2d(x: np.ndarray, weight: np.ndarray, stride: int = 1, padding: int = 0,
           bias: Optional[np.ndarray] = None) -> np.ndarray:
    """
    多通道全卷积(互相关)。

    x: (C_in, H, W)，weight: (C_out, C_in, m, m)，输出尺寸按 ⌊(H+2p-m)/s⌋+1。
    """
    c_out, c_in, m, m2 = weight.shape
    if m != m2:
        raise ShapeError(f"卷积核必须为方形: {weight.shape}")
    if x.shape[0] != c_in:
        raise DimensionMismatch(f"输入通道 {x.shape[0]} 与卷积核输入通道 {c_in} 不匹配")
    h_out = output_size(x.shape[1], m, padding, stride)
    w_out = output_size(x.shape[2], m, padding, stride)
    xp = _pad(x, padding)

    out = np.zeros((c_out, h_out, w_out))
    for r in range(m):
        for t in range(m):
            window = xp[:, r:r + stride * (h_out - 1) + 1:stride, t:t + stride * (w_out - 1) + 1:stride]
            out += np.einsum('oi,ihw->ohw', weight[:, :, r, t], window)
    if bias is not None:
        out += bias[:, None, None]
    return out


def conv2d_backward(x: np.ndarray, weight: np.ndarray, grad_out: np.ndarray, stride: int = 1,
                    padding: int = 0, has_bias: bool = False):
    """全卷积反向: 返回 (dx, dweight, dbias)"""
    m = weight.shape[2]
    h_out, w_out = grad_out.shape[1:]
    xp = _pad(x, padding)
    dxp = np.zeros_like(xp)
    dweight = np.zeros_like(weight)
    for r in range(m):
        for t in range(m):
            rows = slice(r, r + stride * (h_out - 1) + 1, stride)
            cols = slice(t, t + stride * (w_out - 1) + 1, stride)
            dweight[:, :, r, t] = np.einsum('ohw,ihw->oi', grad_out, xp[:, rows, cols])
            dxp[:, rows, cols] += np.einsum('oi,ohw->ihw', weight[:, :, r, t], grad_out)
    dx = dxp[:, padding:padding + x.shape[1], padding:padding + x.shape[2]] if padding else dxp
    dbias = grad_out.sum(axis=(1, 2)) if has_bias else None
    return dx, dweight, dbias


def depthwise_conv(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """
    逐通道卷积，步长 1，padding ⌊(m-1)/2⌋，空间尺寸不变。

    x: (C, H, W)，weight: (C, m, m)。
    """
    channels, m, _ = weight.shape
    if x.shape[0] != channels:
        raise DimensionMismatch(f"输入通道 {x.shape[0]} 与深度卷积通道 {channels} 不匹配")
    if m % 2 == 0:
        raise ShapeError(f"深度卷积核尺寸必须为奇数: {m}")
    height, width = x.shape[1:]
    xp = _pad(x, (m - 1) // 2)
    out = np.zeros_like(x, dtype=np.float64)
    for r in range(m):
        for t in range(m):
            out += weight[:, r, t][:, None, None] * xp[:, r:r + height, t:t + width]
    if bias is not None:
        out += bias[:, None, None]
    return out


def depthwise_conv_backward(x: np.ndarray, weight: np.ndarray, grad_out: np.ndarray,
                            has_bias: bool = False):
    """逐通道卷积反向: 返回 (dx, dweight, dbias)"""
    m = weight.shape[1]
    p = (m - 1) // 2
    height, width = x.shape[1:]
    xp = _pad(x, p)
    dxp = np.zeros_like(xp)
    dweight = np.zeros_like(weight)
    for r in range(m):
        for t in range(m):
            dweight[:, r, t] = np.sum(grad_out * xp[:, r:r + height, t:t + width], axis=(1, 2))
            dxp[:, r:r + height, t:t + width] += weight[:, r, t][:, None, None] * grad_out
    dx = dxp[:, p:p + height, p:p + width]
    dbias = grad_out.sum(axis=(1, 2)) if has_bias else None
    return dx, dweight, dbias


def depthwise_conv_via_support(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """逐通道以支撑矩阵计算深度卷积(模块边界一致性参照)"""
    height, width = x.shape[1:]
    out = np.empty_like(x, dtype=np.float64)
    for c in range(x.shape[0]):
        support = assemble_support(KernelSpec(weight[c]), height, width)
        out[c] = conv_via_support(support, x[c])
    return out
