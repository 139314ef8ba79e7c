"""
基础数值运算: 激活函数、归一化、二维离散傅里叶变换
"""

import logging
from typing import Optional, Tuple

import numpy as np
from scipy import special

from .exceptions import DimensionMismatch, ShapeError

logger = logging.getLogger(__name__)

# 特征图约定为 (D, H, W) 的 float64 数组
DEFAULT_NORM_EPS = 1e-6


def as_feature_map(x: np.ndarray, name: str = "x") -> np.ndarray:
    """校验并转换为 (D, H, W) 特征图"""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"{name} 应为 (D, H, W) 三维张量，实际维度 {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"{name} 的各维度必须 ≥ 1: {arr.shape}")
    ensure_finite(arr, name)
    return arr


def ensure_finite(x: np.ndarray, name: str = "x") -> None:
    """检查张量中不含 NaN/Inf"""
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} 含有非有限值")


def gelu(x: np.ndarray) -> np.ndarray:
    """精确 erf 形式的 GELU: x·Φ(x)"""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + special.erf(x / np.sqrt(2.0)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """GELU 导数: Φ(x) + x·φ(x)"""
    x = np.asarray(x, dtype=np.float64)
    cdf = 0.5 * (1.0 + special.erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return cdf + x * pdf


def sigmoid(x: np.ndarray) -> np.ndarray:
    """数值稳定的 sigmoid"""
    return special.expit(np.asarray(x, dtype=np.float64))


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    """按行 softmax，先减去每行最大值"""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim < 1:
        raise ShapeError("softmax 输入至少为一维")
    shifted = s - np.max(s, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_rows_backward(probs: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """按行 softmax 的反向传播"""
    inner = np.sum(grad_out * probs, axis=-1, keepdims=True)
    return probs * (grad_out - inner)


def spatial_norm(x: np.ndarray, gain: np.ndarray, eps: float = DEFAULT_NORM_EPS,
                 bias: Optional[np.ndarray] = None) -> np.ndarray:
    """
    组数为1的空间归一化(修改版层归一化)。

    均值和方差在所有通道与空间位置上联合统计；方差小于 eps 时输出全零。
    """
    out, _ = spatial_norm_forward(x, gain, eps, bias)
    return out


def spatial_norm_forward(x: np.ndarray, gain: np.ndarray, eps: float = DEFAULT_NORM_EPS,
                         bias: Optional[np.ndarray] = None) -> Tuple[np.ndarray, dict]:
    """空间归一化前向，同时返回反向所需缓存"""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"spatial_norm 需要 (D, H, W) 输入，实际 {x.shape}")
    if x.size < 2:
        raise ShapeError("spatial_norm 要求 D·H·W ≥ 2")
    gain = np.asarray(gain, dtype=np.float64)
    if gain.shape != (x.shape[0],):
        raise DimensionMismatch(f"gain 形状 {gain.shape} 与通道数 {x.shape[0]} 不匹配")

    mean = x.mean()
    var = x.var()
    guarded = bool(var < eps)
    if guarded:
        x_hat = np.zeros_like(x)
        inv_std = 0.0
    else:
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x - mean) * inv_std

    out = gain[:, None, None] * x_hat
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[:, None, None]
    cache = {'x_hat': x_hat, 'inv_std': inv_std, 'gain': gain, 'guarded': guarded,
             'has_bias': bias is not None}
    return out, cache


def spatial_norm_backward(cache: dict, grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """空间归一化反向: 返回 (dx, dgain, dbias)"""
    x_hat = cache['x_hat']
    dbias = grad_out.sum(axis=(1, 2)) if cache['has_bias'] else None
    dgain = np.sum(grad_out * x_hat, axis=(1, 2))
    if cache['guarded']:
        return np.zeros_like(grad_out), dgain, dbias

    dx_hat = grad_out * cache['gain'][:, None, None]
    dx = cache['inv_std'] * (dx_hat - dx_hat.mean() - x_hat * np.mean(dx_hat * x_hat))
    return dx, dgain, dbias


def channel_layer_norm_forward(x: np.ndarray, gain: np.ndarray, eps: float = DEFAULT_NORM_EPS,
                               bias: Optional[np.ndarray] = None) -> Tuple[np.ndarray, dict]:
    """逐位置沿通道维的层归一化(MetaFormer LayerNorm2d)"""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0, keepdims=True)
    var = x.var(axis=0, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    out = gain[:, None, None] * x_hat
    if bias is not None:
        out = out + bias[:, None, None]
    return out, {'x_hat': x_hat, 'inv_std': inv_std, 'gain': gain, 'has_bias': bias is not None}


def channel_layer_norm_backward(cache: dict, grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """通道层归一化反向"""
    x_hat = cache['x_hat']
    dgain = np.sum(grad_out * x_hat, axis=(1, 2))
    dbias = grad_out.sum(axis=(1, 2)) if cache['has_bias'] else None
    dx_hat = grad_out * cache['gain'][:, None, None]
    dx = cache['inv_std'] * (dx_hat - dx_hat.mean(axis=0, keepdims=True)
                             - x_hat * np.mean(dx_hat * x_hat, axis=0, keepdims=True))
    return dx, dgain, dbias


def dft2(x: np.ndarray) -> np.ndarray:
    """二维 DFT(不归一化)，作用于最后两个轴"""
    x = np.asarray(x)
    if x.ndim < 2 or min(x.shape[-2:]) < 1:
        raise ShapeError(f"dft2 需要 H, W ≥ 1，实际 {x.shape}")
    return np.fft.fft2(x, axes=(-2, -1))


def idft2(x_hat: np.ndarray) -> np.ndarray:
    """二维逆 DFT，带 1/(H·W) 归一化"""
    x_hat = np.asarray(x_hat)
    if x_hat.ndim < 2 or min(x_hat.shape[-2:]) < 1:
        raise ShapeError(f"idft2 需要 H, W ≥ 1，实际 {x_hat.shape}")
    return np.fft.ifft2(x_hat, axes=(-2, -1))


def dft2_direct(x: np.ndarray) -> np.ndarray:
    """直接求和形式的二维 DFT，O((HW)^2)，用作 FFT 的独立参照"""
    x = np.asarray(x, dtype=np.complex128)
    height, width = x.shape[-2:]
    fh = np.exp(-2j * np.pi * np.outer(np.arange(height), np.arange(height)) / height)
    fw = np.exp(-2j * np.pi * np.outer(np.arange(width), np.arange(width)) / width)
    return fh @ x @ fw.T


def hermitian_mirror(spectrum: np.ndarray) -> np.ndarray:
    """返回 bin(-u mod H, -v mod W) 重排后的频谱"""
    flipped = np.flip(spectrum, axis=(-2, -1))
    return np.roll(flipped, shift=(1, 1), axis=(-2, -1))


def pointwise_linear(weight: np.ndarray, x: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """逐空间位置的通道线性变换(1×1 卷积语义)"""
    if weight.shape[1] != x.shape[0]:
        raise DimensionMismatch(f"线性层输入通道 {weight.shape[1]} 与特征通道 {x.shape[0]} 不匹配")
    out = np.einsum('oi,ihw->ohw', weight, x)
    if bias is not None:
        out = out + bias[:, None, None]
    return out


def pointwise_linear_backward(weight: np.ndarray, x: np.ndarray, grad_out: np.ndarray,
                              has_bias: bool = False) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """通道线性变换反向: 返回 (dx, dweight, dbias)"""
    dweight = np.einsum('ohw,ihw->oi', grad_out, x)
    dx = np.einsum('oi,ohw->ihw', weight, grad_out)
    dbias = grad_out.sum(axis=(1, 2)) if has_bias else None
    return dx, dweight, dbias
