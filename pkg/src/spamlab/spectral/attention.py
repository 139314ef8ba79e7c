"""
缩放点积自注意力、其卷积支撑形式与 MixAttention
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from ..core.exceptions import DimensionMismatch, ShapeError
from ..core.numerics import softmax_rows
from .conv_support import depthwise_conv

logger = logging.getLogger(__name__)


@dataclass
class AttentionParams:
    """
    注意力投影参数。

    w_q, w_k, w_v 形状均为 (D, num_heads·d_h)，默认无偏置。
    """
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    num_heads: int = 1

    def __post_init__(self):
        for name in ('w_q', 'w_k', 'w_v'):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.w_q.shape != self.w_k.shape:
            raise DimensionMismatch(f"W_q {self.w_q.shape} 与 W_k {self.w_k.shape} 形状不一致")
        if self.w_v.shape[0] != self.w_q.shape[0]:
            raise DimensionMismatch("W_v 输入维度与 W_q 不一致")
        if self.num_heads < 1 or self.w_q.shape[1] % self.num_heads or self.w_v.shape[1] % self.num_heads:
            raise DimensionMismatch(f"投影宽度不能被头数 {self.num_heads} 整除")

    @property
    def embed_dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.w_q.shape[1] // self.num_heads

    @property
    def value_head_dim(self) -> int:
        return self.w_v.shape[1] // self.num_heads


def _tokens(x: np.ndarray, params: AttentionParams) -> np.ndarray:
    """X: (D, HW) → Xᵀ"""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"注意力输入应为 (D, HW)，实际 {x.shape}")
    if x.shape[0] != params.embed_dim:
        raise DimensionMismatch(f"输入维度 {x.shape[0]} 与投影维度 {params.embed_dim} 不匹配")
    return x.T


def attention_matrix(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """E = softmax(QKᵀ/√d_h)"""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
        raise DimensionMismatch(f"Q {q.shape} 与 K {k.shape} 的 d_h 不匹配")
    return softmax_rows(q @ k.T / np.sqrt(q.shape[1]))


def head_attention_matrices(x: np.ndarray, params: AttentionParams) -> List[np.ndarray]:
    """每个头的注意力矩阵"""
    tokens = _tokens(x, params)
    q = tokens @ params.w_q
    k = tokens @ params.w_k
    d = params.head_dim
    return [attention_matrix(q[:, h * d:(h + 1) * d], k[:, h * d:(h + 1) * d])
            for h in range(params.num_heads)]


def attention(x: np.ndarray, params: AttentionParams) -> np.ndarray:
    """直接形式 E(XᵀW_v)，返回 (HW, num_heads·d_v)"""
    tokens = _tokens(x, params)
    values = tokens @ params.w_v
    dv = params.value_head_dim
    heads = head_attention_matrices(x, params)
    return np.concatenate([e @ values[:, h * dv:(h + 1) * dv] for h, e in enumerate(heads)], axis=1)


def attention_support_terms(x: np.ndarray, params: AttentionParams) -> List[np.ndarray]:
    """每个值通道 i 的支撑矩阵 C^(i)(同一头内共享注意力权重)"""
    heads = head_attention_matrices(x, params)
    dv = params.value_head_dim
    return [heads[i // dv] for i in range(params.w_v.shape[1])]


def attention_as_support(x: np.ndarray, params: AttentionParams) -> np.ndarray:
    """Σ_i C^(i) Xᵀ w_v^(i)，w_v^(i) 只保留 W_v 的第 i 列"""
    tokens = _tokens(x, params)
    supports = attention_support_terms(x, params)
    out = np.zeros((tokens.shape[0], params.w_v.shape[1]))
    for i, support in enumerate(supports):
        w_i = np.zeros_like(params.w_v)
        w_i[:, i] = params.w_v[:, i]
        out += support @ (tokens @ w_i)
    return out


def mix_attention(x: np.ndarray, params: AttentionParams, conv_weight: np.ndarray) -> np.ndarray:
    """
    MixAttention: E(V) + DWConv_{m×m}(Ṽ)。

    x: (D, H, W)；conv_weight: (num_heads·d_v, m, m)；返回 (num_heads·d_v, H, W)。
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"MixAttention 输入应为 (D, H, W)，实际 {x.shape}")
    _, height, width = x.shape
    flat = x.reshape(x.shape[0], -1)
    attended = attention(flat, params)
    values = (flat.T @ params.w_v).T.reshape(-1, height, width)
    if conv_weight.shape[0] != values.shape[0]:
        raise DimensionMismatch(f"卷积通道 {conv_weight.shape[0]} 与值通道 {values.shape[0]} 不匹配")
    convolved = depthwise_conv(values, conv_weight)
    return attended.T.reshape(-1, height, width) + convolved


def random_attention_params(rng, embed_dim: int, head_dim: int, num_heads: int = 1,
                            scale: Optional[float] = None) -> AttentionParams:
    """按 N(0,1)/√D 抽取投影矩阵"""
    scale = 1.0 / np.sqrt(embed_dim) if scale is None else scale
    width = head_dim * num_heads
    return AttentionParams(
        w_q=rng.split("w_q").normal((embed_dim, width), scale),
        w_k=rng.split("w_k").normal((embed_dim, width), scale),
        w_v=rng.split("w_v").normal((embed_dim, width), scale),
        num_heads=num_heads,
    )
