"""
令牌混合器: SPAM、SepConv、Attention、MixAttention
"""

import logging
from typing import Dict, Optional, Sequence

import numpy as np

from ..core.exceptions import DimensionMismatch
from ..core.numerics import DEFAULT_NORM_EPS, as_feature_map, softmax_rows_backward
from ..core.rng import Rng
from ..spectral.attention import attention_matrix
from .layers import GELU, DepthwiseConv, Module, PointwiseLinear
from .spam import KERNEL_SIZES, SpamParams, init_spam_params, spam_backward, spam_forward_cached

logger = logging.getLogger(__name__)

SPAM = "SPAM"
SEPCONV = "SepConv"
ATTENTION = "Attention"
MIXATTENTION = "MixAttention"
MIXER_TYPES = (SPAM, SEPCONV, ATTENTION, MIXATTENTION)

ATTENTION_HEAD_DIM = 32
MIX_KERNEL_SIZE = 7


class SpamMixer(Module):
    """SPAM 混合器模块，参数以 SpamParams.named_tensors() 的名称登记"""

    def __init__(self, dim: int, height: int, width: int, rng: Rng, srf_mode: str = "depthwise",
                 bias: bool = False, kernel_sizes: Sequence[int] = KERNEL_SIZES,
                 eps: float = DEFAULT_NORM_EPS):
        super().__init__()
        self.srf_mode = srf_mode
        self.eps = eps
        self.input_hw = (height, width)
        params = init_spam_params(dim, height, width, rng, srf_mode, bias, kernel_sizes, eps=eps)
        for name, tensor in params.named_tensors().items():
            self.register_parameter(name, tensor)

    def spam_params(self) -> SpamParams:
        return SpamParams.from_named(self._parameters, self.srf_mode, self.eps)

    def forward(self, x):
        if self.srf_mode != "none" and x.shape[1:] != self.input_hw:
            raise DimensionMismatch(f"SPAM 掩码尺寸 {self.input_hw} 与输入 {x.shape[1:]} 不匹配")
        params = self.spam_params()
        out, cache = spam_forward_cached(x, params)
        cache['params'] = params
        return out, cache

    def backward(self, cache, grad_out):
        return spam_backward(cache['x'], cache['params'], grad_out, cache)


class SepConv(Module):
    """MetaFormer SepConv: 逐点扩张 → GELU → 深度 7×7 → 逐点投影"""

    def __init__(self, dim: int, rng: Rng, expansion: int = 2, kernel_size: int = MIX_KERNEL_SIZE,
                 bias: bool = False):
        super().__init__()
        hidden = dim * expansion
        self.pwconv1 = self.add_module('pwconv1', PointwiseLinear(dim, hidden, rng.split('pwconv1'), bias))
        self.act = GELU()
        self.dwconv = self.add_module('dwconv', DepthwiseConv(hidden, kernel_size, rng.split('dwconv'), bias))
        self.pwconv2 = self.add_module('pwconv2', PointwiseLinear(hidden, dim, rng.split('pwconv2'), bias))

    def forward(self, x):
        h, c1 = self.pwconv1.forward(as_feature_map(x))
        a, ca = self.act.forward(h)
        d, cd = self.dwconv.forward(a)
        out, c2 = self.pwconv2.forward(d)
        return out, {'pwconv1': c1, 'act': ca, 'dwconv': cd, 'pwconv2': c2}

    def backward(self, cache, grad_out):
        dd, g2 = self.pwconv2.backward(cache['pwconv2'], grad_out)
        da, gd = self.dwconv.backward(cache['dwconv'], dd)
        dh, _ = self.act.backward(cache['act'], da)
        dx, g1 = self.pwconv1.backward(cache['pwconv1'], dh)
        return dx, {**self.scoped('pwconv1', g1), **self.scoped('dwconv', gd), **self.scoped('pwconv2', g2)}


def sep_conv_mixer(x: np.ndarray, params: Dict[str, np.ndarray]) -> np.ndarray:
    """
    函数式 SepConv。

    params 需包含 pwconv1.weight (2D, D)、dwconv.weight (2D, m, m)、pwconv2.weight (D, 2D)，偏置可选。
    """
    x = as_feature_map(x)
    expand = params['pwconv1.weight']
    if expand.shape[1] != x.shape[0]:
        raise DimensionMismatch(f"SepConv 输入通道 {expand.shape[1]} 与特征通道 {x.shape[0]} 不匹配")
    h = PointwiseLinear.from_arrays(expand, params.get('pwconv1.bias'))(x)
    d = DepthwiseConv.from_arrays(params['dwconv.weight'], params.get('dwconv.bias'))(GELU()(h))
    return PointwiseLinear.from_arrays(params['pwconv2.weight'], params.get('pwconv2.bias'))(d)


class AttentionMixer(Module):
    """
    多头自注意力混合器；mix_kernel 非空时为 MixAttention(注意力输出 + 值张量的深度卷积)。

    头宽 32，头数 max(1, D // 32)，无位置编码。
    """

    def __init__(self, dim: int, rng: Rng, head_dim: int = ATTENTION_HEAD_DIM, bias: bool = False,
                 mix_kernel: Optional[int] = None):
        super().__init__()
        self.num_heads = max(1, dim // head_dim)
        self.head_dim = head_dim
        width = self.num_heads * head_dim
        self.width = width
        self.qkv = self.add_module('qkv', PointwiseLinear(dim, 3 * width, rng.split('qkv'), bias))
        self.conv = None
        if mix_kernel is not None:
            self.conv = self.add_module('conv', DepthwiseConv(width, mix_kernel, rng.split('conv'), bias))
        self.proj = self.add_module('proj', PointwiseLinear(width, dim, rng.split('proj'), bias))

    def forward(self, x):
        x = as_feature_map(x)
        _, height, width = x.shape
        qkv, qkv_cache = self.qkv.forward(x)
        tokens = qkv.reshape(3, self.width, -1).transpose(0, 2, 1)
        q, k, v = tokens[0], tokens[1], tokens[2]

        d = self.head_dim
        heads = [attention_matrix(q[:, h * d:(h + 1) * d], k[:, h * d:(h + 1) * d])
                 for h in range(self.num_heads)]
        attended = np.concatenate([e @ v[:, h * d:(h + 1) * d] for h, e in enumerate(heads)], axis=1)
        mixed = attended.T.reshape(self.width, height, width)

        conv_cache = None
        if self.conv is not None:
            conv_out, conv_cache = self.conv.forward(v.T.reshape(self.width, height, width))
            mixed = mixed + conv_out
        out, proj_cache = self.proj.forward(mixed)
        cache = {'qkv': qkv_cache, 'q': q, 'k': k, 'v': v, 'heads': heads, 'conv': conv_cache,
                 'proj': proj_cache, 'hw': (height, width)}
        return out, cache

    def backward(self, cache, grad_out):
        height, width = cache['hw']
        d_mixed, grads_proj = self.proj.backward(cache['proj'], grad_out)
        q, k, v = cache['q'], cache['k'], cache['v']
        d_attended = d_mixed.reshape(self.width, -1).T

        dq = np.zeros_like(q)
        dk = np.zeros_like(k)
        dv = np.zeros_like(v)
        grads: Dict[str, np.ndarray] = {}
        if self.conv is not None:
            d_vmap, grads_conv = self.conv.backward(cache['conv'], d_mixed)
            dv += d_vmap.reshape(self.width, -1).T
            grads.update(self.scoped('conv', grads_conv))

        d = self.head_dim
        scale = 1.0 / np.sqrt(d)
        for h, e in enumerate(cache['heads']):
            cols = slice(h * d, (h + 1) * d)
            g_head = d_attended[:, cols]
            dv[:, cols] += e.T @ g_head
            d_scores = softmax_rows_backward(e, g_head @ v[:, cols].T) * scale
            dq[:, cols] = d_scores @ k[:, cols]
            dk[:, cols] = d_scores.T @ q[:, cols]

        d_qkv = np.concatenate([dq.T, dk.T, dv.T], axis=0).reshape(3 * self.width, height, width)
        dx, grads_qkv = self.qkv.backward(cache['qkv'], d_qkv)
        return dx, {**self.scoped('qkv', grads_qkv), **grads, **self.scoped('proj', grads_proj)}


def build_mixer(kind: str, dim: int, height: int, width: int, rng: Rng, srf_mode: str = "depthwise",
                bias: bool = False, kernel_sizes: Sequence[int] = KERNEL_SIZES,
                eps: float = DEFAULT_NORM_EPS) -> Module:
    """按类型名构建混合器"""
    if kind == SPAM:
        return SpamMixer(dim, height, width, rng, srf_mode, bias, kernel_sizes, eps)
    if kind == SEPCONV:
        return SepConv(dim, rng, bias=bias)
    if kind == ATTENTION:
        return AttentionMixer(dim, rng, bias=bias)
    if kind == MIXATTENTION:
        return AttentionMixer(dim, rng, bias=bias, mix_kernel=MIX_KERNEL_SIZE)
    raise ValueError(f"未知的混合器类型: {kind}")
