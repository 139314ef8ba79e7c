"""
SPAM 混合器: 值投影、谱自适应门控(多核深度卷积 + 频域重缩放 + Exp)、上下文聚合、调制与输出线性层

张量约定为单样本 (D, H, W)，线性层为逐位置的 1×1 语义。前向与手工推导的反向成对实现。
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import DimensionMismatch, ShapeError
from ..core.numerics import (
    DEFAULT_NORM_EPS,
    as_feature_map,
    dft2,
    gelu,
    gelu_grad,
    idft2,
    pointwise_linear,
    pointwise_linear_backward,
    sigmoid,
    spatial_norm_backward,
    spatial_norm_forward,
)
from ..core.rng import Rng
from ..spectral.conv_support import depthwise_conv, depthwise_conv_backward

logger = logging.getLogger(__name__)

NUM_HEADS = 4
KERNEL_SIZES = (3, 5, 7, 9)
SRF_MODES = ("depthwise", "single", "none")


@dataclass
class SrfMask:
    """
    频域重缩放掩码。

    depthwise: logits 形状 (d_h, H, W)；single: (1, H, W) 在通道间广播。Ψ = sigmoid(logits)。
    """
    logits: np.ndarray
    mode: str = "depthwise"

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 3:
            raise ShapeError(f"掩码 logits 需为三维，实际 {self.logits.shape}")
        if self.mode not in ("depthwise", "single"):
            raise ValueError(f"未知的掩码模式: {self.mode}")
        if self.mode == "single" and self.logits.shape[0] != 1:
            raise ShapeError(f"single 模式掩码首维必须为 1: {self.logits.shape}")

    @property
    def psi(self) -> np.ndarray:
        return sigmoid(self.logits)

    @classmethod
    def uniform(cls, channels: int, height: int, width: int, value: float,
                mode: str = "depthwise") -> 'SrfMask':
        """Ψ 处处等于 value ∈ (0, 1) 的掩码"""
        if not 0.0 < value < 1.0:
            raise ValueError(f"掩码取值必须在 (0, 1) 内: {value}")
        depth = 1 if mode == "single" else channels
        logit = np.log(value) - np.log1p(-value)
        return cls(np.full((depth, height, width), logit), mode)


@dataclass
class SpamHead:
    """一个门控头: 深度卷积核 (d_h, m, m)、可选掩码、Exp 权重 (2d_h, d_h)"""
    kernel: np.ndarray
    exp_weight: np.ndarray
    mask: Optional[SrfMask] = None
    kernel_bias: Optional[np.ndarray] = None
    exp_bias: Optional[np.ndarray] = None

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[1]

    @property
    def width(self) -> int:
        return self.kernel.shape[0]


@dataclass
class SpamParams:
    """一个 SPAM 混合器的全部可学习参数，默认无偏置"""
    value_weight: np.ndarray
    in_weight: np.ndarray
    heads: List[SpamHead]
    norm_gain: np.ndarray
    proj_weight: np.ndarray
    out_weight: np.ndarray
    value_bias: Optional[np.ndarray] = None
    in_bias: Optional[np.ndarray] = None
    norm_bias: Optional[np.ndarray] = None
    proj_bias: Optional[np.ndarray] = None
    out_bias: Optional[np.ndarray] = None
    eps: float = DEFAULT_NORM_EPS

    def __post_init__(self):
        dim = self.value_weight.shape[0]
        if dim % NUM_HEADS:
            raise DimensionMismatch(f"通道数 {dim} 不能被头数 {NUM_HEADS} 整除")
        if len(self.heads) != NUM_HEADS:
            raise DimensionMismatch(f"需要 {NUM_HEADS} 个门控头，实际 {len(self.heads)}")
        d_h = dim // NUM_HEADS
        expected = {
            'value_weight': (dim, dim),
            'in_weight': (dim, dim),
            'norm_gain': (2 * dim,),
            'proj_weight': (dim, 2 * dim),
            'out_weight': (dim, dim),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionMismatch(f"{name} 形状 {getattr(self, name).shape} 应为 {shape}")
        for i, head in enumerate(self.heads):
            if head.width != d_h or head.exp_weight.shape != (2 * d_h, d_h):
                raise DimensionMismatch(f"第 {i} 个门控头的宽度与 d_h={d_h} 不一致")

    @property
    def dim(self) -> int:
        return self.value_weight.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // NUM_HEADS

    @property
    def srf_mode(self) -> str:
        mask = self.heads[0].mask
        return "none" if mask is None else mask.mode

    @property
    def has_bias(self) -> bool:
        return self.value_bias is not None

    def named_tensors(self) -> Dict[str, np.ndarray]:
        """名称 → 参数数组(引用，非拷贝)"""
        tensors = {'value.weight': self.value_weight, 'in_proj.weight': self.in_weight}
        for i, head in enumerate(self.heads):
            tensors[f'heads.{i}.conv.weight'] = head.kernel
            if head.kernel_bias is not None:
                tensors[f'heads.{i}.conv.bias'] = head.kernel_bias
            if head.mask is not None:
                tensors[f'heads.{i}.srf.logits'] = head.mask.logits
            tensors[f'heads.{i}.exp.weight'] = head.exp_weight
            if head.exp_bias is not None:
                tensors[f'heads.{i}.exp.bias'] = head.exp_bias
        tensors['norm.weight'] = self.norm_gain
        tensors['proj.weight'] = self.proj_weight
        tensors['out.weight'] = self.out_weight
        for name, bias in (('value.bias', self.value_bias), ('in_proj.bias', self.in_bias),
                           ('norm.bias', self.norm_bias), ('proj.bias', self.proj_bias),
                           ('out.bias', self.out_bias)):
            if bias is not None:
                tensors[name] = bias
        return tensors

    @classmethod
    def from_named(cls, tensors: Dict[str, np.ndarray], srf_mode: str = "depthwise",
                   eps: float = DEFAULT_NORM_EPS) -> 'SpamParams':
        """由 named_tensors 形式的字典重建，数组按引用共享"""
        heads = []
        for i in range(NUM_HEADS):
            logits = tensors.get(f'heads.{i}.srf.logits')
            heads.append(SpamHead(
                kernel=tensors[f'heads.{i}.conv.weight'],
                exp_weight=tensors[f'heads.{i}.exp.weight'],
                mask=None if logits is None or srf_mode == "none" else SrfMask(logits, srf_mode),
                kernel_bias=tensors.get(f'heads.{i}.conv.bias'),
                exp_bias=tensors.get(f'heads.{i}.exp.bias'),
            ))
        return cls(
            value_weight=tensors['value.weight'],
            in_weight=tensors['in_proj.weight'],
            heads=heads,
            norm_gain=tensors['norm.weight'],
            proj_weight=tensors['proj.weight'],
            out_weight=tensors['out.weight'],
            value_bias=tensors.get('value.bias'),
            in_bias=tensors.get('in_proj.bias'),
            norm_bias=tensors.get('norm.bias'),
            proj_bias=tensors.get('proj.bias'),
            out_bias=tensors.get('out.bias'),
            eps=eps,
        )


def init_spam_params(dim: int, height: int, width: int, rng: Rng, srf_mode: str = "depthwise",
                     biases: bool = False, kernel_sizes: Sequence[int] = KERNEL_SIZES,
                     mask_init: float = 0.0, eps: float = DEFAULT_NORM_EPS) -> SpamParams:
    """
    初始化 SPAM 参数。

    线性层与卷积核按 N(0, 1/fan_in) 抽取，掩码 logits 初始化为 mask_init(默认 0，即 Ψ = 0.5)。
    """
    if dim % NUM_HEADS:
        raise DimensionMismatch(f"通道数 {dim} 不能被头数 {NUM_HEADS} 整除")
    if len(kernel_sizes) != NUM_HEADS:
        raise DimensionMismatch(f"需要 {NUM_HEADS} 个核尺寸: {kernel_sizes}")
    if srf_mode not in SRF_MODES:
        raise ValueError(f"未知的 SRF 模式: {srf_mode}")

    d_h = dim // NUM_HEADS

    def linear(name: str, out_dim: int, in_dim: int) -> np.ndarray:
        return rng.split(name).normal((out_dim, in_dim), 1.0 / np.sqrt(in_dim))

    def bias(size: int) -> Optional[np.ndarray]:
        return np.zeros(size) if biases else None

    heads = []
    for i, m in enumerate(kernel_sizes):
        mask = None
        if srf_mode != "none":
            depth = 1 if srf_mode == "single" else d_h
            mask = SrfMask(np.full((depth, height, width), float(mask_init)), srf_mode)
        heads.append(SpamHead(
            kernel=rng.split(f"heads.{i}.conv").normal((d_h, m, m), 1.0 / m),
            exp_weight=linear(f"heads.{i}.exp", 2 * d_h, d_h),
            mask=mask,
            kernel_bias=bias(d_h),
            exp_bias=bias(2 * d_h),
        ))
    return SpamParams(
        value_weight=linear("value", dim, dim),
        in_weight=linear("in_proj", dim, dim),
        heads=heads,
        norm_gain=np.ones(2 * dim),
        proj_weight=linear("proj", dim, 2 * dim),
        out_weight=linear("out", dim, dim),
        value_bias=bias(dim),
        in_bias=bias(dim),
        norm_bias=bias(2 * dim),
        proj_bias=bias(dim),
        out_bias=bias(dim),
        eps=eps,
    )


def _check_input(x: np.ndarray, params: SpamParams) -> np.ndarray:
    x = as_feature_map(x)
    if x.shape[0] != params.dim:
        raise DimensionMismatch(f"输入通道 {x.shape[0]} 与 SPAM 维度 {params.dim} 不匹配")
    return x


def value_projection(x: np.ndarray, params: SpamParams) -> np.ndarray:
    """V(X) = GELU(Linear(X))"""
    x = _check_input(x, params)
    return gelu(pointwise_linear(params.value_weight, x, params.value_bias))


# ---------------------------------------------------------------------------
# 频域重缩放
# ---------------------------------------------------------------------------

def _check_mask(x: np.ndarray, mask: SrfMask) -> None:
    depth, height, width = mask.logits.shape
    if x.shape[1:] != (height, width):
        raise DimensionMismatch(f"掩码空间尺寸 {(height, width)} 与输入 {x.shape[1:]} 不匹配")
    if depth not in (1, x.shape[0]):
        raise DimensionMismatch(f"掩码通道 {depth} 与输入通道 {x.shape[0]} 不匹配")


def srf_forward(x: np.ndarray, mask: SrfMask) -> Tuple[np.ndarray, dict]:
    """SRF 前向: Re(idft2(Ψ ⊙ dft2(x)))，缓存中记录虚部残差"""
    x = np.asarray(x, dtype=np.float64)
    _check_mask(x, mask)
    spectrum = dft2(x)
    psi = mask.psi
    filtered = idft2(psi * spectrum)
    cache = {
        'spectrum': spectrum,
        'psi': psi,
        'mode': mask.mode,
        'imag_residual': float(np.max(np.abs(filtered.imag), initial=0.0)),
    }
    return filtered.real.copy(), cache


def srf(x: np.ndarray, mask: SrfMask) -> np.ndarray:
    """逐通道 dft2 → 乘以 Ψ → idft2 → 取实部"""
    out, _ = srf_forward(x, mask)
    return out


def srf_imag_residual(x: np.ndarray, mask: SrfMask) -> float:
    """实部投影前的最大虚部幅值(诊断用)"""
    _, cache = srf_forward(x, mask)
    return cache['imag_residual']


def srf_backward(cache: dict, grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    SRF 反向: 返回 (dx, dlogits)。

    实部投影的伴随把实梯度嵌入为虚部为零的复数；idft2 的伴随为 dft2/(HW)，dft2 的伴随为 HW·idft2。
    """
    height, width = grad_out.shape[-2:]
    psi = cache['psi']
    grad_filtered = dft2(grad_out) / (height * width)
    grad_psi = np.real(grad_filtered * np.conj(cache['spectrum']))
    dx = np.real(idft2(psi * grad_filtered) * (height * width))
    dlogits = grad_psi * psi * (1.0 - psi)
    if cache['mode'] == "single":
        dlogits = dlogits.sum(axis=0, keepdims=True)
    return dx, dlogits


# ---------------------------------------------------------------------------
# 门控头与上下文聚合
# ---------------------------------------------------------------------------

def _head_forward(x: np.ndarray, head: SpamHead) -> Tuple[np.ndarray, dict]:
    conv_out = depthwise_conv(x, head.kernel, head.kernel_bias)
    if head.mask is not None:
        filtered, srf_cache = srf_forward(conv_out, head.mask)
    else:
        filtered, srf_cache = conv_out, None
    out = pointwise_linear(head.exp_weight, filtered, head.exp_bias)
    return out, {'x': x, 'filtered': filtered, 'srf': srf_cache}


def _head_backward(cache: dict, head: SpamHead, grad_out: np.ndarray, prefix: str,
                   grads: Dict[str, np.ndarray]) -> np.ndarray:
    d_filtered, grads[f'{prefix}.exp.weight'], d_exp_bias = pointwise_linear_backward(
        head.exp_weight, cache['filtered'], grad_out, head.exp_bias is not None)
    if d_exp_bias is not None:
        grads[f'{prefix}.exp.bias'] = d_exp_bias
    if cache['srf'] is not None:
        d_conv, grads[f'{prefix}.srf.logits'] = srf_backward(cache['srf'], d_filtered)
    else:
        d_conv = d_filtered
    dx, grads[f'{prefix}.conv.weight'], d_conv_bias = depthwise_conv_backward(
        cache['x'], head.kernel, d_conv, head.kernel_bias is not None)
    if d_conv_bias is not None:
        grads[f'{prefix}.conv.bias'] = d_conv_bias
    return dx


def sag_head(x_head: np.ndarray, kernel: np.ndarray, mask: Optional[SrfMask], exp_weight: np.ndarray,
             kernel_bias: Optional[np.ndarray] = None, exp_bias: Optional[np.ndarray] = None) -> np.ndarray:
    """Head = Exp(SRF(DWConv_{m×m}(x)))，返回 (2d_h, H, W)；mask 为 None 时跳过 SRF"""
    x_head = np.asarray(x_head, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    exp_weight = np.asarray(exp_weight, dtype=np.float64)
    if exp_weight.shape[1] != x_head.shape[0]:
        raise DimensionMismatch(f"Exp 输入维度 {exp_weight.shape[1]} 与头宽 {x_head.shape[0]} 不匹配")
    out, _ = _head_forward(x_head, SpamHead(kernel, exp_weight, mask, kernel_bias, exp_bias))
    return out


def _context_forward(x: np.ndarray, params: SpamParams) -> Tuple[np.ndarray, dict]:
    a = pointwise_linear(params.in_weight, x, params.in_bias)
    d_h = params.head_dim
    head_outs, head_caches = [], []
    for i, head in enumerate(params.heads):
        out, cache = _head_forward(a[i * d_h:(i + 1) * d_h], head)
        head_outs.append(out)
        head_caches.append(cache)
    concat = np.concatenate(head_outs, axis=0)
    normed, norm_cache = spatial_norm_forward(concat, params.norm_gain, params.eps, params.norm_bias)
    activated = gelu(normed)
    context = pointwise_linear(params.proj_weight, activated, params.proj_bias)
    cache = {'x': x, 'heads': head_caches, 'norm': norm_cache, 'normed': normed, 'activated': activated}
    return context, cache


def _context_backward(cache: dict, params: SpamParams, grad_out: np.ndarray,
                      grads: Dict[str, np.ndarray]) -> np.ndarray:
    d_act, grads['proj.weight'], d_proj_bias = pointwise_linear_backward(
        params.proj_weight, cache['activated'], grad_out, params.proj_bias is not None)
    if d_proj_bias is not None:
        grads['proj.bias'] = d_proj_bias
    d_normed = d_act * gelu_grad(cache['normed'])
    d_concat, grads['norm.weight'], d_norm_bias = spatial_norm_backward(cache['norm'], d_normed)
    if d_norm_bias is not None:
        grads['norm.bias'] = d_norm_bias

    two_dh = 2 * params.head_dim
    d_a = np.concatenate([
        _head_backward(head_cache, head, d_concat[i * two_dh:(i + 1) * two_dh], f'heads.{i}', grads)
        for i, (head, head_cache) in enumerate(zip(params.heads, cache['heads']))
    ], axis=0)
    dx, grads['in_proj.weight'], d_in_bias = pointwise_linear_backward(
        params.in_weight, cache['x'], d_a, params.in_bias is not None)
    if d_in_bias is not None:
        grads['in_proj.bias'] = d_in_bias
    return dx


def context_aggregation(x: np.ndarray, params: SpamParams) -> np.ndarray:
    """C(X) = Proj(GELU(SpatialNorm([Head₁; …; Head₄])))"""
    x = _check_input(x, params)
    context, _ = _context_forward(x, params)
    return context


# ---------------------------------------------------------------------------
# 完整混合器
# ---------------------------------------------------------------------------

def spam_forward_cached(x: np.ndarray, params: SpamParams) -> Tuple[np.ndarray, dict]:
    """前向并返回反向缓存"""
    x = _check_input(x, params)
    pre_value = pointwise_linear(params.value_weight, x, params.value_bias)
    value = gelu(pre_value)
    context, context_cache = _context_forward(x, params)
    modulated = value * context
    out = pointwise_linear(params.out_weight, modulated, params.out_bias)
    cache = {'x': x, 'pre_value': pre_value, 'value': value, 'context': context,
             'context_cache': context_cache, 'modulated': modulated}
    return out, cache


def spam_forward(x: np.ndarray, params: SpamParams) -> np.ndarray:
    """SPAM(X) = Linear(V(X) ⊙ C(X))，形状不变"""
    out, _ = spam_forward_cached(x, params)
    return out


def spam_backward(x: np.ndarray, params: SpamParams, grad_out: np.ndarray,
                  cache: Optional[dict] = None) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """
    SPAM 反向。

    返回 (dx, grads)，grads 的键与 SpamParams.named_tensors() 一致。
    """
    if cache is None:
        _, cache = spam_forward_cached(x, params)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != cache['x'].shape:
        raise DimensionMismatch(f"上游梯度形状 {grad_out.shape} 与输入 {cache['x'].shape} 不一致")

    grads: Dict[str, np.ndarray] = {}
    d_mod, grads['out.weight'], d_out_bias = pointwise_linear_backward(
        params.out_weight, cache['modulated'], grad_out, params.out_bias is not None)
    if d_out_bias is not None:
        grads['out.bias'] = d_out_bias

    d_value = d_mod * cache['context']
    d_context = d_mod * cache['value']

    d_pre_value = d_value * gelu_grad(cache['pre_value'])
    dx_value, grads['value.weight'], d_value_bias = pointwise_linear_backward(
        params.value_weight, cache['x'], d_pre_value, params.value_bias is not None)
    if d_value_bias is not None:
        grads['value.bias'] = d_value_bias

    dx_context = _context_backward(cache['context_cache'], params, d_context, grads)
    ordered = {name: grads[name] for name in params.named_tensors()}
    return dx_value + dx_context, ordered
