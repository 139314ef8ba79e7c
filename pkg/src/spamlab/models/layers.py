"""
带手工反向传播的基础层

每个模块的 forward(x) 返回 (out, cache)，backward(cache, grad) 返回 (dx, grads)，
grads 的键与 named_parameters() 的名称一致。
"""

import logging
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from ..core.exceptions import ContainerFormatError, DimensionMismatch
from ..core.numerics import (
    DEFAULT_NORM_EPS,
    channel_layer_norm_backward,
    channel_layer_norm_forward,
    gelu,
    gelu_grad,
    pointwise_linear,
    pointwise_linear_backward,
)
from ..core.rng import Rng
from ..spectral.conv_support import conv2d, conv2d_backward, depthwise_conv, depthwise_conv_backward

logger = logging.getLogger(__name__)

Grads = Dict[str, np.ndarray]


class Module:
    """参数化模块基类"""

    def __init__(self):
        self._parameters: Dict[str, np.ndarray] = {}
        self._modules: Dict[str, 'Module'] = {}

    def register_parameter(self, name: str, value: np.ndarray) -> np.ndarray:
        self._parameters[name] = np.asarray(value, dtype=np.float64)
        return self._parameters[name]

    def add_module(self, name: str, module: 'Module') -> 'Module':
        self._modules[name] = module
        return module

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, np.ndarray]]:
        for name, param in self._parameters.items():
            yield prefix + name, param
        for module_name, module in self._modules.items():
            yield from module.named_parameters(f"{prefix}{module_name}.")

    def named_modules(self, prefix: str = '') -> Iterator[Tuple[str, 'Module']]:
        yield prefix.rstrip('.'), self
        for module_name, module in self._modules.items():
            yield from module.named_modules(f"{prefix}{module_name}.")

    def parameters(self) -> Dict[str, np.ndarray]:
        """名称 → 参数数组(引用)"""
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return int(sum(p.size for _, p in self.named_parameters()))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: param.copy() for name, param in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """原地写入参数，名称与形状必须完全一致"""
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise ContainerFormatError(f"参数名称不一致: 缺少 {missing[:3]}, 多余 {unexpected[:3]}")
        for name, param in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise ContainerFormatError(f"参数 {name} 形状 {value.shape} 应为 {param.shape}")
            param[...] = value

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, dict]:
        raise NotImplementedError

    def backward(self, cache: dict, grad_out: np.ndarray) -> Tuple[np.ndarray, Grads]:
        raise NotImplementedError

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    @staticmethod
    def scoped(name: str, grads: Grads) -> Grads:
        return {f"{name}.{key}": value for key, value in grads.items()}


class Identity(Module):

    def forward(self, x):
        return x, {}

    def backward(self, cache, grad_out):
        return grad_out, {}


class PointwiseLinear(Module):
    """逐位置通道线性层 (out, in)"""

    def __init__(self, in_dim: int, out_dim: int, rng: Rng, bias: bool = False,
                 std: Optional[float] = None):
        super().__init__()
        std = 1.0 / np.sqrt(in_dim) if std is None else std
        self.weight = self.register_parameter('weight', rng.normal((out_dim, in_dim), std))
        self.bias = self.register_parameter('bias', np.zeros(out_dim)) if bias else None

    @classmethod
    def from_arrays(cls, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> 'PointwiseLinear':
        layer = cls.__new__(cls)
        Module.__init__(layer)
        layer.weight = layer.register_parameter('weight', weight)
        layer.bias = layer.register_parameter('bias', bias) if bias is not None else None
        return layer

    def forward(self, x):
        return pointwise_linear(self.weight, x, self.bias), {'x': x}

    def backward(self, cache, grad_out):
        dx, dw, db = pointwise_linear_backward(self.weight, cache['x'], grad_out, self.bias is not None)
        grads = {'weight': dw}
        if db is not None:
            grads['bias'] = db
        return dx, grads


class DepthwiseConv(Module):
    """逐通道 m×m 卷积，空间尺寸不变"""

    def __init__(self, channels: int, kernel_size: int, rng: Rng, bias: bool = False):
        super().__init__()
        self.weight = self.register_parameter(
            'weight', rng.normal((channels, kernel_size, kernel_size), 1.0 / kernel_size))
        self.bias = self.register_parameter('bias', np.zeros(channels)) if bias else None

    @classmethod
    def from_arrays(cls, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> 'DepthwiseConv':
        layer = cls.__new__(cls)
        Module.__init__(layer)
        layer.weight = layer.register_parameter('weight', weight)
        layer.bias = layer.register_parameter('bias', bias) if bias is not None else None
        return layer

    def forward(self, x):
        return depthwise_conv(x, self.weight, self.bias), {'x': x}

    def backward(self, cache, grad_out):
        dx, dw, db = depthwise_conv_backward(cache['x'], self.weight, grad_out, self.bias is not None)
        grads = {'weight': dw}
        if db is not None:
            grads['bias'] = db
        return dx, grads


class Conv2d(Module):
    """全卷积(下采样用)"""

    def __init__(self, in_dim: int, out_dim: int, kernel_size: int, stride: int, padding: int,
                 rng: Rng, bias: bool = False):
        super().__init__()
        fan_in = in_dim * kernel_size * kernel_size
        self.stride = stride
        self.padding = padding
        self.weight = self.register_parameter(
            'weight', rng.normal((out_dim, in_dim, kernel_size, kernel_size), 1.0 / np.sqrt(fan_in)))
        self.bias = self.register_parameter('bias', np.zeros(out_dim)) if bias else None

    def forward(self, x):
        out = conv2d(x, self.weight, stride=self.stride, padding=self.padding, bias=self.bias)
        return out, {'x': x}

    def backward(self, cache, grad_out):
        dx, dw, db = conv2d_backward(cache['x'], self.weight, grad_out, self.stride, self.padding,
                                     self.bias is not None)
        grads = {'weight': dw}
        if db is not None:
            grads['bias'] = db
        return dx, grads


class ChannelLayerNorm(Module):
    """逐位置沿通道维归一化"""

    def __init__(self, channels: int, bias: bool = False, eps: float = DEFAULT_NORM_EPS):
        super().__init__()
        self.eps = eps
        self.weight = self.register_parameter('weight', np.ones(channels))
        self.bias = self.register_parameter('bias', np.zeros(channels)) if bias else None

    def forward(self, x):
        if x.shape[0] != self.weight.size:
            raise DimensionMismatch(f"LayerNorm 通道 {self.weight.size} 与输入 {x.shape[0]} 不匹配")
        return channel_layer_norm_forward(x, self.weight, self.eps, self.bias)

    def backward(self, cache, grad_out):
        dx, dw, db = channel_layer_norm_backward(cache, grad_out)
        grads = {'weight': dw}
        if db is not None:
            grads['bias'] = db
        return dx, grads


class GELU(Module):

    def forward(self, x):
        return gelu(x), {'x': x}

    def backward(self, cache, grad_out):
        return grad_out * gelu_grad(cache['x']), {}


class Scale(Module):
    """逐通道可学习缩放(ResScale / LayerScale)"""

    def __init__(self, channels: int, init_value: float = 1.0):
        super().__init__()
        self.scale = self.register_parameter('scale', np.full(channels, float(init_value)))

    def forward(self, x):
        return self.scale[:, None, None] * x, {'x': x}

    def backward(self, cache, grad_out):
        dscale = np.sum(grad_out * cache['x'], axis=(1, 2))
        return self.scale[:, None, None] * grad_out, {'scale': dscale}


class Mlp(Module):
    """通道 MLP: fc1 → GELU → fc2"""

    def __init__(self, dim: int, rng: Rng, ratio: int = 4, bias: bool = False):
        super().__init__()
        hidden = dim * ratio
        self.fc1 = self.add_module('fc1', PointwiseLinear(dim, hidden, rng.split('fc1'), bias))
        self.act = GELU()
        self.fc2 = self.add_module('fc2', PointwiseLinear(hidden, dim, rng.split('fc2'), bias))

    def forward(self, x):
        h, c1 = self.fc1.forward(x)
        a, ca = self.act.forward(h)
        out, c2 = self.fc2.forward(a)
        return out, {'fc1': c1, 'act': ca, 'fc2': c2}

    def backward(self, cache, grad_out):
        da, g2 = self.fc2.backward(cache['fc2'], grad_out)
        dh, _ = self.act.backward(cache['act'], da)
        dx, g1 = self.fc1.backward(cache['fc1'], dh)
        return dx, {**self.scoped('fc1', g1), **self.scoped('fc2', g2)}
