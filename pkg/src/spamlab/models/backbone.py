"""
四阶段层级骨干网络: 下采样、MetaFormer 块、ResScale/LayerScale、参数统计
"""

import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from ..core.exceptions import InvalidConfig, ShapeError
from ..core.numerics import DEFAULT_NORM_EPS, as_feature_map
from ..core.rng import Rng
from .layers import ChannelLayerNorm, Conv2d, Grads, Identity, Mlp, Module, PointwiseLinear, Scale
from .mixers import ATTENTION, MIXATTENTION, MIXER_TYPES, SPAM, build_mixer
from .spam import KERNEL_SIZES, NUM_HEADS, SRF_MODES

logger = logging.getLogger(__name__)

NUM_STAGES = 4
BRANCH_SCALES = ("res_scale", "layer_scale", "both", "none")
PURE_MIXERS = [SPAM, SPAM, SPAM, SPAM]
HYBRID_MIXERS = [SPAM, SPAM, MIXATTENTION, ATTENTION]

# 各规模的通道数与块数
SCALES = {
    's18': ([64, 128, 320, 512], [3, 3, 9, 3]),
    's36': ([64, 128, 320, 512], [3, 12, 18, 3]),
    'm36': ([96, 192, 384, 576], [3, 12, 18, 3]),
    'b36': ([128, 256, 512, 768], [3, 12, 18, 3]),
    'toy': ([8, 16, 32, 64], [1, 1, 1, 1]),
}

# 公开的参数量(百万)
REFERENCE_PARAMS_M = {
    's18_pure': 29.0, 's18_hybrid': 27.0,
    's36_pure': 44.0, 's36_hybrid': 41.0,
    'm36_pure': 61.0, 'm36_hybrid': 58.0,
    'b36_pure': 100.0, 'b36_hybrid': 100.0,
}


@dataclass
class StageConfig:
    """骨干网络结构配置，res_scale_stages 为从 0 开始的阶段序号"""
    dims: List[int]
    blocks: List[int]
    mixers: List[str] = field(default_factory=lambda: list(PURE_MIXERS))
    res_scale_stages: List[int] = field(default_factory=lambda: [2, 3])
    biases: bool = False
    srf_mode: str = "depthwise"
    seed: int = 0
    name: str = "custom"
    input_size: int = 224
    in_channels: int = 3
    num_classes: int = 1000
    mlp_ratio: int = 4
    branch_scale: str = "res_scale"
    layer_scale_init: float = 1e-5
    kernel_sizes: List[int] = field(default_factory=lambda: list(KERNEL_SIZES))
    downsample_kernels: List[int] = field(default_factory=lambda: [7, 3, 3, 3])
    downsample_strides: List[int] = field(default_factory=lambda: [4, 2, 2, 2])
    downsample_paddings: List[int] = field(default_factory=lambda: [2, 1, 1, 1])
    norm_eps: float = DEFAULT_NORM_EPS

    def validate(self) -> None:
        """检查结构约束，违反时抛出 InvalidConfig"""
        for key in ('dims', 'blocks', 'mixers', 'downsample_kernels', 'downsample_strides',
                    'downsample_paddings'):
            if len(getattr(self, key)) != NUM_STAGES:
                raise InvalidConfig(f"{key} 必须有 {NUM_STAGES} 项", str(getattr(self, key)))
        if any(d < 1 for d in self.dims):
            raise InvalidConfig("dims 必须为正", str(self.dims))
        if any(b < 1 for b in self.blocks):
            raise InvalidConfig("blocks 必须 ≥ 1", str(self.blocks))
        for stage, (mixer, dim) in enumerate(zip(self.mixers, self.dims)):
            if mixer not in MIXER_TYPES:
                raise InvalidConfig(f"mixers 取值必须属于 {MIXER_TYPES}", f"阶段 {stage}: {mixer}")
            if mixer == SPAM and dim % NUM_HEADS:
                raise InvalidConfig(f"SPAM 阶段的通道数必须能被 {NUM_HEADS} 整除", f"阶段 {stage}: {dim}")
        if self.srf_mode not in SRF_MODES:
            raise InvalidConfig(f"srf_mode 必须属于 {SRF_MODES}", self.srf_mode)
        if self.branch_scale not in BRANCH_SCALES:
            raise InvalidConfig(f"branch_scale 必须属于 {BRANCH_SCALES}", self.branch_scale)
        if any(s not in range(NUM_STAGES) for s in self.res_scale_stages):
            raise InvalidConfig("res_scale_stages 必须是 0..3 的阶段序号", str(self.res_scale_stages))
        if len(self.kernel_sizes) != NUM_HEADS or any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise InvalidConfig(f"kernel_sizes 必须是 {NUM_HEADS} 个奇数", str(self.kernel_sizes))
        if self.input_size < 32 or self.input_size % 32:
            raise InvalidConfig("input_size 必须是 32 的正整数倍", str(self.input_size))
        if self.in_channels < 1 or self.num_classes < 1 or self.mlp_ratio < 1:
            raise InvalidConfig("in_channels、num_classes 与 mlp_ratio 必须为正")

    def stage_sizes(self, size: Optional[int] = None) -> List[int]:
        """各阶段的空间边长"""
        size = self.input_size if size is None else size
        sizes = []
        for k, s, p in zip(self.downsample_kernels, self.downsample_strides, self.downsample_paddings):
            size = (size + 2 * p - k) // s + 1
            sizes.append(size)
        return sizes

    @property
    def uses_srf(self) -> bool:
        return SPAM in self.mixers and self.srf_mode != "none"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'StageConfig':
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidConfig("未知的配置键", ", ".join(unknown))
        missing = [k for k in ('dims', 'blocks') if k not in data]
        if missing:
            raise InvalidConfig("缺少必需的配置键", ", ".join(missing))
        try:
            config = cls(**data)
        except TypeError as e:
            raise InvalidConfig("配置字段类型错误", str(e)) from e
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: Union[str, Path], **defaults) -> 'StageConfig':
        """读取 JSON 模型配置，defaults 仅填充文件未给出的键；文件不可读时抛出 OSError"""
        with open(path, 'r', encoding='utf-8') as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise InvalidConfig("模型配置不是合法 JSON", str(e)) from e
        if not isinstance(data, dict):
            raise InvalidConfig("模型配置必须是 JSON 对象")
        return cls.from_dict({**defaults, **data})

    @classmethod
    def preset(cls, scale: str, layout: str = "pure", **overrides) -> 'StageConfig':
        """按规模(s18/s36/m36/b36/toy)与布局(pure/hybrid)生成配置"""
        if scale not in SCALES:
            raise InvalidConfig(f"未知的规模: {scale}", f"可选 {sorted(SCALES)}")
        if layout not in ("pure", "hybrid"):
            raise InvalidConfig(f"未知的布局: {layout}")
        dims, blocks = SCALES[scale]
        data = {
            'dims': list(dims),
            'blocks': list(blocks),
            'mixers': list(PURE_MIXERS if layout == "pure" else HYBRID_MIXERS),
            'name': f"{scale}_{layout}",
        }
        if scale == 'toy':
            data.update({'input_size': 64, 'num_classes': 10})
        data.update(overrides)
        return cls.from_dict(data)


class Downsample(Module):
    """下采样: [LayerNorm] → Conv(k, s, p) → [LayerNorm]"""

    def __init__(self, in_dim: int, out_dim: int, kernel_size: int, stride: int, padding: int,
                 rng: Rng, pre_norm: bool, post_norm: bool, bias: bool = False,
                 eps: float = DEFAULT_NORM_EPS):
        super().__init__()
        self.pre_norm = self.add_module('pre_norm', ChannelLayerNorm(in_dim, bias, eps)) if pre_norm else Identity()
        self.conv = self.add_module('conv', Conv2d(in_dim, out_dim, kernel_size, stride, padding,
                                                   rng.split('conv'), bias))
        self.post_norm = self.add_module('post_norm', ChannelLayerNorm(out_dim, bias, eps)) if post_norm else Identity()

    def forward(self, x):
        a, c_pre = self.pre_norm.forward(x)
        b, c_conv = self.conv.forward(a)
        out, c_post = self.post_norm.forward(b)
        return out, {'pre': c_pre, 'conv': c_conv, 'post': c_post}

    def backward(self, cache, grad_out):
        grads: Grads = {}
        db, g_post = self.post_norm.backward(cache['post'], grad_out)
        da, g_conv = self.conv.backward(cache['conv'], db)
        dx, g_pre = self.pre_norm.backward(cache['pre'], da)
        grads.update(self.scoped('pre_norm', g_pre))
        grads.update(self.scoped('conv', g_conv))
        grads.update(self.scoped('post_norm', g_post))
        return dx, grads


class Block(Module):
    """
    MetaFormer 块。

    x = res_scale1(x) + layer_scale1(mixer(norm1(x)))
    x = res_scale2(x) + layer_scale2(mlp(norm2(x)))
    """

    def __init__(self, dim: int, mixer: Module, rng: Rng, mlp_ratio: int = 4, bias: bool = False,
                 res_scale: bool = False, layer_scale: bool = False, layer_scale_init: float = 1e-5,
                 eps: float = DEFAULT_NORM_EPS):
        super().__init__()
        self.norm1 = self.add_module('norm1', ChannelLayerNorm(dim, bias, eps))
        self.mixer = self.add_module('mixer', mixer)
        self.layer_scale1 = self.add_module('layer_scale1', Scale(dim, layer_scale_init)) if layer_scale else Identity()
        self.res_scale1 = self.add_module('res_scale1', Scale(dim)) if res_scale else Identity()
        self.norm2 = self.add_module('norm2', ChannelLayerNorm(dim, bias, eps))
        self.mlp = self.add_module('mlp', Mlp(dim, rng.split('mlp'), mlp_ratio, bias))
        self.layer_scale2 = self.add_module('layer_scale2', Scale(dim, layer_scale_init)) if layer_scale else Identity()
        self.res_scale2 = self.add_module('res_scale2', Scale(dim)) if res_scale else Identity()

    def _branch(self, x, norm, body, layer_scale, res_scale):
        h, c_norm = norm.forward(x)
        m, c_body = body.forward(h)
        m, c_ls = layer_scale.forward(m)
        skip, c_rs = res_scale.forward(x)
        return skip + m, (c_norm, c_body, c_ls, c_rs)

    def _branch_backward(self, caches, grad_out, norm, body, layer_scale, res_scale, names):
        c_norm, c_body, c_ls, c_rs = caches
        dx_skip, g_rs = res_scale.backward(c_rs, grad_out)
        dm, g_ls = layer_scale.backward(c_ls, grad_out)
        dh, g_body = body.backward(c_body, dm)
        dx, g_norm = norm.backward(c_norm, dh)
        grads: Grads = {}
        for name, g in zip(names, (g_norm, g_body, g_ls, g_rs)):
            grads.update(self.scoped(name, g))
        return dx + dx_skip, grads

    def forward(self, x):
        y, c1 = self._branch(x, self.norm1, self.mixer, self.layer_scale1, self.res_scale1)
        out, c2 = self._branch(y, self.norm2, self.mlp, self.layer_scale2, self.res_scale2)
        return out, {'token': c1, 'channel': c2}

    def backward(self, cache, grad_out):
        dy, g2 = self._branch_backward(cache['channel'], grad_out, self.norm2, self.mlp, self.layer_scale2,
                                       self.res_scale2, ('norm2', 'mlp', 'layer_scale2', 'res_scale2'))
        dx, g1 = self._branch_backward(cache['token'], dy, self.norm1, self.mixer, self.layer_scale1,
                                       self.res_scale1, ('norm1', 'mixer', 'layer_scale1', 'res_scale1'))
        return dx, {**g1, **g2}


class Stage(Module):
    """顺序排列的若干块"""

    def __init__(self, blocks: List[Block]):
        super().__init__()
        self.blocks = [self.add_module(str(i), block) for i, block in enumerate(blocks)]

    def forward(self, x):
        caches = []
        for block in self.blocks:
            x, cache = block.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, cache, grad_out):
        grads: Grads = {}
        for i in reversed(range(len(self.blocks))):
            grad_out, g = self.blocks[i].backward(cache[i], grad_out)
            grads.update(self.scoped(str(i), g))
        return grad_out, grads


@dataclass
class ForwardResult:
    """各阶段特征、归一化后的池化向量与分类 logits"""
    features: List[np.ndarray]
    pooled: np.ndarray
    logits: np.ndarray

    def shapes(self) -> List[Tuple[int, ...]]:
        return [f.shape for f in self.features]


class SpaNet(Module):
    """四阶段骨干 + 全局平均池化 + LayerNorm + 线性分类头"""

    def __init__(self, config: StageConfig):
        super().__init__()
        config.validate()
        self.config = config
        rng = Rng(config.seed)
        sizes = config.stage_sizes()
        layer_scale = config.branch_scale in ("layer_scale", "both")
        res_scale = config.branch_scale in ("res_scale", "both")

        self.downsamples: List[Downsample] = []
        self.stages: List[Stage] = []
        in_dim = config.in_channels
        for i, dim in enumerate(config.dims):
            down = Downsample(in_dim, dim, config.downsample_kernels[i], config.downsample_strides[i],
                              config.downsample_paddings[i], rng.split(f"downsamples.{i}"),
                              pre_norm=i > 0, post_norm=i == 0, bias=config.biases, eps=config.norm_eps)
            self.downsamples.append(self.add_module(f"downsamples.{i}", down))

            blocks = []
            for j in range(config.blocks[i]):
                block_rng = rng.split(f"stages.{i}.{j}")
                mixer = build_mixer(config.mixers[i], dim, sizes[i], sizes[i], block_rng.split('mixer'),
                                    config.srf_mode, config.biases, config.kernel_sizes, config.norm_eps)
                blocks.append(Block(dim, mixer, block_rng, config.mlp_ratio, config.biases,
                                    res_scale=res_scale and i in config.res_scale_stages,
                                    layer_scale=layer_scale, layer_scale_init=config.layer_scale_init,
                                    eps=config.norm_eps))
            self.stages.append(self.add_module(f"stages.{i}", Stage(blocks)))
            in_dim = dim

        self.norm = self.add_module('norm', ChannelLayerNorm(in_dim, bias=True, eps=config.norm_eps))
        self.head = self.add_module('head', PointwiseLinear(in_dim, config.num_classes, rng.split('head'),
                                                            bias=True, std=0.02))
        logger.info(f"模型 {config.name} 构建完成: {self.num_parameters():,} 个参数")

    def _check_image(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[0] != self.config.in_channels:
            raise ShapeError(f"输入图像应为 ({self.config.in_channels}, H, W)，实际 {image.shape}")
        height, width = image.shape[1:]
        if height % 32 or width % 32:
            raise ShapeError(f"输入尺寸必须能被 32 整除: {height}×{width}")
        if self.config.uses_srf and (height, width) != (self.config.input_size,) * 2:
            raise ShapeError(f"SRF 掩码按 {self.config.input_size}×{self.config.input_size} 构建，"
                             f"输入为 {height}×{width}")
        return as_feature_map(image, "image")

    def forward(self, image):
        x = self._check_image(image)
        features, caches = [], []
        for down, stage in zip(self.downsamples, self.stages):
            x, c_down = down.forward(x)
            x, c_stage = stage.forward(x)
            features.append(x)
            caches.append((c_down, c_stage))
        pooled_raw = x.mean(axis=(1, 2), keepdims=True)
        pooled, c_norm = self.norm.forward(pooled_raw)
        logits, c_head = self.head.forward(pooled)
        result = ForwardResult(features, pooled.ravel(), logits.ravel())
        cache = {'stages': caches, 'norm': c_norm, 'head': c_head, 'hw': x.shape[1:]}
        return result, cache

    def backward(self, cache, grad_logits):
        grads: Grads = {}
        grad_logits = np.asarray(grad_logits, dtype=np.float64).reshape(-1, 1, 1)
        d_pooled, g_head = self.head.backward(cache['head'], grad_logits)
        d_raw, g_norm = self.norm.backward(cache['norm'], d_pooled)
        height, width = cache['hw']
        dx = np.broadcast_to(d_raw / (height * width), (d_raw.shape[0], height, width)).copy()
        for i in reversed(range(len(self.stages))):
            c_down, c_stage = cache['stages'][i]
            dx, g_stage = self.stages[i].backward(c_stage, dx)
            dx, g_down = self.downsamples[i].backward(c_down, dx)
            grads.update(self.scoped(f"stages.{i}", g_stage))
            grads.update(self.scoped(f"downsamples.{i}", g_down))
        grads.update(self.scoped('norm', g_norm))
        grads.update(self.scoped('head', g_head))
        return dx, {name: grads[name] for name, _ in self.named_parameters()}

    def __call__(self, image):
        return self.forward(image)[0]


def build_model(config: StageConfig, seed: Optional[int] = None) -> SpaNet:
    """按配置与种子确定性地初始化模型"""
    if seed is not None and seed != config.seed:
        config = StageConfig.from_dict({**config.to_dict(), 'seed': seed})
    return SpaNet(config)


def forward(model: SpaNet, image: np.ndarray) -> ForwardResult:
    """特征金字塔 + 池化向量 + logits"""
    result, _ = model.forward(image)
    return result


def count_parameters(config: StageConfig) -> int:
    """参数量只取决于配置"""
    return build_model(config).num_parameters()


def _category(name: str) -> str:
    parts = name.split('.')
    if parts[0] == 'downsamples':
        return 'downsample'
    if parts[0] in ('norm', 'head'):
        return 'head'
    component = parts[3]
    if component.startswith('norm'):
        return 'norm'
    if component.startswith(('res_scale', 'layer_scale')):
        return 'scale'
    return component


def parameter_report(model: SpaNet, reference_millions: Optional[float] = None,
                     tolerance: float = 0.1) -> Dict[str, Any]:
    """
    按阶段、块与子模块分组的参数统计。

    给定参考值时先比较含分类头的总数，超出容差再改用不含分类头的总数，并记录所用口径。
    """
    by_stage: Dict[str, int] = defaultdict(int)
    by_submodule: Dict[str, int] = defaultdict(int)
    mixer_by_stage: Dict[str, int] = defaultdict(int)
    by_block: Dict[str, int] = defaultdict(int)

    for name, param in model.named_parameters():
        size = int(param.size)
        parts = name.split('.')
        category = _category(name)
        by_submodule[category] += size
        if parts[0] == 'stages':
            by_stage[f"stage{parts[1]}"] += size
            by_block[f"stages.{parts[1]}.{parts[2]}"] += size
            if category == 'mixer':
                mixer_by_stage[f"stage{parts[1]}"] += size
        elif parts[0] == 'downsamples':
            by_stage[f"stage{parts[1]}"] += size
        else:
            by_stage['head'] += size

    total = model.num_parameters()
    without_head = total - by_submodule.get('head', 0)
    report: Dict[str, Any] = {
        'name': model.config.name,
        'total': total,
        'total_without_head': without_head,
        'by_stage': dict(by_stage),
        'by_submodule': dict(by_submodule),
        'mixer_by_stage': dict(mixer_by_stage),
        'by_block': dict(by_block),
        'mixers': list(model.config.mixers),
        'stage_sizes': model.config.stage_sizes(),
        'conventions': {
            'mlp_ratio': model.config.mlp_ratio,
            'attention_head_dim': 32,
            'branch_scale': model.config.branch_scale,
            'res_scale_stages': list(model.config.res_scale_stages),
            'downsample_norms': 'stem: conv→LayerNorm; later stages: LayerNorm→conv',
            'srf_mask_size': 'per-stage spatial size at input_size',
        },
    }
    if reference_millions is not None:
        reference = reference_millions * 1e6
        with_head_ok = abs(total - reference) <= tolerance * reference
        counted = total if with_head_ok or abs(without_head - reference) > tolerance * reference else without_head
        report['reference'] = {
            'reference_params': reference,
            'tolerance': tolerance,
            'accounting': 'including classifier head' if counted == total else 'excluding classifier head',
            'counted': counted,
            'relative_deviation': (counted - reference) / reference,
            'within_tolerance': abs(counted - reference) <= tolerance * reference,
        }
    return report
