"""
图谱分析: patch 图、卷积支撑矩阵与注意力
"""

from .attention import AttentionParams, attention, attention_as_support, attention_matrix, mix_attention
from .conv_support import ConvSupport, KernelSpec, assemble_support, build_basis, conv_via_support, direct_conv
from .graphs import PatchGraph, SpectralBasis, build_graph, eigendecompose, gft, graph_basis, igft, normalized_laplacian

__all__ = [
    'PatchGraph', 'SpectralBasis', 'build_graph', 'normalized_laplacian', 'eigendecompose', 'graph_basis',
    'gft', 'igft',
    'KernelSpec', 'ConvSupport', 'build_basis', 'assemble_support', 'conv_via_support', 'direct_conv',
    'AttentionParams', 'attention_matrix', 'attention', 'attention_as_support', 'mix_attention',
]
