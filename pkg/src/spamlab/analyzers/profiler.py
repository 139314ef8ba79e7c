"""
频率响应分析器: Φ(λ) = diag(UᵀCU)、随机仿真、谱分解检查与相对对数幅度
"""

import concurrent.futures
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from tqdm import tqdm

from ..core.exceptions import DimensionMismatch, InvalidConfig, NonSquareInput, ProfileIOError, ShapeError
from ..core.numerics import dft2
from ..core.rng import Rng
from ..spectral.attention import head_attention_matrices, random_attention_params
from ..spectral.conv_support import ConvSupport, KernelSpec, assemble_support, direct_conv
from ..spectral.graphs import COMPLETE, GRID, SpectralBasis, build_graph, graph_basis, normalized_laplacian
from ..utils.csv_utils import CSVUtils

logger = logging.getLogger(__name__)

PROFILE_HEADER = ['lambda', 'phi', 'trial', 'graph', 'kernel', 'seed']
AGGREGATE_HEADER = ['bin_lo', 'bin_hi', 'mean_abs_phi', 'std_abs_phi', 'count']
RLA_HEADER = ['radius_norm', 'rel_log_amp', 'channel_count']

LAMBDA_RANGE = 2.0
LAMBDA_SLACK = 1e-9

Matrix = Union[np.ndarray, sp.spmatrix, ConvSupport]


@dataclass
class TrialResponse:
    """单次仿真的 (λ, Φ) 样本"""
    trial: int
    eigenvalues: np.ndarray
    response: np.ndarray


@dataclass
class FrequencyProfile:
    """一次仿真活动的全部样本及元数据"""
    trials: List[TrialResponse]
    metadata: Dict[str, Any] = field(default_factory=dict)
    bins: int = 32

    @property
    def graph(self) -> str:
        return str(self.metadata.get('graph', ''))

    @property
    def kernel(self) -> str:
        return str(self.metadata.get('kernel', ''))

    @property
    def seed(self) -> int:
        return int(self.metadata.get('seed', 0))

    def pooled(self) -> Tuple[np.ndarray, np.ndarray]:
        """所有试验的 (λ, |Φ|) 拼接"""
        if not self.trials:
            return np.zeros(0), np.zeros(0)
        lambdas = np.concatenate([t.eigenvalues for t in self.trials])
        magnitudes = np.abs(np.concatenate([t.response for t in self.trials]))
        return lambdas, magnitudes

    def aggregate(self) -> pd.DataFrame:
        """[0, 2] 上等宽分箱的 |Φ| 均值与标准差"""
        return aggregate_profile(self, self.bins)


def _as_operator(matrix: Matrix):
    if isinstance(matrix, ConvSupport):
        return matrix.matrix
    return matrix


def frequency_response(matrix: Matrix, basis: SpectralBasis) -> np.ndarray:
    """Φ = diag(UᵀCU)，与升序 λ 一一对应"""
    operator = _as_operator(matrix)
    if operator.shape != (basis.size, basis.size):
        raise DimensionMismatch(f"支撑矩阵 {operator.shape} 与谱基维度 {basis.size} 不匹配")
    u = basis.eigenvectors
    projected = operator @ u
    return np.einsum('an,an->n', u, np.asarray(projected))


def aggregate_profile(profile: FrequencyProfile, bins: int = 32) -> pd.DataFrame:
    """按 λ 分箱统计 |Φ|，空箱的均值与标准差记为 0"""
    if bins < 16:
        raise ValueError(f"分箱数必须 ≥ 16: {bins}")
    edges = np.linspace(0.0, LAMBDA_RANGE, bins + 1)
    lambdas, magnitudes = profile.pooled()
    index = np.clip(np.floor(lambdas / LAMBDA_RANGE * bins).astype(np.int64), 0, bins - 1)

    counts = np.bincount(index, minlength=bins)
    sums = np.bincount(index, weights=magnitudes, minlength=bins)
    squares = np.bincount(index, weights=magnitudes ** 2, minlength=bins)
    with np.errstate(invalid='ignore', divide='ignore'):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
        variances = np.where(counts > 0, squares / np.maximum(counts, 1) - means ** 2, 0.0)
    return pd.DataFrame({
        'bin_lo': edges[:-1],
        'bin_hi': edges[1:],
        'mean_abs_phi': means,
        'std_abs_phi': np.sqrt(np.maximum(variances, 0.0)),
        'count': counts.astype(np.int64),
    })


def band_energy_ratio(profile: FrequencyProfile, low_band: Sequence[float] = (0.0, 0.125),
                      high_band: Sequence[float] = (0.75, 1.0), relative: bool = True) -> float:
    """
    高频带与低频带平均 |Φ| 之比 R。

    relative=True 时频带边界乘以该活动观测到的最大特征值；高频带无样本时能量记为 0。
    """
    lambdas, magnitudes = profile.pooled()
    if lambdas.size == 0:
        raise InvalidConfig("频响为空，无法计算能量比")
    # 数值分解给出的 λ₀ 可能是 -1e-16 量级
    lambdas = np.clip(lambdas, 0.0, LAMBDA_RANGE)
    scale = float(lambdas.max()) if relative else 1.0

    def in_band(band: Sequence[float]) -> np.ndarray:
        return (lambdas >= band[0] * scale - LAMBDA_SLACK) & (lambdas <= band[1] * scale + LAMBDA_SLACK)

    low, high = in_band(low_band), in_band(high_band)
    if not np.any(low):
        raise InvalidConfig("低频带内没有样本", f"low_band={tuple(low_band)}, scale={scale:.6g}")
    high_energy = float(magnitudes[high].mean()) if np.any(high) else 0.0
    return high_energy / float(magnitudes[low].mean())


def _convolution_trial(index: int, rng: Rng, kernel_size: int, height: int, width: int,
                       basis: SpectralBasis, distribution: str, force_identity: bool) -> TrialResponse:
    if force_identity:
        kernel = KernelSpec.identity(kernel_size)
    else:
        weights = rng.split(f"trial-{index}").draw_weights((kernel_size, kernel_size), distribution)
        kernel = KernelSpec(weights)
    support = assemble_support(kernel, height, width)
    return TrialResponse(index, basis.eigenvalues, frequency_response(support, basis))


def _attention_trial(index: int, rng: Rng, num_nodes: int, embed_dim: int, head_dim: int,
                     basis: SpectralBasis) -> TrialResponse:
    trial_rng = rng.split(f"trial-{index}")
    x = trial_rng.split("x").normal((embed_dim, num_nodes))
    params = random_attention_params(trial_rng, embed_dim, head_dim)
    support = head_attention_matrices(x, params)[0]
    return TrialResponse(index, basis.eigenvalues, frequency_response(support, basis))


def simulate_campaign(kind: str, kernel_size: Optional[int] = None, trials: int = 240, patch: int = 16,
                      seed: int = 0, weight_distribution: str = "normal", embed_dim: int = 64,
                      head_dim: int = 32, bins: int = 32, eigensolver: str = "lapack",
                      jacobi_tol: float = 1e-12, jacobi_max_sweeps: int = 100, max_workers: int = 1,
                      force_identity: bool = False, show_progress: bool = False) -> FrequencyProfile:
    """
    随机频率响应仿真。

    网格图: 每次试验抽取核权重并分析 C；完全图: 每次抽取 X、W_q、W_k，分析注意力支撑矩阵。
    试验 i 使用标签 trial-i 派生的独立随机流，结果按试验序号合并，与并行度无关。
    """
    if trials < 1:
        raise ValueError(f"trials 必须 ≥ 1: {trials}")
    if kind == GRID and kernel_size is None:
        raise ValueError("网格图仿真需要 kernel_size")
    if kind == COMPLETE and force_identity:
        raise ValueError("force_identity 仅适用于卷积仿真")

    graph = build_graph(kind, patch, patch, kernel_size if kind == GRID else None)
    laplacian = normalized_laplacian(graph)
    basis = graph_basis(graph, method=eigensolver, tol=jacobi_tol, max_sweeps=jacobi_max_sweeps)
    rng = Rng(seed)

    logger.info(f"开始频响仿真: graph={graph.label}, trials={trials}, patch={patch}, seed={seed}")
    if kind == GRID:
        def run(index: int) -> TrialResponse:
            return _convolution_trial(index, rng, kernel_size, patch, patch, basis,
                                      weight_distribution, force_identity)
    else:
        def run(index: int) -> TrialResponse:
            return _attention_trial(index, rng, graph.num_nodes, embed_dim, head_dim, basis)

    results: List[TrialResponse] = []
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, max_workers)) as executor:
        iterator = executor.map(run, range(trials))
        for result in tqdm(iterator, total=trials, desc=f"仿真 {graph.label}", disable=not show_progress):
            results.append(result)

    metadata = {
        'graph': kind,
        'kernel': str(kernel_size) if kind == GRID else 'attention',
        'seed': seed,
        'trial_count': trials,
        'patch': patch,
        'weight_distribution': weight_distribution if kind == GRID else 'normal',
        'eigensolver': eigensolver,
        'lambda_min': float(basis.eigenvalues[0]),
        'lambda_max': float(basis.eigenvalues[-1]),
        'reconstruction_residual': basis.residual(laplacian),
        'orthogonality_error': basis.orthogonality_error(),
        'response_convention': 'trials store signed phi; aggregate uses |phi|',
    }
    if kind == COMPLETE:
        metadata.update({'embed_dim': embed_dim, 'head_dim': head_dim})
    logger.info(f"仿真完成: {graph.label}, λ∈[{metadata['lambda_min']:.3g}, {metadata['lambda_max']:.6g}]")
    return FrequencyProfile(results, metadata, bins)


@dataclass
class SpectralCheck:
    """谱域分解诊断"""
    residual: float
    off_diagonal_mass: float
    response: np.ndarray


def spectral_decomposition_check(support: Union[KernelSpec, Matrix], x: np.ndarray,
                                 basis: SpectralBasis) -> SpectralCheck:
    """
    比较卷积输出与 U diag(Φ) Uᵀx。

    仅当 C 可被 U 对角化时残差为零；一般核只报告残差与非对角质量，不做断言。
    """
    x = np.asarray(x, dtype=np.float64)
    if isinstance(support, KernelSpec):
        if x.ndim != 2:
            raise ShapeError("使用卷积核检查时 x 需为 (H, W)")
        operator = assemble_support(support, *x.shape).matrix
        conv_out = direct_conv(x, support).ravel()
    else:
        operator = _as_operator(support)
        conv_out = np.asarray(operator @ x.ravel()).ravel()

    if x.size != basis.size:
        raise DimensionMismatch(f"信号长度 {x.size} 与谱基维度 {basis.size} 不匹配")
    response = frequency_response(operator, basis)
    u = basis.eigenvectors
    filtered = u @ (response * (u.T @ x.ravel()))
    spectral = u.T @ np.asarray(operator @ u)
    off_diagonal = spectral - np.diag(np.diag(spectral))
    return SpectralCheck(
        residual=float(np.max(np.abs(conv_out - filtered))),
        off_diagonal_mass=float(np.linalg.norm(off_diagonal)),
        response=response,
    )


@dataclass
class RlaCurve:
    """相对对数幅度曲线，radius_norm ∈ [0, 1]，curve(0) = 0"""
    radius_norm: np.ndarray
    values: np.ndarray
    channel_count: int
    degenerate: bool = False


def relative_log_amplitude(x: np.ndarray) -> RlaCurve:
    """
    傅里叶特征图的相对对数幅度。

    逐通道取 |dft2|、将直流移至中心、按整数半径环平均对数幅度，再对通道平均并减去直流环。
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"需要 (D, H, W) 特征图，实际 {x.shape}")
    channels, height, width = x.shape
    if height != width:
        raise NonSquareInput(f"特征图必须为方形: {height}×{width}")

    max_radius = height // 2
    radius_norm = np.arange(max_radius + 1) / max(max_radius, 1)
    center = height // 2
    yy, xx = np.indices((height, width))
    rings = np.rint(np.hypot(yy - center, xx - center)).astype(np.int64).ravel()
    inside = rings <= max_radius
    ring_counts = np.bincount(rings[inside], minlength=max_radius + 1)

    amplitudes = np.abs(np.fft.fftshift(dft2(x), axes=(-2, -1))).reshape(channels, -1)
    peak = amplitudes.max(axis=1)
    non_dc = np.delete(amplitudes, center * width + center, axis=1)
    scale = np.maximum(peak, 1.0)
    informative = (non_dc.max(axis=1) if non_dc.size else np.zeros(channels)) > 1e-12 * scale

    if not np.any(informative):
        logger.warning("特征图各通道在直流以外没有能量，返回零曲线")
        return RlaCurve(radius_norm, np.zeros_like(radius_norm), 0, degenerate=True)

    curves = []
    for amp, top in zip(amplitudes[informative], peak[informative]):
        log_amp = np.log(np.maximum(amp, 1e-12 * top))
        sums = np.bincount(rings[inside], weights=log_amp[inside], minlength=max_radius + 1)
        curves.append(sums / ring_counts)
    mean_curve = np.mean(curves, axis=0)
    return RlaCurve(radius_norm, mean_curve - mean_curve[0], int(np.sum(informative)))


def export_profile(profile: FrequencyProfile, path: Union[str, Path]) -> Path:
    """写出逐试验 CSV: lambda,phi,trial,graph,kernel,seed"""
    path = Path(path)
    graph, kernel, seed = profile.graph, profile.kernel, profile.seed

    def rows():
        for trial in profile.trials:
            for lam, phi in zip(trial.eigenvalues, trial.response):
                yield float(lam), float(phi), trial.trial, graph, kernel, seed

    count = CSVUtils.write_rows(path, PROFILE_HEADER, rows())
    logger.info(f"频响已写出: {path} ({count} 行)")
    return path


def import_profile(path: Union[str, Path], bins: int = 32) -> FrequencyProfile:
    """读回逐试验 CSV"""
    path = Path(path)
    header = CSVUtils.read_header(path)
    if header != PROFILE_HEADER:
        raise ProfileIOError(f"频响文件表头不符: {header}")
    try:
        frame = pd.read_csv(path, float_precision='round_trip', dtype={'graph': str, 'kernel': str},
                            keep_default_na=False)
    except (OSError, ValueError) as e:
        raise ProfileIOError(f"读取频响文件失败 {path}: {e}") from e

    if frame.empty:
        return FrequencyProfile([], {}, bins)
    trials = [
        TrialResponse(int(trial), group['lambda'].to_numpy(dtype=np.float64),
                      group['phi'].to_numpy(dtype=np.float64))
        for trial, group in frame.groupby('trial', sort=True)
    ]
    first = frame.iloc[0]
    metadata = {'graph': str(first['graph']), 'kernel': str(first['kernel']),
                'seed': int(first['seed']), 'trial_count': len(trials)}
    return FrequencyProfile(trials, metadata, bins)


def export_aggregate(profile: FrequencyProfile, path: Union[str, Path]) -> Path:
    """写出分箱汇总 CSV"""
    path = Path(path)
    table = profile.aggregate()
    rows = ((float(r.bin_lo), float(r.bin_hi), float(r.mean_abs_phi), float(r.std_abs_phi), int(r.count))
            for r in table.itertuples(index=False))
    CSVUtils.write_rows(path, AGGREGATE_HEADER, rows)
    return path


def export_rla(curve: RlaCurve, path: Union[str, Path]) -> Path:
    """写出相对对数幅度曲线 CSV"""
    path = Path(path)
    rows = ((float(r), float(v), curve.channel_count) for r, v in zip(curve.radius_norm, curve.values))
    CSVUtils.write_rows(path, RLA_HEADER, rows)
    return path
