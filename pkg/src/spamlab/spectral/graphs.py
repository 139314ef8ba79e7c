"""
patch 图、归一化拉普拉斯矩阵、谱基与图傅里叶变换
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from ..core.exceptions import DimensionMismatch, IsolatedNode, NoConvergence, ShapeError

logger = logging.getLogger(__name__)

GRID = "grid"
COMPLETE = "complete"


@dataclass(frozen=True)
class PatchGraph:
    """patch 图: 网格(核尺寸连通)或完全图"""
    height: int
    width: int
    kind: str
    adjacency: sp.csr_matrix
    kernel_size: Optional[int] = None

    @property
    def num_nodes(self) -> int:
        return self.height * self.width

    @property
    def label(self) -> str:
        if self.kind == GRID:
            return f"grid({self.kernel_size})"
        return self.kind

    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()


def grid_graph(height: int, width: int, kernel_size: int) -> PatchGraph:
    """
    构建核尺寸 m 的网格图。

    节点 (y,x) 与 (y',x') 相邻当且仅当 Chebyshev 距离 ≤ ⌊(m-1)/2⌋ 且不重合，无周期回绕。
    """
    if height < 1 or width < 1:
        raise ShapeError(f"网格尺寸必须为正: {height}×{width}")
    if kernel_size < 1:
        raise ShapeError(f"核尺寸必须 ≥ 1: {kernel_size}")

    radius = (kernel_size - 1) // 2
    ys, xs = np.divmod(np.arange(height * width), width)
    rows, cols = [], []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            ny, nx = ys + dy, xs + dx
            valid = (ny >= 0) & (ny < height) & (nx >= 0) & (nx < width)
            rows.append(np.flatnonzero(valid))
            cols.append(ny[valid] * width + nx[valid])

    n = height * width
    if rows:
        row_idx = np.concatenate(rows)
        col_idx = np.concatenate(cols)
    else:
        row_idx = col_idx = np.zeros(0, dtype=np.int64)
    data = np.ones(row_idx.size, dtype=np.float64)
    adjacency = sp.csr_matrix((data, (row_idx, col_idx)), shape=(n, n))
    return PatchGraph(height, width, GRID, adjacency, kernel_size)


def complete_graph(height: int, width: int) -> PatchGraph:
    """构建全连接(自注意力)图"""
    n = height * width
    if n < 1:
        raise ShapeError(f"网格尺寸必须为正: {height}×{width}")
    dense = np.ones((n, n)) - np.eye(n)
    return PatchGraph(height, width, COMPLETE, sp.csr_matrix(dense))


def build_graph(kind: str, height: int, width: int, kernel_size: Optional[int] = None) -> PatchGraph:
    """按类型构建 patch 图"""
    if kind == GRID:
        if kernel_size is None:
            raise ValueError("网格图需要 kernel_size")
        return grid_graph(height, width, kernel_size)
    if kind == COMPLETE:
        return complete_graph(height, width)
    raise ValueError(f"未知的图类型: {kind}")


def connected_components(graph: PatchGraph) -> int:
    """连通分量个数"""
    count, _ = csgraph.connected_components(graph.adjacency, directed=False)
    return int(count)


def normalized_laplacian(graph: PatchGraph) -> np.ndarray:
    """L = I - D^{-1/2} A D^{-1/2}(稠密)"""
    degrees = graph.degrees()
    isolated = np.flatnonzero(degrees == 0)
    if isolated.size:
        raise IsolatedNode(int(isolated[0]))

    inv_sqrt = 1.0 / np.sqrt(degrees)
    scaled = sp.diags(inv_sqrt) @ graph.adjacency @ sp.diags(inv_sqrt)
    laplacian = np.eye(graph.num_nodes) - scaled.toarray()
    # 消除浮点非对称
    return 0.5 * (laplacian + laplacian.T)


@dataclass(frozen=True)
class SpectralBasis:
    """拉普拉斯谱基: 升序特征值与正交特征向量(按列)"""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T

    def residual(self, matrix: np.ndarray) -> float:
        """‖L - U diag(λ) Uᵀ‖_max"""
        return float(np.max(np.abs(matrix - self.reconstruct())))

    def orthogonality_error(self) -> float:
        """‖UᵀU - I‖_max"""
        u = self.eigenvectors
        return float(np.max(np.abs(u.T @ u - np.eye(self.size))))

    def zero_eigenvalue_count(self, tol: float = 1e-9) -> int:
        return int(np.sum(np.abs(self.eigenvalues) <= tol))


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """令每个特征向量绝对值最大的分量为正"""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _jacobi_eigh(matrix: np.ndarray, tol: float, max_sweeps: int):
    """循环 Jacobi 旋转求对称矩阵特征分解"""
    a = np.array(matrix, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    threshold = tol * max(1.0, float(np.linalg.norm(a)))

    off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
    sweeps = 0
    while off > threshold:
        if sweeps >= max_sweeps:
            raise NoConvergence(float(off), sweeps)
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q

                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        sweeps += 1
        off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))

    logger.debug(f"Jacobi 收敛: {sweeps} 轮, 非对角残差 {off:.3e}")
    return np.diag(a).copy(), v


def eigendecompose(matrix: np.ndarray, method: str = "lapack", tol: float = 1e-12,
                   max_sweeps: int = 100) -> SpectralBasis:
    """
    对称矩阵特征分解。

    默认 method="lapack" 调用 numpy.linalg.eigh；method="jacobi" 为循环 Jacobi 旋转，
    tol 与 max_sweeps 只对 Jacobi 生效，超出轮数抛出 NoConvergence。命令行按 graphs.eigensolver 选择。
    特征值升序排列；每个特征向量的最大幅值分量取正。
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatch(f"需要方阵，实际 {matrix.shape}")
    if np.max(np.abs(matrix - matrix.T), initial=0.0) > 1e-12:
        raise ValueError("输入矩阵不对称")

    if method == "jacobi":
        values, vectors = _jacobi_eigh(matrix, tol, max_sweeps)
    elif method == "lapack":
        try:
            values, vectors = np.linalg.eigh(matrix)
        except np.linalg.LinAlgError as e:
            raise NoConvergence(float('nan'), 0) from e
    else:
        raise ValueError(f"未知的特征分解方法: {method}")

    order = np.argsort(values, kind='stable')
    return SpectralBasis(values[order], _fix_signs(vectors[:, order]))


def graph_basis(graph: PatchGraph, method: str = "lapack", tol: float = 1e-12,
                max_sweeps: int = 100) -> SpectralBasis:
    """构建图的拉普拉斯谱基"""
    laplacian = normalized_laplacian(graph)
    basis = eigendecompose(laplacian, method=method, tol=tol, max_sweeps=max_sweeps)
    logger.info(f"{graph.label} 谱基: N={graph.num_nodes}, λ∈[{basis.eigenvalues[0]:.3g}, "
                f"{basis.eigenvalues[-1]:.6g}], 重构残差 {basis.residual(laplacian):.2e}")
    return basis


def gft(basis: SpectralBasis, signal: np.ndarray) -> np.ndarray:
    """图傅里叶变换 ĥ = Uᵀh"""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape[0] != basis.size:
        raise DimensionMismatch(f"信号长度 {signal.shape[0]} 与节点数 {basis.size} 不匹配")
    return basis.eigenvectors.T @ signal


def igft(basis: SpectralBasis, coefficients: np.ndarray) -> np.ndarray:
    """逆图傅里叶变换 h = Uĥ"""
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if coefficients.shape[0] != basis.size:
        raise DimensionMismatch(f"系数长度 {coefficients.shape[0]} 与节点数 {basis.size} 不匹配")
    return basis.eigenvectors @ coefficients
