"""
有限差分梯度检查
"""

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from ..core.exceptions import DimensionMismatch, NonDeterministicLoss
from ..core.rng import Rng

logger = logging.getLogger(__name__)

REL_EPS = 1e-12
DEFAULT_STEP = 1e-5

LossFn = Callable[[], float]


def finite_diff(loss_fn: LossFn, params: Dict[str, np.ndarray], step: float = DEFAULT_STEP,
                coordinates: Optional[Dict[str, np.ndarray]] = None) -> Dict[str, np.ndarray]:
    """
    中心差分梯度估计。

    loss_fn 无参数，读取 params 中的数组；数组被原地扰动后恢复。
    coordinates 给定时只估计对应的扁平下标，返回值为这些下标处的梯度。
    """
    base = float(loss_fn())
    again = float(loss_fn())
    if base != again:
        raise NonDeterministicLoss(base, again)

    estimates: Dict[str, np.ndarray] = {}
    for name, param in params.items():
        flat = param.reshape(-1)
        if not np.shares_memory(flat, param):
            raise DimensionMismatch(f"参数 {name} 不是连续数组，无法原地扰动")
        index = np.arange(flat.size) if coordinates is None else np.asarray(coordinates[name])
        values = np.empty(index.size)
        for n, i in enumerate(index):
            original = flat[i]
            flat[i] = original + step
            plus = float(loss_fn())
            flat[i] = original - step
            minus = float(loss_fn())
            flat[i] = original
            values[n] = (plus - minus) / (2.0 * step)
        estimates[name] = values.reshape(param.shape) if coordinates is None else values
    return estimates


def relative_error(analytic: np.ndarray, numeric: np.ndarray, eps: float = REL_EPS) -> float:
    """‖g_analytic − g_fd‖ / max(‖g_fd‖, ε)"""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), eps))


@dataclass
class GradReport:
    """逐参数相对误差"""
    errors: Dict[str, float]
    step: float
    evaluations: int
    coordinates: Dict[str, int] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def worst(self) -> Optional[str]:
        if not self.errors:
            return None
        return max(self.errors, key=self.errors.get)

    @property
    def passed(self) -> bool:
        return all(np.isfinite(e) and e <= self.tolerance for e in self.errors.values())

    def failures(self) -> List[str]:
        return [name for name, e in self.errors.items() if not (np.isfinite(e) and e <= self.tolerance)]

    def to_dict(self) -> Dict:
        data = asdict(self)
        data.update({'max_error': self.max_error, 'worst': self.worst, 'passed': self.passed})
        return data


def check(loss_fn: LossFn, analytic: Dict[str, np.ndarray], params: Dict[str, np.ndarray],
          step: float = DEFAULT_STEP, tolerance: float = 1e-4, max_coordinates: Optional[int] = None,
          rng: Optional[Rng] = None) -> GradReport:
    """
    比较解析梯度与中心差分。

    max_coordinates 给定时每个参数随机抽取至多该数目的坐标(需提供 rng)。
    """
    started = time.perf_counter()
    coordinates = None
    if max_coordinates is not None:
        rng = rng or Rng(0)
        coordinates = {}
        for name, param in params.items():
            count = min(max_coordinates, param.size)
            coordinates[name] = np.sort(rng.split(name).choice(param.size, count, replace=False))

    numeric = finite_diff(loss_fn, params, step, coordinates)
    errors = {}
    checked = {}
    for name in params:
        if name not in analytic:
            raise DimensionMismatch(f"缺少参数 {name} 的解析梯度")
        grad = np.asarray(analytic[name], dtype=np.float64)
        if coordinates is not None:
            grad = grad.reshape(-1)[coordinates[name]]
        errors[name] = relative_error(grad, numeric[name])
        checked[name] = int(numeric[name].size)

    evaluations = 2 + 2 * sum(checked.values())
    report = GradReport(errors, step, evaluations, checked, tolerance)
    elapsed = time.perf_counter() - started
    if report.passed:
        logger.debug(f"梯度检查通过: {len(errors)} 个参数, 最大相对误差 {report.max_error:.2e}, 用时 {elapsed:.1f}s")
    else:
        logger.warning(f"梯度检查未通过: {report.failures()}, 最大相对误差 {report.max_error:.2e}")
    return report


def projection_loss(weights: np.ndarray, evaluate: Callable[[], np.ndarray]) -> LossFn:
    """标量损失 Σ weights ⊙ evaluate()，上游梯度即 weights"""
    def loss() -> float:
        return float(np.sum(weights * evaluate()))
    return loss
