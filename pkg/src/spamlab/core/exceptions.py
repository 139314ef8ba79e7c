"""
异常定义
"""

from typing import Optional


class SpamlabError(Exception):
    """SpamLab 基础异常"""
    pass


class DimensionMismatch(SpamlabError, ValueError):
    """输入维度不匹配"""
    pass


class ShapeError(SpamlabError, ValueError):
    """张量形状不满足前置条件"""
    pass


class IsolatedNode(SpamlabError, ValueError):
    """图中存在度为0的节点"""

    def __init__(self, node: int):
        super().__init__(f"节点 {node} 的度为0，归一化拉普拉斯矩阵未定义")
        self.node = node


class NoConvergence(SpamlabError, RuntimeError):
    """特征分解未在迭代预算内收敛"""

    def __init__(self, residual: float, sweeps: int):
        super().__init__(f"Jacobi 迭代 {sweeps} 轮后未收敛，非对角残差 {residual:.3e}")
        self.residual = residual
        self.sweeps = sweeps


class NonSquareInput(SpamlabError, ValueError):
    """输入特征图不是方形"""
    pass


class NonDeterministicLoss(SpamlabError, RuntimeError):
    """同一点两次求值结果不同"""

    def __init__(self, first: float, second: float):
        super().__init__(f"损失函数不确定: {first!r} != {second!r}")
        self.first = first
        self.second = second


class InvalidConfig(SpamlabError, ValueError):
    """模型配置违反约束"""

    def __init__(self, constraint: str, detail: Optional[str] = None):
        message = f"配置无效: {constraint}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)
        self.constraint = constraint


class ContainerFormatError(SpamlabError, IOError):
    """参数容器文件格式错误"""
    pass


class ProfileIOError(SpamlabError, IOError):
    """频响文件读写失败"""
    pass
