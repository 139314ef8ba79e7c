"""
模型模块: SPAM 混合器、骨干网络与梯度检查
"""

from .backbone import SpaNet, StageConfig, build_model, count_parameters, forward, parameter_report
from .gradcheck import GradReport, finite_diff
from .spam import SpamParams, SrfMask, init_spam_params, spam_backward, spam_forward

__all__ = [
    'SpamParams', 'SrfMask', 'init_spam_params', 'spam_forward', 'spam_backward',
    'StageConfig', 'SpaNet', 'build_model', 'forward', 'count_parameters', 'parameter_report',
    'GradReport', 'finite_diff',
]
