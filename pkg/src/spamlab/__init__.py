"""
SpamLab - 卷积与自注意力的图谱分析及 SPAM 混合器参考实现
"""

__version__ = "0.1.0"
__author__ = "SpamLab Developers"
__email__ = "spamlab@example.com"
