"""
测试公共夹具
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# 添加src目录到Python路径
sys.path.insert(0, str(Path(__file__).resolve().parent.parent / 'src'))

from spamlab.core import ConfigManager  # noqa: E402
from spamlab.core.rng import Rng  # noqa: E402


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def np_rng():
    return np.random.default_rng(7)


@pytest.fixture
def config_manager(tmp_path):
    """不读取仓库 config/ 的默认配置"""
    return ConfigManager(config_dir=str(tmp_path / "no_config"))


@pytest.fixture
def small_verification(config_manager):
    """缩小实例数的验证配置"""
    config_manager.update({
        'verification.conv_instances': 6,
        'verification.attention_instances': 4,
        'verification.srf_instances': 3,
        'verification.grad_instances': 1,
        'verification.backbone_grad_params': 2,
    })
    return config_manager
