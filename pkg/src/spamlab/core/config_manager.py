"""
配置管理模块

配置来源依次为: 模式默认值 → config/config.yaml → 环境变量。
每次修改后整体重新校验，非法值抛出 ConfigValidationError。
"""

import copy
import json
import logging
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import yaml

logger = logging.getLogger(__name__)

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')
EIGENSOLVERS = ('lapack', 'jacobi')
WEIGHT_DISTRIBUTIONS = ('normal', 'half_normal', 'uniform')
TRUTHY = ('true', '1', 'yes', 'on')


class ConfigValidationError(Exception):
    """配置验证错误"""
    pass


@dataclass
class ConfigSchema:
    """单个配置项的类型、默认值、校验函数与可选的环境变量"""
    key: str
    type: type
    required: bool = True
    default: Any = None
    description: str = ""
    validation_func: Optional[Callable[[Any], bool]] = None
    env_var: Optional[str] = None


class ConfigSection(Enum):
    """配置节"""
    NUMERICS = "numerics"
    GRAPHS = "graphs"
    PROFILER = "profiler"
    VERIFICATION = "verification"
    PERFORMANCE = "performance"
    OUTPUT = "output"
    LOGGING = "logging"


def _positive(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and value > 0


def _one_of(choices) -> Callable[[Any], bool]:
    return lambda value: value in choices


def _band(value: Any) -> bool:
    """[lo, hi] 且 0 ≤ lo < hi"""
    if not isinstance(value, list) or len(value) != 2:
        return False
    lo, hi = value
    return all(isinstance(v, (int, float)) for v in value) and 0 <= lo < hi


def _coerce(value: Any, target_type: type) -> Any:
    """YAML/JSON 值或环境变量字符串转换为目标类型"""
    if target_type is bool:
        return value.lower() in TRUTHY if isinstance(value, str) else bool(value)
    if target_type is list:
        if isinstance(value, str):
            return [float(item) for item in value.split(',')]
        return list(value)
    if target_type is int and isinstance(value, float) and not value.is_integer():
        raise ValueError(f"{value} 不是整数")
    return target_type(value)


class ConfigManager:
    """配置管理器"""

    def __init__(self, config_dir: str = "config"):
        self.config_dir = Path(config_dir)
        self.config_schema = self._define_config_schema()
        self.default_config = {
            section: {schema.key: copy.deepcopy(schema.default) for schema in schemas}
            for section, schemas in self.config_schema.items()
        }
        self.config = self._load_config()
        self._validate_config()

    def _define_config_schema(self) -> Dict[str, List[ConfigSchema]]:
        S = ConfigSchema
        return {
            ConfigSection.NUMERICS.value: [
                S("norm_eps", float, True, 1e-6, "归一化 epsilon", _positive),
            ],
            ConfigSection.GRAPHS.value: [
                S("eigensolver", str, True, "lapack", "特征分解算法 (lapack|jacobi)",
                  _one_of(EIGENSOLVERS), "SPAMLAB_EIGENSOLVER"),
                S("jacobi_tol", float, True, 1e-12, "Jacobi 非对角 Frobenius 容差", _positive),
                S("jacobi_max_sweeps", int, True, 100, "Jacobi 最大扫描轮数", _positive),
            ],
            ConfigSection.PROFILER.value: [
                S("trials", int, True, 240, "仿真次数", _positive),
                S("patch", int, True, 16, "patch 网格边长", _positive),
                S("bins", int, True, 32, "λ 分箱数(≥16)", lambda v: v >= 16),
                S("weight_distribution", str, True, "normal", "卷积核权重分布", _one_of(WEIGHT_DISTRIBUTIONS)),
                S("attention_embed_dim", int, True, 64, "注意力仿真输入维度 D", _positive),
                S("attention_head_dim", int, True, 32, "注意力仿真头维度 d_h", _positive),
                S("low_band", list, True, [0.0, 0.125], "低频带边界", _band),
                S("high_band", list, True, [0.75, 1.0], "高频带边界", _band),
                S("relative_bands", bool, True, True, "频带边界是否相对于最大特征值"),
            ],
            ConfigSection.VERIFICATION.value: [
                S("conv_instances", int, True, 100, "卷积等价随机实例数", _positive),
                S("attention_instances", int, True, 50, "注意力等价随机实例数", _positive),
                S("srf_instances", int, True, 20, "SRF 不变量随机实例数", _positive),
                S("grad_instances", int, True, 10, "SPAM 梯度检查实例数", _positive),
                S("backbone_grad_params", int, True, 5, "骨干网络抽样检查的参数张量数", _positive),
                S("grad_step", float, True, 1e-5, "有限差分步长", _positive),
                S("grad_tolerance", float, True, 1e-4, "梯度相对误差阈值", _positive),
            ],
            ConfigSection.PERFORMANCE.value: [
                S("max_workers", int, True, 4, "最大并发数", _positive, "SPAMLAB_MAX_WORKERS"),
            ],
            ConfigSection.OUTPUT.value: [
                S("output_dir", str, True, "data/output", "默认输出目录", bool, "SPAMLAB_OUTPUT_DIR"),
            ],
            ConfigSection.LOGGING.value: [
                S("level", str, True, "INFO", "日志级别", lambda v: v.upper() in LOG_LEVELS, "SPAMLAB_LOG_LEVEL"),
                S("format", str, True, "%(asctime)s - %(name)s - %(levelname)s - %(message)s", "日志格式"),
            ],
        }

    def _resolve(self, section: str, schema: ConfigSchema) -> Any:
        """取当前值(环境变量优先)，转换类型并校验"""
        name = f"{section}.{schema.key}"
        value = self.config[section].get(schema.key, copy.deepcopy(schema.default))
        env_value = os.getenv(schema.env_var) if schema.env_var else None
        if env_value:
            value = env_value

        exact = isinstance(value, schema.type) and not (schema.type is int and isinstance(value, bool))
        if not exact:
            try:
                value = _coerce(value, schema.type)
            except (ValueError, TypeError) as e:
                raise ConfigValidationError(f"配置项 {name} 类型错误: {e}")

        if schema.validation_func and not schema.validation_func(value):
            logger.error(f"配置验证失败: {name} = {value!r}")
            raise ConfigValidationError(f"配置项 {name} 验证失败: {value!r}")
        return value

    def _validate_config(self):
        for section, schemas in self.config_schema.items():
            self.config.setdefault(section, {})
            for schema in schemas:
                self.config[section][schema.key] = self._resolve(section, schema)

    def _load_config(self) -> Dict[str, Any]:
        config_file = self.config_dir / "config.yaml"
        if not config_file.exists():
            return copy.deepcopy(self.default_config)
        try:
            user = yaml.safe_load(config_file.read_text(encoding='utf-8')) or {}
        except (yaml.YAMLError, OSError) as e:
            logger.warning(f"加载配置文件失败，使用默认配置: {e}")
            return copy.deepcopy(self.default_config)
        logger.debug(f"已加载配置文件: {config_file}")
        return self._merge_config(self.default_config, user)

    @staticmethod
    def _merge_config(default: Dict[str, Any], user: Dict[str, Any]) -> Dict[str, Any]:
        merged = copy.deepcopy(default)
        for key, value in user.items():
            if isinstance(merged.get(key), dict) and isinstance(value, dict):
                merged[key] = ConfigManager._merge_config(merged[key], value)
            else:
                merged[key] = value
        return merged

    def get_schema(self, section: str, key: str = None) -> Union[ConfigSchema, List[ConfigSchema], None]:
        """获取配置模式"""
        schemas = self.config_schema.get(section)
        if schemas is None or key is None:
            return schemas
        return next((schema for schema in schemas if schema.key == key), None)

    def get_config_info(self) -> Dict[str, Any]:
        """各配置项的说明、默认值、环境变量与当前值"""
        return {
            section: {
                schema.key: {
                    'type': schema.type.__name__,
                    'required': schema.required,
                    'default': schema.default,
                    'description': schema.description,
                    'env_var': schema.env_var,
                    'current_value': self.config[section][schema.key],
                }
                for schema in schemas
            }
            for section, schemas in self.config_schema.items()
        }

    def get(self, key: str, default: Any = None) -> Any:
        """点分路径取值，如 get('profiler.trials')"""
        node = self.config
        for part in key.split('.'):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def section(self, name: str) -> Dict[str, Any]:
        """整个配置节的副本"""
        return copy.deepcopy(self.config.get(name, {}))

    def set(self, key: str, value: Any):
        *parents, leaf = key.split('.')
        node = self.config
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
        self._validate_config()

    def update(self, updates: Dict[str, Any]):
        for key, value in updates.items():
            self.set(key, value)

    def reset_to_default(self):
        self.config = copy.deepcopy(self.default_config)

    def export_config(self, file_path: str):
        """按扩展名导出为 JSON 或 YAML"""
        with open(file_path, 'w', encoding='utf-8') as f:
            if str(file_path).endswith('.json'):
                json.dump(self.config, f, indent=2, ensure_ascii=False)
            else:
                yaml.safe_dump(self.config, f, default_flow_style=False, allow_unicode=True, indent=2)
        logger.info(f"配置已导出: {file_path}")

    def import_config(self, file_path: str):
        """从 JSON 或 YAML 文件导入并合并到默认配置之上"""
        with open(file_path, 'r', encoding='utf-8') as f:
            try:
                user = json.load(f) if str(file_path).endswith('.json') else (yaml.safe_load(f) or {})
            except (json.JSONDecodeError, yaml.YAMLError) as e:
                raise ConfigValidationError(f"配置文件解析失败 {file_path}: {e}") from e
        if not isinstance(user, dict):
            raise ConfigValidationError(f"配置文件顶层必须是映射: {file_path}")
        self.config = self._merge_config(self.default_config, user)
        self._validate_config()
        logger.info(f"已导入配置: {file_path}")
