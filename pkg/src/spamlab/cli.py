"""
命令行界面

退出码: 0 成功, 1 断言失败, 2 用法或配置错误, 3 IO 错误
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import click
import numpy as np

from . import __version__
from .analyzers.profiler import (
    band_energy_ratio,
    export_aggregate,
    export_profile,
    export_rla,
    relative_log_amplitude,
    simulate_campaign,
)
from .analyzers.report_generator import ReportGenerator
from .core import ConfigManager, ConfigValidationError
from .core.exceptions import (
    ContainerFormatError,
    InvalidConfig,
    NoConvergence,
    NonSquareInput,
    ProfileIOError,
    ShapeError,
    SpamlabError,
)
from .core.rng import Rng
from .core.verification_manager import VerificationManager, model_gradcheck
from .models.backbone import REFERENCE_PARAMS_M, StageConfig, build_model, parameter_report
from .models.backbone import forward as forward_model
from .utils.tensor_container import TensorContainer

logger = logging.getLogger(__name__)

EXIT_ASSERTION = 1
EXIT_USAGE = 2
EXIT_IO = 3


def _configure_logging(config_manager: ConfigManager, verbose: bool) -> None:
    logging.basicConfig(
        level=config_manager.get('logging.level', 'INFO').upper(),
        format=config_manager.get('logging.format'),
    )
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


def _fail(ctx: click.Context, message: str, code: int) -> None:
    click.echo(f"❌ {message}", err=True)
    ctx.exit(code)


def _output_dir(ctx: click.Context, out: Optional[str], command: str) -> Path:
    if out:
        return Path(out)
    return Path(ctx.obj['config_manager'].get('output.output_dir')) / command


@click.group()
@click.version_option(__version__, prog_name='spamlab')
@click.option('--verbose', '-v', is_flag=True, help='启用详细输出')
@click.option('--config', '-c', 'config_file', type=click.Path(), help='配置文件路径')
@click.pass_context
def main(ctx, verbose, config_file):
    """SpamLab - 卷积/注意力图谱分析与 SPAM 混合器工具"""
    try:
        config_manager = ConfigManager()
        if config_file:
            config_manager.import_config(config_file)
    except ConfigValidationError as e:
        _fail(ctx, f"配置无效: {e}", EXIT_USAGE)
    except OSError as e:
        _fail(ctx, f"读取配置失败: {e}", EXIT_IO)

    _configure_logging(config_manager, verbose)
    ctx.ensure_object(dict)
    ctx.obj['config_manager'] = config_manager
    ctx.obj['verbose'] = verbose


# ============================================================================
# 频率响应仿真
# ============================================================================

@main.command('profile')
@click.option('--graph', type=click.Choice(['grid', 'complete']), default='grid', help='图类型')
@click.option('--kernel', '-k', type=click.IntRange(min=1), help='卷积核尺寸(网格图必填)')
@click.option('--trials', '-t', type=click.IntRange(min=1), help='仿真次数')
@click.option('--patch', '-p', type=click.IntRange(min=2), help='patch 网格边长')
@click.option('--seed', '-s', type=click.IntRange(min=0), default=0, show_default=True, help='随机种子')
@click.option('--distribution', type=click.Choice(['normal', 'half_normal', 'uniform']), help='卷积核权重分布')
@click.option('--workers', '-w', type=click.IntRange(min=1), help='并发线程数')
@click.option('--out', '-o', type=click.Path(), help='输出目录')
@click.pass_context
def profile(ctx, graph, kernel, trials, patch, seed, distribution, workers, out):
    """随机频率响应仿真，输出逐试验 CSV、分箱汇总 CSV 与清单"""
    cm: ConfigManager = ctx.obj['config_manager']
    settings = cm.section('profiler')
    if graph == 'grid' and kernel is None:
        raise click.UsageError("网格图需要 --kernel")
    if graph == 'grid' and kernel % 2 == 0:
        raise click.UsageError(f"--kernel 必须为奇数: {kernel}")

    trials = trials or settings['trials']
    patch = patch or settings['patch']
    distribution = distribution or settings['weight_distribution']
    workers = workers or cm.get('performance.max_workers')
    out_dir = _output_dir(ctx, out, 'profile')
    flags = {'graph': graph, 'kernel': kernel, 'trials': trials, 'patch': patch, 'seed': seed,
             'distribution': distribution, 'out': str(out_dir)}

    click.echo(f"🚀 开始仿真: {graph}{f'({kernel})' if kernel else ''}, {trials} 次, {patch}×{patch}")
    try:
        result = simulate_campaign(
            graph, kernel_size=kernel, trials=trials, patch=patch, seed=seed,
            weight_distribution=distribution, embed_dim=settings['attention_embed_dim'],
            head_dim=settings['attention_head_dim'], bins=settings['bins'],
            eigensolver=cm.get('graphs.eigensolver'), jacobi_tol=cm.get('graphs.jacobi_tol'),
            jacobi_max_sweeps=cm.get('graphs.jacobi_max_sweeps'), max_workers=workers,
            show_progress=not ctx.obj['verbose'],
        )
        ratio = band_energy_ratio(result, settings['low_band'], settings['high_band'],
                                  settings['relative_bands'])
    except NoConvergence as e:
        _fail(ctx, f"特征分解未收敛: {e}", EXIT_ASSERTION)
    except (SpamlabError, ValueError) as e:
        _fail(ctx, f"仿真参数无效: {e}", EXIT_USAGE)

    reports = ReportGenerator(out_dir)
    try:
        reports.register(export_profile(result, out_dir / 'profile.csv'))
        reports.register(export_aggregate(result, out_dir / 'aggregate.csv'))
        reports.generate_json_report('summary', {**result.metadata, 'band_energy_ratio': ratio,
                                                 'low_band': settings['low_band'],
                                                 'high_band': settings['high_band'],
                                                 'relative_bands': settings['relative_bands']})
        manifest = reports.write_manifest('profile', flags, seed)
    except (ProfileIOError, OSError) as e:
        _fail(ctx, f"写出结果失败: {e}", EXIT_IO)

    click.echo(f"📊 高/低频能量比 R = {ratio:.6g}")
    click.echo(f"✅ 结果已写入: {out_dir} (清单 {manifest.name})")


# ============================================================================
# 验证套件
# ============================================================================

@main.command('verify')
@click.option('--suite', type=click.Choice(['conv', 'attention', 'srf', 'grad', 'all']), default='all',
              show_default=True, help='验证套件')
@click.option('--seed', '-s', type=click.IntRange(min=0), default=0, show_default=True, help='随机种子')
@click.option('--out', '-o', type=click.Path(), help='输出目录')
@click.pass_context
def verify(ctx, suite, seed, out):
    """运行等价性与梯度验证套件"""
    manager = VerificationManager(ctx.obj['config_manager'], show_progress=not ctx.obj['verbose'])
    out_dir = _output_dir(ctx, out, 'verify')

    click.echo(f"🔍 运行验证套件: {suite} (seed={seed})")
    result = manager.run(suite, seed)

    reports = ReportGenerator(out_dir)
    try:
        reports.generate_json_report(f"verify_{suite}", result)
        reports.write_manifest('verify', {'suite': suite, 'seed': seed, 'out': str(out_dir)}, seed)
    except (ProfileIOError, OSError) as e:
        _fail(ctx, f"写出报告失败: {e}", EXIT_IO)

    for report in result['reports']:
        status = "✅" if report['passed'] else "❌"
        click.echo(f"  {status} {report['suite']}: {report['instances']} 个实例, "
                   f"最大误差 {report['max_error']:.3e}")
    if not result['passed']:
        click.echo(json.dumps(result['first_failure'], ensure_ascii=False, sort_keys=True, default=str), err=True)
        _fail(ctx, "验证未通过", EXIT_ASSERTION)
    click.echo("✅ 全部通过")


# ============================================================================
# 模型
# ============================================================================

def _load_model_config(config_path: Optional[str], preset: Optional[str], seed: Optional[int],
                       norm_eps: float) -> StageConfig:
    """模型配置文件未给出 norm_eps 时使用 numerics.norm_eps"""
    if config_path:
        config = StageConfig.from_file(config_path, norm_eps=norm_eps)
    elif preset:
        scale, _, layout = preset.partition('_')
        config = StageConfig.preset(scale, layout or 'pure', norm_eps=norm_eps)
    else:
        raise click.UsageError("需要 --config 或 --preset")
    if seed is not None:
        config = StageConfig.from_dict({**config.to_dict(), 'seed': seed})
    return config


def _load_image(path: Optional[str], config: StageConfig) -> np.ndarray:
    if path is None:
        return np.zeros((config.in_channels, config.input_size, config.input_size))
    tensors = TensorContainer.load(path)
    if 'image' in tensors:
        return tensors['image']
    if len(tensors) == 1:
        return next(iter(tensors.values()))
    raise ContainerFormatError(f"容器中没有 image 张量: {sorted(tensors)}")


@main.command('model')
@click.option('--config', 'config_path', type=click.Path(), help='模型配置 JSON')
@click.option('--preset', type=click.Choice(sorted(f"{s}_{l}" for s in ('s18', 's36', 'm36', 'b36', 'toy')
                                                     for l in ('pure', 'hybrid'))), help='内置配置')
@click.option('--action', '-a', type=click.Choice(['build', 'forward', 'gradcheck', 'count-params']),
              default='build', show_default=True, help='操作')
@click.option('--image', type=click.Path(), help='输入图像张量容器(缺省为全零图像)')
@click.option('--seed', '-s', type=click.IntRange(min=0), help='覆盖配置中的种子')
@click.option('--out', '-o', type=click.Path(), help='输出目录')
@click.pass_context
def model(ctx, config_path, preset, action, image, seed, out):
    """构建模型、前向、梯度检查或统计参数量"""
    cm: ConfigManager = ctx.obj['config_manager']
    try:
        config = _load_model_config(config_path, preset, seed, cm.get('numerics.norm_eps'))
    except InvalidConfig as e:
        _fail(ctx, str(e), EXIT_USAGE)
    except OSError as e:
        _fail(ctx, f"读取模型配置失败: {e}", EXIT_IO)

    out_dir = _output_dir(ctx, out, 'model')
    flags = {'config': config_path, 'preset': preset, 'action': action, 'image': image,
             'seed': config.seed, 'out': str(out_dir)}
    reports = ReportGenerator(out_dir)
    click.echo(f"🏗️  构建模型: {config.name} ({action})")
    net = build_model(config)
    failed = False

    try:
        if action in ('build', 'count-params'):
            report = parameter_report(net, REFERENCE_PARAMS_M.get(config.name))
            report['config'] = config.to_dict()
            reports.generate_json_report('parameters', report)
            if action == 'build':
                reports.register(TensorContainer.save(out_dir / 'params.spt', net.state_dict()))
            click.echo(f"📊 参数量: {report['total']:,} (不含分类头 {report['total_without_head']:,})")
            if 'reference' in report:
                ref = report['reference']
                click.echo(f"  • 参考值 {ref['reference_params']:,.0f}, 口径: {ref['accounting']}, "
                           f"偏差 {ref['relative_deviation']:+.2%}")
        elif action == 'forward':
            result = forward_model(net, _load_image(image, config))
            reports.register(TensorContainer.save(
                out_dir / 'features.spt',
                {**{f"stage{i}": f for i, f in enumerate(result.features)}, 'pooled': result.pooled}))
            reports.generate_json_report('forward', {
                'name': config.name,
                'feature_shapes': [list(s) for s in result.shapes()],
                'pooled': result.pooled,
                'logits': result.logits,
            })
            for i, shape in enumerate(result.shapes()):
                click.echo(f"  • stage{i}: {shape}")
        else:
            settings = cm.section('verification')
            grad_report = model_gradcheck(net, Rng(config.seed).split('gradcheck'),
                                          settings['backbone_grad_params'], step=settings['grad_step'],
                                          tolerance=settings['grad_tolerance'])
            reports.generate_json_report('gradcheck', grad_report.to_dict())
            click.echo(f"📐 最大相对误差 {grad_report.max_error:.3e} ({grad_report.worst})")
            failed = not grad_report.passed
        reports.write_manifest('model', flags, config.seed)
    except ShapeError as e:
        _fail(ctx, str(e), EXIT_USAGE)
    except (ContainerFormatError, ProfileIOError, OSError) as e:
        _fail(ctx, f"IO 错误: {e}", EXIT_IO)

    if failed:
        _fail(ctx, "梯度检查未通过", EXIT_ASSERTION)
    click.echo(f"✅ 结果已写入: {out_dir}")


# ============================================================================
# 相对对数幅度
# ============================================================================

@main.command('rla')
@click.option('--input', 'input_path', type=click.Path(), required=True, help='特征图张量容器')
@click.option('--key', help='容器中的张量名(缺省取唯一张量)')
@click.option('--out', '-o', type=click.Path(), help='输出目录')
@click.pass_context
def rla(ctx, input_path, key, out):
    """傅里叶特征图的相对对数幅度曲线"""
    out_dir = _output_dir(ctx, out, 'rla')
    try:
        tensors = TensorContainer.load(input_path)
        if key is None:
            if len(tensors) != 1:
                raise ContainerFormatError(f"容器含多个张量，请用 --key 指定: {sorted(tensors)}")
            key = next(iter(tensors))
        if key not in tensors:
            raise ContainerFormatError(f"容器中没有张量 {key}")
        curve = relative_log_amplitude(tensors[key])
    except ContainerFormatError as e:
        _fail(ctx, f"容器无效: {e}", EXIT_IO)
    except (NonSquareInput, ShapeError) as e:
        _fail(ctx, str(e), EXIT_USAGE)

    reports = ReportGenerator(out_dir)
    try:
        reports.register(export_rla(curve, out_dir / 'rla.csv'))
        reports.write_manifest('rla', {'input': input_path, 'key': key, 'out': str(out_dir)}, None)
    except (ProfileIOError, OSError) as e:
        _fail(ctx, f"写出结果失败: {e}", EXIT_IO)

    if curve.degenerate:
        click.echo("⚠️  特征图在直流以外没有能量，输出零曲线")
    click.echo(f"✅ 曲线已写入: {out_dir / 'rla.csv'} ({curve.channel_count} 个通道)")


# ============================================================================
# 配置管理命令组
# ============================================================================

@main.group()
@click.pass_context
def config(ctx):
    """配置管理命令"""
    pass


@config.command('get')
@click.argument('key')
@click.pass_context
def get_config(ctx, key):
    """获取配置值"""
    value = ctx.obj['config_manager'].get(key)
    if value is None:
        _fail(ctx, f"配置不存在: {key}", EXIT_USAGE)
    click.echo(f"{key} = {value}")


@config.command('list')
@click.pass_context
def list_config(ctx):
    """列出所有配置"""
    def print_config(section: Dict[str, Any], prefix: str = ""):
        for key, value in section.items():
            if isinstance(value, dict):
                click.echo(f"{prefix}{key}:")
                print_config(value, prefix + "  ")
            else:
                click.echo(f"{prefix}{key}: {value}")

    print_config(ctx.obj['config_manager'].config)


@config.command('export')
@click.option('--file', '-f', 'file_path', type=click.Path(), default='config.yaml', help='导出文件')
@click.pass_context
def export_config(ctx, file_path):
    """导出当前配置(YAML 或 JSON)"""
    try:
        ctx.obj['config_manager'].export_config(file_path)
    except OSError as e:
        _fail(ctx, f"导出配置失败: {e}", EXIT_IO)
    click.echo(f"✅ 配置已导出到: {file_path}")


@config.command('info')
@click.option('--section', '-s', help='指定配置节')
@click.pass_context
def config_info(ctx, section):
    """显示配置项说明与当前值"""
    info = ctx.obj['config_manager'].get_config_info()
    sections = {section: info[section]} if section in info else info
    if section and section not in info:
        _fail(ctx, f"配置节不存在: {section}", EXIT_USAGE)
    for name, entries in sections.items():
        click.echo(f"📋 {name.upper()}:")
        for key, details in entries.items():
            env = f" [{details['env_var']}]" if details['env_var'] else ""
            click.echo(f"  {key}: {details['current_value']} ({details['type']}){env} - {details['description']}")


if __name__ == '__main__':
    main()
