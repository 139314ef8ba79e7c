"""
命令行界面测试
"""

import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from spamlab import cli
from spamlab.cli import main
from spamlab.utils import TensorContainer


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump({'verification': {
        'conv_instances': 4, 'attention_instances': 3, 'srf_instances': 2,
        'grad_instances': 1, 'backbone_grad_params': 2,
    }}))
    return str(path)


def _load(path: Path):
    return json.loads(path.read_text(encoding='utf-8'))


class TestProfileCommand:

    ARGS = ['profile', '--graph', 'grid', '--kernel', '3', '--trials', '3', '--patch', '4', '--seed', '7']

    def test_writes_outputs_and_manifest(self, runner, tmp_path):
        out = tmp_path / "run"
        result = runner.invoke(main, self.ARGS + ['--out', str(out)])
        assert result.exit_code == 0, result.output
        for name in ('profile.csv', 'aggregate.csv', 'summary.json', 'manifest.json'):
            assert (out / name).exists()

        manifest = _load(out / "manifest.json")
        assert manifest['command'] == 'profile'
        assert manifest['seed'] == 7
        assert manifest['flags']['trials'] == 3
        assert sorted(o['path'] for o in manifest['outputs']) == ['aggregate.csv', 'profile.csv', 'summary.json']
        summary = _load(out / "summary.json")
        assert summary['trial_count'] == 3
        assert 'band_energy_ratio' in summary

    def test_reruns_are_byte_identical(self, runner, tmp_path):
        out = tmp_path / "run"
        runner.invoke(main, self.ARGS + ['--out', str(out)])
        first = {p.name: p.read_bytes() for p in out.iterdir()}
        runner.invoke(main, self.ARGS + ['--out', str(out), '--workers', '3'])
        second = {p.name: p.read_bytes() for p in out.iterdir()}
        assert first.keys() == second.keys()
        for name in ('profile.csv', 'aggregate.csv', 'summary.json'):
            assert first[name] == second[name]
        assert _load(out / "manifest.json")['outputs'] == json.loads(first['manifest.json'])['outputs']

    def test_attention_campaign(self, runner, tmp_path):
        result = runner.invoke(main, ['profile', '--graph', 'complete', '--trials', '2', '--patch', '3',
                                      '--out', str(tmp_path)])
        assert result.exit_code == 0, result.output
        assert _load(tmp_path / "summary.json")['kernel'] == 'attention'

    def test_small_grid_ratio_is_finite(self, runner, tmp_path):
        # 4×4 网格的 λ₀ 数值上略小于 0
        result = runner.invoke(main, ['profile', '--graph', 'grid', '--kernel', '3', '--patch', '4',
                                      '--trials', '2', '--out', str(tmp_path)])
        assert result.exit_code == 0, result.output
        summary = _load(tmp_path / "summary.json")
        assert np.isfinite(summary['band_energy_ratio'])
        assert summary['band_energy_ratio'] > 0

    def test_jacobi_settings_from_config(self, runner, tmp_path):
        path = tmp_path / "jacobi.yaml"
        path.write_text(yaml.safe_dump({'graphs': {'eigensolver': 'jacobi', 'jacobi_tol': 1e-10}}))
        result = runner.invoke(main, ['-c', str(path)] + self.ARGS + ['--out', str(tmp_path / "run")])
        assert result.exit_code == 0, result.output
        assert _load(tmp_path / "run" / "summary.json")['eigensolver'] == 'jacobi'

    def test_jacobi_sweep_budget_exhausted(self, runner, tmp_path):
        path = tmp_path / "jacobi.yaml"
        path.write_text(yaml.safe_dump({'graphs': {'eigensolver': 'jacobi', 'jacobi_max_sweeps': 1}}))
        result = runner.invoke(main, ['-c', str(path)] + self.ARGS + ['--out', str(tmp_path / "run")])
        assert result.exit_code == 1
        assert '未收敛' in result.output

    @pytest.mark.parametrize("args", [
        ['profile', '--graph', 'grid', '--kernel', '3', '--trials', '0'],
        ['profile', '--graph', 'grid'],
        ['profile', '--graph', 'grid', '--kernel', '4'],
        ['profile', '--graph', 'ring', '--kernel', '3'],
    ])
    def test_usage_errors(self, runner, tmp_path, args):
        result = runner.invoke(main, args + ['--out', str(tmp_path)])
        assert result.exit_code == 2

    def test_unwritable_output(self, runner, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        result = runner.invoke(main, self.ARGS + ['--out', str(blocker / "sub")])
        assert result.exit_code == 3


class TestVerifyCommand:

    def test_suite_passes(self, runner, tmp_path, small_config):
        result = runner.invoke(main, ['-c', small_config, 'verify', '--suite', 'conv', '--seed', '1',
                                      '--out', str(tmp_path)])
        assert result.exit_code == 0, result.output
        report = _load(tmp_path / "verify_conv.json")
        assert report['passed'] and report['seed'] == 1
        assert (tmp_path / "manifest.json").exists()

    def test_failure_exits_one(self, runner, tmp_path, monkeypatch):
        failing = {'suite': 'srf', 'seed': 0, 'passed': False,
                   'first_failure': {'suite': 'srf', 'index': 0, 'error': 1.0},
                   'reports': [{'suite': 'srf', 'passed': False, 'instances': 1, 'max_error': 1.0}]}
        monkeypatch.setattr(cli.VerificationManager, 'run', lambda self, suite, seed: failing)
        result = runner.invoke(main, ['verify', '--suite', 'srf', '--out', str(tmp_path)])
        assert result.exit_code == 1
        assert '"index": 0' in result.output

    def test_unknown_suite(self, runner, tmp_path):
        assert runner.invoke(main, ['verify', '--suite', 'pool', '--out', str(tmp_path)]).exit_code == 2

    def test_invalid_config_file(self, runner, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump({'profiler': {'bins': 4}}))
        assert runner.invoke(main, ['-c', str(path), 'verify', '--out', str(tmp_path)]).exit_code == 2


class TestModelCommand:

    def test_count_params(self, runner, tmp_path):
        result = runner.invoke(main, ['model', '--preset', 'toy_hybrid', '--action', 'count-params',
                                      '--out', str(tmp_path)])
        assert result.exit_code == 0, result.output
        report = _load(tmp_path / "parameters.json")
        assert report['name'] == 'toy_hybrid'
        assert report['total'] == sum(report['by_stage'].values())

    def test_build_writes_loadable_params(self, runner, tmp_path):
        result = runner.invoke(main, ['model', '--preset', 'toy_pure', '--out', str(tmp_path)])
        assert result.exit_code == 0, result.output
        tensors = TensorContainer.load(tmp_path / "params.spt")
        assert 'head.weight' in tensors
        assert sum(t.size for t in tensors.values()) == _load(tmp_path / "parameters.json")['total']

    def test_forward_from_config_file(self, runner, tmp_path):
        config = Path(__file__).resolve().parent.parent / "config" / "models" / "toy_hybrid.json"
        image = tmp_path / "image.spt"
        TensorContainer.save(image, {'image': np.random.default_rng(0).normal(size=(3, 64, 64))})
        result = runner.invoke(main, ['model', '--config', str(config), '--action', 'forward',
                                      '--image', str(image), '--out', str(tmp_path / "out")])
        assert result.exit_code == 0, result.output
        report = _load(tmp_path / "out" / "forward.json")
        assert report['feature_shapes'] == [[8, 16, 16], [16, 8, 8], [32, 4, 4], [64, 2, 2]]
        assert len(report['pooled']) == 64
        features = TensorContainer.load(tmp_path / "out" / "features.spt")
        assert features['stage3'].shape == (64, 2, 2)

    def test_gradcheck(self, runner, tmp_path):
        result = runner.invoke(main, ['model', '--preset', 'toy_hybrid', '--action', 'gradcheck',
                                      '--seed', '3', '--out', str(tmp_path)])
        assert result.exit_code == 0, result.output
        assert _load(tmp_path / "gradcheck.json")['passed']

    def test_norm_eps_from_numerics_config(self, tmp_path):
        assert cli._load_model_config(None, 'toy_pure', None, 1e-3).norm_eps == 1e-3

        path = tmp_path / "model.json"
        path.write_text(json.dumps({'dims': [8, 16, 32, 64], 'blocks': [1, 1, 1, 1]}))
        assert cli._load_model_config(str(path), None, None, 1e-4).norm_eps == 1e-4
        path.write_text(json.dumps({'dims': [8, 16, 32, 64], 'blocks': [1, 1, 1, 1], 'norm_eps': 1e-5}))
        assert cli._load_model_config(str(path), None, None, 1e-4).norm_eps == 1e-5

    def test_invalid_config(self, runner, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({'dims': [6, 16, 32, 64], 'blocks': [1, 1, 1, 1]}))
        result = runner.invoke(main, ['model', '--config', str(path), '--out', str(tmp_path)])
        assert result.exit_code == 2

    def test_missing_config_file(self, runner, tmp_path):
        result = runner.invoke(main, ['model', '--config', str(tmp_path / "absent.json"), '--out', str(tmp_path)])
        assert result.exit_code == 3

    def test_requires_config_or_preset(self, runner, tmp_path):
        assert runner.invoke(main, ['model', '--out', str(tmp_path)]).exit_code == 2

    def test_wrong_image_size(self, runner, tmp_path):
        image = tmp_path / "image.spt"
        TensorContainer.save(image, {'image': np.zeros((3, 32, 32))})
        result = runner.invoke(main, ['model', '--preset', 'toy_hybrid', '--action', 'forward',
                                      '--image', str(image), '--out', str(tmp_path)])
        assert result.exit_code == 2

    def test_malformed_image_container(self, runner, tmp_path):
        image = tmp_path / "image.spt"
        image.write_bytes(b"garbage")
        result = runner.invoke(main, ['model', '--preset', 'toy_hybrid', '--action', 'forward',
                                      '--image', str(image), '--out', str(tmp_path)])
        assert result.exit_code == 3


class TestRlaCommand:

    def test_writes_curve(self, runner, tmp_path):
        path = tmp_path / "features.spt"
        TensorContainer.save(path, {'stage0': np.random.default_rng(1).normal(size=(4, 8, 8))})
        result = runner.invoke(main, ['rla', '--input', str(path), '--out', str(tmp_path / "out")])
        assert result.exit_code == 0, result.output
        lines = (tmp_path / "out" / "rla.csv").read_text().splitlines()
        assert lines[0] == "radius_norm,rel_log_amp,channel_count"
        assert len(lines) == 1 + 5
        assert lines[1].startswith("0,0,")
        assert _load(tmp_path / "out" / "manifest.json")['command'] == 'rla'

    def test_key_selection(self, runner, tmp_path):
        path = tmp_path / "features.spt"
        TensorContainer.save(path, {'a': np.ones((1, 4, 4)), 'b': np.ones((1, 4, 5))})
        assert runner.invoke(main, ['rla', '--input', str(path), '--out', str(tmp_path)]).exit_code == 3
        assert runner.invoke(main, ['rla', '--input', str(path), '--key', 'a',
                                    '--out', str(tmp_path)]).exit_code == 0
        assert runner.invoke(main, ['rla', '--input', str(path), '--key', 'b',
                                    '--out', str(tmp_path)]).exit_code == 2

    def test_malformed_container(self, runner, tmp_path):
        path = tmp_path / "bad.spt"
        path.write_bytes(b"SPAMTNS1")
        assert runner.invoke(main, ['rla', '--input', str(path), '--out', str(tmp_path)]).exit_code == 3


class TestConfigCommands:

    def test_get(self, runner):
        with runner.isolated_filesystem():
            result = runner.invoke(main, ['config', 'get', 'profiler.trials'])
        assert result.exit_code == 0
        assert "profiler.trials = 240" in result.output

    def test_get_missing(self, runner):
        with runner.isolated_filesystem():
            assert runner.invoke(main, ['config', 'get', 'profiler.nothing']).exit_code == 2

    def test_list_and_info(self, runner):
        with runner.isolated_filesystem():
            assert "eigensolver: lapack" in runner.invoke(main, ['config', 'list']).output
            assert "SPAMLAB_EIGENSOLVER" in runner.invoke(main, ['config', 'info', '-s', 'graphs']).output

    def test_export(self, runner):
        with runner.isolated_filesystem():
            result = runner.invoke(main, ['config', 'export', '-f', 'exported.yaml'])
            assert result.exit_code == 0
            assert yaml.safe_load(Path('exported.yaml').read_text())['profiler']['bins'] == 32
