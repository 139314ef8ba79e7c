"""
骨干网络测试
"""

import json
from pathlib import Path

import numpy as np
import pytest

from spamlab.core.exceptions import InvalidConfig, ShapeError
from spamlab.core.rng import Rng
from spamlab.core.verification_manager import backbone_gradcheck
from spamlab.models.backbone import (
    HYBRID_MIXERS,
    REFERENCE_PARAMS_M,
    SpaNet,
    StageConfig,
    build_model,
    count_parameters,
    forward,
    parameter_report,
)

MODEL_CONFIGS = Path(__file__).resolve().parent.parent / "config" / "models"


@pytest.fixture(scope="module")
def toy_hybrid():
    return build_model(StageConfig.preset("toy", "hybrid"))


class TestStageConfig:

    def test_preset(self):
        config = StageConfig.preset("s18", "hybrid")
        assert config.dims == [64, 128, 320, 512]
        assert config.blocks == [3, 3, 9, 3]
        assert config.mixers == HYBRID_MIXERS
        assert config.name == "s18_hybrid"
        assert config.stage_sizes() == [56, 28, 14, 7]

    def test_toy_preset_sizes(self):
        config = StageConfig.preset("toy", "pure")
        assert config.input_size == 64 and config.num_classes == 10
        assert config.stage_sizes() == [16, 8, 4, 2]

    @pytest.mark.parametrize("overrides", [
        {'dims': [6, 16, 32, 64]},
        {'blocks': [1, 0, 1, 1]},
        {'dims': [8, 16, 32]},
        {'mixers': ["SPAM", "SPAM", "Pool", "SPAM"]},
        {'srf_mode': "global"},
        {'branch_scale': "gamma"},
        {'res_scale_stages': [4]},
        {'kernel_sizes': [3, 5, 7, 8]},
        {'input_size': 48},
    ])
    def test_invalid_configs(self, overrides):
        with pytest.raises(InvalidConfig):
            StageConfig.preset("toy", "pure", **overrides)

    def test_unknown_key(self):
        with pytest.raises(InvalidConfig) as info:
            StageConfig.from_dict({'dims': [8, 16, 32, 64], 'blocks': [1, 1, 1, 1], 'depth': 3})
        assert 'depth' in str(info.value)

    def test_unknown_scale(self):
        with pytest.raises(InvalidConfig):
            StageConfig.preset("xl")

    def test_dict_roundtrip(self):
        config = StageConfig.preset("toy", "hybrid", seed=4)
        assert StageConfig.from_dict(config.to_dict()) == config

    @pytest.mark.parametrize("name", ["s18_pure", "s18_hybrid", "toy_pure", "toy_hybrid"])
    def test_config_files(self, name):
        config = StageConfig.from_file(MODEL_CONFIGS / f"{name}.json")
        assert config.name == name

    def test_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(InvalidConfig):
            StageConfig.from_file(path)
        path.write_text(json.dumps([1, 2]))
        with pytest.raises(InvalidConfig):
            StageConfig.from_file(path)


class TestForward:

    def test_feature_pyramid(self, toy_hybrid):
        image = Rng(0).normal((3, 64, 64))
        result = forward(toy_hybrid, image)
        assert result.shapes() == [(8, 16, 16), (16, 8, 8), (32, 4, 4), (64, 2, 2)]
        assert result.pooled.shape == (64,)
        assert result.logits.shape == (10,)
        assert all(np.all(np.isfinite(f)) for f in result.features)

    def test_deterministic_build(self):
        config = StageConfig.preset("toy", "pure", seed=3)
        image = Rng(1).normal((3, 64, 64))
        np.testing.assert_array_equal(forward(build_model(config), image).logits,
                                      forward(build_model(config), image).logits)

    def test_seed_override(self):
        config = StageConfig.preset("toy", "pure")
        a = build_model(config, seed=1).parameters()['head.weight']
        b = build_model(config, seed=2).parameters()['head.weight']
        assert not np.allclose(a, b)

    def test_wrong_image_size(self, toy_hybrid):
        with pytest.raises(ShapeError):
            forward(toy_hybrid, np.zeros((3, 96, 96)))
        with pytest.raises(ShapeError):
            forward(toy_hybrid, np.zeros((3, 50, 50)))
        with pytest.raises(ShapeError):
            forward(toy_hybrid, np.zeros((1, 64, 64)))

    def test_without_srf_other_sizes_allowed(self):
        model = build_model(StageConfig.preset("toy", "pure", srf_mode="none"))
        assert forward(model, np.zeros((3, 96, 96))).shapes()[0] == (8, 24, 24)

    def test_backward_shapes(self, toy_hybrid):
        result, cache = toy_hybrid.forward(Rng(2).normal((3, 64, 64)))
        dimage, grads = toy_hybrid.backward(cache, np.ones(10))
        assert dimage.shape == (3, 64, 64)
        assert list(grads) == list(toy_hybrid.parameters())


class TestBranchScales:

    def test_res_scale_only_in_configured_stages(self):
        names = list(build_model(StageConfig.preset("toy", "pure")).parameters())
        assert any(n.startswith("stages.2.0.res_scale1") for n in names)
        assert not any(n.startswith("stages.0.0.res_scale1") for n in names)
        assert not any("layer_scale" in n for n in names)

    def test_layer_scale(self):
        model = build_model(StageConfig.preset("toy", "pure", branch_scale="layer_scale"))
        params = model.parameters()
        np.testing.assert_allclose(params["stages.0.0.layer_scale1.scale"], 1e-5)
        assert not any("res_scale" in n for n in params)

    def test_biases_add_parameters(self):
        plain = count_parameters(StageConfig.preset("toy", "pure"))
        biased = count_parameters(StageConfig.preset("toy", "pure", biases=True))
        assert biased > plain


class TestParameterReport:

    def test_groups_sum_to_total(self, toy_hybrid):
        report = parameter_report(toy_hybrid)
        assert sum(report['by_stage'].values()) == report['total']
        assert sum(report['by_submodule'].values()) == report['total']
        assert report['total'] == toy_hybrid.num_parameters()
        assert report['total'] - report['total_without_head'] == 64 * 2 + 64 * 10 + 10

    def test_hybrid_mixers_differ(self):
        pure = parameter_report(build_model(StageConfig.preset("toy", "pure")))
        hybrid = parameter_report(build_model(StageConfig.preset("toy", "hybrid")))
        assert pure['mixer_by_stage']['stage0'] == hybrid['mixer_by_stage']['stage0']
        assert pure['mixer_by_stage']['stage3'] != hybrid['mixer_by_stage']['stage3']

    @pytest.mark.parametrize("name", ["s18_pure", "s18_hybrid"])
    def test_small_scale_counts_near_reference(self, name):
        scale, layout = name.split("_")
        model = build_model(StageConfig.preset(scale, layout))
        report = parameter_report(model, REFERENCE_PARAMS_M[name])
        assert report['reference']['within_tolerance'], report['reference']


class TestBackboneGradients:

    @pytest.mark.parametrize("layout", ["pure", "hybrid"])
    def test_sampled_gradcheck(self, layout):
        report = backbone_gradcheck(Rng(5).split(layout), num_params=4, layout=layout, coordinates=3)
        assert report.passed, report.errors
        assert len(report.errors) == 4

    def test_model_class(self, toy_hybrid):
        assert isinstance(toy_hybrid, SpaNet)
