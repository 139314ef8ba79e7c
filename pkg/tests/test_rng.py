"""
可拆分随机源测试
"""

import numpy as np
import pytest

from spamlab.core.rng import Rng


class TestRng:

    def test_same_seed_same_stream(self):
        np.testing.assert_array_equal(Rng(5).normal(10), Rng(5).normal(10))

    def test_split_is_reproducible_and_independent(self):
        root = Rng(5)
        a = root.split("a").normal(8)
        np.testing.assert_array_equal(a, Rng(5).split("a").normal(8))
        assert not np.allclose(a, root.split("b").normal(8))

    def test_split_does_not_consume_parent(self):
        first = Rng(9)
        first.split("child").normal(100)
        np.testing.assert_array_equal(first.normal(4), Rng(9).normal(4))

    def test_nested_path(self):
        child = Rng(1).split("x").split("y")
        assert child.path == ("x", "y")
        assert "x/y" in repr(child)

    def test_half_normal_non_negative(self):
        assert np.all(Rng(3).half_normal((50,)) >= 0)

    def test_choice_without_replacement(self):
        picks = Rng(3).choice(10, 10)
        assert sorted(picks.tolist()) == list(range(10))

    @pytest.mark.parametrize("distribution", ["normal", "half_normal", "uniform"])
    def test_draw_weights_shape(self, distribution):
        assert Rng(0).draw_weights((3, 3), distribution).shape == (3, 3)

    def test_draw_weights_unknown(self):
        with pytest.raises(ValueError):
            Rng(0).draw_weights(3, "cauchy")

    def test_rejects_negative_seed(self):
        with pytest.raises(ValueError):
            Rng(-1)
