"""
patch 图与谱基测试
"""

import numpy as np
import pytest

from spamlab.core.exceptions import DimensionMismatch, IsolatedNode, NoConvergence
from spamlab.spectral.graphs import (
    COMPLETE,
    GRID,
    build_graph,
    complete_graph,
    connected_components,
    eigendecompose,
    gft,
    graph_basis,
    grid_graph,
    igft,
    normalized_laplacian,
)


class TestGridGraph:

    def test_degrees_for_three_by_three_kernel(self):
        graph = grid_graph(4, 4, 3)
        degrees = graph.degrees().reshape(4, 4)
        assert degrees[0, 0] == 3
        assert degrees[0, 1] == 5
        assert degrees[1, 1] == 8
        assert graph.label == "grid(3)"

    def test_adjacency_is_symmetric_without_loops(self):
        adj = grid_graph(5, 3, 5).adjacency.toarray()
        np.testing.assert_array_equal(adj, adj.T)
        assert np.all(np.diag(adj) == 0)

    def test_large_kernel_becomes_complete(self):
        grid = grid_graph(3, 3, 7).adjacency.toarray()
        full = complete_graph(3, 3).adjacency.toarray()
        np.testing.assert_array_equal(grid, full)

    def test_connected(self):
        assert connected_components(grid_graph(6, 6, 3)) == 1

    def test_kernel_one_has_isolated_nodes(self):
        with pytest.raises(IsolatedNode) as info:
            normalized_laplacian(grid_graph(2, 2, 1))
        assert info.value.node == 0

    def test_build_graph(self):
        assert build_graph(GRID, 3, 3, 3).kind == GRID
        assert build_graph(COMPLETE, 3, 3).kind == COMPLETE
        with pytest.raises(ValueError):
            build_graph(GRID, 3, 3)
        with pytest.raises(ValueError):
            build_graph("ring", 3, 3)


class TestLaplacian:

    def test_complete_graph_spectrum(self):
        n = 9
        basis = graph_basis(complete_graph(3, 3))
        expected = np.r_[0.0, np.full(n - 1, n / (n - 1))]
        np.testing.assert_allclose(basis.eigenvalues, expected, atol=1e-12)

    @pytest.mark.parametrize("kernel", [3, 5, 7])
    def test_spectrum_properties(self, kernel):
        graph = grid_graph(5, 5, kernel)
        laplacian = normalized_laplacian(graph)
        basis = graph_basis(graph)
        assert basis.eigenvalues[0] == pytest.approx(0.0, abs=1e-10)
        assert basis.zero_eigenvalue_count() == 1
        assert np.all(basis.eigenvalues >= -1e-10)
        assert np.all(basis.eigenvalues <= 2 + 1e-10)
        assert np.all(np.diff(basis.eigenvalues) >= 0)
        assert basis.residual(laplacian) < 1e-10
        assert basis.orthogonality_error() < 1e-10

    def test_two_node_path_spectrum(self):
        basis = graph_basis(grid_graph(1, 2, 3))
        np.testing.assert_allclose(basis.eigenvalues, [0.0, 2.0], atol=1e-12)

    def test_square_grid_is_rotation_symmetric(self):
        laplacian = normalized_laplacian(grid_graph(5, 5, 3))
        rotation = np.rot90(np.arange(25).reshape(5, 5)).ravel()
        np.testing.assert_allclose(laplacian[np.ix_(rotation, rotation)], laplacian, atol=1e-14)
        rotated = eigendecompose(laplacian[np.ix_(rotation, rotation)])
        np.testing.assert_allclose(rotated.eigenvalues, graph_basis(grid_graph(5, 5, 3)).eigenvalues, atol=1e-9)

    def test_sign_convention(self):
        vectors = graph_basis(grid_graph(4, 4, 3)).eigenvectors
        idx = np.argmax(np.abs(vectors), axis=0)
        assert np.all(vectors[idx, np.arange(vectors.shape[1])] > 0)


class TestEigensolvers:

    def test_jacobi_matches_lapack(self):
        laplacian = normalized_laplacian(grid_graph(4, 3, 3))
        jacobi = eigendecompose(laplacian, method="jacobi")
        lapack = eigendecompose(laplacian, method="lapack")
        np.testing.assert_allclose(jacobi.eigenvalues, lapack.eigenvalues, atol=1e-10)
        assert jacobi.residual(laplacian) < 1e-10
        assert jacobi.orthogonality_error() < 1e-10

    def test_jacobi_budget_exhausted(self, np_rng):
        a = np_rng.normal(size=(6, 6))
        with pytest.raises(NoConvergence) as info:
            eigendecompose(a + a.T, method="jacobi", max_sweeps=1, tol=1e-15)
        assert info.value.sweeps == 1

    @pytest.mark.slow
    def test_jacobi_on_sixteen_by_sixteen_grid(self):
        laplacian = normalized_laplacian(grid_graph(16, 16, 3))
        basis = eigendecompose(laplacian, method="jacobi")
        assert basis.residual(laplacian) <= 1e-8
        assert basis.orthogonality_error() <= 1e-8

    def test_rejects_non_square(self):
        with pytest.raises(DimensionMismatch):
            eigendecompose(np.ones((2, 3)))

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            eigendecompose(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            eigendecompose(np.eye(2), method="power")


class TestGraphFourierTransform:

    def test_roundtrip_and_parseval(self, np_rng):
        basis = graph_basis(grid_graph(4, 4, 3))
        signal = np_rng.normal(size=16)
        coeffs = gft(basis, signal)
        np.testing.assert_allclose(igft(basis, coeffs), signal, atol=1e-12)
        assert np.linalg.norm(coeffs) == pytest.approx(np.linalg.norm(signal))

    def test_length_mismatch(self):
        basis = graph_basis(grid_graph(3, 3, 3))
        with pytest.raises(DimensionMismatch):
            gft(basis, np.ones(8))
