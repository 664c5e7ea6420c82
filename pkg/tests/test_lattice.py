import numpy as np
import pytest

from astrogate.lattice import (
    AstrocyteGraph,
    build_lattice,
    laplacian_lambda_max,
    weighted_laplacian,
)


def test_54_cell_lattice_interior_degree():
    g = build_lattice((3, 3, 6))
    assert g.n_cells == 54
    deg = g.degree()
    # an interior cell of a 3x3x6 box touches all 6 axis neighbors
    interior = [k for k, (x, y, z) in enumerate(g.coordinates)
                if 0 < x < 2 and 0 < y < 2 and 0 < z < 5]
    assert interior and all(deg[k] == 6 for k in interior)


def test_two_node_path_laplacian():
    g = build_lattice((1, 1, 2))
    assert np.array_equal(g.laplacian(), [[1.0, -1.0], [-1.0, 1.0]])


def test_2x2x2_every_cell_degree_three():
    g = build_lattice((2, 2, 2))
    assert np.all(g.degree() == 3)


def test_zero_dimension_rejected():
    with pytest.raises(ValueError):
        build_lattice((0, 3, 3))


def test_disconnected_adjacency_rejected():
    adj = np.zeros((4, 4), dtype=np.int8)
    adj[0, 1] = adj[1, 0] = 1
    adj[2, 3] = adj[3, 2] = 1
    coords = np.array([[i, 0, 0] for i in range(4)])
    with pytest.raises(ValueError, match="connected"):
        AstrocyteGraph(n_cells=4, adjacency=adj, spacing_h=1.0, coordinates=coords)


def test_laplacian_row_sums_and_psd():
    g = build_lattice((3, 3, 6))
    rng = np.random.default_rng(0)
    for _ in range(5):
        cond = rng.random(g.n_edges)
        L = weighted_laplacian(g, cond)
        assert np.all(np.abs(L.sum(axis=1)) <= 1e-12)
        for _ in range(100):
            x = rng.standard_normal(g.n_cells)
            assert x @ L @ x >= -1e-12


def test_weighted_laplacian_examples():
    g2 = build_lattice((1, 1, 2))
    L = weighted_laplacian(g2, [3.0])
    assert np.array_equal(L, [[3.0, -3.0], [-3.0, 3.0]])
    assert np.array_equal(weighted_laplacian(g2, [0.0]), np.zeros((2, 2)))

    g3 = build_lattice((1, 1, 3))
    L3 = weighted_laplacian(g3, [1.0, 2.0])
    assert np.array_equal(np.diag(L3), [1.0, 3.0, 2.0])
    assert L3[0, 1] == -1.0 and L3[1, 2] == -2.0


def test_weighted_laplacian_rejects_negative():
    g = build_lattice((1, 1, 2))
    with pytest.raises(ValueError):
        weighted_laplacian(g, [-0.5])


def test_lambda_max_two_node_path():
    g = build_lattice((1, 1, 2))
    L = weighted_laplacian(g, [1.0])
    assert laplacian_lambda_max(L) == pytest.approx(2.0, rel=1e-6)


def test_lambda_max_zero_matrix():
    assert laplacian_lambda_max(np.zeros((3, 3))) == 0.0


def test_hop_distances_bfs():
    g = build_lattice((3, 3, 6))
    center = g.center_cell()
    hops = g.hop_distances(center)
    assert hops[center] == 0
    nbrs = np.nonzero(g.adjacency[center])[0]
    assert np.all(hops[nbrs] == 1)
    # manhattan distance on a full box equals BFS hops
    manhattan = np.abs(g.coordinates - g.coordinates[center]).sum(axis=1)
    assert np.array_equal(hops.astype(int), manhattan)


def test_digest_changes_with_shape():
    assert build_lattice((3, 3, 6)).digest() != build_lattice((2, 3, 9)).digest()
    assert build_lattice((3, 3, 6)).digest() == build_lattice((3, 3, 6)).digest()
