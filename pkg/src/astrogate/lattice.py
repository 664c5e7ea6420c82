"""Astrocyte lattice graph: construction, Laplacians, spectral bounds.

Cells sit on a 3D integer lattice with 6-neighborhood coupling. Boundary
cells simply have fewer neighbors (no-flux boundary: exterior edges removed).
Cell indexing is row-major over (x, y, z): index = (x*dy + y)*dz + z.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AstrocyteGraph:
    """Undirected, connected cell graph with lattice coordinates.

    ``edges`` holds each undirected edge once as (i, j) with i < j, sorted
    lexicographically; per-edge quantities (junction states, conductances)
    use this ordering everywhere.
    """

    n_cells: int
    adjacency: np.ndarray  # (n, n) int8, symmetric, zero diagonal
    spacing_h: float  # voxel spacing, um
    coordinates: np.ndarray  # (n, 3) int lattice positions
    edges: np.ndarray = field(init=False)  # (n_edges, 2) int64, i < j

    def __post_init__(self):
        adj = np.asarray(self.adjacency)
        if adj.shape != (self.n_cells, self.n_cells):
            raise ValueError("adjacency shape does not match n_cells")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(adj) != 0):
            raise ValueError("adjacency must have zero diagonal")
        if self.spacing_h <= 0:
            raise ValueError("spacing_h must be positive")
        ii, jj = np.nonzero(np.triu(adj, k=1))
        edges = np.stack([ii, jj], axis=1).astype(np.int64)
        object.__setattr__(self, "edges", edges)
        if not self._connected():
            raise ValueError("graph must be connected")

    def _connected(self) -> bool:
        return np.all(np.isfinite(self.hop_distances(0)))

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def degree(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(np.int64)

    def laplacian(self) -> np.ndarray:
        """Unweighted L = D - A (float64)."""
        a = self.adjacency.astype(np.float64)
        return np.diag(a.sum(axis=1)) - a

    def hop_distances(self, source: int) -> np.ndarray:
        """BFS hop distance from ``source`` to every cell (inf if unreachable)."""
        dist = np.full(self.n_cells, np.inf)
        dist[source] = 0
        frontier = [source]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for i in frontier:
                for j in np.nonzero(self.adjacency[i])[0]:
                    if dist[j] > d:
                        dist[j] = d
                        nxt.append(int(j))
            frontier = nxt
        return dist

    def center_cell(self) -> int:
        """Cell closest to the lattice centroid (row-major tie-break)."""
        centroid = self.coordinates.mean(axis=0)
        d2 = ((self.coordinates - centroid) ** 2).sum(axis=1)
        return int(np.argmin(d2))

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.n_cells).tobytes())
        h.update(np.float64(self.spacing_h).tobytes())
        h.update(np.ascontiguousarray(self.adjacency, dtype=np.int8).tobytes())
        h.update(np.ascontiguousarray(self.coordinates, dtype=np.int64).tobytes())
        return h.hexdigest()


def build_lattice(dims, spacing_h=1.0) -> AstrocyteGraph:
    """6-neighborhood lattice graph over a (dx, dy, dz) box of cells."""
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise ValueError(f"dims must be three positive ints, got {dims}")
    dx, dy, dz = dims
    n = dx * dy * dz
    coords = np.array(
        [(x, y, z) for x in range(dx) for y in range(dy) for z in range(dz)],
        dtype=np.int64,
    )
    index = {tuple(c): k for k, c in enumerate(coords)}
    adj = np.zeros((n, n), dtype=np.int8)
    for k, (x, y, z) in enumerate(coords):
        for nb in ((x + 1, y, z), (x, y + 1, z), (x, y, z + 1)):
            if nb in index:
                adj[k, index[nb]] = 1
                adj[index[nb], k] = 1
    return AstrocyteGraph(n_cells=n, adjacency=adj, spacing_h=float(spacing_h), coordinates=coords)


def weighted_laplacian(graph: AstrocyteGraph, edge_conductances) -> np.ndarray:
    """Conductance-weighted Laplacian D_g - G from per-edge conductances.

    Conductances follow ``graph.edges`` order and must be nonnegative.
    """
    g = np.asarray(edge_conductances, dtype=np.float64)
    if g.shape != (graph.n_edges,):
        raise ValueError(f"expected {graph.n_edges} conductances, got shape {g.shape}")
    if np.any(g < 0):
        raise ValueError("edge conductances must be nonnegative")
    n = graph.n_cells
    G = np.zeros((n, n))
    ei, ej = graph.edges[:, 0], graph.edges[:, 1]
    G[ei, ej] = g
    G[ej, ei] = g
    return np.diag(G.sum(axis=1)) - G


def laplacian_lambda_max(matrix: np.ndarray, rel_tol=1e-6, max_iter=10_000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    A fixed ramp start vector guarantees a component on the top eigenvector
    for graph Laplacians (whose null space is the constant vector).
    """
    n = matrix.shape[0]
    x = np.arange(1.0, n + 1.0)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = matrix @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        x = y / norm
        lam_new = float(x @ (matrix @ x))
        if abs(lam_new - lam) <= rel_tol * max(abs(lam_new), 1e-300):
            return lam_new
        lam = lam_new
    return lam
