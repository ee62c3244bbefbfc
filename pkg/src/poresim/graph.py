"""6-connected voxel graphs over pore space.

Nodes are the pore voxels of a binary image, numbered by ascending
x-fastest linear index (deterministic, see image module). Edges connect
face-adjacent pore voxels, so every degree is at most 6. The combinatorial
Laplacian is never materialized; its matvec composes the degree vector and
the sparse adjacency on the fly, which keeps memory proportional to the
edge count at large image sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .image import PORE, BinaryImage3D

_AXES = {"x": 0, "y": 1, "z": 2}

_CACHE_MAGIC = b"poresim-graph-cache 1\n"


@dataclass(frozen=True)
class VoxelGraph:
    """Immutable pore-voxel adjacency graph.

    coords     : (n, 3) int32, voxel (i, j, k) per node, ascending linear index
    adjacency  : n x n symmetric CSR matrix with unit weights
    degrees    : (n,) float64 neighbor counts
    dims       : source image dimensions (nx, ny, nz)
    """

    coords: np.ndarray
    adjacency: sparse.csr_matrix
    degrees: np.ndarray
    dims: tuple[int, int, int]

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def n_edges(self) -> int:
        return self.adjacency.nnz // 2

    @property
    def deg_max(self) -> int:
        return int(self.degrees.max()) if self.n else 0

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i] : a.indptr[i + 1]]


def build_graph(img: BinaryImage3D) -> VoxelGraph:
    """Enumerate pore voxels and their 6-neighbor face adjacencies."""
    nx, ny, nz = img.dims
    pore = img.tags == PORE

    flat = pore.ravel(order="F")
    pore_lin = np.flatnonzero(flat)
    n = pore_lin.size
    node_id = np.full(flat.size, -1, dtype=np.int64)
    node_id[pore_lin] = np.arange(n)

    i = pore_lin % nx
    j = (pore_lin // nx) % ny
    k = pore_lin // (nx * ny)
    coords = np.stack([i, j, k], axis=1).astype(np.int32)

    # linear index of every voxel, laid out for slicing along each axis
    lin = np.arange(flat.size, dtype=np.int64).reshape((nx, ny, nz), order="F")
    rows, cols = [], []
    for axis in range(3):
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[axis] = slice(None, -1)
        sl_hi[axis] = slice(1, None)
        both = pore[tuple(sl_lo)] & pore[tuple(sl_hi)]
        u = node_id[lin[tuple(sl_lo)][both]]
        v = node_id[lin[tuple(sl_hi)][both]]
        rows.append(u)
        cols.append(v)
    u = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    v = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)

    data = np.ones(2 * u.size, dtype=np.float64)
    adjacency = sparse.csr_matrix(
        (data, (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(n, n)
    )
    adjacency.sort_indices()
    degrees = np.diff(adjacency.indptr).astype(np.float64)
    return VoxelGraph(coords=coords, adjacency=adjacency, degrees=degrees, dims=img.dims)


def laplacian_apply(g: VoxelGraph, m: np.ndarray) -> np.ndarray:
    """Apply the combinatorial Laplacian: out_i = deg(i) m_i - sum_{j~i} m_j."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (g.n,):
        raise ValueError(f"mass vector has shape {m.shape}, graph has {g.n} nodes")
    return g.degrees * m - g.adjacency @ m


def layer_index(g: VoxelGraph, axis: str) -> np.ndarray:
    """Per-node layer id: the node's voxel coordinate along the given axis."""
    if axis not in _AXES:
        raise ValueError(f"axis must be one of {sorted(_AXES)}, got {axis!r}")
    return g.coords[:, _AXES[axis]].astype(np.int64)


def save_graph(g: VoxelGraph, path) -> None:
    """Dump the graph to a versioned binary cache file."""
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        np.save(fh, np.asarray(g.dims, dtype=np.int64))
        np.save(fh, g.coords)
        np.save(fh, g.adjacency.indptr.astype(np.int64))
        np.save(fh, g.adjacency.indices.astype(np.int64))


def load_graph(path) -> VoxelGraph:
    """Load a cache written by save_graph; equivalent to rebuilding."""
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != _CACHE_MAGIC:
            raise ValueError(f"{path}: not a graph cache file (got {magic!r})")
        dims = tuple(int(d) for d in np.load(fh))
        coords = np.load(fh)
        indptr = np.load(fh)
        indices = np.load(fh)
    n = coords.shape[0]
    adjacency = sparse.csr_matrix(
        (np.ones(indices.size, dtype=np.float64), indices, indptr), shape=(n, n)
    )
    degrees = np.diff(indptr).astype(np.float64)
    return VoxelGraph(coords=coords, adjacency=adjacency, degrees=degrees, dims=dims)
