"""Image parcellation and per-parcel spatial machinery.

The grid is split into G contiguous blocks of approximately equal geometric
size; each block gets its own adjacency matrix, graph Laplacian, and a low-rank
basis built from the principal adjacency eigenvectors. The basis carries the
precomputed matrices the sampler needs, so it is built once and shared
read-only afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, eigh, solve_triangular

from .errors import InvalidSpecError, SingularBasisError

__all__ = [
    "Partition",
    "SpatialBasis",
    "partition_grid",
    "build_adjacency",
    "graph_laplacian",
    "principal_eigenvectors",
    "build_spatial_basis",
    "dump_basis_csv",
    "EDGE",
    "EDGE_CORNER",
]

EDGE = "edge"
EDGE_CORNER = "edge+corner"


@dataclass
class Partition:
    """Assignment of every voxel to exactly one rectangular parcel."""

    dims: tuple
    n_parcels: int
    assignment: np.ndarray
    parcel_voxel_lists: list

    def parcel_sizes(self) -> np.ndarray:
        return np.array([len(v) for v in self.parcel_voxel_lists])


@dataclass
class SpatialBasis:
    """Spatial machinery of one parcel.

    ``m`` holds the q principal adjacency eigenvectors (columns, orthonormal,
    descending eigenvalue order, sign-fixed). ``qs = M'QM`` and
    ``qhat_inv = (Qs + M'M)^-1`` are the precomputed kernels of the spatial
    random-effect updates; ``nu2`` is the diagonal of I + M Qs^-1 M' and
    ``qhat_inv_chol`` a lower Cholesky factor of ``qhat_inv`` for fast draws.
    """

    adjacency: np.ndarray
    laplacian: np.ndarray
    m: np.ndarray
    qs: np.ndarray
    qhat_inv: np.ndarray
    nu2: np.ndarray
    qhat_inv_chol: np.ndarray = field(repr=False, default=None)

    @property
    def n_voxels(self) -> int:
        return self.m.shape[0]

    @property
    def q(self) -> int:
        return self.m.shape[1]


def _split_axis(extent: int, pieces: int):
    """Contiguous runs whose lengths differ by at most one (long runs first)."""
    return np.array_split(np.arange(extent), pieces)


def _factorizations(g: int, n_axes: int):
    """All ordered factorizations of g into n_axes positive factors."""
    if n_axes == 1:
        return [(g,)]
    out = []
    for d in range(1, g + 1):
        if g % d == 0:
            out.extend((d, *rest) for rest in _factorizations(g // d, n_axes - 1))
    return out


def partition_grid(dims, n_parcels: int) -> Partition:
    """Split the grid into ``n_parcels`` near-square (near-cubic) blocks.

    The factorization of G over the axes is chosen to minimize the spread of
    the per-axis block counts, breaking ties by giving larger counts to longer
    axes; infeasible factorizations (more blocks than cells on an axis) are
    skipped, so a prime G degrades to strips instead of failing.
    """
    dims = tuple(int(d) for d in dims)
    n_vox = int(np.prod(dims))
    if n_parcels < 1:
        raise InvalidSpecError("number of parcels must be positive")
    if n_parcels > n_vox:
        raise InvalidSpecError(f"cannot form {n_parcels} parcels from {n_vox} voxels")

    # Rank factor multisets by balance, then assign big factors to long axes.
    axis_order = sorted(range(len(dims)), key=lambda a: (-dims[a], a))
    best = None
    for counts in _factorizations(n_parcels, len(dims)):
        ordered = sorted(counts, reverse=True)
        per_axis = [0] * len(dims)
        for axis, cnt in zip(axis_order, ordered):
            per_axis[axis] = cnt
        if any(c > d for c, d in zip(per_axis, dims)):
            continue
        score = (max(counts) - min(counts), tuple(per_axis))
        if best is None or score < best[0]:
            best = (score, per_axis)
    if best is None:
        raise InvalidSpecError(
            f"no factorization of G={n_parcels} fits grid extents {dims}"
        )
    per_axis = best[1]

    runs = [_split_axis(d, c) for d, c in zip(dims, per_axis)]
    assignment = np.empty(dims, dtype=np.int64)
    voxel_lists = []
    index_grid = np.arange(n_vox).reshape(dims)
    for pid, block in enumerate(np.ndindex(*per_axis)):
        region = np.ix_(*(runs[ax][b] for ax, b in enumerate(block)))
        assignment[region] = pid
        voxel_lists.append(index_grid[region].ravel())
    return Partition(dims, n_parcels, assignment.ravel(), voxel_lists)


def _neighbor_offsets(n_axes: int, neighborhood: str):
    if neighborhood not in (EDGE, EDGE_CORNER):
        raise InvalidSpecError(f"unknown neighborhood rule {neighborhood!r}")
    offsets = []
    for off in np.ndindex(*(3,) * n_axes):
        delta = np.array(off) - 1
        if np.max(np.abs(delta)) == 0:
            continue
        if neighborhood == EDGE and np.sum(np.abs(delta)) != 1:
            continue
        offsets.append(delta)
    return offsets


def build_adjacency(voxels, dims, neighborhood: str = EDGE_CORNER) -> np.ndarray:
    """Symmetric 0/1 adjacency among ``voxels``, truncated at the parcel border."""
    voxels = np.asarray(voxels, dtype=np.int64)
    if voxels.size == 0:
        raise InvalidSpecError("parcel voxel list is empty")
    dims = tuple(int(d) for d in dims)
    n = voxels.size
    coords = np.stack(np.unravel_index(voxels, dims), axis=1)
    local = -np.ones(dims, dtype=np.int64)
    local[tuple(coords.T)] = np.arange(n)
    a = np.zeros((n, n), dtype=np.int8)
    for delta in _neighbor_offsets(len(dims), neighborhood):
        nb = coords + delta
        ok = np.all((nb >= 0) & (nb < np.asarray(dims)), axis=1)
        src = np.flatnonzero(ok)
        dst = local[tuple(nb[src].T)]
        inside = dst >= 0
        a[src[inside], dst[inside]] = 1
    return a


def graph_laplacian(adjacency: np.ndarray) -> np.ndarray:
    """Q = diag(A 1) - A; degrees built in integer arithmetic so Q 1 = 0 exactly."""
    a = np.asarray(adjacency)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidSpecError("adjacency must be square")
    if not np.array_equal(a, a.T):
        raise InvalidSpecError("adjacency must be symmetric")
    degrees = a.astype(np.int64).sum(axis=1)
    q = np.diag(degrees).astype(float)
    q -= a
    return q


def principal_eigenvectors(adjacency: np.ndarray, q: int):
    """Orthonormal eigenvectors of the q algebraically largest eigenvalues.

    Columns are ordered by descending eigenvalue and sign-fixed so that each
    column's largest-magnitude entry is positive, making the result
    deterministic across calls.

    Returns ``(eigenvalues, M)``.
    """
    a = np.asarray(adjacency, dtype=float)
    n = a.shape[0]
    if not 1 <= q <= n:
        raise InvalidSpecError(f"q={q} must lie in [1, {n}]")
    vals, vecs = eigh(a, subset_by_index=[n - q, n - 1])
    vals = vals[::-1]
    vecs = vecs[:, ::-1]
    for j in range(q):
        k = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[k, j] < 0:
            vecs[:, j] = -vecs[:, j]
    return vals, np.ascontiguousarray(vecs)


def build_spatial_basis(adjacency: np.ndarray, q: int) -> SpatialBasis:
    """Assemble the full per-parcel spatial basis.

    Raises :class:`SingularBasisError` when M'QM is numerically singular
    (condition number above 1e12), which happens when a low-index adjacency
    eigenvector is (numerically) constant on a connected component.
    """
    _, m = principal_eigenvectors(adjacency, q)
    lap = graph_laplacian(adjacency)
    qs = m.T @ lap @ m
    qs = (qs + qs.T) / 2.0
    eigs = np.linalg.eigvalsh(qs)
    if eigs[0] <= 0 or eigs[-1] / eigs[0] > 1e12:
        raise SingularBasisError(
            "M'QM is numerically singular; use a smaller q or a larger parcel"
        )
    chol_qs = cholesky(qs, lower=True)
    # nu2 as 1 + a sum of squares, which keeps nu2 >= 1 exactly
    y = solve_triangular(chol_qs, m.T, lower=True)
    nu2 = 1.0 + np.sum(y * y, axis=0)
    qhat = qs + m.T @ m
    qhat = (qhat + qhat.T) / 2.0
    chol_qhat = cholesky(qhat, lower=True)
    inv_chol = solve_triangular(chol_qhat, np.eye(q), lower=True)
    qhat_inv = inv_chol.T @ inv_chol
    qhat_inv = (qhat_inv + qhat_inv.T) / 2.0
    return SpatialBasis(
        adjacency=np.asarray(adjacency, dtype=np.int8),
        laplacian=lap,
        m=m,
        qs=qs,
        qhat_inv=qhat_inv,
        nu2=nu2,
        qhat_inv_chol=cholesky(qhat_inv, lower=True),
    )


def dump_basis_csv(basis: SpatialBasis, directory):
    """Debug dump of A, Q, M as CSV files."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savetxt(directory / "adjacency.csv", basis.adjacency, fmt="%d", delimiter=",")
    np.savetxt(directory / "laplacian.csv", basis.laplacian, delimiter=",")
    np.savetxt(directory / "eigenvectors.csv", basis.m, delimiter=",")
