"""Triangulations for the 2D flow domains.

Meshes are plain vertex/triangle arrays with boundary edges tagged by
markers.  All triangles are stored counter-clockwise.  The Scott-Vogelius
velocity/pressure pair requires a barycentric refinement of a regular
parent mesh, provided by :func:`barycentric_refine`.

Mesh objects are immutable after construction (the arrays are frozen), so
they can be shared read-only across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class Marker(IntEnum):
    """Boundary segment tags."""

    ALL = 0
    WALL = 1
    LID = 2
    INLET = 3
    OUTLET = 4


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation with tagged boundary edges.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array
        Vertex indices, counter-clockwise.
    boundary_edges : (nb, 2) int array
        Vertex-index pairs, each belonging to exactly one triangle.
    boundary_markers : (nb,) int array
        One :class:`Marker` value per boundary edge.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_markers: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(np.asarray(self.vertices, dtype=float)))
        object.__setattr__(self, "triangles", _frozen(np.asarray(self.triangles, dtype=np.int64)))
        object.__setattr__(self, "boundary_edges", _frozen(np.asarray(self.boundary_edges, dtype=np.int64)))
        object.__setattr__(self, "boundary_markers", _frozen(np.asarray(self.boundary_markers, dtype=np.int64)))
        if np.any(self.signed_areas() <= 0.0):
            raise ValueError("mesh has a non-positively oriented triangle")

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    def corners(self) -> np.ndarray:
        """Vertex coordinates of every triangle, shape (nt, 3, 2)."""
        return self.vertices[self.triangles]

    def signed_areas(self) -> np.ndarray:
        p = self.corners()
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas())

    @property
    def total_area(self) -> float:
        return float(self.areas().sum())

    @property
    def h(self) -> float:
        """Maximum triangle diameter (longest edge over all triangles)."""
        p = self.corners()
        lengths = [np.linalg.norm(p[:, i] - p[:, j], axis=1) for i, j in ((0, 1), (1, 2), (2, 0))]
        return float(np.max(lengths))

    def boundary_vertex_ids(self, markers=None) -> np.ndarray:
        """Unique vertex indices on boundary edges with the given markers."""
        sel = self._edge_selection(markers)
        return np.unique(self.boundary_edges[sel])

    def _edge_selection(self, markers) -> np.ndarray:
        if markers is None:
            return np.ones(len(self.boundary_edges), dtype=bool)
        wanted = {int(m) for m in np.atleast_1d(markers)}
        return np.isin(self.boundary_markers, sorted(wanted))


def _directed_edges(triangles: np.ndarray) -> np.ndarray:
    """All directed triangle edges, shape (3 nt, 2)."""
    return np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]], axis=0
    )


def boundary_edges_of(triangles: np.ndarray) -> np.ndarray:
    """Edges that belong to exactly one triangle (as directed in that triangle)."""
    directed = _directed_edges(triangles)
    undirected = np.sort(directed, axis=1)
    _, inverse, counts = np.unique(undirected, axis=0, return_inverse=True, return_counts=True)
    return directed[counts[inverse] == 1]


def build_structured_square(n: int, extent=((0.0, 1.0), (0.0, 1.0)), per_side_markers: bool = False) -> Mesh:
    """Structured triangulation of a rectangle with n subdivisions per side.

    Every grid cell is split along the lower-left to upper-right diagonal,
    giving 2 n^2 triangles.  Boundary edges carry ``Marker.ALL``, or with
    ``per_side_markers`` the top side is ``LID`` and the rest ``WALL``.
    """
    if n < 1:
        raise ValueError(f"subdivision count must be >= 1, got {n}")
    (x0, x1), (y0, y1) = extent
    if not (x1 > x0 and y1 > y0):
        raise ValueError("extent must describe a nonempty rectangle")

    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return i * (n + 1) + j

    tris = []
    for i in range(n):
        for j in range(n):
            p00, p10 = vid(i, j), vid(i + 1, j)
            p11, p01 = vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((p00, p10, p11))
            tris.append((p00, p11, p01))
    triangles = np.array(tris, dtype=np.int64)

    bedges = boundary_edges_of(triangles)
    if per_side_markers:
        mids = 0.5 * (vertices[bedges[:, 0]] + vertices[bedges[:, 1]])
        markers = np.full(len(bedges), int(Marker.WALL), dtype=np.int64)
        markers[np.isclose(mids[:, 1], y1)] = int(Marker.LID)
    else:
        markers = np.full(len(bedges), int(Marker.ALL), dtype=np.int64)
    return Mesh(vertices, triangles, bedges, markers)


def barycentric_refine(mesh: Mesh) -> Mesh:
    """Split every triangle into three at its barycenter.

    Child triangles keep the parent's edges, so boundary edges and their
    markers carry over unchanged.
    """
    nv, nt = mesh.num_vertices, mesh.num_triangles
    centers = mesh.corners().mean(axis=1)
    vertices = np.vstack([mesh.vertices, centers])
    g = nv + np.arange(nt)

    t = mesh.triangles
    children = np.empty((3 * nt, 3), dtype=np.int64)
    children[0::3] = np.column_stack([t[:, 0], t[:, 1], g])
    children[1::3] = np.column_stack([t[:, 1], t[:, 2], g])
    children[2::3] = np.column_stack([t[:, 2], t[:, 0], g])

    return Mesh(vertices, children, mesh.boundary_edges, mesh.boundary_markers)


def build_step_channel(h_target: float) -> Mesh:
    """Channel of length 40 and height 10 with a unit step on the bottom.

    The step occupies [5, 6] x [0, 1]; the outflow section extends the
    nominal 30-long channel by 10 units downstream.  The grid spacing is
    chosen so triangle diameters stay below ~2 h_target.  Markers: INLET
    on x=0, OUTLET on x=40, WALL elsewhere (including the step faces).
    """
    if h_target <= 0.0:
        raise ValueError("h_target must be positive")
    if h_target >= 1.0:
        raise ValueError("h_target must be < 1 to resolve the unit step")

    length, height = 40.0, 10.0
    k = max(1, math.ceil(1.0 / (math.sqrt(2.0) * h_target) - 1e-12))
    nx, ny = 40 * k, 10 * k
    xs = np.linspace(0.0, length, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    in_step = np.zeros((nx, ny), dtype=bool)
    in_step[5 * k : 6 * k, 0:k] = True

    tris = []
    for i in range(nx):
        for j in range(ny):
            if in_step[i, j]:
                continue
            p00, p10 = vid(i, j), vid(i + 1, j)
            p11, p01 = vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((p00, p10, p11))
            tris.append((p00, p11, p01))
    triangles = np.array(tris, dtype=np.int64)

    # drop vertices not referenced by any triangle (strict interior of the step)
    used = np.unique(triangles)
    remap = -np.ones(len(vertices), dtype=np.int64)
    remap[used] = np.arange(len(used))
    vertices = vertices[used]
    triangles = remap[triangles]

    bedges = boundary_edges_of(triangles)
    mids = 0.5 * (vertices[bedges[:, 0]] + vertices[bedges[:, 1]])
    markers = np.full(len(bedges), int(Marker.WALL), dtype=np.int64)
    markers[np.isclose(mids[:, 0], 0.0)] = int(Marker.INLET)
    markers[np.isclose(mids[:, 0], length)] = int(Marker.OUTLET)
    return Mesh(vertices, triangles, bedges, markers)
