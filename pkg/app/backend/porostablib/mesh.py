import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import MeshError

logger = logging.getLogger("porostab")

SIDES_2D = ("xmin", "xmax", "ymin", "ymax")
SIDES_3D = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")


def _ravel(index: Sequence[np.ndarray], shape: Sequence[int]) -> np.ndarray:
    # x index varies fastest
    return np.ravel_multi_index(tuple(index), tuple(shape), order="F")


@dataclass(frozen=True)
class Face:
    """
    A single mesh face

    Attributes:
        index (int): Position of the face in the mesh face arrays
        cell_k (int): First adjacent cell, always present
        cell_l (Optional[int]): Second adjacent cell, None on the domain boundary
        axis (int): Axis the face normal is aligned with
        normal (Tuple[float, ...]): Unit normal; points from K to L, or outwards on the boundary
        area (float): Face area A^f (m², m in 2D)
        distance (float): Distance d^f between the centroids of K and L (twice the centroid-to-face distance on the boundary)
        centroid (Tuple[float, ...]): Face centroid
        macro_interior (bool): True iff K and L share a parent macroelement
        side (Optional[str]): Boundary side label, None for interior faces
    """

    index: int
    cell_k: int
    cell_l: Optional[int]
    axis: int
    normal: Tuple[float, ...]
    area: float
    distance: float
    centroid: Tuple[float, ...]
    macro_interior: bool
    side: Optional[str] = None

    @property
    def is_boundary(self) -> bool:
        return self.cell_l is None


class StructuredMesh:
    """
    Uniform axis-aligned quadrilateral (2D) or hexahedral (3D) grid with cell, node and face topology and the 2×2(×2)
    macroelement partition used by the pressure-jump stabilization.

    Cells, nodes and faces are numbered lexicographically with the x index varying fastest. Faces are grouped by
    normal axis (all x-faces first), then ordered lexicographically by their position in the face grid. Local node
    numbering inside a cell, and local cell numbering inside a macroelement, use the bit pattern a + 2b + 4c of the
    (x, y, z) offsets.
    """

    def __init__(self, extent: Sequence[float], cell_counts: Sequence[int], origin: Optional[Sequence[float]] = None):
        self.dim = len(cell_counts)
        self.cell_counts = tuple(int(n) for n in cell_counts)
        self.extent = tuple(float(e) for e in extent)
        self.origin = tuple(float(o) for o in origin) if origin is not None else (0.0,) * self.dim
        self.h = tuple(e / n for e, n in zip(self.extent, self.cell_counts))
        self.node_counts = tuple(n + 1 for n in self.cell_counts)
        self.n_cells = int(np.prod(self.cell_counts))
        self.n_nodes = int(np.prod(self.node_counts))
        self.cell_volume = float(np.prod(self.h))
        self.macro_counts = tuple(n // 2 for n in self.cell_counts)
        self.n_macro = int(np.prod(self.macro_counts))

        self._build_nodes_and_cells()
        self._build_faces()

    def _build_nodes_and_cells(self):
        node_idx = np.indices(self.node_counts).reshape(self.dim, -1, order="F")
        self.node_coords = np.stack(
            [self.origin[a] + node_idx[a] * self.h[a] for a in range(self.dim)], axis=1
        )

        cell_idx = np.indices(self.cell_counts).reshape(self.dim, -1, order="F")
        self.cell_index = cell_idx.T.copy()
        self.cell_centroids = np.stack(
            [self.origin[a] + (cell_idx[a] + 0.5) * self.h[a] for a in range(self.dim)], axis=1
        )
        self.cell_volumes = np.full(self.n_cells, self.cell_volume)

        # offsets[l] = (a, b, c) with l = a + 2b + 4c
        offsets = np.array([[(l >> axis) & 1 for axis in range(self.dim)] for l in range(2**self.dim)])
        self.local_offsets = offsets
        self.cell_nodes = np.stack(
            [_ravel([cell_idx[a] + offsets[l, a] for a in range(self.dim)], self.node_counts) for l in range(len(offsets))],
            axis=1,
        )

        macro_idx = cell_idx // 2
        self.macro_of_cell = _ravel(macro_idx, self.macro_counts)
        local = np.zeros(self.n_cells, dtype=int)
        for a in range(self.dim):
            local += (cell_idx[a] % 2) << a
        self.macro_cells = np.zeros((self.n_macro, 2**self.dim), dtype=int)
        self.macro_cells[self.macro_of_cell, local] = np.arange(self.n_cells)

    def _build_faces(self):
        cells_k, cells_l, axes, areas, distances, centroids, normals, sides = [], [], [], [], [], [], [], []
        side_names = SIDES_3D if self.dim == 3 else SIDES_2D
        for axis in range(self.dim):
            shape = list(self.cell_counts)
            shape[axis] += 1
            pos = np.indices(shape).reshape(self.dim, -1, order="F")
            lower = pos.copy()
            lower[axis] -= 1
            has_lower = pos[axis] > 0
            has_upper = pos[axis] < self.cell_counts[axis]
            upper_cell = np.where(has_upper, _ravel(np.minimum(pos.T, np.array(self.cell_counts) - 1).T, self.cell_counts), -1)
            lower_cell = np.where(has_lower, _ravel(np.maximum(lower.T, 0).T, self.cell_counts), -1)
            k = np.where(has_lower, lower_cell, upper_cell)
            l_ = np.where(has_lower & has_upper, upper_cell, -1)
            cells_k.append(k)
            cells_l.append(l_)
            n = pos.shape[1]
            axes.append(np.full(n, axis))
            areas.append(np.full(n, self.cell_volume / self.h[axis]))
            distances.append(np.full(n, self.h[axis]))
            centroid = np.stack(
                [
                    self.origin[a] + (pos[a] * self.h[a] if a == axis else (pos[a] + 0.5) * self.h[a])
                    for a in range(self.dim)
                ],
                axis=1,
            )
            centroids.append(centroid)
            normal = np.zeros((n, self.dim))
            normal[:, axis] = np.where(has_lower, 1.0, -1.0)
            normals.append(normal)
            side = np.full(n, "", dtype=object)
            side[~has_lower] = side_names[2 * axis]
            side[~has_upper] = side_names[2 * axis + 1]
            sides.append(side)

        self.face_cells = np.stack([np.concatenate(cells_k), np.concatenate(cells_l)], axis=1)
        self.face_axis = np.concatenate(axes)
        self.face_area = np.concatenate(areas)
        self.face_distance = np.concatenate(distances)
        self.face_centroid = np.concatenate(centroids)
        self.face_normal = np.concatenate(normals)
        self.face_side = np.concatenate(sides)
        self.n_faces = len(self.face_axis)
        self.interior_faces = np.flatnonzero(self.face_cells[:, 1] >= 0)
        self.boundary_faces = np.flatnonzero(self.face_cells[:, 1] < 0)
        interior = self.face_cells[:, 1] >= 0
        same_macro = np.zeros(self.n_faces, dtype=bool)
        same_macro[interior] = (
            self.macro_of_cell[self.face_cells[interior, 0]] == self.macro_of_cell[self.face_cells[interior, 1]]
        )
        self.face_macro_interior = same_macro
        self.macro_interior_faces = np.flatnonzero(same_macro)

    def face(self, index: int) -> Face:
        cell_l = int(self.face_cells[index, 1])
        side = self.face_side[index]
        return Face(
            index=int(index),
            cell_k=int(self.face_cells[index, 0]),
            cell_l=cell_l if cell_l >= 0 else None,
            axis=int(self.face_axis[index]),
            normal=tuple(float(v) for v in self.face_normal[index]),
            area=float(self.face_area[index]),
            distance=float(self.face_distance[index]),
            centroid=tuple(float(v) for v in self.face_centroid[index]),
            macro_interior=bool(self.face_macro_interior[index]),
            side=side or None,
        )

    @property
    def sides(self) -> Tuple[str, ...]:
        return SIDES_3D if self.dim == 3 else SIDES_2D

    @cached_property
    def n_macro_interior_faces_per_macro(self) -> int:
        return 4 if self.dim == 2 else 12

    def boundary_nodes(self, side: str) -> np.ndarray:
        """Indices of the nodes lying on a boundary side"""
        if side not in self.sides:
            raise MeshError(f"Unknown boundary side '{side}'")
        axis = self.sides.index(side) // 2
        node_idx = np.indices(self.node_counts).reshape(self.dim, -1, order="F")
        target = 0 if side.endswith("min") else self.cell_counts[axis]
        return np.flatnonzero(node_idx[axis] == target)

    def boundary_faces_on(self, side: str) -> np.ndarray:
        return np.flatnonzero(self.face_side == side)

    def locate_cell(self, point: Sequence[float]) -> int:
        """
        Index of the cell containing a point. A point lying exactly on a face between two cells is assigned to the
        lower-index cell.
        """
        index = []
        for a in range(self.dim):
            x = (float(point[a]) - self.origin[a]) / self.h[a]
            if x < 0 or x > self.cell_counts[a]:
                raise MeshError(f"Point {tuple(point)} lies outside of the domain")
            i = int(np.floor(x))
            if i == x and i > 0:
                i -= 1
            index.append(min(i, self.cell_counts[a] - 1))
        return int(_ravel([np.array([i]) for i in index], self.cell_counts)[0])

    def cell_at(self, index: Sequence[int]) -> int:
        for a, i in enumerate(index):
            if i < 0 or i >= self.cell_counts[a]:
                raise MeshError(f"Cell index {tuple(index)} does not exist")
        return int(_ravel([np.array([i]) for i in index], self.cell_counts)[0])

    def describe(self) -> str:
        counts = "x".join(str(n) for n in self.cell_counts)
        return f"{self.dim}D mesh {counts}, {self.n_cells} cells, {self.n_macro} macroelements, {self.n_faces} faces"


def build_structured_mesh(
    extent: Sequence[float], cell_counts: Sequence[int], origin: Optional[Sequence[float]] = None
) -> StructuredMesh:
    if len(cell_counts) not in (2, 3) or len(extent) != len(cell_counts):
        raise MeshError("Only 2D and 3D meshes are supported and extent must match the cell counts")
    for e in extent:
        if not e > 0:
            raise MeshError(f"Invalid extent {tuple(extent)}: every extent must be positive")
    for n in cell_counts:
        if int(n) != n or n <= 0:
            raise MeshError(f"Invalid cell counts {tuple(cell_counts)}: counts must be positive integers")
        if n % 2 != 0:
            raise MeshError(f"Cell counts {tuple(cell_counts)} are not even: macroelement tiling impossible")
    mesh = StructuredMesh(extent, cell_counts, origin)
    logger.debug("Built %s", mesh.describe())
    return mesh


def _half_transmissibility(area, distance, perm):
    return area * perm / (0.5 * distance)


def face_transmissibility(face: Face, perm: np.ndarray) -> float:
    """
    Two-point transmissibility of a face from the harmonic combination of the half-transmissibilities of its
    adjacent cells. Boundary faces get the single half-transmissibility of their interior cell.
    """
    half_k = _half_transmissibility(face.area, face.distance, float(perm[face.cell_k]))
    if face.cell_l is None:
        return half_k
    half_l = _half_transmissibility(face.area, face.distance, float(perm[face.cell_l]))
    if half_k + half_l <= 0:
        return 0.0
    return half_k * half_l / (half_k + half_l)


def transmissibilities(mesh: StructuredMesh, perm: np.ndarray) -> np.ndarray:
    """Vectorized face_transmissibility over every face of the mesh"""
    perm = np.asarray(perm, dtype=float)
    k = mesh.face_cells[:, 0]
    l_ = mesh.face_cells[:, 1]
    half_k = _half_transmissibility(mesh.face_area, mesh.face_distance, perm[k])
    half_l = _half_transmissibility(mesh.face_area, mesh.face_distance, perm[np.maximum(l_, 0)])
    total = half_k + half_l
    with np.errstate(divide="ignore", invalid="ignore"):
        interior = np.where(total > 0, half_k * half_l / np.where(total > 0, total, 1.0), 0.0)
    return np.where(l_ >= 0, interior, half_k)
