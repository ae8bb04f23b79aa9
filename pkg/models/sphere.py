from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@dataclass(frozen=True)
class SphereGrid:
    vertices: np.ndarray
    faces: np.ndarray
    neighbors: tuple[np.ndarray, ...]
    neighbor_table: np.ndarray

    def __len__(self) -> int:
        return self.vertices.shape[0]

    @cached_property
    def edge_angle(self) -> float:
        """平均の辺の角度 [rad]"""
        i, j = self.faces[:, 0], self.faces[:, 1]
        cos = np.einsum("ij,ij->i", self.vertices[i], self.vertices[j])
        return float(np.mean(np.arccos(np.clip(cos, -1.0, 1.0))))


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=int,
    )
    return verts / np.linalg.norm(verts, axis=1, keepdims=True), faces


def _subdivide(verts: list, faces: np.ndarray) -> np.ndarray:
    midpoint: dict[tuple[int, int], int] = {}

    def mid(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        if key not in midpoint:
            v = verts[a] + verts[b]
            verts.append(v / np.linalg.norm(v))
            midpoint[key] = len(verts) - 1
        return midpoint[key]

    out = []
    for a, b, c in faces:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        out.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]])
    return np.array(out, dtype=int)


def hemisphere_directions(n: int) -> np.ndarray:
    """z >= 0 の半球フィボナッチ格子

    符号なし軸の集合として、対蹠点の重複なしに球面をほぼ一様に覆う。
    """
    i = np.arange(n, dtype=float)
    z = 1.0 - (i + 0.5) / n
    r = np.sqrt(1.0 - z * z)
    phi = _GOLDEN_ANGLE * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


@lru_cache(maxsize=8)
def icosphere(subdivisions: int = 3) -> SphereGrid:
    """正二十面体の細分割（レベル 3 で 642 頂点）"""
    base, faces = _icosahedron()
    verts = [v for v in base]
    for _ in range(subdivisions):
        faces = _subdivide(verts, faces)
    vertices = np.array(verts)
    adjacency: list[set[int]] = [set() for _ in range(len(vertices))]
    for a, b, c in faces:
        adjacency[a].update((b, c))
        adjacency[b].update((a, c))
        adjacency[c].update((a, b))
    neighbors = tuple(np.array(sorted(s), dtype=int) for s in adjacency)
    # 固定幅の近傍表（5 近傍の頂点は末尾要素を繰り返して埋める）
    width = max(len(n) for n in neighbors)
    table = np.array([np.pad(n, (0, width - len(n)), mode="edge") for n in neighbors], dtype=int)
    for arr in (vertices, faces, table):
        arr.setflags(write=False)
    return SphereGrid(vertices, faces, neighbors, table)


def gauss_legendre_grid(n_theta: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre x 等間隔方位角の直積求積（次数 < 2 n_theta まで厳密）

    Returns directions (N, 3) and weights (N,) summing to 4 pi.
    """
    x, w = np.polynomial.legendre.leggauss(n_theta)
    n_phi = 2 * n_theta
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    cos_t = np.repeat(x, n_phi)
    sin_t = np.sqrt(1.0 - cos_t ** 2)
    ph = np.tile(phi, n_theta)
    dirs = np.column_stack([sin_t * np.cos(ph), sin_t * np.sin(ph), cos_t])
    weights = np.repeat(w, n_phi) * (2.0 * math.pi / n_phi)
    return dirs, weights


def cart2sphere(directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = np.atleast_2d(directions)
    theta = np.arccos(np.clip(d[:, 2] / np.linalg.norm(d, axis=1), -1.0, 1.0))
    phi = np.arctan2(d[:, 1], d[:, 0])
    return theta, phi
