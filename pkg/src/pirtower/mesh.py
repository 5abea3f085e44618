"""Triangle meshes for scene actors: a minimal OBJ reader/writer and
procedural generators for people, four-legged animals and shrubs.

Meshes live in a local frame with the footprint centred on the z axis and
the lowest point at z = 0.  Animals face +x.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np

LABELS = ("human", "animal", "clutter")
HEIGHT_LIMITS = {"human": (1.5, 2.0), "animal": (0.5, 1.2)}


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float
    triangles: np.ndarray  # (T, 3) int
    label_hint: str = "clutter"

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def height(self) -> float:
        if len(self.vertices) == 0:
            return 0.0
        return float(self.vertices[:, 2].max() - self.vertices[:, 2].min())

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def validate(self, check_height: bool = True) -> None:
        if self.label_hint not in LABELS:
            raise MeshError(f"unknown label hint {self.label_hint!r}")
        if len(self.triangles) == 0:
            return
        if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
            raise MeshError("triangle index out of range")
        areas = self.triangle_areas()
        bad = np.nonzero(areas <= 1e-12)[0]
        if len(bad):
            raise MeshError(f"degenerate triangle {int(bad[0])} (zero area)")
        if check_height and self.label_hint in HEIGHT_LIMITS:
            lo, hi = HEIGHT_LIMITS[self.label_hint]
            if not lo <= self.height <= hi:
                raise MeshError(f"{self.label_hint} mesh height {self.height:.3f} m outside [{lo}, {hi}] m")


def merge(meshes: Iterable[TriangleMesh], label_hint: str) -> TriangleMesh:
    verts, tris, base = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + base)
        base += len(m.vertices)
    if not verts:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), label_hint)
    return TriangleMesh(np.vstack(verts), np.vstack(tris), label_hint)


def ellipsoid(center, radii, n_lon: int = 10, n_lat: int = 6, label_hint: str = "clutter") -> TriangleMesh:
    """Closed UV ellipsoid with outward (counter-clockwise) winding."""
    cx, cy, cz = center
    rx, ry, rz = radii
    verts = [(cx, cy, cz + rz)]
    for i in range(1, n_lat):
        th = np.pi * i / n_lat
        for j in range(n_lon):
            ph = 2 * np.pi * j / n_lon
            verts.append((cx + rx * np.sin(th) * np.cos(ph), cy + ry * np.sin(th) * np.sin(ph),
                          cz + rz * np.cos(th)))
    verts.append((cx, cy, cz - rz))
    south = len(verts) - 1
    tris = []
    ring = lambda i, j: 1 + (i - 1) * n_lon + (j % n_lon)  # noqa: E731
    for j in range(n_lon):
        tris.append((0, ring(1, j), ring(1, j + 1)))
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris.append((a, c, d))
            tris.append((a, d, b))
    for j in range(n_lon):
        tris.append((ring(n_lat - 1, j), south, ring(n_lat - 1, j + 1)))
    return TriangleMesh(np.array(verts), np.array(tris), label_hint)


def make_human(height: float = 1.75, build: float = 1.0) -> TriangleMesh:
    """Upright capsule stack: legs, torso, arms, head.  ``build`` scales widths."""
    h, w = height, build * height / 1.75
    parts = [
        ellipsoid((0.0, 0.0, 0.94 * h), (0.06 * h, 0.065 * h, 0.06 * h)),  # head
        ellipsoid((0.0, 0.0, 0.66 * h), (0.17 * w, 0.10 * w, 0.20 * h)),  # torso
        ellipsoid((-0.08 * w, 0.0, 0.25 * h), (0.07 * w, 0.07 * w, 0.25 * h)),  # legs
        ellipsoid((0.08 * w, 0.0, 0.25 * h), (0.07 * w, 0.07 * w, 0.25 * h)),
        ellipsoid((-0.21 * w, 0.0, 0.60 * h), (0.045 * w, 0.045 * w, 0.17 * h)),  # arms
        ellipsoid((0.21 * w, 0.0, 0.60 * h), (0.045 * w, 0.045 * w, 0.17 * h)),
    ]
    return merge(parts, "human")


def make_animal(height: float = 0.65, length_ratio: float = 1.4) -> TriangleMesh:
    """Horizontal body capsule on four legs with a head at the +x end."""
    h = height
    body_len = length_ratio * h
    rx, rz = 0.5 * body_len, 0.18 * h
    body_z = 0.62 * h
    parts = [ellipsoid((0.0, 0.0, body_z), (rx, 0.13 * h, rz))]
    leg_rz = 0.5 * (body_z - 0.05 * h)
    for sx in (-0.7, 0.7):
        for sy in (-0.08, 0.08):
            parts.append(ellipsoid((sx * rx, sy * h, leg_rz), (0.05 * h, 0.05 * h, leg_rz)))
    head_r = 0.14 * h
    parts.append(ellipsoid((rx + 0.5 * head_r, 0.0, h - head_r), (head_r, 0.9 * head_r, head_r)))
    return merge(parts, "animal")


def make_shrub(height: float, width: float, depth: Optional[float] = None) -> TriangleMesh:
    """Ground-anchored ellipsoid of the given overall height and width."""
    depth = width if depth is None else depth
    return ellipsoid((0.0, 0.0, height / 2), (width / 2, depth / 2, height / 2), n_lon=10, n_lat=6)


def write_obj(mesh: TriangleMesh, path: Union[str, Path]) -> None:
    lines = [f"# label: {mesh.label_hint}"]
    lines += ["v %.9g %.9g %.9g" % tuple(v) for v in mesh.vertices]
    lines += ["f %d %d %d" % tuple(t + 1) for t in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path: Union[str, Path], label_hint: Optional[str] = None) -> TriangleMesh:
    """Read ``v``/``f`` lines; polygons are fan-triangulated, other records rejected."""
    verts: List[Tuple[float, float, float]] = []
    tris: List[Tuple[int, int, int]] = []
    label = label_hint
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if label is None and line[1:].strip().startswith("label:"):
                label = line.split(":", 1)[1].strip()
            continue
        tok = line.split()
        try:
            if tok[0] == "v":
                verts.append((float(tok[1]), float(tok[2]), float(tok[3])))
            elif tok[0] == "f":
                idx = [int(t.split("/")[0]) for t in tok[1:]]
                if len(idx) < 3:
                    raise ValueError("face needs at least 3 vertices")
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):
                    tris.append((idx[0], idx[k], idx[k + 1]))
            else:
                raise ValueError(f"unsupported record {tok[0]!r}")
        except (ValueError, IndexError) as exc:
            raise MeshError(f"{path}:{lineno}: {exc}") from exc
    mesh = TriangleMesh(np.array(verts, dtype=float).reshape(-1, 3),
                        np.array(tris, dtype=np.int64).reshape(-1, 3), label or "clutter")
    mesh.validate(check_height=False)
    return mesh
