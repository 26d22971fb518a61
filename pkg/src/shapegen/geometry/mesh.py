"""Triangle meshes: construction, normalization, OBJ/PLY I/O."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from ..errors import DegenerateMeshError, FileFormatError, ValidationError


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    name: str = "mesh"

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise FileFormatError(f"mesh {self.name!r}: face index out of range [0, {len(v)})")
        if not np.all(np.isfinite(v)):
            raise ValidationError(f"mesh {self.name!r}: non-finite vertex coordinates")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def triangles(self) -> np.ndarray:
        """``(m, 3, 3)`` corner coordinates."""
        return self.vertices[self.faces]

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def diagonal(self) -> float:
        lo, hi = self.bounds
        return float(np.linalg.norm(hi - lo))

    @cached_property
    def face_areas(self) -> np.ndarray:
        t = self.triangles
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    @cached_property
    def bvh(self):
        from .bvh import BVH

        return BVH(self)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.faces, dtype="<i8").tobytes())
        return h.hexdigest()

    def transformed(self, scale=1.0, offset=(0.0, 0.0, 0.0), name=None) -> TriangleMesh:
        """Mesh with vertices ``v * scale + offset`` (scale may be per-axis)."""
        v = self.vertices * np.asarray(scale, dtype=np.float64) + np.asarray(offset, dtype=np.float64)
        return TriangleMesh(v, self.faces, name or self.name)

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` area-weighted uniform samples on the surface."""
        areas = self.face_areas
        total = areas.sum()
        if total <= 0:
            raise DegenerateMeshError(f"mesh {self.name!r} has zero surface area")
        face = rng.choice(len(areas), size=n, p=areas / total)
        r1 = np.sqrt(rng.random(n))
        r2 = rng.random(n)
        t = self.triangles[face]
        return ((1 - r1)[:, None] * t[:, 0] + (r1 * (1 - r2))[:, None] * t[:, 1]
                + (r1 * r2)[:, None] * t[:, 2])


# -- constructors ------------------------------------------------------------


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0), name="icosphere") -> TriangleMesh:
    """Subdivided icosahedron with outward-facing (counter-clockwise) triangles."""
    p = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0), (0, -1, p), (0, 1, p),
             (0, -1, -p), (0, 1, -p), (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.asarray(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriangleMesh(v, np.array(faces), name)


def box(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0), name="box") -> TriangleMesh:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    corners = np.array([[(hi if (i >> k) & 1 else lo)[k] for k in range(3)] for i in range(8)])
    # vertex i has bit k set when coordinate k is at the upper bound
    faces = [(0, 2, 3), (0, 3, 1),  # z = lo
             (4, 5, 7), (4, 7, 6),  # z = hi
             (0, 1, 5), (0, 5, 4),  # y = lo
             (2, 6, 7), (2, 7, 3),  # y = hi
             (0, 4, 6), (0, 6, 2),  # x = lo
             (1, 3, 7), (1, 7, 5)]  # x = hi
    return TriangleMesh(corners, np.array(faces), name)


# -- normalization -----------------------------------------------------------


def normalize_to_unit_cube(mesh: TriangleMesh) -> tuple[TriangleMesh, float, np.ndarray]:
    """Uniformly rescale so the bounding box sits in [0, 1]^3, longest side spanning [0, 1].

    Returns ``(normalized, scale, offset)`` with ``normalized = v * scale + offset``.
    """
    if len(mesh.vertices) == 0:
        raise DegenerateMeshError(f"mesh {mesh.name!r} has no vertices")
    lo, hi = mesh.bounds
    extent = float(np.max(hi - lo))
    if extent <= 0:
        raise DegenerateMeshError(f"mesh {mesh.name!r} has zero extent")
    scale = 1.0 / extent
    offset = -lo * scale
    return mesh.transformed(scale, offset), scale, offset


def denormalize_points(points, scale: float, offset) -> np.ndarray:
    return (np.asarray(points, dtype=np.float64) - np.asarray(offset, dtype=np.float64)) / scale


def scale_to_diagonal(mesh: TriangleMesh, target_diag: float) -> TriangleMesh:
    """Uniformly scale about the bounding-box center to a given box diagonal."""
    if not target_diag > 0:
        raise ValidationError(f"target diagonal must be positive, got {target_diag}")
    diag = mesh.diagonal if len(mesh.vertices) else 0.0
    if diag <= 0:
        raise DegenerateMeshError(f"mesh {mesh.name!r} has zero extent")
    lo, hi = mesh.bounds
    c = 0.5 * (lo + hi)
    k = target_diag / diag
    return TriangleMesh((mesh.vertices - c) * k + c, mesh.faces, mesh.name)


# -- I/O ---------------------------------------------------------------------


def load_mesh(path, name: str | None = None) -> TriangleMesh:
    path = Path(path)
    data = path.read_bytes()
    suffix = path.suffix.lower()
    name = name or path.stem
    if suffix == ".obj":
        mesh = _parse_obj(data.decode("utf-8", errors="replace"), name)
    elif suffix == ".ply":
        mesh = _parse_ply(data, name)
    else:
        raise FileFormatError(f"{path}: unsupported mesh format {suffix!r} (expected .obj or .ply)")
    if len(mesh.faces) == 0:
        raise FileFormatError(f"{path}: mesh has no faces")
    return mesh


def _parse_obj(text: str, name: str) -> TriangleMesh:
    verts, faces = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            try:
                verts.append([float(x) for x in parts[1:4]])
            except ValueError as exc:
                raise FileFormatError(f"line {lineno}: bad vertex: {line!r}") from exc
            if len(verts[-1]) != 3:
                raise FileFormatError(f"line {lineno}: vertex needs 3 coordinates")
        elif parts[0] == "f":
            idx = []
            for tok in parts[1:]:
                try:
                    i = int(tok.split("/")[0])
                except ValueError as exc:
                    raise FileFormatError(f"line {lineno}: bad face index {tok!r}") from exc
                i = i - 1 if i > 0 else len(verts) + i
                if not 0 <= i < len(verts):
                    raise FileFormatError(f"line {lineno}: face index {tok} out of range")
                idx.append(i)
            if len(idx) < 3:
                raise FileFormatError(f"line {lineno}: face needs at least 3 vertices")
            faces += [(idx[0], idx[k], idx[k + 1]) for k in range(1, len(idx) - 1)]
    if not verts:
        raise FileFormatError("OBJ has no vertices")
    return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3), name)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_header(data: bytes):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise FileFormatError("not a PLY file")
    body_start = data.index(b"\n", end) + 1
    fmt = None
    elements = []  # [name, count, [(prop, dtype)], list_spec or None]
    for line in data[:end].decode("ascii", errors="replace").splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append([parts[1], int(parts[2]), [], None])
        elif parts[0] == "property":
            if not elements:
                raise FileFormatError("property before element")
            try:
                if parts[1] == "list":
                    elements[-1][3] = (_PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]], parts[4])
                else:
                    elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
            except KeyError as exc:
                raise FileFormatError(f"unknown PLY type in {line!r}") from exc
    if fmt not in ("ascii", "binary_little_endian"):
        raise FileFormatError(f"unsupported PLY format {fmt!r}")
    return fmt, elements, body_start


def _parse_ply(data: bytes, name: str) -> TriangleMesh:
    fmt, elements, pos = _parse_ply_header(data)
    verts = np.zeros((0, 3))
    faces = np.zeros((0, 3), dtype=np.int64)
    if fmt == "ascii":
        tokens = data[pos:].split()
        k = 0
        for ename, count, props, lst in elements:
            if lst is None:
                n = len(props)
                arr = np.array(tokens[k:k + count * n], dtype=np.float64).reshape(count, n)
                k += count * n
                if ename == "vertex":
                    names = [p for p, _ in props]
                    verts = arr[:, [names.index(c) for c in "xyz"]]
            else:
                rows = []
                for _ in range(count):
                    m = int(tokens[k])
                    rows.append([int(t) for t in tokens[k + 1:k + 1 + m]])
                    k += 1 + m
                if ename == "face":
                    faces = _triangulate(rows)
        return TriangleMesh(verts, faces, name)

    for ename, count, props, lst in elements:
        if lst is None:
            dt = np.dtype([(p, "<" + t) for p, t in props])
            need = dt.itemsize * count
            if pos + need > len(data):
                raise FileFormatError("PLY body truncated")
            arr = np.frombuffer(data, dtype=dt, count=count, offset=pos)
            pos += need
            if ename == "vertex":
                verts = np.stack([arr[c].astype(np.float64) for c in "xyz"], axis=1)
        else:
            ctype, itype, _ = lst
            tri = np.dtype([("n", "<" + ctype), ("i", "<" + itype, (3,))])
            fast = pos + tri.itemsize * count <= len(data)
            if fast:
                arr = np.frombuffer(data, dtype=tri, count=count, offset=pos)
                fast = bool(np.all(arr["n"] == 3))
            if fast:
                rows = arr["i"].astype(np.int64)
                pos += tri.itemsize * count
            else:
                cdt, idt = np.dtype("<" + ctype), np.dtype("<" + itype)
                rows = []
                for _ in range(count):
                    if pos + cdt.itemsize > len(data):
                        raise FileFormatError("PLY body truncated")
                    m = int(np.frombuffer(data, cdt, 1, pos)[0])
                    pos += cdt.itemsize
                    if pos + m * idt.itemsize > len(data):
                        raise FileFormatError("PLY body truncated")
                    rows.append(np.frombuffer(data, idt, m, pos).tolist())
                    pos += m * idt.itemsize
            if ename == "face":
                faces = rows if isinstance(rows, np.ndarray) else _triangulate(rows)
    return TriangleMesh(verts, faces, name)


def _triangulate(rows) -> np.ndarray:
    out = []
    for r in rows:
        if len(r) < 3:
            raise FileFormatError("face with fewer than 3 vertices")
        out += [(r[0], r[k], r[k + 1]) for k in range(1, len(r) - 1)]
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def save_ply(mesh: TriangleMesh, path) -> None:
    """Binary little-endian PLY with double vertices and int32 triangle lists."""
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"comment name {mesh.name}\n"
        f"element vertex {len(mesh.vertices)}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {len(mesh.faces)}\n"
        "property list uchar int vertex_indices\nend_header\n"
    )
    face_dt = np.dtype([("n", "u1"), ("i", "<i4", (3,))])
    faces = np.empty(len(mesh.faces), dtype=face_dt)
    faces["n"] = 3
    faces["i"] = mesh.faces
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
        fh.write(faces.tobytes())


def save_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
