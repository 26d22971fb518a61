"""Ground-truth signed distance and training-sample generation."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import CorruptFileError, ValidationError
from .bvh import closest_points_on_triangles, triangle_solid_angles
from .mesh import TriangleMesh

DEFAULT_CUBE = ((-0.05, -0.05, -0.05), (1.05, 1.05, 1.05))
DEFAULT_RESOLUTION = 256
DEFAULT_CUTOFF = 0.2
_BRUTE_CHUNK = 64


def _brute_closest(points, mesh):
    t = mesh.triangles
    dist = np.empty(len(points))
    closest = np.empty_like(points)
    for s in range(0, len(points), _BRUTE_CHUNK):
        p = points[s:s + _BRUTE_CHUNK, None, :]
        cp = closest_points_on_triangles(p, t[None, :, 0], t[None, :, 1], t[None, :, 2])
        d2 = np.sum((cp - p) ** 2, axis=-1)
        j = np.argmin(d2, axis=1)
        rows = np.arange(len(j))
        dist[s:s + len(j)] = np.sqrt(d2[rows, j])
        closest[s:s + len(j)] = cp[rows, j]
    return dist, closest


def _brute_winding(points, mesh):
    t = mesh.triangles
    out = np.empty(len(points))
    for s in range(0, len(points), _BRUTE_CHUNK):
        p = points[s:s + _BRUTE_CHUNK, None, :]
        out[s:s + len(p)] = triangle_solid_angles(p, t[None, :, 0], t[None, :, 1], t[None, :, 2]).sum(1)
    return out / (4.0 * np.pi)


def winding_number(points, mesh: TriangleMesh, accelerate: bool = True) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return mesh.bvh.winding_numbers(pts) if accelerate else _brute_winding(pts, mesh)


def signed_distance(points, mesh: TriangleMesh, accelerate: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Signed distance and closest surface point for a batch of points.

    Magnitude is the exact point-to-triangle minimum; the sign is negative
    where the generalized winding number is at least 0.5. ``accelerate=False``
    runs the O(points x triangles) reference path.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if accelerate:
        dist, closest = mesh.bvh.closest_points(pts)
    else:
        dist, closest = _brute_closest(pts, mesh)
    inside = winding_number(pts, mesh, accelerate) >= 0.5
    return np.where(inside, -dist, dist), closest


def brute_sdf(p, mesh: TriangleMesh, accelerate: bool = True):
    """Exact SDF of one point (returns float) or of an ``(n, 3)`` batch."""
    arr = np.asarray(p, dtype=np.float64)
    sdf, _ = signed_distance(arr, mesh, accelerate)
    return float(sdf[0]) if arr.ndim == 1 else sdf


def nearest_surface_point(p, mesh: TriangleMesh, accelerate: bool = True) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    pts = arr.reshape(-1, 3)
    _, closest = mesh.bvh.closest_points(pts) if accelerate else _brute_closest(pts, mesh)
    return closest[0] if arr.ndim == 1 else closest


@dataclass(frozen=True, eq=False)
class SdfSampleSet:
    points: np.ndarray
    sdf_values: np.ndarray
    source_mesh: str = ""

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        v = np.asarray(self.sdf_values, dtype=np.float64).reshape(-1)
        if len(p) != len(v):
            raise ValidationError(f"{len(p)} points but {len(v)} sdf values")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "sdf_values", v)

    def __len__(self):
        return len(self.sdf_values)

    def subset(self, idx) -> SdfSampleSet:
        return SdfSampleSet(self.points[idx], self.sdf_values[idx], self.source_mesh)


def grid_axes(resolution: int, cube=DEFAULT_CUBE):
    lo, hi = (np.asarray(c, dtype=np.float64) for c in cube)
    return [np.linspace(lo[k], hi[k], resolution) for k in range(3)]


def sample_training_grid(mesh: TriangleMesh, resolution: int = DEFAULT_RESOLUTION, cube=DEFAULT_CUBE,
                         cutoff: float = DEFAULT_CUTOFF, accelerate: bool = True) -> SdfSampleSet:
    """Regular grid samples whose ground-truth ``|SDF| <= cutoff``.

    The grid is processed one x-slab at a time, so memory stays at
    ``resolution**2`` queries regardless of the full grid size. Sample order
    is row-major (x, then y, then z).
    """
    if resolution < 2:
        raise ValidationError(f"grid resolution must be >= 2, got {resolution}")
    xs, ys, zs = grid_axes(resolution, cube)
    yy, zz = np.meshgrid(ys, zs, indexing="ij")
    slab_yz = np.stack([yy.ravel(), zz.ravel()], axis=1)
    keep_pts, keep_sdf = [], []
    for x in xs:
        pts = np.column_stack([np.full(len(slab_yz), x), slab_yz])
        if accelerate:
            dist, _ = mesh.bvh.closest_points(pts, max_distance=cutoff)
        else:
            dist, _ = _brute_closest(pts, mesh)
        m = np.isfinite(dist) & (dist <= cutoff)
        pts = pts[m]
        inside = winding_number(pts, mesh, accelerate) >= 0.5
        keep_pts.append(pts)
        keep_sdf.append(np.where(inside, -dist[m], dist[m]))
    return SdfSampleSet(np.concatenate(keep_pts), np.concatenate(keep_sdf), mesh.name)


def sample_near_surface(mesh: TriangleMesh, n: int, rng: np.random.Generator, band: float = DEFAULT_CUTOFF,
                        cube=DEFAULT_CUBE) -> SdfSampleSet:
    """Uniform random points inside ``cube`` with ``|SDF| <= band`` (rejection sampling)."""
    lo, hi = (np.asarray(c, dtype=np.float64) for c in cube)
    pts, vals = [], []
    have = 0
    while have < n:
        cand = lo + (hi - lo) * rng.random((max(2 * (n - have), 256), 3))
        sdf, _ = signed_distance(cand, mesh)
        m = np.abs(sdf) <= band
        pts.append(cand[m])
        vals.append(sdf[m])
        have += int(m.sum())
    return SdfSampleSet(np.concatenate(pts)[:n], np.concatenate(vals)[:n], mesh.name)


# -- persistence -------------------------------------------------------------

_MAGIC = b"SGSD"
_RECORD = np.dtype([("p", "<f8", (3,)), ("sdf", "<f8")])


def save_samples(samples: SdfSampleSet, path) -> None:
    rec = np.empty(len(samples), dtype=_RECORD)
    rec["p"] = samples.points
    rec["sdf"] = samples.sdf_values
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<I", len(samples)))
        fh.write(rec.tobytes())


def load_samples(path, source_mesh: str | None = None) -> SdfSampleSet:
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != _MAGIC:
        raise CorruptFileError(f"{path}: not an SGSD sample file")
    (count,) = struct.unpack("<I", data[4:8])
    if len(data) != 8 + count * _RECORD.itemsize:
        raise CorruptFileError(f"{path}: expected {count} records, file size disagrees")
    rec = np.frombuffer(data, dtype=_RECORD, count=count, offset=8)
    return SdfSampleSet(rec["p"].copy(), rec["sdf"].copy(), source_mesh or Path(path).stem)
