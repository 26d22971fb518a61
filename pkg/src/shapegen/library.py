"""Shape Libraries: template-hub warpings, plugging, composite correspondence.

Every stored shape lives in its own unit-cube normalization. Warps map
template -> entry; plugging trains a single bridge scanned -> template, so a
scanned shape reaches every entry by composing two warps, each followed by a
projection back onto the relevant surface (:func:`refine_points`).
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import CorruptFileError, ValidationError, VersionError
from .geometry import (
    TriangleMesh,
    denormalize_points,
    load_mesh,
    normalize_to_unit_cube,
    sample_training_grid,
    save_ply,
)
from .geometry.sdf import SdfSampleSet
from .neural import SdfNet, TrainConfig, WarpNet, fit_sdf, load_net, save_net, train_warp

log = logging.getLogger(__name__)

LIBRARY_VERSION = 1
CAPTURE_RADIUS = 0.2
REFINE_TOL = 1e-3
REFINE_MAX_ITERS = 32
REFINE_MAX_HALVINGS = 8


# -- surface refinement ------------------------------------------------------


@dataclass
class RefineResult:
    points: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray


def refine_points(points, net: SdfNet, tol: float = REFINE_TOL, max_iters: int = REFINE_MAX_ITERS,
                  capture_radius: float = CAPTURE_RADIUS, max_halvings: int = REFINE_MAX_HALVINGS) -> RefineResult:
    """Project points onto the zero level set of ``net`` by line search along the gradient.

    Each iteration walks along ``-sgn(f) * grad f / |grad f|`` starting with
    step ``|f|`` (the SDF value estimates the distance to the surface) and
    halves the step until ``|f|`` decreases. Points that start outside the
    capture radius, or whose line search stalls, are returned where they are
    and flagged as not converged. ``|f|`` never increases along the way.
    """
    p = np.array(points, dtype=np.float64).reshape(-1, 3)
    n = len(p)
    f, g = net.value_and_grad(p) if n else (np.zeros(0), np.zeros((0, 3)))
    iters = np.zeros(n, dtype=np.int64)
    active = (np.abs(f) >= tol) & (np.abs(f) <= capture_radius)
    stalled = np.zeros(n, dtype=bool)
    for _ in range(max_iters):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        gn = np.linalg.norm(g[idx], axis=1)
        movable = gn > 0
        stalled[idx[~movable]] = True
        idx, gn = idx[movable], gn[movable]
        direction = -np.sign(f[idx])[:, None] * g[idx] / gn[:, None]
        step = np.abs(f[idx])
        accepted = np.zeros(len(idx), dtype=bool)
        new_p = p[idx].copy()
        for _ in range(max_halvings + 1):
            todo = np.flatnonzero(~accepted)
            if len(todo) == 0:
                break
            cand = p[idx[todo]] + step[todo, None] * direction[todo]
            fc = net(cand)
            ok = np.abs(fc) < np.abs(f[idx[todo]])
            new_p[todo[ok]] = cand[ok]
            accepted[todo[ok]] = True
            step[todo[~ok]] *= 0.5
        stalled[idx[~accepted]] = True
        moved = idx[accepted]
        p[moved] = new_p[accepted]
        iters[moved] += 1
        if len(moved):
            f[moved], g[moved] = net.value_and_grad(p[moved])
        active = (np.abs(f) >= tol) & ~stalled & (np.abs(f) <= capture_radius)
    converged = np.abs(f) < tol
    return RefineResult(p, converged, iters, np.abs(f))


def refine(p, net: SdfNet, tol: float = REFINE_TOL, max_iters: int = REFINE_MAX_ITERS,
           capture_radius: float = CAPTURE_RADIUS) -> tuple[np.ndarray, bool]:
    """Refine a single point; returns ``(point, converged)``.

    Raises :class:`ValidationError` when the starting point is farther than
    ``capture_radius`` from the surface according to ``net``.
    """
    p = np.asarray(p, dtype=np.float64).reshape(3)
    f0 = float(net(p)[0])
    if abs(f0) > capture_radius:
        raise ValidationError(f"|sdf| = {abs(f0):.3g} exceeds the capture radius {capture_radius}", "p")
    res = refine_points(p[None], net, tol, max_iters, capture_radius)
    return res.points[0], bool(res.converged[0])


# -- library data ------------------------------------------------------------


@dataclass(frozen=True)
class LibraryEntry:
    mesh: TriangleMesh
    sdf: SdfNet
    warp: WarpNet
    # unit-cube normalization scale of the mesh as added (1 / longest bbox side, input units)
    scale: float = 1.0


@dataclass(frozen=True)
class ShapeLibrary:
    category: str
    template_id: str
    template_mesh: TriangleMesh
    template_sdf: SdfNet
    entries: dict = field(default_factory=dict)
    config: TrainConfig = field(default_factory=TrainConfig)
    version: int = LIBRARY_VERSION
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def template_samples(self, config: TrainConfig) -> SdfSampleSet:
        key = (config.grid_resolution, config.sample_cutoff)
        if key not in self._cache:
            self._cache[key] = sample_training_grid(self.template_mesh, config.grid_resolution,
                                                    cutoff=config.sample_cutoff)
        return self._cache[key]

    def __len__(self):
        return len(self.entries)

    def sdf_for(self, shape_id: str) -> SdfNet:
        if shape_id == self.template_id:
            return self.template_sdf
        return self._entry(shape_id).sdf

    def _entry(self, shape_id: str) -> LibraryEntry:
        try:
            return self.entries[shape_id]
        except KeyError:
            raise ValidationError(f"unknown shape id {shape_id!r}; known: {sorted(self.entries)}",
                                  "target_id") from None


@dataclass(frozen=True)
class PluggedLibrary:
    base: ShapeLibrary
    scanned_mesh: TriangleMesh  # object frame (e.g. metres)
    scale: float
    offset: np.ndarray
    scanned_sdf: SdfNet
    bridge: WarpNet  # scanned -> template, normalized coordinates

    @property
    def scanned_normalized(self) -> TriangleMesh:
        return self.scanned_mesh.transformed(self.scale, self.offset)

    def to_normalized(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.scale + self.offset

    def to_object(self, points) -> np.ndarray:
        return denormalize_points(points, self.scale, self.offset)

    @property
    def targets(self) -> list[str]:
        return list(self.base.entries)

    @property
    def _pivot(self) -> np.ndarray:
        lo, hi = self.scanned_normalized.bounds
        return 0.5 * (lo + hi)

    def entry_to_object(self, target_id: str, points) -> np.ndarray:
        """Map normalized points of an entry into the scanned object's frame.

        The entry keeps its own size as added to the library (its
        normalization scale) and is centred on the scanned shape's bounding-box
        centre. For an entry that is the scanned mesh itself this is exactly
        :meth:`to_object`.
        """
        entry = self.base._entry(target_id)
        c = self._pivot
        y = np.asarray(points, dtype=np.float64)
        return self.to_object(c) + (y - c) / entry.scale

    def substitute_mesh(self, target_id: str) -> TriangleMesh:
        """Entry mesh placed in the scanned object's frame."""
        m = self.base._entry(target_id).mesh
        return TriangleMesh(self.entry_to_object(target_id, m.vertices), m.faces, m.name)


@dataclass
class CurationReport:
    sdf_steps: int
    warp_steps: int
    seconds: float


def _prepare(mesh: TriangleMesh, config: TrainConfig):
    normalized, scale, offset = normalize_to_unit_cube(mesh)
    samples = sample_training_grid(normalized, config.grid_resolution, cutoff=config.sample_cutoff)
    return normalized, scale, offset, samples


def init_library(category: str, template_mesh: TriangleMesh, config: TrainConfig | None = None,
                 template_id: str = "template") -> ShapeLibrary:
    config = config or TrainConfig()
    normalized, _, _, samples = _prepare(template_mesh, config)
    normalized = TriangleMesh(normalized.vertices, normalized.faces, template_id)
    samples = SdfSampleSet(samples.points, samples.sdf_values, template_id)
    sdf = fit_sdf(samples, config)
    lib = ShapeLibrary(category, template_id, normalized, sdf, {}, config)
    lib._cache[(config.grid_resolution, config.sample_cutoff)] = samples
    return lib


def add_shape(lib: ShapeLibrary, mesh: TriangleMesh, shape_id: str, config: TrainConfig | None = None,
              return_report: bool = False):
    """Fit one SDF network and train one template->shape warp; cost independent of library size."""
    config = config or lib.config
    if shape_id in lib.entries or shape_id == lib.template_id:
        raise ValidationError(f"shape id {shape_id!r} already in library", "id")
    t0 = time.perf_counter()
    normalized, scale, _, samples = _prepare(mesh, config)
    normalized = TriangleMesh(normalized.vertices, normalized.faces, shape_id)
    samples = SdfSampleSet(samples.points, samples.sdf_values, shape_id)
    sdf, sdf_rep = fit_sdf(samples, config, return_report=True)
    warp, warp_rep = train_warp(lib.template_samples(config), sdf, config, return_report=True)
    entries = {**lib.entries, shape_id: LibraryEntry(normalized, sdf, warp, float(scale))}
    new = replace(lib, entries=entries)
    if return_report:
        return new, CurationReport(sdf_rep.steps, warp_rep.steps, time.perf_counter() - t0)
    return new


def plug(lib: ShapeLibrary, scanned: TriangleMesh, config: TrainConfig | None = None) -> PluggedLibrary:
    """Train the scanned -> template bridge (plus the scanned shape's SDF network)."""
    config = config or lib.config
    _, scale, offset, samples = _prepare(scanned, config)
    samples = SdfSampleSet(samples.points, samples.sdf_values, scanned.name)
    sdf = fit_sdf(samples, config)
    bridge = train_warp(samples, lib.template_sdf, config)
    return PluggedLibrary(lib, scanned, scale, np.asarray(offset), sdf, bridge)


@dataclass
class CompositeResult:
    points: np.ndarray
    converged: np.ndarray


def composite_warp(plugged: PluggedLibrary, target_id: str, points, tol: float = REFINE_TOL,
                   max_iters: int = REFINE_MAX_ITERS, capture_radius: float = CAPTURE_RADIUS) -> CompositeResult:
    """Scanned -> entry correspondence in normalized coordinates.

    bridge warp, refine on the template, entry warp, refine on the entry.
    """
    entry = plugged.base._entry(target_id)
    x = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(x) == 0:
        return CompositeResult(np.zeros((0, 3)), np.zeros(0, dtype=bool))
    r1 = refine_points(plugged.bridge(x), plugged.base.template_sdf, tol, max_iters, capture_radius)
    r2 = refine_points(entry.warp(r1.points), entry.sdf, tol, max_iters, capture_radius)
    return CompositeResult(r2.points, r1.converged & r2.converged)


def composite_warp_object(plugged: PluggedLibrary, target_id: str, points, **kw) -> CompositeResult:
    """:func:`composite_warp` for points given (and returned) in the scanned object's frame."""
    res = composite_warp(plugged, target_id, plugged.to_normalized(np.asarray(points, dtype=np.float64)), **kw)
    return CompositeResult(plugged.entry_to_object(target_id, res.points), res.converged)


# -- persistence -------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_library_files(lib: ShapeLibrary, root: Path, plugged: PluggedLibrary | None):
    (root / "meshes").mkdir(parents=True)
    (root / "nets").mkdir()
    files = {}

    def put_mesh(mesh, name):
        rel = f"meshes/{name}.ply"
        save_ply(mesh, root / rel)
        files[rel] = _sha256(root / rel)
        return rel

    def put_net(net, name):
        rel = f"nets/{name}.sgnet"
        save_net(net, root / rel)
        files[rel] = _sha256(root / rel)
        return rel

    manifest = {
        "format": "shapegen-library",
        "version": lib.version,
        "category": lib.category,
        "template": {"id": lib.template_id, "mesh": put_mesh(lib.template_mesh, lib.template_id),
                     "sdf": put_net(lib.template_sdf, f"{lib.template_id}.sdf")},
        "entries": [
            {"id": sid, "scale": e.scale, "mesh": put_mesh(e.mesh, sid), "sdf": put_net(e.sdf, f"{sid}.sdf"),
             "warp": put_net(e.warp, f"{lib.template_id}_to_{sid}.warp")}
            for sid, e in lib.entries.items()
        ],
        "config": lib.config.to_dict(),
        "plugged": None,
    }
    if plugged is not None:
        manifest["plugged"] = {
            "name": plugged.scanned_mesh.name,
            "mesh": put_mesh(plugged.scanned_mesh, "_scanned"),
            "scale": plugged.scale,
            "offset": [float(v) for v in plugged.offset],
            "sdf": put_net(plugged.scanned_sdf, "_scanned.sdf"),
            "bridge": put_net(plugged.bridge, f"_scanned_to_{lib.template_id}.warp"),
        }
    manifest["files"] = files
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def save_library(lib: ShapeLibrary | PluggedLibrary, path, force: bool = False) -> Path:
    """Write a library directory atomically (temp directory + rename)."""
    plugged = lib if isinstance(lib, PluggedLibrary) else None
    base = plugged.base if plugged else lib
    path = Path(path)
    if path.exists() and not force:
        raise FileExistsError(f"{path} already exists; pass force=True to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".lib-", dir=path.parent))
    try:
        _write_library_files(base, tmp / "lib", plugged)
        if path.exists():
            shutil.rmtree(path)
        (tmp / "lib").rename(path)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"{mpath} not found")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"{mpath}: invalid JSON") from exc
    if manifest.get("format") != "shapegen-library":
        raise CorruptFileError(f"{mpath}: not a shape library manifest")
    if manifest.get("version") != LIBRARY_VERSION:
        raise VersionError(f"{mpath}: library version {manifest.get('version')!r}, "
                           f"this reader supports {LIBRARY_VERSION}")
    return manifest


def _load_checked(root: Path, manifest: dict):
    for rel, digest in manifest["files"].items():
        f = root / rel
        if not f.exists():
            raise CorruptFileError(f"{f}: missing")
        if _sha256(f) != digest:
            raise CorruptFileError(f"{f}: content hash does not match the manifest")

    def mesh(rel, name):
        return load_mesh(root / rel, name=name)

    def net(rel):
        return load_net(root / rel)

    return mesh, net


def load_library(path) -> ShapeLibrary:
    root = Path(path)
    manifest = read_manifest(root)
    mesh, net = _load_checked(root, manifest)
    t = manifest["template"]
    entries = {e["id"]: LibraryEntry(mesh(e["mesh"], e["id"]), net(e["sdf"]), net(e["warp"]), float(e["scale"]))
               for e in manifest["entries"]}
    return ShapeLibrary(manifest["category"], t["id"], mesh(t["mesh"], t["id"]), net(t["sdf"]), entries,
                        TrainConfig.from_dict(manifest["config"]), manifest["version"])


def load_plugged(path) -> PluggedLibrary:
    root = Path(path)
    manifest = read_manifest(root)
    if not manifest.get("plugged"):
        raise ValidationError(f"{root}: library has not been plugged with a scanned shape", "plugged")
    lib = load_library(root)
    mesh, net = _load_checked(root, manifest)
    p = manifest["plugged"]
    return PluggedLibrary(lib, mesh(p["mesh"], p["name"]), float(p["scale"]), np.asarray(p["offset"]),
                          net(p["sdf"]), net(p["bridge"]))
