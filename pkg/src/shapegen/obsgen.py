"""Novel point-cloud observations: compositing a generated scene and sampling a camera view.

Per frame the scene is the union of

* the frame's own points outside the manipulated object and the arm, with
  those regions back-filled from the empty-workspace frame,
* the arm points shifted by the gripper correction,
* surface samples of the substituted mesh posed by the retargeted track.

The observation keeps points within ``d_max`` of the camera, removes
occluded points with a per-pixel z-buffer, and farthest-point samples down
to exactly ``n_points`` (resampling with replacement when short).
"""

from __future__ import annotations

import json
import os
import shutil
import struct
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numba
import numpy as np
from scipy.spatial import cKDTree

from .episode import DemoEpisode, DepthFrame, Intrinsics
from .errors import CorruptFileError, ValidationError
from .geometry import TriangleMesh
from .se3 import SE3

SGPC_MAGIC = b"SGPC"


@dataclass
class ObsGenConfig:
    n_points: int = 8192
    d_max: float = 0.8
    fg_depth_threshold: float = 0.02
    visibility: bool = True
    surface_oversample: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_points <= 0:
            raise ValidationError("must be positive", "n_points")
        if self.d_max <= 0:
            raise ValidationError("must be positive", "d_max")
        if self.surface_oversample <= 0:
            raise ValidationError("must be positive", "surface_oversample")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ObsGenConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


def frame_rng(seed: int, frame: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) ^ int(frame))


# -- back-projection and masks -----------------------------------------------


def depth_to_points(frame: DepthFrame, intrinsics: Intrinsics, mask=None) -> np.ndarray:
    """Pinhole back-projection of valid pixels, optionally restricted to a mask (label or array)."""
    d = frame.depth
    valid = d > 0
    if mask is not None:
        valid &= frame.masks[mask] if isinstance(mask, str) else np.asarray(mask, dtype=bool)
    v, u = np.nonzero(valid)
    z = d[v, u]
    x = (u - intrinsics.cx) * z / intrinsics.fx
    y = (v - intrinsics.cy) * z / intrinsics.fy
    return np.stack([x, y, z], axis=1)


def arm_mask(frame: DepthFrame, background: DepthFrame, object_masks=(), threshold: float = 0.02) -> np.ndarray:
    """Foreground pixels (closer than the empty workspace by ``threshold``) not claimed by any object."""
    if frame.depth.shape != background.depth.shape:
        raise ValidationError(f"frame {frame.depth.shape} vs background {background.depth.shape}", "background")
    both = (frame.depth > 0) & (background.depth > 0)
    fg = both & (background.depth - frame.depth > threshold)
    for label in object_masks:
        if label in frame.masks:
            fg &= ~frame.masks[label]
    return fg


@dataclass
class FrameLayers:
    background: np.ndarray  # frame points off the object and arm, back-filled behind them
    arm: np.ndarray
    static: np.ndarray  # other foreground objects, kept as observed


def split_frame(frame: DepthFrame, background: DepthFrame, intrinsics: Intrinsics, object_name: str,
                other_objects=(), threshold: float = 0.02) -> FrameLayers:
    arm = arm_mask(frame, background, [object_name, *other_objects], threshold)
    removed = arm.copy()
    if object_name in frame.masks:
        removed |= frame.masks[object_name]
    static = np.zeros_like(removed)
    for label in other_objects:
        if label in frame.masks:
            static |= frame.masks[label] & ~removed
    merged = np.where(removed, background.depth, frame.depth)
    keep = ~static
    bg = depth_to_points(DepthFrame(merged), intrinsics, keep)
    return FrameLayers(bg, depth_to_points(frame, intrinsics, arm), depth_to_points(frame, intrinsics, static))


def composite_scene(background_points, arm_points, T_g: SE3, static_points, mesh: TriangleMesh | None,
                    T_j: SE3, config: ObsGenConfig, rng: np.random.Generator) -> np.ndarray:
    """Union of background, corrected arm, static objects and the posed substituted mesh."""
    parts = [np.asarray(background_points, dtype=np.float64).reshape(-1, 3),
             np.asarray(arm_points, dtype=np.float64).reshape(-1, 3) + T_g.translation,
             np.asarray(static_points, dtype=np.float64).reshape(-1, 3)]
    if mesh is not None:
        parts.append(T_j.apply(mesh.sample_surface(config.surface_oversample * config.n_points, rng)))
    return np.concatenate(parts, axis=0)


# -- view sampling ------------------------------------------------------------


def zbuffer_visible(points, intrinsics: Intrinsics) -> np.ndarray:
    """Indices of the nearest point per pixel among points in front of the camera."""
    p = np.asarray(points, dtype=np.float64)
    z = p[:, 2]
    front = np.flatnonzero(z > 0)
    if len(front) == 0:
        return front
    q = p[front]
    u = np.floor(intrinsics.fx * q[:, 0] / q[:, 2] + intrinsics.cx + 0.5).astype(np.int64)
    v = np.floor(intrinsics.fy * q[:, 1] / q[:, 2] + intrinsics.cy + 0.5).astype(np.int64)
    inside = (u >= 0) & (u < intrinsics.width) & (v >= 0) & (v < intrinsics.height)
    front, q, u, v = front[inside], q[inside], u[inside], v[inside]
    pix = v * intrinsics.width + u
    order = np.lexsort((q[:, 2], pix))  # by pixel, then depth
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix[order][1:] != pix[order][:-1]
    return np.sort(front[order[first]])


@numba.njit(cache=True)
def _fps_kernel(p, k, start):
    n = p.shape[0]
    out = np.empty(k, dtype=np.int64)
    d = np.full(n, np.inf)
    cur = start
    for i in range(k):
        out[i] = cur
        best, arg = -1.0, 0
        for j in range(n):
            dx = p[j, 0] - p[cur, 0]
            dy = p[j, 1] - p[cur, 1]
            dz = p[j, 2] - p[cur, 2]
            dd = dx * dx + dy * dy + dz * dz
            if dd < d[j]:
                d[j] = dd
            if d[j] > best:
                best, arg = d[j], j
        cur = arg
    return out


def farthest_point_sampling(points, k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``k`` farthest-point samples; the seed point is drawn from ``rng``."""
    p = np.ascontiguousarray(points, dtype=np.float64)
    if k >= len(p):
        return np.arange(len(p))
    return _fps_kernel(p, k, int(rng.integers(len(p))))


def sample_observation(scene_points, intrinsics: Intrinsics, config: ObsGenConfig,
                       rng: np.random.Generator, camera: SE3 | None = None) -> np.ndarray:
    """Exactly ``config.n_points`` camera-frame points seen from the camera.

    ``camera`` optionally maps scene coordinates into the camera frame
    (defaults to identity: scene already in camera coordinates).
    """
    p = np.asarray(scene_points, dtype=np.float64).reshape(-1, 3)
    if camera is not None:
        p = camera.apply(p)
    p = p[np.linalg.norm(p, axis=1) <= config.d_max]
    if config.visibility:
        p = p[zbuffer_visible(p, intrinsics)]
    if len(p) == 0:
        raise ValidationError("no scene points survive range and visibility culling", "scene_points")
    idx = farthest_point_sampling(p, config.n_points, rng)
    if len(idx) < config.n_points:
        idx = np.concatenate([idx, rng.integers(len(p), size=config.n_points - len(idx))])
    return p[idx]


def source_observation(episode: DemoEpisode, t: int, config: ObsGenConfig, frame: DepthFrame | None = None):
    """The observation of the unmodified source frame (same sampling rules)."""
    frame = frame if frame is not None else episode.load_frame(t)
    return sample_observation(depth_to_points(frame, episode.intrinsics), episode.intrinsics, config,
                              frame_rng(config.rng_seed, t))


def generate_observations(episode: DemoEpisode, plan, mesh: TriangleMesh, config: ObsGenConfig,
                          other_objects=()):
    """Yield ``(t, observation)`` for every frame of the plan."""
    background = episode.load_background()
    for t in range(plan.length):
        frame = episode.load_frame(t)
        layers = split_frame(frame, background, episode.intrinsics, plan.object_name, other_objects,
                             config.fg_depth_threshold)
        rng = frame_rng(config.rng_seed, t)
        scene = composite_scene(layers.background, layers.arm, plan.T_g[t], layers.static, mesh, plan.T_j[t],
                                config, rng)
        yield t, sample_observation(scene, episode.intrinsics, config, rng)


def chamfer_distance(a, b) -> float:
    """Symmetric mean nearest-neighbour distance (average of both directions)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return 0.5 * (float(da.mean()) + float(db.mean()))


# -- files -------------------------------------------------------------------


def save_sgpc(points, path) -> None:
    p = np.ascontiguousarray(points, dtype="<f4").reshape(-1, 3)
    Path(path).write_bytes(SGPC_MAGIC + struct.pack("<I", len(p)) + p.tobytes())


def load_sgpc(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != SGPC_MAGIC:
        raise CorruptFileError(f"{path}: not an observation file")
    (n,) = struct.unpack("<I", data[4:8])
    if len(data) != 8 + 12 * n:
        raise CorruptFileError(f"{path}: expected {n} points, file size {len(data)}")
    return np.frombuffer(data[8:], dtype="<f4").reshape(n, 3).astype(np.float64)


def export_ply(points, path) -> None:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(p)}",
             "property float x", "property float y", "property float z", "end_header"]
    lines += [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in p]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ascii_ply_points(path) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    try:
        end = text.index("end_header")
    except ValueError:
        raise CorruptFileError(f"{path}: no end_header") from None
    n = next(int(ln.split()[2]) for ln in text[:end] if ln.startswith("element vertex"))
    rows = text[end + 1:end + 1 + n]
    if len(rows) != n:
        raise CorruptFileError(f"{path}: expected {n} vertices, found {len(rows)}")
    return np.array([[float(v) for v in r.split()[:3]] for r in rows]).reshape(-1, 3)


def _atomic_dir(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{path.name}-", dir=path.parent))


def write_generated_episode(plan, observations, path, config: ObsGenConfig | None = None,
                            extra: dict | None = None, gripper_widths=None) -> Path:
    """Write observations, corrected actions, the plan and a manifest; atomic per directory.

    ``observations`` is an iterable of ``(t, points)`` or of point arrays.
    ``gripper_widths`` are copied from the source episode unchanged.
    """
    path = Path(path)
    if gripper_widths is not None and len(gripper_widths) != plan.length:
        raise ValidationError(f"{len(gripper_widths)} widths for a {plan.length}-frame plan", "gripper_widths")
    tmp = _atomic_dir(path)
    try:
        (tmp / "obs").mkdir()
        files = []
        for item in observations:
            t, pts = item if isinstance(item, tuple) else (len(files), item)
            rel = f"obs/{t:06d}.sgpc"
            save_sgpc(pts, tmp / rel)
            files.append(rel)
        if len(files) != plan.length:
            raise ValidationError(f"{len(files)} observations for a {plan.length}-frame plan", "observations")
        (tmp / "actions.json").write_text(json.dumps([a.to_list() for a in plan.actions]))
        plan.save(tmp / f"plan_{plan.target_id}.json")
        manifest = {
            "source_episode": plan.source_id,
            "target_shape": plan.target_id,
            "object": plan.object_name,
            "length": plan.length,
            "flags": plan.flags,
            "config": config.to_dict() if config else None,
            "observations": files,
            "actions": "actions.json",
            "plan": f"plan_{plan.target_id}.json",
            "gripper_widths": None if gripper_widths is None else [float(w) for w in gripper_widths],
        }
        if extra:
            manifest.update(extra)
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1))
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)
    return path


@dataclass
class GeneratedEpisode:
    root: Path
    manifest: dict
    actions: list

    @property
    def length(self) -> int:
        return self.manifest["length"]

    @property
    def gripper_widths(self) -> list | None:
        return self.manifest.get("gripper_widths")

    def observation(self, t: int) -> np.ndarray:
        return load_sgpc(self.root / self.manifest["observations"][t])


def load_generated_episode(path) -> GeneratedEpisode:
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    actions = [SE3.from_list(a) for a in json.loads((root / manifest["actions"]).read_text())]
    return GeneratedEpisode(root, manifest, actions)
