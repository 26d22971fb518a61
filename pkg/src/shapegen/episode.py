"""Source demonstration episodes: manifest, depth/mask frames, pose and action tracks.

On disk an episode is a directory with ``episode.json``::

    {
      "id": "pour_0",
      "length": L,
      "intrinsics": {"fx": .., "fy": .., "cx": .., "cy": .., "width": W, "height": H},
      "T_c2b": [16 numbers, row-major 4x4],
      "pose_tracks": {"mug": "poses/mug.json"},      # file holding a list of L 4x4s
      "actions": [[16 numbers], ...],                # or a file name
      "gripper_widths": [..],                        # optional, passed through
      "frames": [{"depth": "depth/000000.png", "masks": {"mug": "masks/mug_000000.png"}}, ...],
      "background": {"depth": "background.png"}
    }

Depth images are 16-bit PNGs in millimetres (0 = invalid); masks are 8-bit
PNGs where nonzero marks membership.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FileFormatError, ValidationError
from .se3 import SE3


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive", "intrinsics")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("image size must be positive", "intrinsics")

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass
class DepthFrame:
    depth: np.ndarray  # (H, W) metres, 0 = invalid
    masks: dict = field(default_factory=dict)  # label -> (H, W) bool

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if np.any(self.depth < 0) or not np.all(np.isfinite(self.depth)):
            raise ValidationError("depth values must be finite and >= 0", "depth")
        for k, m in self.masks.items():
            m = np.asarray(m, dtype=bool)
            if m.shape != self.depth.shape:
                raise ValidationError(f"mask shape {m.shape} differs from depth {self.depth.shape}", f"masks.{k}")
            self.masks[k] = m

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass
class FrameRef:
    depth: str
    masks: dict = field(default_factory=dict)


@dataclass
class DemoEpisode:
    episode_id: str
    intrinsics: Intrinsics
    T_c2b: SE3
    pose_tracks: dict  # object name -> list of SE3 (object -> camera)
    actions: list  # list of SE3 (end effector -> robot base)
    frames: list  # FrameRef per frame
    background: FrameRef
    root: Path | None = None
    gripper_widths: list | None = None

    def __post_init__(self):
        L = len(self.actions)
        if L == 0:
            raise ValidationError("episode has no frames", "length")
        if len(self.frames) != L:
            raise ValidationError(f"{len(self.frames)} frames for {L} actions", "frames")
        for name, track in self.pose_tracks.items():
            if len(track) != L:
                raise ValidationError(f"{len(track)} poses for {L} frames", f"pose_tracks.{name}")
        if self.gripper_widths is not None and len(self.gripper_widths) != L:
            raise ValidationError(f"{len(self.gripper_widths)} widths for {L} frames", "gripper_widths")

    @property
    def length(self) -> int:
        return len(self.actions)

    def _path(self, rel) -> Path:
        return Path(rel) if self.root is None else self.root / rel

    def load_frame(self, t: int) -> DepthFrame:
        ref = self.frames[t]
        return DepthFrame(read_depth_png(self._path(ref.depth)),
                          {k: read_mask_png(self._path(v)) for k, v in ref.masks.items()})

    def load_background(self) -> DepthFrame:
        return DepthFrame(read_depth_png(self._path(self.background.depth)))


# -- image IO ----------------------------------------------------------------


def write_depth_png(path, depth_m) -> None:
    mm = np.rint(np.asarray(depth_m, dtype=np.float64) * 1000.0)
    if np.any(mm > 65535):
        raise ValidationError("depth exceeds the 16-bit millimetre range", "depth")
    Image.fromarray(mm.astype(np.uint16)).save(path)


def read_depth_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            a = np.array(im)
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise FileFormatError(f"{path}: unreadable image ({exc})") from exc
    if a.ndim != 2:
        raise FileFormatError(f"{path}: expected a single-channel depth image")
    return a.astype(np.float64) / 1000.0


def write_mask_png(path, mask) -> None:
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path)


def read_mask_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            a = np.array(im)
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise FileFormatError(f"{path}: unreadable image ({exc})") from exc
    if a.ndim == 3:
        a = a[..., 0]
    return a != 0


# -- manifest IO -------------------------------------------------------------


def _track(value, root: Path, path: str) -> list[SE3]:
    if isinstance(value, str):
        try:
            value = json.loads((root / value).read_text())
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{root / value}: invalid JSON") from exc
    if not isinstance(value, list):
        raise ValidationError("expected a list of 4x4 transforms", path)
    out = []
    for i, m in enumerate(value):
        try:
            out.append(SE3.from_list(m))
        except (ValueError, TypeError) as exc:
            raise ValidationError(str(exc), f"{path}[{i}]") from exc
    return out


def load_episode(path) -> DemoEpisode:
    path = Path(path)
    root = path.parent if path.is_file() else path
    mpath = root / "episode.json"
    try:
        m = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{mpath}: invalid JSON") from exc
    for key in ("id", "length", "intrinsics", "T_c2b", "pose_tracks", "actions", "frames", "background"):
        if key not in m:
            raise ValidationError("missing field", key)
    intr = m["intrinsics"]
    try:
        intrinsics = Intrinsics(float(intr["fx"]), float(intr["fy"]), float(intr["cx"]), float(intr["cy"]),
                                int(intr["width"]), int(intr["height"]))
    except KeyError as exc:
        raise ValidationError(f"missing {exc.args[0]}", "intrinsics") from exc
    ep = DemoEpisode(
        episode_id=str(m["id"]),
        intrinsics=intrinsics,
        T_c2b=SE3.from_list(m["T_c2b"]),
        pose_tracks={k: _track(v, root, f"pose_tracks.{k}") for k, v in m["pose_tracks"].items()},
        actions=_track(m["actions"], root, "actions"),
        frames=[FrameRef(f["depth"], dict(f.get("masks", {}))) for f in m["frames"]],
        background=FrameRef(m["background"]["depth"]),
        root=root,
        gripper_widths=m.get("gripper_widths"),
    )
    if ep.length != m["length"]:
        raise ValidationError(f"declared length {m['length']} but {ep.length} actions", "length")
    return ep


def save_episode(ep: DemoEpisode, root, frames=None, background=None) -> Path:
    """Write ``episode.json`` (tracks inline); optionally write frame images too.

    ``frames`` is a list of :class:`DepthFrame` matching ``ep.frames`` refs.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    if frames is not None:
        for ref, fr in zip(ep.frames, frames):
            (root / ref.depth).parent.mkdir(parents=True, exist_ok=True)
            write_depth_png(root / ref.depth, fr.depth)
            for label, rel in ref.masks.items():
                (root / rel).parent.mkdir(parents=True, exist_ok=True)
                write_mask_png(root / rel, fr.masks[label])
    if background is not None:
        (root / ep.background.depth).parent.mkdir(parents=True, exist_ok=True)
        write_depth_png(root / ep.background.depth, background.depth)
    m = {
        "id": ep.episode_id,
        "length": ep.length,
        "intrinsics": ep.intrinsics.to_dict(),
        "T_c2b": ep.T_c2b.to_list(),
        "pose_tracks": {k: [T.to_list() for T in v] for k, v in ep.pose_tracks.items()},
        "actions": [a.to_list() for a in ep.actions],
        "frames": [{"depth": f.depth, "masks": f.masks} for f in ep.frames],
        "background": {"depth": ep.background.depth},
    }
    if ep.gripper_widths is not None:
        m["gripper_widths"] = list(ep.gripper_widths)
    (root / "episode.json").write_text(json.dumps(m, indent=1))
    return root
