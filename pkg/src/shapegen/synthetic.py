"""Synthetic tabletop episodes rendered by analytic ray casting.

A sphere (the manipulated object) moves across a table while a box (the
arm) follows it from above; an optional static block stands in for another
foreground object. Depth is rendered per pixel from exact ray/primitive
intersections, so the scene is known in closed form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotation import Annotation, annotation_from_dict, serialize
from .episode import DemoEpisode, DepthFrame, FrameRef, Intrinsics, save_episode
from .geometry import TriangleMesh, icosphere, save_ply
from .se3 import rot_axis, rot_z, translate


def pixel_rays(intr: Intrinsics) -> np.ndarray:
    """Ray directions scaled so that the z component is 1 (depth = ray parameter)."""
    v, u = np.mgrid[0:intr.height, 0:intr.width]
    return np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u, dtype=float)], axis=-1)


def ray_sphere(d, center, radius) -> np.ndarray:
    c = np.asarray(center, dtype=np.float64)
    a = np.einsum("...k,...k->...", d, d)
    b = d @ c
    disc = b * b - a * (c @ c - radius * radius)
    z = (b - np.sqrt(np.maximum(disc, 0.0))) / a
    return np.where((disc >= 0) & (z > 0), z, np.inf)


def ray_box(d, lo, hi) -> np.ndarray:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = lo / d
        t1 = hi / d
    tmin = np.nanmax(np.minimum(t0, t1), axis=-1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=-1)
    return np.where((tmax >= tmin) & (tmin > 0), tmin, np.inf)


def render(intr: Intrinsics, table_z: float, primitives: dict) -> DepthFrame:
    """Depth of the nearest hit among a table plane and labelled primitives.

    ``primitives`` maps a label to ``("sphere", center, radius)`` or
    ``("box", lo, hi)``. Every label except ``"arm"`` gets a mask.
    """
    d = pixel_rays(intr)
    best = np.full(d.shape[:2], table_z)
    owner = np.full(d.shape[:2], "", dtype=object)
    for label, prim in primitives.items():
        z = ray_sphere(d, prim[1], prim[2]) if prim[0] == "sphere" else ray_box(d, prim[1], prim[2])
        closer = z < best
        best = np.where(closer, z, best)
        owner[closer] = label
    masks = {label: owner == label for label in primitives if label != "arm"}
    return DepthFrame(np.round(best * 1000.0) / 1000.0, masks)


@dataclass
class SphereScene:
    episode: DemoEpisode
    annotation: Annotation
    scanned: TriangleMesh
    frames: list
    background: DepthFrame


def sphere_scene(length: int = 50, width: int = 160, height: int = 120, radius: float = 0.05,
                 table_z: float = 0.75, with_block: bool = True, episode_id: str = "sphere_pick") -> SphereScene:
    intr = Intrinsics(140.0, 140.0, (width - 1) / 2, (height - 1) / 2, width, height)
    T_c2b = translate(0.4, 0.0, 0.9) @ rot_axis("x", np.pi) @ rot_z(0.25)
    poses, actions, frames = [], [], []
    for t in range(length):
        s = t / max(length - 1, 1)
        center = np.array([-0.08 + 0.16 * s, 0.02 - 0.02 * s, 0.6 + 0.03 * np.sin(np.pi * s)])
        # object frame -> camera; rotation is invisible on a sphere but exercises the conventions
        poses.append(translate(center) @ rot_z(0.6 * s) @ rot_axis("x", 0.2))
        gap = 0.03 * (1.0 - s)
        arm_lo = center + np.array([-0.02, -radius - gap - 0.12, -0.02])
        arm_hi = center + np.array([0.02, -radius - gap, 0.02])
        grip = np.array([center[0], arm_hi[1], center[2]])
        actions.append(T_c2b @ translate(grip) @ rot_axis("x", -np.pi / 2))
        prims = {"ball": ("sphere", center, radius), "arm": ("box", arm_lo, arm_hi)}
        if with_block:
            prims["block"] = ("box", (0.07, 0.04, 0.62), (0.12, 0.09, 0.67))
        frames.append(render(intr, table_z, prims))
    bg_prims = {"block": ("box", (0.07, 0.04, 0.62), (0.12, 0.09, 0.67))} if with_block else {}
    background = render(intr, table_z, bg_prims)
    background = DepthFrame(background.depth)  # background carries no masks
    mask_labels = ["ball"] + (["block"] if with_block else [])
    refs = [FrameRef(f"depth/{t:06d}.png", {k: f"masks/{k}_{t:06d}.png" for k in mask_labels})
            for t in range(length)]
    episode = DemoEpisode(episode_id, intr, T_c2b, {"ball": poses}, actions, refs, FrameRef("background.png"),
                          gripper_widths=[0.08 if t < length // 2 else 0.0 for t in range(length)])
    scanned = icosphere(4, radius, name="ball_scan")
    ann = annotation_from_dict({
        "objects": {
            "ball": {
                "category": "sphere",
                "gripped": True,
                "gripper_keypoint": [[0.0, -radius, 0.0]],
                "functionals": [
                    {"tstamp": 0, "keypoints": {"mode": "simple", "points": [[0.0, 0.0, radius]]}},
                    {"tstamp": length // 2, "keypoints": "ditto"},
                    {"tstamp": length // 2 + 10, "keypoints": {"mode": "simple", "points": [[radius, 0.0, 0.0]]}},
                ],
            }
        },
        "other_foreground_objects": ["block"] if with_block else [],
    })
    return SphereScene(episode, ann, scanned, frames, background)


def write_sphere_scene(root, scene: SphereScene | None = None, **kw) -> SphereScene:
    """Write episode, frames, annotation and the scanned mesh under ``root``."""
    scene = scene or sphere_scene(**kw)
    root = Path(root)
    save_episode(scene.episode, root, scene.frames, scene.background)
    (root / "annotation.json").write_text(json.dumps(serialize(scene.annotation), indent=1))
    save_ply(scene.scanned, root / "scanned.ply")
    scene.episode.root = root
    return scene
