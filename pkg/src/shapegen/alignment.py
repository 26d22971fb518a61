"""Function-aware alignment, pose-track retargeting and gripper action correction.

Conventions: a pose ``T_a[t]`` maps object-frame points to camera-frame
points; an action ``a_t`` maps the end-effector frame to the robot base; the
calibration ``T_c2b`` maps camera to base. An alignment ``T~`` acts in the
substituted object's frame, so the substituted pose is ``T_a[t] @ T~[t]``,
optionally left-multiplied by a camera-space anchor term ``T^[t]``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .annotation import Annotation, ObjectAnnotation, resolve_ditto, segment_at
from .episode import DemoEpisode
from .errors import NumericalError, ValidationError
from .library import PluggedLibrary, composite_warp_object
from .modes import get_solver
from .se3 import SE3, conjugate_translation, interp, translate

log = logging.getLogger(__name__)


def solve_alignment(source_points, warped_points, mode: str = "simple") -> SE3:
    """Transform carrying the warped keypoints onto the source keypoints under ``mode``."""
    src = np.asarray(source_points, dtype=np.float64).reshape(-1, 3)
    wrp = np.asarray(warped_points, dtype=np.float64).reshape(-1, 3)
    if len(src) == 0 or src.shape != wrp.shape:
        raise ValidationError(f"need equal, non-empty point lists (got {len(src)} and {len(wrp)})", "points")
    return get_solver(mode)(src, wrp)


def _warp_keypoints(plugged: PluggedLibrary, target_id: str, points, what: str):
    """Composite-warp object-frame keypoints; drop points whose refinement did not converge."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    res = composite_warp_object(plugged, target_id, p)
    if not np.all(res.converged):
        bad = np.flatnonzero(~res.converged).tolist()
        if len(bad) == len(p):
            raise NumericalError(f"{what}: surface refinement failed for every keypoint")
        log.warning("%s: dropping keypoints %s (refinement did not converge)", what, bad)
    return p[res.converged], res.points[res.converged]


def anchor_alignments(obj: ObjectAnnotation, plugged: PluggedLibrary, target_id: str) -> list[SE3]:
    """One alignment per (resolved) functional anchor."""
    out = []
    for i, f in enumerate(obj.functionals):
        if i > 0 and f.same_keypoints(obj.functionals[i - 1]):
            out.append(out[-1])
            continue
        src, wrp = _warp_keypoints(plugged, target_id, f.points, f"objects.{obj.name}.functionals[{i}]")
        out.append(solve_alignment(src, wrp, f.mode))
    return out


def interpolate_sequence(obj: ObjectAnnotation, per_anchor: list[SE3], length: int) -> list[SE3]:
    seq = []
    for t in range(length):
        i, j, s = segment_at(obj.functionals, t)
        seq.append(per_anchor[i] if i == j else interp(per_anchor[i], per_anchor[j], s))
    return seq


def build_alignment_sequence(obj: ObjectAnnotation, plugged: PluggedLibrary, target_id: str,
                             length: int) -> list[SE3]:
    """Per-frame alignment: solve at every anchor, interpolate between anchors, hold outside."""
    if not obj.functionals:
        raise ValidationError("no functional anchors to align with", f"objects.{obj.name}.functionals")
    if any(f.is_ditto for f in obj.functionals):
        obj = resolve_ditto(Annotation({obj.name: obj})).objects[obj.name]
    return interpolate_sequence(obj, anchor_alignments(obj, plugged, target_id), length)


def compose_pose_track(T_a, T_tilde, T_hat=None) -> list[SE3]:
    """``T_j[t] = (T^[t] @) T_a[t] @ T~[t]``."""
    if len(T_a) != len(T_tilde) or (T_hat is not None and len(T_hat) != len(T_a)):
        raise ValidationError("pose, alignment and anchor sequences must have equal length", "T_tilde")
    if T_hat is None:
        return [a @ b for a, b in zip(T_a, T_tilde)]
    return [h @ a @ b for h, a, b in zip(T_hat, T_a, T_tilde)]


def solve_anchor_sequence(anchor_point, source_track, substituted_track=None, substituted_point=None) -> list[SE3]:
    """Camera-space translations following an anchor point from the source to the generated scene.

    The anchor lives on another object whose source pose track is
    ``source_track``; in the generated scene that object follows
    ``substituted_track`` and the anchor sits at ``substituted_point`` (both
    default to the source values, giving identities).
    """
    p = np.asarray(anchor_point, dtype=np.float64).reshape(3)
    q = p if substituted_point is None else np.asarray(substituted_point, dtype=np.float64).reshape(3)
    new_track = source_track if substituted_track is None else substituted_track
    if len(new_track) != len(source_track):
        raise ValidationError(f"anchor track length {len(new_track)} differs from {len(source_track)}",
                              "anchor_track")
    return [translate(Tn.apply(q) - Ts.apply(p)) for Ts, Tn in zip(source_track, new_track)]


@dataclass
class AnchorMotion:
    """How an anchor object moves in the generated scene (absent: it stays as in the source)."""

    track: list
    point_map: dict = field(default_factory=dict)  # source anchor point (tuple) -> substituted point


def anchor_term(obj: ObjectAnnotation, episode: DemoEpisode, motions: dict | None = None) -> list[SE3] | None:
    """Per-frame ``T^``: anchor displacements, interpolated between functional anchors like ``T~``."""
    if not any(f.anchor_ref for f in obj.functionals):
        return None
    motions = motions or {}
    L = episode.length
    disp = []
    for i, f in enumerate(obj.functionals):
        if f.anchor_ref is None:
            disp.append(np.zeros((L, 3)))
            continue
        name = f.anchor_ref.object
        if name not in episode.pose_tracks:
            raise ValidationError(f"anchor object {name!r} has no pose track",
                                  f"objects.{obj.name}.functionals[{i}].keypoints.anchor_ref.object")
        m = motions.get(name)
        seq = solve_anchor_sequence(f.anchor_ref.point, episode.pose_tracks[name],
                                    m.track if m else None, m.point_map.get(f.anchor_ref.point) if m else None)
        disp.append(np.array([T.translation for T in seq]))
    out = []
    for t in range(L):
        i, j, s = segment_at(obj.functionals, t)
        out.append(translate((1.0 - s) * disp[i][t] + s * disp[j][t]))
    return out


def gripper_correction(T_a, T_j, x_g, x_g_warped) -> list[SE3]:
    """Per-frame camera-space translations taking the source grip point onto the substituted one."""
    if len(T_a) != len(T_j):
        raise ValidationError("pose tracks differ in length", "T_j")
    p = np.asarray(x_g, dtype=np.float64).reshape(3)
    q = np.asarray(x_g_warped, dtype=np.float64).reshape(3)
    return [translate(Tj.apply(q) - Ta.apply(p)) for Ta, Tj in zip(T_a, T_j)]


def correct_actions(actions, T_g, T_c2b: SE3) -> list[SE3]:
    """``a'_t = T_c2b @ T^g_t @ inv(T_c2b) @ a_t`` using the translation-only shortcut."""
    if len(actions) != len(T_g):
        raise ValidationError(f"{len(actions)} actions but {len(T_g)} corrections", "T_g")
    out = []
    for a, g in zip(actions, T_g):
        out.append(SE3(a.rotation, a.translation + conjugate_translation(T_c2b.rotation, g.translation)))
    return out


# -- plans -------------------------------------------------------------------


@dataclass
class RetargetPlan:
    target_id: str
    source_id: str
    object_name: str
    T_tilde: list
    T_hat: list | None
    T_j: list
    T_g: list
    actions: list
    flags: dict = field(default_factory=dict)

    @property
    def length(self) -> int:
        return len(self.T_j)

    def to_dict(self) -> dict:
        def seq(s):
            return None if s is None else [T.to_list() for T in s]

        return {
            "target": self.target_id,
            "source_episode": self.source_id,
            "object": self.object_name,
            "flags": dict(self.flags),
            "alignment": seq(self.T_tilde),
            "anchor": seq(self.T_hat),
            "pose_track": seq(self.T_j),
            "gripper_correction": seq(self.T_g),
            "actions": seq(self.actions),
        }

    @classmethod
    def from_dict(cls, d) -> RetargetPlan:
        def seq(s):
            return None if s is None else [SE3.from_list(m) for m in s]

        return cls(d["target"], d["source_episode"], d["object"], seq(d["alignment"]), seq(d["anchor"]),
                   seq(d["pose_track"]), seq(d["gripper_correction"]), seq(d["actions"]), d.get("flags", {}))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()))
        return path


def pick_object(ann: Annotation, object_name: str | None = None) -> ObjectAnnotation:
    if object_name is not None:
        if object_name not in ann.objects:
            raise ValidationError(f"object {object_name!r} not annotated", "objects")
        return ann.objects[object_name]
    gripped = ann.gripped_objects
    return ann.objects[gripped[0] if gripped else next(iter(ann.objects))]


def make_retarget_plan(episode: DemoEpisode, annotation: Annotation, plugged: PluggedLibrary, target_id: str,
                       skip_alignment: bool = False, skip_action_correction: bool = False,
                       object_name: str | None = None, anchor_motions: dict | None = None) -> RetargetPlan:
    """Full retargeting of one source episode onto one library entry.

    ``skip_alignment`` keeps the substituted shape in the shared canonical
    frame (identity alignment, no anchor term); ``skip_action_correction``
    passes the source actions through untouched.
    """
    if target_id not in plugged.base.entries:
        raise ValidationError(f"unknown target {target_id!r}; library has {plugged.targets}", "target_id")
    ann = resolve_ditto(annotation)
    obj = pick_object(ann, object_name)
    if obj.name not in episode.pose_tracks:
        raise ValidationError(f"episode has no pose track for {obj.name!r}", "pose_tracks")
    L = episode.length
    T_a = episode.pose_tracks[obj.name]
    if skip_alignment:
        T_tilde, T_hat = [SE3.identity()] * L, None
    else:
        T_tilde = build_alignment_sequence(obj, plugged, target_id, L)
        T_hat = anchor_term(obj, episode, anchor_motions)
    T_j = compose_pose_track(T_a, T_tilde, T_hat)
    if skip_action_correction or not obj.gripped:
        T_g = [SE3.identity()] * L
        actions = list(episode.actions)
    else:
        src, wrp = _warp_keypoints(plugged, target_id, obj.gripper_keypoint, f"objects.{obj.name}.gripper_keypoint")
        T_g = gripper_correction(T_a, T_j, src.mean(axis=0), wrp.mean(axis=0))
        actions = correct_actions(episode.actions, T_g, episode.T_c2b)
    flags = {"skip_alignment": bool(skip_alignment), "skip_action_correction": bool(skip_action_correction)}
    return RetargetPlan(target_id, episode.episode_id, obj.name, T_tilde, T_hat, T_j, T_g, actions, flags)
