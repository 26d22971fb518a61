"""Per-demonstration annotation files: parsing, validation, ditto resolution, timing.

The JSON layout::

    {
      "objects": {
        "<name>": {
          "category": "mug",
          "gripped": true,
          "gripper_keypoint": [[x, y, z]],
          "functionals": [
            {"tstamp": 0, "keypoints": {"mode": "simple", "points": [[x, y, z]]}},
            {"tstamp": 100, "keypoints": "ditto"}
          ]
        }
      },
      "other_foreground_objects": ["tree"]
    }

``keypoints`` may additionally carry ``"anchor_ref": {"object": name,
"point": [x, y, z]}`` to pin the functional point to a point on another
object in camera space. Coordinates are in the object's own (scanned) frame.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import FileFormatError, ValidationError
from .modes import DITTO, known_modes

Point = tuple[float, float, float]


@dataclass(frozen=True)
class AnchorRef:
    object: str
    point: Point


@dataclass(frozen=True)
class FunctionalAnchor:
    tstamp: int
    mode: str
    points: tuple[Point, ...] = ()
    anchor_ref: AnchorRef | None = None

    @property
    def is_ditto(self) -> bool:
        return self.mode == DITTO

    def same_keypoints(self, other: FunctionalAnchor) -> bool:
        return (self.mode, self.points, self.anchor_ref) == (other.mode, other.points, other.anchor_ref)


@dataclass(frozen=True)
class ObjectAnnotation:
    name: str
    category: str
    gripped: bool
    gripper_keypoint: tuple[Point, ...] | None
    functionals: tuple[FunctionalAnchor, ...]


@dataclass(frozen=True)
class Annotation:
    objects: dict
    other_foreground_objects: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.objects:
            raise ValidationError("at least one object is required", "objects")

    def __eq__(self, other):
        return (isinstance(other, Annotation) and self.objects == other.objects
                and self.other_foreground_objects == other.other_foreground_objects)

    def __hash__(self):
        return hash((tuple(self.objects.items()), self.other_foreground_objects))

    @property
    def gripped_objects(self) -> list[str]:
        return [n for n, o in self.objects.items() if o.gripped]


# -- parsing -----------------------------------------------------------------


def _expect_keys(d, path, required, optional=()):
    if not isinstance(d, dict):
        raise ValidationError(f"expected an object, got {type(d).__name__}", path)
    unknown = set(d) - set(required) - set(optional)
    if unknown:
        raise ValidationError(f"unknown field(s) {sorted(unknown)}", path)
    missing = [k for k in required if k not in d]
    if missing:
        raise ValidationError(f"missing field(s) {missing}", path)


def _point(v, path) -> Point:
    if not isinstance(v, list) or len(v) != 3:
        raise ValidationError("expected a list of 3 numbers", path)
    out = []
    for i, c in enumerate(v):
        if isinstance(c, bool) or not isinstance(c, (int, float)):
            raise ValidationError(f"expected a number, got {c!r}", f"{path}[{i}]")
        c = float(c)
        if not math.isfinite(c):
            raise ValidationError("non-finite coordinate", f"{path}[{i}]")
        out.append(c)
    return tuple(out)


def _points(v, path, allow_empty=False) -> tuple[Point, ...]:
    if not isinstance(v, list):
        raise ValidationError("expected a list of points", path)
    if not v and not allow_empty:
        raise ValidationError("must contain at least one point", path)
    return tuple(_point(p, f"{path}[{i}]") for i, p in enumerate(v))


def _functional(d, path) -> FunctionalAnchor:
    _expect_keys(d, path, ("tstamp", "keypoints"))
    t = d["tstamp"]
    if isinstance(t, bool) or not isinstance(t, int) or t < 0:
        raise ValidationError(f"expected a non-negative integer frame index, got {t!r}", f"{path}.tstamp")
    kp = d["keypoints"]
    kpath = f"{path}.keypoints"
    if kp == DITTO:
        return FunctionalAnchor(t, DITTO)
    if isinstance(kp, str):
        raise ValidationError(f"expected an object or \"ditto\", got {kp!r}", kpath)
    _expect_keys(kp, kpath, ("mode", "points"), ("anchor_ref",))
    mode = kp["mode"]
    if mode == DITTO or mode not in known_modes():
        raise ValidationError(f"unknown alignment mode {mode!r}; known: {known_modes()}", f"{kpath}.mode")
    points = _points(kp["points"], f"{kpath}.points")
    anchor = None
    if "anchor_ref" in kp:
        apath = f"{kpath}.anchor_ref"
        _expect_keys(kp["anchor_ref"], apath, ("object", "point"))
        if not isinstance(kp["anchor_ref"]["object"], str):
            raise ValidationError("expected an object name", f"{apath}.object")
        anchor = AnchorRef(kp["anchor_ref"]["object"], _point(kp["anchor_ref"]["point"], f"{apath}.point"))
    return FunctionalAnchor(t, mode, points, anchor)


def _object(name, d, path) -> ObjectAnnotation:
    _expect_keys(d, path, ("category", "gripped", "functionals"), ("gripper_keypoint",))
    if not isinstance(d["category"], str) or not d["category"]:
        raise ValidationError("expected a non-empty string", f"{path}.category")
    if not isinstance(d["gripped"], bool):
        raise ValidationError("expected true or false", f"{path}.gripped")
    gk = d.get("gripper_keypoint")
    if gk is not None:
        gk = _points(gk, f"{path}.gripper_keypoint", allow_empty=True)
    if d["gripped"] and not gk:
        raise ValidationError("required (non-empty) when gripped is true", f"{path}.gripper_keypoint")
    fl = d["functionals"]
    if not isinstance(fl, list):
        raise ValidationError("expected a list", f"{path}.functionals")
    funcs = tuple(_functional(f, f"{path}.functionals[{i}]") for i, f in enumerate(fl))
    for i in range(1, len(funcs)):
        if funcs[i].tstamp <= funcs[i - 1].tstamp:
            raise ValidationError(
                f"tstamps must be strictly increasing ({funcs[i - 1].tstamp} then {funcs[i].tstamp})",
                f"{path}.functionals[{i}].tstamp")
    return ObjectAnnotation(name, d["category"], d["gripped"], gk, funcs)


def annotation_from_dict(d) -> Annotation:
    _expect_keys(d, "", ("objects",), ("other_foreground_objects",))
    objs = d["objects"]
    if not isinstance(objs, dict) or not objs:
        raise ValidationError("expected a non-empty object map", "objects")
    objects = {name: _object(name, o, f"objects.{name}") for name, o in objs.items()}
    others = d.get("other_foreground_objects", [])
    if not isinstance(others, list) or not all(isinstance(n, str) for n in others):
        raise ValidationError("expected a list of names", "other_foreground_objects")
    clash = set(others) & set(objects)
    if clash:
        raise ValidationError(f"names listed both as objects and foreground objects: {sorted(clash)}",
                              "other_foreground_objects")
    for name, o in objects.items():
        for i, f in enumerate(o.functionals):
            if f.anchor_ref and f.anchor_ref.object == name:
                raise ValidationError("an object cannot anchor to itself",
                                      f"objects.{name}.functionals[{i}].keypoints.anchor_ref.object")
    return Annotation(objects, tuple(others))


def parse_annotation(path) -> Annotation:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: invalid JSON ({exc})") from exc
    return annotation_from_dict(d)


def serialize(ann: Annotation) -> dict:
    def kp(f):
        if f.is_ditto:
            return DITTO
        out = {"mode": f.mode, "points": [list(p) for p in f.points]}
        if f.anchor_ref:
            out["anchor_ref"] = {"object": f.anchor_ref.object, "point": list(f.anchor_ref.point)}
        return out

    objects = {}
    for name, o in ann.objects.items():
        od = {"category": o.category, "gripped": o.gripped}
        if o.gripper_keypoint is not None:
            od["gripper_keypoint"] = [list(p) for p in o.gripper_keypoint]
        od["functionals"] = [{"tstamp": f.tstamp, "keypoints": kp(f)} for f in o.functionals]
        objects[name] = od
    return {"objects": objects, "other_foreground_objects": list(ann.other_foreground_objects)}


def save_annotation(ann: Annotation, path) -> None:
    Path(path).write_text(json.dumps(serialize(ann), indent=2), encoding="utf-8")


# -- resolution and timing ---------------------------------------------------


def resolve_ditto(ann: Annotation) -> Annotation:
    """Replace every ditto entry by a copy of the previous (resolved) keypoints entry."""
    objects = {}
    for name, o in ann.objects.items():
        out = []
        for i, f in enumerate(o.functionals):
            if f.is_ditto:
                if not out:
                    raise ValidationError("the first entry cannot be \"ditto\"",
                                          f"objects.{name}.functionals[{i}].keypoints")
                f = replace(out[-1], tstamp=f.tstamp)
            out.append(f)
        objects[name] = replace(o, functionals=tuple(out))
    return replace(ann, objects=objects)


def segment_at(functionals, t: int) -> tuple[int, int, float]:
    """Indices ``(i, j)`` of the bracketing anchors at frame ``t`` and the fraction ``s``."""
    n = len(functionals)
    if n == 0:
        raise ValidationError("object has no functional anchors", "functionals")
    if t < functionals[0].tstamp:
        return 0, 0, 0.0
    if t >= functionals[-1].tstamp:
        return n - 1, n - 1, 1.0
    for i in range(n - 1):
        t0, t1 = functionals[i].tstamp, functionals[i + 1].tstamp
        if t0 <= t < t1:
            return i, i + 1, (t - t0) / (t1 - t0)
    raise AssertionError("unreachable")


def keypoints_at(obj: ObjectAnnotation, t: int) -> tuple[tuple[FunctionalAnchor, FunctionalAnchor], float]:
    """Bracketing anchor pair and interpolation fraction at frame ``t``.

    Before the first tstamp the first anchor is held (``s = 0``); from the
    last tstamp on the last anchor is held (``s = 1``).
    """
    if any(f.is_ditto for f in obj.functionals):
        raise ValidationError("resolve ditto entries before querying keypoints", f"objects.{obj.name}")
    i, j, s = segment_at(obj.functionals, t)
    return (obj.functionals[i], obj.functionals[j]), s
