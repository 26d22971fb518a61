import copy
import json
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapegen.annotation import (
    annotation_from_dict,
    keypoints_at,
    parse_annotation,
    resolve_ditto,
    save_annotation,
    segment_at,
    serialize,
)
from shapegen.errors import FileFormatError, ValidationError

EXAMPLE = Path(__file__).parent / "data" / "mug_pink_annotation.json"


@pytest.fixture
def raw():
    return json.loads(EXAMPLE.read_text())


def errpath(d):
    with pytest.raises(ValidationError) as exc:
        annotation_from_dict(d)
    return exc.value.path


def test_example_parses():
    ann = parse_annotation(EXAMPLE)
    assert list(ann.objects) == ["mug_pink"]
    mug = ann.objects["mug_pink"]
    assert mug.category == "mug" and mug.gripped
    assert mug.gripper_keypoint == ((-0.03592510148882866, 0.10562200099229813, 0.023572899401187897),)
    assert [f.tstamp for f in mug.functionals] == [0, 100, 115]
    assert [f.mode for f in mug.functionals] == ["simple", "ditto", "simple"]
    assert mug.functionals[1].points == ()
    assert ann.other_foreground_objects == ("tree",)
    assert ann.gripped_objects == ["mug_pink"]


def test_ditto_resolution():
    mug = resolve_ditto(parse_annotation(EXAMPLE)).objects["mug_pink"]
    f0, f100, f115 = mug.functionals
    assert f100.tstamp == 100
    assert f100.same_keypoints(f0)
    assert f100.mode == "simple" and f100.points == f0.points
    assert not f115.same_keypoints(f0)


def test_resolve_is_idempotent_and_noop_without_ditto():
    once = resolve_ditto(parse_annotation(EXAMPLE))
    assert resolve_ditto(once) == once


def test_leading_ditto(raw):
    raw["objects"]["mug_pink"]["functionals"][0]["keypoints"] = "ditto"
    ann = annotation_from_dict(raw)
    with pytest.raises(ValidationError) as exc:
        resolve_ditto(ann)
    assert exc.value.path == "objects.mug_pink.functionals[0].keypoints"


def test_interpolation_fractions():
    mug = resolve_ditto(parse_annotation(EXAMPLE)).objects["mug_pink"]
    (a, b), s = keypoints_at(mug, 50)
    assert (a.tstamp, b.tstamp) == (0, 100) and a.same_keypoints(b)
    (a, b), s = keypoints_at(mug, 110)
    assert (a.tstamp, b.tstamp) == (100, 115)
    assert s == pytest.approx(2 / 3, abs=1e-15)
    assert Fraction(110 - 100, 115 - 100) == Fraction(2, 3)
    (a, b), s = keypoints_at(mug, 200)
    assert (a.tstamp, b.tstamp, s) == (115, 115, 1.0)
    (a, b), s = keypoints_at(mug, 115)
    assert (a.tstamp, b.tstamp, s) == (115, 115, 1.0)


def test_keypoints_require_resolution():
    with pytest.raises(ValidationError):
        keypoints_at(parse_annotation(EXAMPLE).objects["mug_pink"], 10)


def test_before_first_tstamp_holds_first(raw):
    for f in raw["objects"]["mug_pink"]["functionals"]:
        f["tstamp"] += 10
    mug = resolve_ditto(annotation_from_dict(raw)).objects["mug_pink"]
    (a, b), s = keypoints_at(mug, 3)
    assert (a.tstamp, b.tstamp, s) == (10, 10, 0.0)


@given(st.lists(st.integers(1, 30), min_size=2, max_size=6), st.integers(0, 200))
@settings(max_examples=100)
def test_fraction_is_piecewise_continuous(gaps, t):
    stamps = [sum(gaps[:k]) for k in range(len(gaps) + 1)]
    funcs = [type("F", (), {"tstamp": s})() for s in stamps]
    i, j, s0 = segment_at(funcs, t)
    i1, j1, s1 = segment_at(funcs, t + 1)
    assert 0.0 <= s0 <= 1.0
    if (i, j) == (i1, j1) and i != j:
        assert abs(s1 - s0) <= 1.0 / (stamps[j] - stamps[i]) + 1e-12


def test_round_trip(tmp_path):
    ann = parse_annotation(EXAMPLE)
    save_annotation(ann, tmp_path / "a.json")
    assert parse_annotation(tmp_path / "a.json") == ann
    assert annotation_from_dict(serialize(ann)) == ann


def test_anchor_ref_round_trip(raw):
    raw["objects"]["tree"] = {"category": "tree", "gripped": False, "functionals": []}
    raw["other_foreground_objects"] = []
    raw["objects"]["mug_pink"]["functionals"][2]["keypoints"]["anchor_ref"] = {"object": "tree", "point": [0, 0, 0.1]}
    ann = annotation_from_dict(raw)
    f = ann.objects["mug_pink"].functionals[2]
    assert f.anchor_ref.object == "tree" and f.anchor_ref.point == (0.0, 0.0, 0.1)
    assert annotation_from_dict(serialize(ann)) == ann


# -- schema violations ------------------------------------------------------------


def test_repeated_tstamp(raw):
    raw["objects"]["mug_pink"]["functionals"][2]["tstamp"] = 100
    assert errpath(raw) == "objects.mug_pink.functionals[2].tstamp"


def test_gripped_needs_keypoint(raw):
    del raw["objects"]["mug_pink"]["gripper_keypoint"]
    assert errpath(raw) == "objects.mug_pink.gripper_keypoint"
    raw["objects"]["mug_pink"]["gripper_keypoint"] = []
    assert errpath(raw) == "objects.mug_pink.gripper_keypoint"


def test_ungripped_without_keypoint_is_fine(raw):
    del raw["objects"]["mug_pink"]["gripper_keypoint"]
    raw["objects"]["mug_pink"]["gripped"] = False
    assert annotation_from_dict(raw).objects["mug_pink"].gripper_keypoint is None


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d.update(extra=1), ""),
    (lambda d: d["objects"]["mug_pink"].update(colour="pink"), "objects.mug_pink"),
    (lambda d: d["objects"]["mug_pink"]["functionals"][0]["keypoints"].update(mode="fancy"),
     "objects.mug_pink.functionals[0].keypoints.mode"),
    (lambda d: d["objects"]["mug_pink"]["functionals"][0]["keypoints"].update(points=[]),
     "objects.mug_pink.functionals[0].keypoints.points"),
    (lambda d: d["objects"]["mug_pink"]["functionals"][2]["keypoints"]["points"][0].pop(),
     "objects.mug_pink.functionals[2].keypoints.points[0]"),
    (lambda d: d["objects"]["mug_pink"]["functionals"][0].update(tstamp=-1),
     "objects.mug_pink.functionals[0].tstamp"),
    (lambda d: d["objects"]["mug_pink"]["functionals"][0].update(tstamp=1.5),
     "objects.mug_pink.functionals[0].tstamp"),
    (lambda d: d["objects"]["mug_pink"].update(gripped="yes"), "objects.mug_pink.gripped"),
    (lambda d: d["objects"].clear(), "objects"),
    (lambda d: d.update(other_foreground_objects="tree"), "other_foreground_objects"),
    (lambda d: d.update(other_foreground_objects=["mug_pink"]), "other_foreground_objects"),
])
def test_schema_violations_carry_field_paths(raw, mutate, path):
    d = copy.deepcopy(raw)
    mutate(d)
    assert errpath(d) == path


def test_invalid_json(tmp_path):
    (tmp_path / "a.json").write_text("{not json")
    with pytest.raises(FileFormatError):
        parse_annotation(tmp_path / "a.json")
