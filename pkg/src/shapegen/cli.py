"""Command-line interface.

Configuration is resolved from built-in defaults, then a JSON project file
(``--config``), then ``SHAPEGEN_<SECTION>_<KEY>`` environment variables, then
command-line flags; later sources win. Exit codes: 0 success, 1 I/O, 2
validation, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .alignment import make_retarget_plan
from .annotation import parse_annotation, resolve_ditto
from .costmodel import (
    CostConstants,
    asymptotic_ratio,
    crossover_n_demo,
    crossover_n_shape,
    manual_cost,
    shapegen_cost,
)
from .episode import load_episode
from .errors import FileFormatError, NumericalError, ShapeGenError, ValidationError
from .geometry import load_mesh, normalize_to_unit_cube, sample_near_surface, sample_training_grid
from .library import (
    add_shape,
    composite_warp,
    init_library,
    load_library,
    load_plugged,
    plug,
    read_manifest,
    save_library,
)
from .neural import TrainConfig, fit_sdf, save_net
from .obsgen import ObsGenConfig, export_ply, generate_observations, load_sgpc, write_generated_episode

log = logging.getLogger("shapegen")

SECTIONS = {"train": TrainConfig, "obsgen": ObsGenConfig, "cost": CostConstants}
PATH_KEYS = ("library", "episode", "output")


# -- configuration -----------------------------------------------------------


def _coerce(cls, key, value):
    """Convert a string (environment variable) to the field's type."""
    if not isinstance(value, str):
        return value
    ftype = {f.name: f.type for f in fields(cls)}.get(key)
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    if ftype in ("float",) and isinstance(parsed, int):
        parsed = float(parsed)
    return parsed


def resolve_config(project_file=None, env=None, overrides=None) -> dict:
    """Materialize every setting: defaults < project file < environment < flags."""
    env = os.environ if env is None else env
    layers = {name: {} for name in SECTIONS}
    paths = {k: None for k in PATH_KEYS}
    if project_file:
        try:
            proj = json.loads(Path(project_file).read_text())
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{project_file}: invalid JSON") from exc
        unknown = set(proj) - set(SECTIONS) - {"paths"}
        if unknown:
            raise ValidationError(f"unknown sections {sorted(unknown)}", str(project_file))
        for name in SECTIONS:
            layers[name].update(proj.get(name, {}))
        paths.update(proj.get("paths", {}))
    for var, value in env.items():
        if not var.startswith("SHAPEGEN_"):
            continue
        rest = var[len("SHAPEGEN_"):].lower()
        section, _, key = rest.partition("_")
        if section in SECTIONS and key in {f.name for f in fields(SECTIONS[section])}:
            layers[section][key] = _coerce(SECTIONS[section], key, value)
        elif section == "paths" and key in PATH_KEYS:
            paths[key] = value
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section == "paths":
            paths[key] = value
        elif section in SECTIONS:
            layers[section][key] = _coerce(SECTIONS[section], key, value)
        else:
            raise ValidationError(f"unknown config section {section!r}", dotted)
    resolved = {"paths": paths}
    for name, cls in SECTIONS.items():
        try:
            obj = cls.from_dict(layers[name]) if hasattr(cls, "from_dict") else cls(**layers[name])
        except TypeError as exc:
            raise ValidationError(str(exc), name) from exc
        resolved[name] = obj
    return resolved


def config_to_json(cfg: dict) -> dict:
    return {k: (v.to_dict() if hasattr(v, "to_dict") else v) for k, v in cfg.items()}


def _file_hash(path) -> str | None:
    p = Path(path)
    if not p.is_file():
        return None
    return hashlib.sha256(p.read_bytes()).hexdigest()


def write_run_record(where, command: str, inputs: dict, cfg: dict, outputs: dict | None = None) -> Path:
    where = Path(where)
    where.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "argv": sys.argv[1:],
        "inputs": {k: {"path": str(v), "sha256": _file_hash(v)} for k, v in inputs.items() if v is not None},
        "config": config_to_json(cfg),
        "outputs": outputs or {},
        "versions": {"shapegen": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    path = where / "run.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(record, indent=1, default=str))
    os.replace(tmp, path)
    return path


# -- commands ----------------------------------------------------------------


def cmd_fit_sdf(args, cfg):
    tc: TrainConfig = cfg["train"]
    mesh = load_mesh(args.mesh)
    normalized, scale, offset = normalize_to_unit_cube(mesh)
    samples = sample_training_grid(normalized, tc.grid_resolution, cutoff=tc.sample_cutoff)
    net, report = fit_sdf(samples, tc, return_report=True)
    rng = np.random.default_rng(tc.rng_seed + 1)
    held = sample_near_surface(normalized, args.holdout, rng, band=tc.sample_cutoff)
    mae = float(np.mean(np.abs(net(held.points) - held.sdf_values)))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_net(net, out, extra={"grid_resolution": tc.grid_resolution, "sample_cutoff": tc.sample_cutoff,
                              "normalization": {"scale": scale, "offset": [float(v) for v in offset]},
                              "train_mae": report.mae, "holdout_mae": mae, "config": tc.to_dict()})
    print(f"samples {len(samples)}  steps {report.steps}  train MAE {report.mae:.3e}  held-out MAE {mae:.3e}")
    write_run_record(out.parent, "fit-sdf", {"mesh": args.mesh}, cfg,
                     {"net": str(out), "holdout_mae": mae, "train_mae": report.mae})
    return 0


def _lib_path(args, cfg):
    p = getattr(args, "library", None) or cfg["paths"]["library"]
    if not p:
        raise ValidationError("no library directory given", "library")
    return Path(p)


def cmd_lib_init(args, cfg):
    path = _lib_path(args, cfg)
    if (path / "manifest.json").exists() and not args.force:
        raise ValidationError(f"{path} already holds a library; use --force to overwrite", "library")
    lib = init_library(args.category, load_mesh(args.template), cfg["train"], template_id=args.id)
    save_library(lib, path, force=True)
    print(f"initialized library {path} (category {args.category}, template {args.id})")
    write_run_record(path, "lib init", {"template": args.template}, cfg)
    return 0


def _reload_for_update(path):
    manifest = read_manifest(path)
    lib = load_library(path)
    plugged = load_plugged(path) if manifest.get("plugged") else None
    return lib, plugged


def cmd_lib_add(args, cfg):
    path = _lib_path(args, cfg)
    lib, plugged = _reload_for_update(path)
    lib, rep = add_shape(lib, load_mesh(args.mesh), args.id, cfg["train"], return_report=True)
    if plugged is not None:
        save_library(replace(plugged, base=lib), path, force=True)
    else:
        save_library(lib, path, force=True)
    print(f"added {args.id}: {rep.sdf_steps} SDF steps, {rep.warp_steps} warp steps, {rep.seconds:.1f} s")
    write_run_record(path, "lib add", {"mesh": args.mesh}, cfg, {"id": args.id, "warp_steps": rep.warp_steps})
    return 0


def residual_report(plugged, n_points: int, seed: int) -> dict:
    """Mean |f_entry| at composite-warped scanned-surface samples, per entry."""
    rng = np.random.default_rng(seed)
    x = plugged.scanned_normalized.sample_surface(n_points, rng)
    out = {}
    for tid in plugged.targets:
        res = composite_warp(plugged, tid, x)
        f = np.abs(plugged.base.entries[tid].sdf(res.points))
        out[tid] = {"mean_abs_sdf": float(f.mean()), "converged": float(res.converged.mean())}
    return out


def cmd_lib_plug(args, cfg):
    path = _lib_path(args, cfg)
    lib = load_library(path)
    plugged = plug(lib, load_mesh(args.mesh), cfg["train"])
    save_library(plugged, path, force=True)
    report = residual_report(plugged, args.probe, cfg["train"].rng_seed)
    for tid, r in report.items():
        print(f"{tid}: mean |sdf| {r['mean_abs_sdf']:.3e}  converged {100 * r['converged']:.1f}%")
    if not report:
        print("plugged; library has no entries to query")
    write_run_record(path, "lib plug", {"mesh": args.mesh}, cfg, {"residuals": report})
    return 0


def cmd_lib_list(args, cfg):
    path = _lib_path(args, cfg)
    m = read_manifest(path)
    files = m["files"]
    print(f"library {path}  category {m['category']}  version {m['version']}")
    t = m["template"]
    print(f"  template {t['id']}  mesh {files[t['mesh']][:12]}  sdf {files[t['sdf']][:12]}")
    print(f"  entries: {len(m['entries'])}")
    for e in m["entries"]:
        print(f"  - {e['id']}  mesh {files[e['mesh']][:12]}  sdf {files[e['sdf']][:12]}  "
              f"warp {files[e['warp']][:12]}")
    if m.get("plugged"):
        print(f"  plugged: {m['plugged']['name']}  bridge {files[m['plugged']['bridge']][:12]}")
    write_run_record(args.run_dir or ".", "lib list", {"manifest": path / "manifest.json"}, cfg)
    return 0


def cmd_validate_annotation(args, cfg):
    ann = resolve_ditto(parse_annotation(args.file))
    for name, o in ann.objects.items():
        print(f"{name}: category {o.category}, gripped {o.gripped}, {len(o.functionals)} anchors")
        for f in o.functionals:
            extra = f"  anchor_ref {f.anchor_ref.object}" if f.anchor_ref else ""
            print(f"  t={f.tstamp}  mode {f.mode}  {len(f.points)} point(s){extra}")
    print("OK")
    write_run_record(args.run_dir or ".", "validate-annotation", {"annotation": args.file}, cfg)
    return 0


def cmd_generate(args, cfg):
    ep_path = Path(args.episode or cfg["paths"]["episode"] or "")
    episode = load_episode(ep_path)
    ann_path = Path(args.annotation) if args.annotation else episode.root / "annotation.json"
    annotation = parse_annotation(ann_path)
    plugged = load_plugged(_lib_path(args, cfg))
    targets = plugged.targets if args.targets == "all" else [t for t in args.targets.split(",") if t]
    if not targets:
        raise ValidationError("no targets selected", "targets")
    out_root = Path(args.output or cfg["paths"]["output"] or "generated")
    oc: ObsGenConfig = cfg["obsgen"]
    outputs = {}
    for tid in targets:
        plan = make_retarget_plan(episode, annotation, plugged, tid, args.skip_alignment,
                                  args.skip_action_correction, args.object)
        mesh = plugged.substitute_mesh(tid)
        t0 = time.perf_counter()
        obs = list(generate_observations(episode, plan, mesh, oc, annotation.other_foreground_objects))
        dt = time.perf_counter() - t0
        dest = out_root / f"{episode.episode_id}__{tid}"
        write_generated_episode(plan, obs, dest, oc, extra={"library": str(_lib_path(args, cfg))},
                                gripper_widths=episode.gripper_widths)
        fps = plan.length / dt if dt > 0 else float("inf")
        print(f"{tid}: {plan.length} frames -> {dest}  ({fps:.1f} frames/s)")
        outputs[tid] = {"dir": str(dest), "fps": fps}
    write_run_record(out_root, "generate", {"episode": ep_path / "episode.json", "annotation": ann_path}, cfg,
                     outputs)
    return 0


def cmd_export_ply(args, cfg):
    pts = load_sgpc(args.observation)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_ply(pts, out)
    print(f"wrote {len(pts)} points to {out}")
    write_run_record(out.parent, "export-ply", {"observation": args.observation}, cfg, {"ply": str(out)})
    return 0


def cmd_estimate_cost(args, cfg):
    c: CostConstants = cfg["cost"]
    gen = shapegen_cost(c, args.n_shape, args.n_demo)
    man = manual_cost(c, args.n_shape, args.n_demo)
    ratio = asymptotic_ratio(c)
    xd = crossover_n_demo(c, args.n_shape)
    xs = crossover_n_shape(c, args.n_demo)
    print(f"shapegen cost  T({args.n_shape}, {args.n_demo}) = {gen:g} s")
    print(f"manual cost   T'({args.n_shape}, {args.n_demo}) = {man:g} s")
    print(f"asymptotic ratio t_gen/t_demo = {ratio} ({float(ratio):.4f})")
    print(f"crossover: n_demo >= {xd} at n_shape={args.n_shape}; n_shape >= {xs} at n_demo={args.n_demo}")
    write_run_record(args.run_dir or ".", "estimate-cost", {}, cfg,
                     {"shapegen": gen, "manual": man, "ratio": str(ratio), "crossover_n_demo": xd,
                      "crossover_n_shape": xs})
    return 0


# -- parser ------------------------------------------------------------------


FLAG_MAP = {
    "grid": "train.grid_resolution",
    "cutoff": "train.sample_cutoff",
    "epochs": "train.epochs",
    "sdf_epochs": "train.sdf_epochs",
    "batch_size": "train.batch_size",
    "lr": "train.learning_rate",
    "alpha_pw": "train.alpha_pw",
    "alpha_pp": "train.alpha_pp",
    "n_points": "obsgen.n_points",
    "d_max": "obsgen.d_max",
    "fg_threshold": "obsgen.fg_depth_threshold",
    "t_sdf": "cost.t_sdf",
    "t_wrp": "cost.t_wrp",
    "t_scan": "cost.t_scan",
    "t_demo": "cost.t_demo",
    "t_ann": "cost.t_ann",
    "t_gen": "cost.t_gen",
    "t_collect_per_object": "cost.t_collect_per_object",
    "t_collect_fixed": "cost.t_collect_fixed",
}


def _train_flags(p):
    p.add_argument("--grid", type=int, help="training grid resolution per axis")
    p.add_argument("--cutoff", type=float, help="keep grid samples with |SDF| <= cutoff")
    p.add_argument("--epochs", type=int, help="warp training epochs")
    p.add_argument("--sdf-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, help="warp learning rate")
    p.add_argument("--alpha-pw", type=float)
    p.add_argument("--alpha-pp", type=float)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON project file")
    common.add_argument("--seed", type=int, help="RNG seed for training and sampling")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config value (repeatable)")
    common.add_argument("--run-dir", help="where read-only commands write run.json (default: cwd)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="shapegen", description="Shape-library demonstration generation.")
    ap.add_argument("--version", action="version", version=f"shapegen {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-sdf", parents=[common], help="fit a neural SDF to a mesh")
    p.add_argument("mesh")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--holdout", type=int, default=2000, help="held-out points for the MAE report")
    _train_flags(p)
    p.set_defaults(func=cmd_fit_sdf)

    lib = sub.add_parser("lib", help="shape library curation")
    lsub = lib.add_subparsers(dest="lib_command", required=True)
    p = lsub.add_parser("init", parents=[common])
    p.add_argument("library")
    p.add_argument("--category", required=True)
    p.add_argument("--template", required=True, help="template mesh file")
    p.add_argument("--id", default="template")
    p.add_argument("--force", action="store_true")
    _train_flags(p)
    p.set_defaults(func=cmd_lib_init)
    p = lsub.add_parser("add", parents=[common])
    p.add_argument("library")
    p.add_argument("mesh")
    p.add_argument("--id", required=True)
    _train_flags(p)
    p.set_defaults(func=cmd_lib_add)
    p = lsub.add_parser("plug", parents=[common])
    p.add_argument("library")
    p.add_argument("mesh", help="scanned mesh (object frame, metres)")
    p.add_argument("--probe", type=int, default=2000, help="surface samples for the residual report")
    _train_flags(p)
    p.set_defaults(func=cmd_lib_plug)
    p = lsub.add_parser("list", parents=[common])
    p.add_argument("library")
    p.set_defaults(func=cmd_lib_list)

    p = sub.add_parser("validate-annotation", parents=[common])
    p.add_argument("file")
    p.set_defaults(func=cmd_validate_annotation)

    p = sub.add_parser("generate", parents=[common], help="retarget an episode onto library shapes")
    p.add_argument("episode")
    p.add_argument("library")
    p.add_argument("--targets", default="all", help="comma-separated entry ids, or 'all'")
    p.add_argument("--annotation", help="annotation file (default: <episode>/annotation.json)")
    p.add_argument("--object", help="annotated object to substitute (default: the gripped one)")
    p.add_argument("-o", "--output", help="output root directory")
    p.add_argument("--skip-alignment", action="store_true")
    p.add_argument("--skip-action-correction", action="store_true")
    p.add_argument("--n-points", type=int)
    p.add_argument("--d-max", type=float)
    p.add_argument("--fg-threshold", type=float)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("export-ply", parents=[common])
    p.add_argument("observation")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_export_ply)

    p = sub.add_parser("estimate-cost", parents=[common])
    p.add_argument("--n-shape", type=int, default=15)
    p.add_argument("--n-demo", type=int, default=5)
    for k in ("t_sdf", "t_wrp", "t_scan", "t_demo", "t_ann", "t_gen", "t_collect_per_object", "t_collect_fixed"):
        p.add_argument("--" + k.replace("_", "-"), type=float)
    p.set_defaults(func=cmd_estimate_cost)
    return ap


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ValidationError(f"expected SECTION.KEY=VALUE, got {item!r}", "--set")
        out[key] = value
    for attr, dotted in FLAG_MAP.items():
        v = getattr(args, attr, None)
        if v is not None:
            out[dotted] = v
    if args.seed is not None:
        out["train.rng_seed"] = args.seed
        out["obsgen.rng_seed"] = args.seed
    return out


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.config, overrides=_overrides(args))
        return args.func(args, cfg)
    except (FileFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ShapeGenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
