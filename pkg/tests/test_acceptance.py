"""Acceptance criteria, one test each.

Every test records ``(passed, detail)`` in ``conftest.ACCEPTANCE`` before
asserting; the terminal summary prints one line per criterion. Determinism
(criterion 11) is checked by rerunning the training and generation steps of
criteria 2, 3 and 8 and comparing bytes with the first run.
"""

import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from shapegen.alignment import correct_actions, gripper_correction, make_retarget_plan, solve_alignment
from shapegen.annotation import annotation_from_dict, keypoints_at, parse_annotation, resolve_ditto
from shapegen.cli import main
from shapegen.costmodel import CostConstants, asymptotic_ratio, manual_cost, shapegen_cost
from shapegen.episode import load_episode
from shapegen.errors import ValidationError
from shapegen.geometry import box, brute_sdf, icosphere, nearest_surface_point, sample_training_grid
from shapegen.library import add_shape, composite_warp, refine_points
from shapegen.neural import (
    TrainConfig,
    WarpNet,
    eval_sdf,
    fit_sdf,
    grad_sdf,
    net_to_bytes,
    pair_permutation,
    train_warp,
    warp_loss_and_grad,
)
from shapegen.obsgen import ObsGenConfig, chamfer_distance, load_generated_episode, source_observation
from shapegen.se3 import fit_rigid, random_se3

import conftest
from conftest import ELLIPSOID_CONFIG, GRID, IDENTITY_CONFIG, SDF_CONFIG
from test_library import band_points
from test_neural import rel_err, smooth_probes

EXAMPLE = Path(__file__).parent / "data" / "mug_pink_annotation.json"
TINY = TrainConfig(grid_resolution=24, sdf_epochs=2, epochs=1, batch_size=512)


def record(key, ok, detail):
    conftest.ACCEPTANCE[key] = (bool(ok), detail)
    assert ok, f"criterion {key}: {detail}"


def checks(*pairs):
    """``pairs`` of (name, bool); returns (all passed, comma-joined failures)."""
    failed = [name for name, ok in pairs if not ok]
    return not failed, ("failed: " + ", ".join(failed)) if failed else ""


# -- 1: SDF oracle -------------------------------------------------------------------


def test_criterion_01_sdf_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(100)
    p = rng.uniform(-0.05, 1.05, size=(1000, 3))
    sphere = icosphere(4, 0.5, (0.5, 0.5, 0.5))
    cube = box((0, 0, 0), (1, 1, 1))
    analytic_sphere = np.linalg.norm(p - 0.5, axis=1) - 0.5
    q = np.abs(p - 0.5) - 0.5
    analytic_cube = np.linalg.norm(np.maximum(q, 0), axis=1) + np.minimum(q.max(axis=1), 0)
    mae_s = np.mean(np.abs(brute_sdf(p, sphere) - analytic_sphere))
    mae_c = np.mean(np.abs(brute_sdf(p, cube) - analytic_cube))
    on_s = np.max(np.abs(brute_sdf(nearest_surface_point(p, sphere), sphere)))
    on_c = np.max(np.abs(brute_sdf(nearest_surface_point(p, cube), cube)))
    dt = time.perf_counter() - t0
    ok, why = checks(("sphere MAE", mae_s < 2e-3), ("cube MAE", mae_c < 2e-3),
                     ("sphere projection", on_s < 1e-9), ("cube projection", on_c < 1e-9), ("runtime", dt < 10))
    record("1", ok, f"MAE sphere {mae_s:.2e} cube {mae_c:.2e}; projected |SDF| <= {max(on_s, on_c):.1e}; "
                    f"{dt:.1f} s {why}")


# -- 2: neural fidelity ----------------------------------------------------------------


def test_criterion_02_neural_fidelity(sphere_mesh, sphere_net):
    t0 = time.perf_counter()
    net = fit_sdf(sample_training_grid(sphere_mesh, GRID), SDF_CONFIG)
    dt_fit = time.perf_counter() - t0
    conftest.ACCEPTANCE["11.fit"] = (net_to_bytes(net) == net_to_bytes(sphere_net), "SDF refit bytes")

    p = np.random.default_rng(7).uniform(0.05, 0.95, size=(4000, 3))
    d = brute_sdf(p, sphere_mesh)
    band = np.abs(d) <= 0.2
    mae = np.mean(np.abs(net(p[band]) - d[band]))

    h = 1e-4
    probes = smooth_probes(net, np.random.default_rng(1), 100, h)
    analytic = grad_sdf(net, probes)
    worst_in = max(rel_err(a, [(eval_sdf(net, x + h * e) - eval_sdf(net, x - h * e)) / (2 * h) for e in np.eye(3)])
                   for x, a in zip(probes, analytic))

    rng = np.random.default_rng(2)
    x = smooth_probes(net, rng, 32, 0.0)
    c = rng.normal(size=len(x))
    params = net.params.copy()
    _, cache = net.forward(x, params)
    grads = np.zeros_like(params)
    net.backward(cache, c, grads, params)
    idx = rng.choice(np.flatnonzero(np.abs(grads) > 1e-6 * np.abs(grads).max()), size=100, replace=False)
    worst_p = 0.0
    for k in idx:
        pp, pm = params.copy(), params.copy()
        pp[k] += 1e-5
        pm[k] -= 1e-5
        num = (c @ net.forward(x, pp)[0] - c @ net.forward(x, pm)[0]) / 2e-5
        worst_p = max(worst_p, rel_err(grads[k], num))
    dt = time.perf_counter() - t0
    ok, why = checks(("MAE", mae < 5e-3), ("input gradient", worst_in < 1e-4),
                     ("parameter gradient", worst_p < 1e-4), ("runtime", dt < 300))
    record("2", ok, f"held-out MAE {mae:.2e}; gradient rel. err input {worst_in:.1e} param {worst_p:.1e}; "
                    f"fit {dt_fit:.0f} s, total {dt:.0f} s {why}")


# -- 3: warping ------------------------------------------------------------------------


def test_criterion_03_warping(sphere_mesh, sphere_samples, sphere_net, ellipsoid_net, ellipsoid_warp, identity_warp):
    x = sphere_mesh.sample_surface(2000, np.random.default_rng(0))

    t0 = time.perf_counter()
    ident = train_warp(sphere_samples, sphere_net, IDENTITY_CONFIG)
    dt_id = time.perf_counter() - t0
    disp = np.mean(np.linalg.norm(ident(x) - x, axis=1))

    t0 = time.perf_counter()
    ell = train_warp(sphere_samples, ellipsoid_net, ELLIPSOID_CONFIG)
    dt_ell = time.perf_counter() - t0
    resid = np.mean(np.abs(ellipsoid_net(ell(x))))

    same = (net_to_bytes(ident) == net_to_bytes(identity_warp[0]) and
            net_to_bytes(ell) == net_to_bytes(ellipsoid_warp[0]))
    conftest.ACCEPTANCE["11.warp"] = (same, "identity and ellipsoid warp retrain bytes")

    trans = WarpNet()
    trans.params[trans.stages[-1].layers[-1].b_slice] = [0.1, -0.2, 0.05]
    b = np.arange(512)
    pairs = pair_permutation(len(b), np.random.default_rng(0))
    pts, vals = sphere_samples.points[b], sphere_samples.sdf_values[b]
    l_trans, _ = warp_loss_and_grad(trans, sphere_net, pts, vals, pairs, TrainConfig(), need_grad=False)
    l_ident, _ = warp_loss_and_grad(WarpNet(), sphere_net, pts, vals, pairs, TrainConfig(), need_grad=False)
    ok, why = checks(("identity displacement", disp < 2e-2), ("ellipsoid residual", resid < 1e-2),
                     ("L_pp translation", l_trans.pp == 0.0), ("L_pw identity", l_ident.pw == 0.0),
                     ("runtime", max(dt_id, dt_ell) < 600))
    record("3", ok, f"identity displacement {disp:.2e}; ellipsoid mean |f| {resid:.2e}; L_pp {l_trans.pp}, "
                    f"L_pw {l_ident.pw}; {dt_id:.0f} s / {dt_ell:.0f} s {why}")


# -- 4: refinement ---------------------------------------------------------------------


def test_criterion_04_refinement(sphere_mesh, sphere_net):
    p = band_points(sphere_mesh, sphere_net, 500, 0.01, 0.05)
    true = np.abs(brute_sdf(p, sphere_mesh))
    in_band = bool(np.all((true >= 0.01 - 1e-3) & (true <= 0.05 + 1e-3)))
    res = refine_points(p, sphere_net)
    good = res.converged & (res.residual < 1e-3) & (res.iterations <= 32)
    prev = np.abs(sphere_net(p))
    monotone = True
    for k in range(1, 33):
        cur = refine_points(p, sphere_net, max_iters=k).residual
        monotone &= bool(np.all(cur[res.converged] <= prev[res.converged]))
        prev = cur
    ok, why = checks(("band", in_band), ("converged fraction", good.mean() >= 0.99), ("monotone", monotone))
    record("4", ok, f"{100 * good.mean():.1f}% converged to |f| < 1e-3 within 32 iterations; "
                    f"max iterations {res.iterations.max()}; monotone {monotone} {why}")


# -- 5: composite warp and O(1) curation ---------------------------------------------------


def test_criterion_05_composite_and_curation(identity_library):
    x = identity_library.scanned_normalized.sample_surface(1000, np.random.default_rng(3))
    res = composite_warp(identity_library, "ball", x)
    drift = np.max(np.linalg.norm(res.points - x, axis=1))

    base = identity_library.base
    big = base
    for i in range(7):
        big = type(base)(**{**big.__dict__, "entries": {**big.entries, f"dup{i}": base.entries["ball"]}})
    new = icosphere(2, 0.4)
    add_shape(base, new, "new", TINY)  # warm caches
    times = {1: [], 8: []}
    steps = {}
    for _ in range(5):
        for size, lib in ((1, base), (8, big)):
            t0 = time.perf_counter()
            _, rep = add_shape(lib, new, "new", TINY, return_report=True)
            times[size].append(time.perf_counter() - t0)
            steps[size] = (rep.sdf_steps, rep.warp_steps)
    ratio = np.median(times[8]) / np.median(times[1])
    ok, why = checks(("composite drift", res.converged.all() and drift < 2e-2), ("step counts", steps[1] == steps[8]),
                     ("wall-clock ratio", ratio <= 1.2))
    record("5", ok, f"max composite drift {drift:.2e}; steps {steps[1]} vs {steps[8]}; "
                    f"median time ratio 8:1 = {ratio:.3f} {why}")


# -- 6: alignment and action algebra --------------------------------------------------------


def test_criterion_06_alignment_algebra():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    single = 0.0
    for _ in range(1000):
        s, w = rng.normal(size=(1, 3)), rng.normal(size=(1, 3))
        single = max(single, np.max(np.abs(solve_alignment(s, w, "simple").apply(w) - s)))
    rigid = 0.0
    for _ in range(1000):
        T = random_se3(rng)
        src = rng.normal(size=(8, 3))
        rigid = max(rigid, np.max(np.abs(fit_rigid(src, T.apply(src)).matrix() - T.matrix())))
    conj = 0.0
    identity_blocks = True
    for _ in range(1000):
        c2b, a = random_se3(rng), random_se3(rng)
        T_a, T_j = [random_se3(rng, 0.3)], [random_se3(rng, 0.3)]
        g = gripper_correction(T_a, T_j, rng.normal(size=3) * 0.05, rng.normal(size=3) * 0.05)
        identity_blocks &= bool(np.array_equal(g[0].rotation, np.eye(3)))
        fast = correct_actions([a], g, c2b)[0].matrix()
        full = c2b.matrix() @ g[0].matrix() @ np.linalg.inv(c2b.matrix()) @ a.matrix()
        conj = max(conj, np.max(np.abs(fast - full)))
    dt = time.perf_counter() - t0
    ok, why = checks(("singleton", single <= 1e-12), ("fit_rigid", rigid <= 1e-9), ("conjugation", conj <= 1e-12),
                     ("T^g rotation", identity_blocks), ("runtime", dt < 5))
    record("6", ok, f"singleton err {single:.1e}; rigid err {rigid:.1e}; conjugation err {conj:.1e}; "
                    f"T^g rotations identity {identity_blocks}; {dt:.1f} s {why}")


# -- 7: annotation ------------------------------------------------------------------------


def test_criterion_07_annotation():
    ann = resolve_ditto(parse_annotation(EXAMPLE))
    mug = ann.objects["mug_pink"]
    f0, f100, _ = mug.functionals
    (a, b), s = keypoints_at(mug, 110)
    raw = {"objects": {"m": {"category": "mug", "gripped": True, "functionals": []}}}
    try:
        annotation_from_dict(raw)
        path = None
    except ValidationError as exc:
        path = exc.path
    ok, why = checks(("ditto", f100.same_keypoints(f0) and f100.tstamp == 100),
                     ("fraction", (a.tstamp, b.tstamp) == (100, 115) and abs(s - 2 / 3) < 1e-15),
                     ("field path", path == "objects.m.gripper_keypoint"))
    record("7", ok, f"example parses; ditto resolved; fraction at t=110 = {s!r}; error path {path!r} {why}")


# -- 8: end-to-end self-substitution --------------------------------------------------------


def _generate(root, lib_dir, out):
    t0 = time.perf_counter()
    code = main(["generate", str(root), str(lib_dir), "--targets", "ball", "-o", str(out),
                 "--skip-alignment", "--skip-action-correction"])
    return code, time.perf_counter() - t0


def test_criterion_08_self_substitution(scene_dir, identity_library_dir, tmp_path):
    root, _ = scene_dir
    code, dt = _generate(root, identity_library_dir, tmp_path / "a")
    assert code == 0
    ep = load_episode(root)
    gen = load_generated_episode(tmp_path / "a" / "sphere_pick__ball")
    cfg = ObsGenConfig()
    worst, counts, reach = 0.0, set(), 0.0
    for t in range(ep.length):
        obs = gen.observation(t).astype(np.float64)
        counts.add(len(obs))
        reach = max(reach, np.linalg.norm(obs, axis=1).max())
        worst = max(worst, chamfer_distance(obs, source_observation(ep, t, cfg)))

    code2, _ = _generate(root, identity_library_dir, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                   if p.is_file() and p.name != "run.json")
    same = code2 == 0 and all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    conftest.ACCEPTANCE["11.generate"] = (same, f"{len(files)} generated files")

    # float32 storage can round 0.8 up by half an ulp
    ok, why = checks(("frames", gen.length == 50 == ep.length), ("chamfer", worst < 5e-3), ("count", counts == {8192}),
                     ("range", reach <= np.float32(0.8)), ("runtime", dt < 120))
    record("8", ok, f"50 frames, worst chamfer {worst:.2e} m, points per frame {sorted(counts)}, "
                    f"max range {reach:.4f} m, {dt:.0f} s {why}")


# -- 9: ablation flags -------------------------------------------------------------------


def test_criterion_09_ablations(scene_dir, identity_library):
    root, scene = scene_dir
    ep = load_episode(root)
    ann = scene.annotation
    full = make_retarget_plan(ep, ann, identity_library, "ball")
    no_align = make_retarget_plan(ep, ann, identity_library, "ball", skip_alignment=True)
    no_act = make_retarget_plan(ep, ann, identity_library, "ball", skip_action_correction=True)
    both = make_retarget_plan(ep, ann, identity_library, "ball", True, True)
    I = np.eye(4)
    canonical = all(np.array_equal(T.matrix(), I) for T in no_align.T_tilde) and no_align.T_hat is None
    src = [a.matrix().tobytes() for a in ep.actions]
    acts = [a.matrix().tobytes() for a in no_act.actions] == src
    poses = all(np.array_equal(j.matrix(), a.matrix()) for j, a in zip(both.T_j, ep.pose_tracks["ball"]))
    both_ok = poses and [a.matrix().tobytes() for a in both.actions] == src and \
        all(np.array_equal(g.matrix(), I) for g in both.T_g)
    aligned = not all(np.array_equal(T.matrix(), I) for T in full.T_tilde)
    ok, why = checks(("canonical-only alignment", canonical and aligned), ("actions identical", acts),
                     ("both flags", both_ok))
    record("9", ok, f"skip-alignment T~ identity {canonical}; skip-action-correction actions identical {acts}; "
                    f"both: poses and actions equal source {both_ok} {why}")


# -- 10: cost model ------------------------------------------------------------------------


def test_criterion_10_cost_model():
    c = CostConstants()
    gen, man, ratio = shapegen_cost(c, 15, 5), manual_cost(c, 15, 5), asymptotic_ratio(c)
    ok, why = checks(("shapegen", gen == 5355), ("manual", man == 4500 + c.t_collect(15)),
                     ("ratio", ratio == Fraction(1, 3)))
    record("10", ok, f"shapegen {gen:g} s, manual {man:g} s, ratio {ratio} {why}")


# -- 11: determinism ----------------------------------------------------------------------


def test_criterion_11_determinism():
    parts = {k: conftest.ACCEPTANCE.get(k) for k in ("11.fit", "11.warp", "11.generate")}
    if any(v is None for v in parts.values()):
        pytest.skip("needs criteria 2, 3 and 8 to run first")
    ok = all(v[0] for v in parts.values())
    record("11", ok, "; ".join(f"{v[1]}: {'identical' if v[0] else 'DIFFER'}" for v in parts.values()))
