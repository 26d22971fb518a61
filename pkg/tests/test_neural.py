import numpy as np
import pytest

from shapegen.errors import CorruptFileError, TrainingDivergedError, ValidationError, VersionError
from shapegen.geometry import SdfSampleSet, brute_sdf, icosphere, sample_training_grid
from shapegen.geometry.sdf import grid_axes
from shapegen.neural import (
    SdfNet,
    TrainConfig,
    WarpNet,
    eval_sdf,
    fit_sdf,
    forward_warp,
    grad_sdf,
    huber,
    load_net,
    net_from_bytes,
    net_to_bytes,
    pair_permutation,
    save_net,
    train_warp,
    warp_loss_and_grad,
)
from shapegen.neural.checkpoint import read_header

from conftest import SDF_CONFIG


def rel_err(a, n):
    a, n = np.asarray(a), np.asarray(n)
    return np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-300)


def smooth_probes(net, rng, n, h, lo=0.05, hi=0.95):
    """Random points whose +-h stencil stays inside one cell at every grid level."""
    out = []
    while len(out) < n:
        p = rng.uniform(lo, hi, size=3)
        ok = True
        for axis in range(3):
            for s in (-h, h):
                q = p.copy()
                q[axis] += s
                for c0, c1 in zip(net.encoding.cell_coords(p), net.encoding.cell_coords(q)):
                    if np.any(np.floor(c0) != np.floor(c1)):
                        ok = False
        if ok:
            out.append(p)
    return np.array(out)


def surface_points(mesh, n, seed=0):
    return mesh.sample_surface(n, np.random.default_rng(seed))


# -- SdfNet ----------------------------------------------------------------------


def test_fit_sdf_held_out_mae(sphere_net, sphere_mesh):
    p = np.random.default_rng(7).uniform(0.05, 0.95, size=(4000, 3))
    d = brute_sdf(p, sphere_mesh)
    band = np.abs(d) <= 0.2
    mae = np.mean(np.abs(sphere_net(p[band]) - d[band]))
    assert mae < 5e-3


def test_fit_sdf_plane():
    xs, ys, zs = grid_axes(32)
    g = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1).reshape(-1, 3)
    sdf = g[:, 2] - 0.5
    keep = np.abs(sdf) <= 0.2
    s = SdfSampleSet(g[keep], sdf[keep], "plane")
    net, report = fit_sdf(s, TrainConfig(sdf_epochs=20), return_report=True)
    assert report.mae < 1e-3
    assert report.steps > 0


def test_fit_sdf_empty():
    with pytest.raises(ValidationError):
        fit_sdf(SdfSampleSet(np.zeros((0, 3)), np.zeros(0), "empty"))


def test_fit_sdf_divergence_reported():
    s = SdfSampleSet(np.full((8, 3), 0.5), np.full(8, np.nan), "nan")
    with pytest.raises(TrainingDivergedError):
        fit_sdf(s, TrainConfig(sdf_epochs=1))


def test_eval_sdf_center_and_determinism():
    # radius inside the sampled band so the centre itself is a training target
    small = icosphere(3, 0.15, (0.5, 0.5, 0.5))
    net = fit_sdf(sample_training_grid(small, 64), SDF_CONFIG)
    v = eval_sdf(net, [0.5, 0.5, 0.5])
    assert abs(v - (-0.15)) < 1e-2
    assert eval_sdf(net, [0.5, 0.5, 0.5]) == v
    assert np.isfinite(eval_sdf(net, [3.0, -2.0, 0.5]))


def test_grad_sdf_points_outward(sphere_net):
    g = grad_sdf(sphere_net, [0.8, 0.5, 0.5])
    assert g @ np.array([1.0, 0, 0]) / np.linalg.norm(g) >= 0.99


def test_zero_params_zero_gradient():
    net = SdfNet()
    _, g = net.value_and_grad(np.random.default_rng(0).uniform(size=(20, 3)))
    assert np.all(g == 0)


def test_input_gradient_matches_finite_differences(sphere_net):
    h = 1e-4
    probes = smooth_probes(sphere_net, np.random.default_rng(1), 100, h)
    analytic = grad_sdf(sphere_net, probes)
    worst = 0.0
    for p, a in zip(probes, analytic):
        num = np.array([(eval_sdf(sphere_net, p + h * e) - eval_sdf(sphere_net, p - h * e)) / (2 * h)
                        for e in np.eye(3)])
        worst = max(worst, rel_err(a, num))
    assert worst < 1e-4


def test_parameter_gradient_matches_finite_differences(sphere_net):
    rng = np.random.default_rng(2)
    x = smooth_probes(sphere_net, rng, 32, 0.0)
    c = rng.normal(size=len(x))
    params = sphere_net.params.copy()

    def loss(p):
        return float(c @ sphere_net.forward(x, p)[0])

    out, cache = sphere_net.forward(x, params)
    grads = np.zeros_like(params)
    sphere_net.backward(cache, c, grads, params)
    candidates = np.flatnonzero(np.abs(grads) > 1e-6 * np.abs(grads).max())
    idx = rng.choice(candidates, size=100, replace=False)
    h = 1e-5
    for k in idx:
        pp, pm = params.copy(), params.copy()
        pp[k] += h
        pm[k] -= h
        num = (loss(pp) - loss(pm)) / (2 * h)
        assert rel_err(grads[k], num) < 1e-4


# -- WarpNet ---------------------------------------------------------------------


def test_zero_warp_is_identity():
    x = np.random.default_rng(0).normal(size=(50, 3))
    np.testing.assert_array_equal(forward_warp(WarpNet(), x), x)
    fresh = WarpNet.initialized(np.random.default_rng(1))
    np.testing.assert_array_equal(fresh(x), x)
    np.testing.assert_array_equal(fresh(x[:1]), fresh(x[:1]))


def _random_warp(seed, scale=0.05):
    rng = np.random.default_rng(seed)
    w = WarpNet.initialized(rng)
    w.params = w.params + scale * rng.normal(size=w.params.shape) * (w.params == 0)
    return w


def test_warp_parameter_gradient_matches_finite_differences(sphere_samples, sphere_net):
    rng = np.random.default_rng(3)
    warp = _random_warp(4)
    b = rng.choice(len(sphere_samples), 64, replace=False)
    x, s = sphere_samples.points[b], sphere_samples.sdf_values[b] + 0.05
    pairs = pair_permutation(len(b), rng)
    cfg = TrainConfig()
    params = warp.params.copy()
    _, grads = warp_loss_and_grad(warp, sphere_net, x, s, pairs, cfg, params)
    idx = rng.choice(len(params), size=100, replace=False)
    h = 1e-5
    num = np.empty(len(idx))
    for n, k in enumerate(idx):
        pp, pm = params.copy(), params.copy()
        pp[k] += h
        pm[k] -= h
        lp = warp_loss_and_grad(warp, sphere_net, x, s, pairs, cfg, pp, need_grad=False)[0].total
        lm = warp_loss_and_grad(warp, sphere_net, x, s, pairs, cfg, pm, need_grad=False)[0].total
        num[n] = (lp - lm) / (2 * h)
    assert rel_err(grads[idx], num) < 1e-4


def test_loss_decomposition(sphere_samples, sphere_net):
    rng = np.random.default_rng(5)
    warp = _random_warp(6)
    cfg = TrainConfig(alpha_pw=0.3, alpha_pp=2.0)
    b = rng.choice(len(sphere_samples), 128, replace=False)
    loss, _ = warp_loss_and_grad(warp, sphere_net, sphere_samples.points[b], sphere_samples.sdf_values[b],
                                 pair_permutation(128, rng), cfg, need_grad=False)
    assert loss.pp > 0 and loss.pw > 0
    assert loss.total == loss.sdf + 0.3 * loss.pw + 2.0 * loss.pp


def test_pair_loss_zero_for_translation(sphere_samples, sphere_net):
    warp = WarpNet()
    last = warp.stages[-1].layers[-1]
    warp.params[last.b_slice] = [0.1, -0.2, 0.05]
    x = sphere_samples.points[:256]
    np.testing.assert_allclose(warp(x) - x, np.tile([0.1, -0.2, 0.05], (256, 1)), atol=1e-15)
    loss, _ = warp_loss_and_grad(warp, sphere_net, x, sphere_samples.sdf_values[:256],
                                 pair_permutation(256, np.random.default_rng(0)), TrainConfig(), need_grad=False)
    assert loss.pp == 0.0


def test_pointwise_loss_zero_for_identity(sphere_samples, sphere_net):
    loss, _ = warp_loss_and_grad(WarpNet(), sphere_net, sphere_samples.points[:256], sphere_samples.sdf_values[:256],
                                 pair_permutation(256, np.random.default_rng(0)), TrainConfig(), need_grad=False)
    assert loss.pw == 0.0
    assert huber(np.array([0.0]), 0.25)[0] == 0.0


def test_huber_branches():
    np.testing.assert_allclose(huber(np.array([0.1, 1.0]), 0.25), [0.005, 0.25 * (1.0 - 0.125)])


def test_pairs_are_disjoint():
    p = pair_permutation(9, np.random.default_rng(0))
    assert p.shape == (4, 2) and len(np.unique(p)) == 8


def test_batch_size_validated():
    with pytest.raises(ValidationError):
        TrainConfig(batch_size=1)
    with pytest.raises(ValidationError):
        TrainConfig(alpha_pp=-1)


def test_identity_warp_stays_put(identity_warp, sphere_mesh):
    warp, _ = identity_warp
    x = surface_points(sphere_mesh, 2000)
    assert np.mean(np.linalg.norm(warp(x) - x, axis=1)) < 2e-2


def test_sphere_to_ellipsoid(ellipsoid_warp, ellipsoid_net, sphere_mesh, ellipsoid_mesh):
    warp, report = ellipsoid_warp
    x = surface_points(sphere_mesh, 2000)
    res = np.abs(ellipsoid_net(warp(x)))
    assert np.mean(res) < 1e-2
    assert np.percentile(res, 90) < 2e-2
    pole = warp(np.array([[0.5, 0.5, 0.8]]))
    assert abs(brute_sdf(pole[0], ellipsoid_mesh)) < 1e-2
    assert report.history[-1] < report.history[0]


# -- determinism and checkpoints ---------------------------------------------------


def test_training_is_reproducible(sphere_mesh):
    s = sample_training_grid(sphere_mesh, 24)
    cfg = TrainConfig(sdf_epochs=2, sdf_batch_size=512, epochs=1, batch_size=512)
    a = fit_sdf(s, cfg)
    b = fit_sdf(s, cfg)
    assert net_to_bytes(a) == net_to_bytes(b)
    assert net_to_bytes(train_warp(s, a, cfg)) == net_to_bytes(train_warp(s, b, cfg))


def test_checkpoint_round_trip(tmp_path, sphere_net):
    save_net(sphere_net, tmp_path / "n.sgnet", extra={"note": 1})
    back = load_net(tmp_path / "n.sgnet")
    assert net_to_bytes(back) == net_to_bytes(sphere_net)
    assert read_header(tmp_path / "n.sgnet")["extra"] == {"note": 1}
    w = _random_warp(0)
    w.source, w.target = "a", "b"
    w2 = net_from_bytes(net_to_bytes(w))
    assert (w2.source, w2.target) == ("a", "b")
    np.testing.assert_array_equal(w2.params, w.params)


def test_checkpoint_errors(sphere_net):
    data = net_to_bytes(sphere_net)
    with pytest.raises(CorruptFileError):
        net_from_bytes(data[:-8])
    with pytest.raises(CorruptFileError):
        net_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(VersionError):
        net_from_bytes(data.replace(b'"format_version": 1', b'"format_version": 9'))


def test_sdf_config_round_trip():
    d = SDF_CONFIG.to_dict()
    assert TrainConfig.from_dict(d) == SDF_CONFIG
    with pytest.raises(ValidationError):
        TrainConfig.from_dict({"nope": 1})
