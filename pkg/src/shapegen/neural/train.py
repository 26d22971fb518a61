"""Training loops for neural SDFs and spatial warpings."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import TrainingDivergedError, ValidationError
from ..geometry.sdf import SdfSampleSet
from .networks import SdfNet, WarpNet

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    alpha_pw: float = 1e-2
    alpha_pp: float = 1.0
    epsilon_pp: float = 0.5
    huber_delta: float = 0.25
    batch_size: int = 8196
    epochs: int = 2
    learning_rate: float = 1e-3
    # step decay: multiply by lr_gamma at each milestone (fraction of total steps)
    lr_gamma: float = 0.3
    lr_milestones: tuple[float, ...] = (0.6, 0.85)
    rng_seed: int = 0
    sdf_epochs: int = 10
    sdf_learning_rate: float = 2e-3
    sdf_batch_size: int = 1024
    # training-sample grid; resolution 256 on the padded unit cube reproduces the reference setup
    grid_resolution: int = 256
    sample_cutoff: float = 0.2
    sdf_arch: dict = field(default_factory=dict)
    warp_arch: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("alpha_pw", "alpha_pp", "epsilon_pp", "huber_delta"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0", name)
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2 (pair loss needs pairs)", "batch_size")
        self.lr_milestones = tuple(self.lr_milestones)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_milestones"] = list(self.lr_milestones)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


class Adam:
    def __init__(self, n: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-10):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params, grad, lr=None):
        self.t += 1
        lr = self.lr if lr is None else lr
        self.m *= self.beta1
        self.m += (1 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        params -= lr * mhat / (np.sqrt(vhat) + self.eps)


def step_decay(base_lr: float, step: int, total: int, gamma: float, milestones) -> float:
    k = sum(step >= m * total for m in milestones)
    return base_lr * gamma ** k


def _batches(n: int, batch_size: int, epochs: int, rng: np.random.Generator):
    for _ in range(epochs):
        perm = rng.permutation(n)
        for s in range(0, n, batch_size):
            b = perm[s:s + batch_size]
            if len(b) >= 2:
                yield b


def _n_steps(n: int, batch_size: int, epochs: int) -> int:
    full, rem = divmod(n, batch_size)
    return epochs * (full + (1 if rem >= 2 else 0))


@dataclass
class FitReport:
    steps: int
    final_loss: float
    mae: float


def sdf_loss_and_grad(net: SdfNet, points, sdf_values, params=None):
    """Mean absolute error and its parameter gradient."""
    pred, cache = net.forward(points, params)
    r = pred - sdf_values
    grads = np.zeros(net.layout.size)
    net.backward(cache, np.sign(r) / len(r), grads, params)
    return float(np.mean(np.abs(r))), grads


# a loss this many times above its first value means the optimizer blew up
DIVERGENCE_FACTOR = 1e6


def _check_divergence(loss, grads, first, step, what):
    if not np.isfinite(loss) or not np.all(np.isfinite(grads)):
        raise TrainingDivergedError(f"{what} diverged at step {step} (loss={loss})")
    if loss > DIVERGENCE_FACTOR * max(first, 1e-6):
        raise TrainingDivergedError(f"{what} diverged at step {step} (loss {loss:.3e}, first {first:.3e})")


def fit_sdf(samples: SdfSampleSet, config: TrainConfig | None = None, return_report: bool = False):
    """Regress a fresh :class:`SdfNet` on ground-truth samples (L1 loss, Adam)."""
    config = config or TrainConfig()
    if len(samples) == 0:
        raise ValidationError("cannot fit an SDF to an empty sample set", "samples")
    rng = np.random.default_rng(config.rng_seed)
    net = SdfNet.initialized(rng, config.sdf_arch, source_mesh=samples.source_mesh)
    opt = Adam(net.layout.size, config.sdf_learning_rate, eps=1e-15)
    total = _n_steps(len(samples), config.sdf_batch_size, config.sdf_epochs)
    step, loss = 0, np.nan
    for b in _batches(len(samples), config.sdf_batch_size, config.sdf_epochs, rng):
        loss, grads = sdf_loss_and_grad(net, samples.points[b], samples.sdf_values[b])
        first = loss if step == 0 else first
        _check_divergence(loss, grads, first, step, "SDF fit")
        lr = step_decay(config.sdf_learning_rate, step, total, config.lr_gamma, config.lr_milestones)
        opt.step(net.params, grads, lr)
        step += 1
    mae = float(np.mean(np.abs(net(samples.points) - samples.sdf_values)))
    log.info("fit_sdf %s: %d steps, train MAE %.3g", samples.source_mesh, step, mae)
    if return_report:
        return net, FitReport(step, float(loss), mae)
    return net


# -- warping losses ----------------------------------------------------------


def huber(r, delta):
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def pair_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Disjoint random pairs ``(perm[2k], perm[2k+1])`` within a batch."""
    perm = rng.permutation(n)
    return perm[: n - n % 2].reshape(-1, 2)


@dataclass
class WarpLoss:
    total: float
    sdf: float
    pw: float
    pp: float


def warp_loss_and_grad(warp: WarpNet, target: SdfNet, points, sdf_values, pairs, config: TrainConfig,
                       params=None, need_grad=True):
    """Weighted warping objective and its gradient with respect to the warp parameters.

    ``L = L_sdf + alpha_pw * L_pw + alpha_pp * L_pp`` where

    * ``L_sdf`` is the mean of ``|sdf_i - f_target(W(x_i))|``,
    * ``L_pw`` is the mean Huber penalty on the displacement length ``|W(x) - x|``,
    * ``L_pp`` is the mean over ``pairs`` of
      ``max(|dx_1 - dx_2| / |x_1 - x_2| - epsilon, 0)``.

    The target network is frozen; only its input gradient is used.
    """
    x = np.asarray(points, dtype=np.float64)
    n = len(x)
    y, wcache = warp.forward(x, params)
    z, tcache = target.forward(y)
    r = sdf_values - z
    l_sdf = float(np.mean(np.abs(r)))

    disp = y - x
    dn = np.linalg.norm(disp, axis=1)
    l_pw = float(np.mean(huber(dn, config.huber_delta)))

    i, j = pairs[:, 0], pairs[:, 1]
    dd = disp[i] - disp[j]
    ddn = np.linalg.norm(dd, axis=1)
    dx = np.linalg.norm(x[i] - x[j], axis=1)
    valid = dx > 0
    ratio = np.where(valid, ddn / np.where(valid, dx, 1.0), 0.0)
    active = valid & (ratio > config.epsilon_pp)
    n_pairs = max(len(pairs), 1)
    l_pp = float(np.sum(np.where(active, ratio - config.epsilon_pp, 0.0)) / n_pairs)

    total = l_sdf + config.alpha_pw * l_pw + config.alpha_pp * l_pp
    loss = WarpLoss(total, l_sdf, l_pw, l_pp)
    if not need_grad:
        return loss, None

    # dL/dy from each term; displacement terms act on y since x is fixed
    g_z = -np.sign(r) / n
    g_y = target.backward(tcache, g_z)
    scale = np.where(dn <= config.huber_delta, 1.0,
                     config.huber_delta / np.where(dn > 0, dn, 1.0))
    g_y = g_y + config.alpha_pw * (scale[:, None] * disp) / n
    if np.any(active):
        coef = np.where(active, 1.0 / (np.where(ddn > 0, ddn, 1.0) * np.where(valid, dx, 1.0)), 0.0)
        gp = (config.alpha_pp / n_pairs) * coef[:, None] * dd
        np.add.at(g_y, i, gp)
        np.add.at(g_y, j, -gp)
    grads = np.zeros(warp.layout.size)
    warp.backward(wcache, g_y, grads, params)
    return loss, grads


@dataclass
class WarpReport:
    steps: int
    final: WarpLoss
    history: list = field(default_factory=list)


def train_warp(source_samples: SdfSampleSet, target: SdfNet, config: TrainConfig | None = None,
               return_report: bool = False):
    """Train a warping from the source shape's samples onto a frozen target SDF network."""
    config = config or TrainConfig()
    if len(source_samples) < 2:
        raise ValidationError("need at least two source samples", "source_samples")
    rng = np.random.default_rng(config.rng_seed)
    warp = WarpNet.initialized(rng, config.warp_arch, source=source_samples.source_mesh,
                               target=target.source_mesh)
    opt = Adam(warp.layout.size, config.learning_rate)
    total = _n_steps(len(source_samples), config.batch_size, config.epochs)
    history = []
    step = 0
    loss = None
    for b in _batches(len(source_samples), config.batch_size, config.epochs, rng):
        pairs = pair_permutation(len(b), rng)
        loss, grads = warp_loss_and_grad(warp, target, source_samples.points[b], source_samples.sdf_values[b],
                                         pairs, config)
        first = loss.total if step == 0 else first
        _check_divergence(loss.total, grads, first, step, "warp training")
        lr = step_decay(config.learning_rate, step, total, config.lr_gamma, config.lr_milestones)
        opt.step(warp.params, grads, lr)
        history.append(loss.total)
        step += 1
    log.info("train_warp %s->%s: %d steps, final loss %.3g", warp.source, warp.target, step,
             loss.total if loss else float("nan"))
    if return_report:
        return warp, WarpReport(step, loss, history)
    return warp
