"""Neural SDF and spatial warping networks."""

from __future__ import annotations

import numpy as np

from ..geometry.sdf import DEFAULT_CUBE
from .layers import MLP, DenseGridEncoding, ParamLayout


class SdfNet:
    """Dense multiresolution grid encoding followed by a small MLP head.

    ``arch`` keys: ``levels``, ``features``, ``base_resolution``,
    ``finest_resolution``, ``hidden``, ``cube``.
    """

    kind = "sdf"
    default_arch = {
        "levels": 4,
        "features": 2,
        "base_resolution": 8,
        "finest_resolution": 64,
        "hidden": 64,
        "cube": [list(DEFAULT_CUBE[0]), list(DEFAULT_CUBE[1])],
    }

    def __init__(self, arch: dict | None = None, params: np.ndarray | None = None, source_mesh: str = ""):
        self.arch = {**self.default_arch, **(arch or {})}
        a = self.arch
        self.layout = ParamLayout()
        self.encoding = DenseGridEncoding(self.layout, a["levels"], a["features"], a["base_resolution"],
                                          a["finest_resolution"], a["cube"])
        self.head = MLP(self.layout, "head", [self.encoding.out_dim, a["hidden"], 1], "softplus")
        self.params = np.zeros(self.layout.size) if params is None else np.asarray(params, dtype=np.float64)
        if self.params.shape != (self.layout.size,):
            raise ValueError(f"expected {self.layout.size} parameters, got {self.params.shape}")
        self.source_mesh = source_mesh

    @classmethod
    def initialized(cls, rng: np.random.Generator, arch: dict | None = None, source_mesh: str = "") -> SdfNet:
        net = cls(arch, source_mesh=source_mesh)
        net.encoding.init(net.params, rng)
        net.head.init(net.params, rng)
        return net

    def forward(self, x, params=None):
        p = self.params if params is None else params
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        feat, c_enc = self.encoding.forward(p, x)
        out, c_head = self.head.forward(p, feat)
        return out[:, 0], (c_enc, c_head)

    def backward(self, cache, grad_out, grads=None, params=None):
        """Backpropagate ``dL/d(output)``; fills ``grads`` if given, returns ``dL/dx``."""
        p = self.params if params is None else params
        c_enc, c_head = cache
        g = self.head.backward(p, grads, c_head, np.asarray(grad_out, dtype=np.float64)[:, None])
        return self.encoding.backward(p, grads, c_enc, g)

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def value_and_grad(self, x) -> tuple[np.ndarray, np.ndarray]:
        v, cache = self.forward(x)
        return v, self.backward(cache, np.ones_like(v))


class WarpNet:
    """``K`` residual stages, each adding an MLP-predicted displacement.

    With all parameters zero every stage outputs zero, so the map is the
    identity. Fresh networks start at the identity too: hidden layers are
    random, output layers zero.
    """

    kind = "warp"
    default_arch = {"stages": 4, "width": 128, "hidden_layers": 2}

    def __init__(self, arch: dict | None = None, params: np.ndarray | None = None, source: str = "",
                 target: str = ""):
        self.arch = {**self.default_arch, **(arch or {})}
        a = self.arch
        self.layout = ParamLayout()
        sizes = [3] + [a["width"]] * a["hidden_layers"] + [3]
        self.stages = [MLP(self.layout, f"stage{k}", sizes, "tanh") for k in range(a["stages"])]
        self.params = np.zeros(self.layout.size) if params is None else np.asarray(params, dtype=np.float64)
        if self.params.shape != (self.layout.size,):
            raise ValueError(f"expected {self.layout.size} parameters, got {self.params.shape}")
        self.source, self.target = source, target

    @classmethod
    def initialized(cls, rng: np.random.Generator, arch: dict | None = None, source="", target="") -> WarpNet:
        net = cls(arch, source=source, target=target)
        for st in net.stages:
            st.init(net.params, rng, zero_last=True)
        return net

    def forward(self, x, params=None):
        p = self.params if params is None else params
        y = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        caches = []
        for st in self.stages:
            d, c = st.forward(p, y)
            caches.append(c)
            y = y + d
        return y, caches

    def backward(self, caches, grad_y, grads=None, params=None):
        p = self.params if params is None else params
        g = np.asarray(grad_y, dtype=np.float64)
        for st, c in zip(reversed(self.stages), reversed(caches)):
            g = g + st.backward(p, grads, c, g)
        return g

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]


def forward_warp(net: WarpNet, points) -> np.ndarray:
    return net(points)


def eval_sdf(net: SdfNet, p):
    arr = np.asarray(p, dtype=np.float64)
    v = net(arr)
    return float(v[0]) if arr.ndim == 1 else v


def grad_sdf(net: SdfNet, p) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    _, g = net.value_and_grad(arr)
    return g[0] if arr.ndim == 1 else g
