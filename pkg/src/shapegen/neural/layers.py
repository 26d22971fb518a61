"""Layers with explicit forward/backward passes over a shared flat parameter vector.

Every layer owns a contiguous slice of its network's parameter vector and
writes its gradients into the matching slice of a gradient vector of the
same length. ``forward`` returns ``(output, cache)``; ``backward`` consumes
the cache and the upstream gradient and returns the gradient with respect to
the layer input.
"""

from __future__ import annotations

import numpy as np


class ParamLayout:
    """Assigns slices of a flat vector to named parameter blocks."""

    def __init__(self):
        self.blocks: list[tuple[str, int, tuple[int, ...]]] = []
        self.size = 0

    def add(self, name: str, shape: tuple[int, ...]) -> slice:
        n = int(np.prod(shape))
        s = slice(self.size, self.size + n)
        self.blocks.append((name, self.size, shape))
        self.size += n
        return s


class Linear:
    def __init__(self, layout: ParamLayout, name: str, n_in: int, n_out: int):
        self.n_in, self.n_out = n_in, n_out
        self.w_slice = layout.add(f"{name}.weight", (n_in, n_out))
        self.b_slice = layout.add(f"{name}.bias", (n_out,))

    def weight(self, params):
        return params[self.w_slice].reshape(self.n_in, self.n_out)

    def bias(self, params):
        return params[self.b_slice]

    def init(self, params, rng, scale=None):
        std = np.sqrt(1.0 / self.n_in) if scale is None else scale
        params[self.w_slice] = rng.normal(scale=std, size=self.n_in * self.n_out) if std else 0.0
        params[self.b_slice] = 0.0

    def forward(self, params, x):
        return x @ self.weight(params) + self.bias(params), x

    def backward(self, params, grads, x, g):
        if grads is not None:
            grads[self.w_slice] += (x.T @ g).reshape(-1)
            grads[self.b_slice] += g.sum(axis=0)
        return g @ self.weight(params).T


def _softplus(x):
    e = np.exp(-np.abs(x))
    return np.maximum(x, 0.0) + np.log1p(e), e


def _softplus_grad(x, aux):
    # logistic sigmoid from the cached exp(-|x|)
    inv = 1.0 / (1.0 + aux)
    return np.where(x >= 0, inv, aux * inv)


def _tanh(x):
    y = np.tanh(x)
    return y, y


def _tanh_grad(x, y):
    return 1.0 - y * y


ACTIVATIONS = {
    "softplus": (_softplus, _softplus_grad),
    "tanh": (_tanh, _tanh_grad),
}


class MLP:
    """Fully-connected stack; activation after every layer except the last."""

    def __init__(self, layout: ParamLayout, name: str, sizes: list[int], activation: str):
        self.layers = [Linear(layout, f"{name}.{i}", a, b) for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]
        self.act, self.act_grad = ACTIVATIONS[activation]

    def init(self, params, rng, zero_last=False, last_scale=None):
        for layer in self.layers[:-1]:
            layer.init(params, rng)
        self.layers[-1].init(params, rng, scale=0.0 if zero_last else last_scale)

    def forward(self, params, x):
        caches = []
        h = x
        for i, layer in enumerate(self.layers):
            z, c = layer.forward(params, h)
            if i < len(self.layers) - 1:
                h, aux = self.act(z)
                caches.append((c, z, aux))
            else:
                h = z
                caches.append((c, None, None))
        return h, caches

    def backward(self, params, grads, caches, g):
        for i in range(len(self.layers) - 1, -1, -1):
            c, z, aux = caches[i]
            if z is not None:
                g = g * self.act_grad(z, aux)
            g = self.layers[i].backward(params, grads, c, g)
        return g


class DenseGridEncoding:
    """Multiresolution dense feature grids with trilinear interpolation.

    Level ``l`` has ``res_l`` cells per axis across the
    bounding cube; resolutions grow geometrically from ``base_resolution`` to
    ``finest_resolution``. Inputs outside the cube are clamped onto it.

    Each level is shifted by a different fraction of its cell (golden-ratio
    sequence) so node planes of different levels never coincide; otherwise
    every level is one-sided on the same planes and the input gradient there
    carries a curvature bias from all levels at once.
    """

    def __init__(self, layout: ParamLayout, levels: int, features: int, base_resolution: int,
                 finest_resolution: int, cube):
        self.levels, self.features = levels, features
        self.lo = np.asarray(cube[0], dtype=np.float64)
        self.hi = np.asarray(cube[1], dtype=np.float64)
        if levels == 1:
            res = [finest_resolution]
        else:
            growth = (finest_resolution / base_resolution) ** (1.0 / (levels - 1))
            res = [int(round(base_resolution * growth ** i)) for i in range(levels)]
        self.resolutions = res
        self.shifts = [((i + 1) * 0.6180339887498949) % 1.0 for i in range(levels)]
        # a shifted level needs one extra cell per axis to cover the cube
        self.slices = [layout.add(f"grid.{i}", ((r + 2) ** 3, features)) for i, r in enumerate(res)]
        self.out_dim = levels * features

    def init(self, params, rng, scale=1e-4):
        for s in self.slices:
            params[s] = rng.uniform(-scale, scale, size=s.stop - s.start)

    def cell_coords(self, x):
        """Continuous grid coordinates per level, before clamping."""
        u = (np.asarray(x) - self.lo) / (self.hi - self.lo)
        return [u * r + sh for r, sh in zip(self.resolutions, self.shifts)]

    def forward(self, params, x):
        u = (x - self.lo) / (self.hi - self.lo)
        inside = (u >= 0.0) & (u <= 1.0)
        u = np.clip(u, 0.0, 1.0)
        out = np.empty((len(x), self.out_dim))
        cache = []
        for li, (r, sh, s) in enumerate(zip(self.resolutions, self.shifts, self.slices)):
            grid = params[s].reshape(-1, self.features)
            pos = u * r + sh
            cell = np.minimum(np.floor(pos).astype(np.int64), r)
            t = pos - cell
            n1 = r + 2
            base = (cell[:, 0] * n1 + cell[:, 1]) * n1 + cell[:, 2]
            idx = np.empty((len(x), 8), dtype=np.int64)
            w = np.empty((len(x), 8))
            for c in range(8):
                bx, by, bz = (c >> 2) & 1, (c >> 1) & 1, c & 1
                idx[:, c] = base + (bx * n1 + by) * n1 + bz
                w[:, c] = ((t[:, 0] if bx else 1 - t[:, 0]) * (t[:, 1] if by else 1 - t[:, 1])
                           * (t[:, 2] if bz else 1 - t[:, 2]))
            vals = grid[idx]  # (n, 8, F)
            out[:, li * self.features:(li + 1) * self.features] = np.einsum("nc,ncf->nf", w, vals)
            cache.append((idx, w, t, vals, r))
        return out, (cache, inside)

    def backward(self, params, grads, cache, g):
        """Accumulates grid gradients (if ``grads`` is given); returns d/dx."""
        cache, inside = cache
        gx = np.zeros((len(g), 3))
        for li, (idx, w, t, vals, r) in enumerate(cache):
            gl = g[:, li * self.features:(li + 1) * self.features]  # (n, F)
            if grads is not None:
                s = self.slices[li]
                n_nodes = (s.stop - s.start) // self.features
                flat_idx = idx.reshape(-1)
                for f in range(self.features):
                    contrib = (w * gl[:, f:f + 1]).reshape(-1)
                    grads[s.start + f:s.stop:self.features] += np.bincount(flat_idx, contrib, minlength=n_nodes)
            # d(feature)/d(t_axis) from the trilinear weights
            proj = np.einsum("ncf,nf->nc", vals, gl)
            for axis in range(3):
                dw = np.empty_like(w)
                for c in range(8):
                    bits = ((c >> 2) & 1, (c >> 1) & 1, c & 1)
                    prod = np.ones(len(g))
                    for k in range(3):
                        if k == axis:
                            prod = prod * (1.0 if bits[k] else -1.0)
                        else:
                            prod = prod * (t[:, k] if bits[k] else 1 - t[:, k])
                    dw[:, c] = prod
                gx[:, axis] += np.einsum("nc,nc->n", dw, proj) * r
        gx = gx / (self.hi - self.lo)
        return np.where(inside, gx, 0.0)
