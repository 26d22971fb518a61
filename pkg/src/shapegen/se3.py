"""Rigid transforms, interpolation and point-set fitting.

Transforms are stored as a rotation matrix plus a translation vector.
Quaternions only appear transiently inside :func:`interp`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFitError, DegenerateInterpolationError, ValidationError

# Relative rotation angles this close to pi have no unique shortest geodesic.
_ANTIPODAL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SE3:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> SE3:
        return cls()

    @classmethod
    def from_matrix(cls, m) -> SE3:
        m = np.asarray(m, dtype=np.float64)
        if m.shape == (16,):
            m = m.reshape(4, 4)
        if m.shape != (4, 4):
            raise ValidationError(f"expected a 4x4 matrix, got shape {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_list(cls, values) -> SE3:
        """Inverse of :meth:`to_list` (16 numbers, row-major)."""
        if len(values) != 16:
            raise ValidationError(f"expected 16 numbers, got {len(values)}")
        return cls.from_matrix(np.asarray(values, dtype=np.float64))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_list(self) -> list[float]:
        return [float(v) for v in self.matrix().reshape(-1)]

    def apply(self, points) -> np.ndarray:
        """Transform one point ``(3,)`` or a batch ``(n, 3)``."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> SE3:
        return invert(self)

    def __matmul__(self, other: SE3) -> SE3:
        return compose(self, other)

    def is_translation_only(self) -> bool:
        return bool(np.array_equal(self.rotation, np.eye(3)))

    def __repr__(self):
        return f"SE3(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def translate(x, y=None, z=None) -> SE3:
    t = np.asarray(x, dtype=np.float64) if y is None else np.array([x, y, z], dtype=np.float64)
    return SE3(np.eye(3), t)


def rot_axis(axis: str, angle: float) -> SE3:
    """Rotation by ``angle`` radians about a coordinate axis."""
    c, s = np.cos(angle), np.sin(angle)
    i = "xyz".index(axis)
    j, k = (i + 1) % 3, (i + 2) % 3
    r = np.eye(3)
    r[j, j] = c
    r[j, k] = -s
    r[k, j] = s
    r[k, k] = c
    return SE3(r, np.zeros(3))


def rot_z(angle: float) -> SE3:
    return rot_axis("z", angle)


def compose(a: SE3, b: SE3) -> SE3:
    """``a @ b``: apply ``b`` first, then ``a``."""
    return SE3(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(a: SE3) -> SE3:
    rt = a.rotation.T
    return SE3(rt, -(rt @ a.translation))


def random_se3(rng: np.random.Generator, translation_scale: float = 1.0) -> SE3:
    """Uniformly random rotation with a Gaussian translation."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return SE3(quat_to_matrix(q), rng.normal(scale=translation_scale, size=3))


# -- quaternions (w, x, y, z) ------------------------------------------------


def matrix_to_quat(r: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns a unit quaternion with w >= 0 when possible."""
    r = np.asarray(r, dtype=np.float64)
    tr = np.trace(r)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = np.array([(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s])
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def slerp(q0: np.ndarray, q1: np.ndarray, s: float) -> np.ndarray:
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1, dot = -q1, -dot
    if dot <= _ANTIPODAL_TOL:
        raise DegenerateInterpolationError("rotations are half a turn apart; shortest geodesic is not unique")
    dot = min(dot, 1.0)
    theta = np.arccos(dot)
    if theta < 1e-12:
        q = (1.0 - s) * q0 + s * q1
    else:
        q = (np.sin((1.0 - s) * theta) * q0 + np.sin(s * theta) * q1) / np.sin(theta)
    return q / np.linalg.norm(q)


def interp(a: SE3, b: SE3, s: float) -> SE3:
    """Geodesic rotation blend (slerp) with a linear translation blend."""
    if not 0.0 <= s <= 1.0:
        raise ValidationError(f"interpolation fraction must lie in [0, 1], got {s}")
    if s == 0.0:
        return a
    if s == 1.0:
        return b
    t = (1.0 - s) * a.translation + s * b.translation
    if np.array_equal(a.rotation, b.rotation):
        return SE3(a.rotation, t)
    q = slerp(matrix_to_quat(a.rotation), matrix_to_quat(b.rotation), s)
    return SE3(quat_to_matrix(q), t)


# -- fitting -----------------------------------------------------------------


def _as_point_pair(src, dst):
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if len(src) == 0:
        raise ValidationError("point lists must be non-empty")
    if src.shape != dst.shape:
        raise ValidationError(f"point lists differ in length: {len(src)} vs {len(dst)}")
    return src, dst


def fit_translation(src, dst) -> SE3:
    """Least-squares translation taking ``src`` onto ``dst``.

    The optimum of ``sum ||dst_n - (src_n + t)||^2`` is the centroid difference.
    """
    src, dst = _as_point_pair(src, dst)
    return SE3(np.eye(3), dst.mean(axis=0) - src.mean(axis=0))


def fit_rigid(src, dst, rank_tol: float = 1e-9) -> SE3:
    """Kabsch fit (rotation + translation, no scale) taking ``src`` onto ``dst``."""
    src, dst = _as_point_pair(src, dst)
    if len(src) < 3:
        raise DegenerateFitError("rigid fit needs at least 3 points")
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - cs, dst - cd
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[1] <= rank_tol * max(sv[0], 1.0):
        raise DegenerateFitError("source points are collinear or coincident")
    h = a.T @ b
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return SE3(r, cd - r @ cs)


def conjugate_translation(calib_rotation, t) -> np.ndarray:
    """Translation of ``T_c2b @ translate(t) @ inv(T_c2b)``, which is ``R_c2b @ t``.

    The conjugate of a pure translation is again a pure translation, so the
    translation part of the calibration drops out entirely.
    """
    return np.asarray(calib_rotation, dtype=np.float64) @ np.asarray(t, dtype=np.float64)
