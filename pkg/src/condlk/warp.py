"""Planar warp families.

Every family is parametrized so that ``p = 0`` is the identity:

* similarity  ``[[1+a, -b, tx], [b, 1+a, ty]]`` with ``p = (a, b, tx, ty)``
* affine      ``[[1+p1, p3, p5], [p2, 1+p4, p6]]``
* homography  ``I + [[p1, p3, p5], [p2, p4, p6], [p7, p8, 0]]`` with
  projective division

Composition and inversion go through 3x3 matrices.  The batched helpers
(``to_matrices``, ``from_matrices``, ``warp_points_batch``) operate on
``(B, P)`` parameter arrays and are what the alignment loops use.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import (DegenerateConfiguration, FamilyMismatch,
                     HomographyDivideByZero, SingularWarp)

DIVIDE_EPS = 1e-12
DEGENERACY_RATIO = 1e-10


class WarpFamily(enum.Enum):
    SIMILARITY = "similarity"
    AFFINE = "affine"
    HOMOGRAPHY = "homography"

    @property
    def P(self) -> int:
        return _NPARAMS[self]

    @classmethod
    def parse(cls, value) -> "WarpFamily":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown warp family {value!r}") from None


_NPARAMS = {WarpFamily.SIMILARITY: 4, WarpFamily.AFFINE: 6, WarpFamily.HOMOGRAPHY: 8}


@dataclass(frozen=True, eq=False)
class WarpParams:
    family: WarpFamily
    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=np.float64).reshape(-1)
        if p.shape[0] != self.family.P:
            raise ValueError(f"{self.family.value} warp needs {self.family.P} parameters, got {p.shape[0]}")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @classmethod
    def identity(cls, family: WarpFamily) -> "WarpParams":
        return cls(family, np.zeros(family.P))

    def matrix(self) -> np.ndarray:
        return to_matrices(self.family, self.p[None])[0]

    @classmethod
    def from_matrix(cls, family: WarpFamily, m) -> "WarpParams":
        return cls(family, from_matrices(family, np.asarray(m, dtype=np.float64)[None])[0])

    def to_dict(self) -> dict:
        return {"family": self.family.value, "p": [float(v) for v in self.p]}

    @classmethod
    def from_dict(cls, d: dict) -> "WarpParams":
        return cls(WarpFamily.parse(d["family"]), d["p"])

    def __eq__(self, other):
        return (isinstance(other, WarpParams) and self.family is other.family
                and np.array_equal(self.p, other.p))

    def __repr__(self):
        return f"WarpParams({self.family.value}, {np.array2string(self.p, precision=6)})"


# ---------------------------------------------------------------------------
# batched matrix conversion

def to_matrices(family: WarpFamily, params) -> np.ndarray:
    """(B, P) parameters -> (B, 3, 3) matrices."""
    params = np.asarray(params, dtype=np.float64)
    b = params.shape[0]
    m = np.zeros((b, 3, 3))
    m[:, 0, 0] = m[:, 1, 1] = m[:, 2, 2] = 1.0
    if family is WarpFamily.SIMILARITY:
        a, s, tx, ty = params.T
        m[:, 0, 0] += a
        m[:, 1, 1] += a
        m[:, 0, 1] = -s
        m[:, 1, 0] = s
        m[:, 0, 2] = tx
        m[:, 1, 2] = ty
    else:
        m[:, 0, 0] += params[:, 0]
        m[:, 1, 0] = params[:, 1]
        m[:, 0, 1] = params[:, 2]
        m[:, 1, 1] += params[:, 3]
        m[:, 0, 2] = params[:, 4]
        m[:, 1, 2] = params[:, 5]
        if family is WarpFamily.HOMOGRAPHY:
            m[:, 2, 0] = params[:, 6]
            m[:, 2, 1] = params[:, 7]
    return m


def from_matrices(family: WarpFamily, m) -> np.ndarray:
    """(B, 3, 3) matrices -> (B, P) parameters.

    Homographies are renormalized so the (3,3) entry is 1.  For the other
    families the matrix is assumed to already lie in the family (as it does
    after composing or inverting members).
    """
    m = np.asarray(m, dtype=np.float64)
    if family is WarpFamily.HOMOGRAPHY:
        s = m[:, 2, 2]
        if np.any(np.abs(s) < DIVIDE_EPS):
            raise SingularWarp("homography with vanishing (3,3) entry")
        m = m / s[:, None, None]
    if family is WarpFamily.SIMILARITY:
        return np.stack([m[:, 0, 0] - 1.0, m[:, 1, 0], m[:, 0, 2], m[:, 1, 2]], axis=1)
    out = np.stack([m[:, 0, 0] - 1.0, m[:, 1, 0], m[:, 0, 1], m[:, 1, 1] - 1.0,
                    m[:, 0, 2], m[:, 1, 2]], axis=1)
    if family is WarpFamily.HOMOGRAPHY:
        out = np.concatenate([out, m[:, 2, :2]], axis=1)
    return out


def apply_matrices(m, pts) -> np.ndarray:
    """Apply (B, 3, 3) matrices to (D, 2) points -> (B, D, 2)."""
    pts = np.asarray(pts, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    u = m[:, 0, 0, None] * x + m[:, 0, 1, None] * y + m[:, 0, 2, None]
    v = m[:, 1, 0, None] * x + m[:, 1, 1, None] * y + m[:, 1, 2, None]
    w = m[:, 2, 0, None] * x + m[:, 2, 1, None] * y + m[:, 2, 2, None]
    if np.any(np.abs(w) < DIVIDE_EPS):
        raise HomographyDivideByZero("projective denominator vanished")
    return np.stack([u / w, v / w], axis=-1)


def warp_points_batch(family: WarpFamily, params, pts) -> np.ndarray:
    return apply_matrices(to_matrices(family, params), pts)


def compose_batch(family: WarpFamily, a, b) -> np.ndarray:
    """Row-wise ``a o b`` for (B, P) arrays (``b`` is applied first)."""
    return from_matrices(family, to_matrices(family, a) @ to_matrices(family, b))


def invert_batch(family: WarpFamily, params) -> np.ndarray:
    m = to_matrices(family, params)
    det = np.linalg.det(m)
    if np.any(~np.isfinite(det)) or np.any(np.abs(det) < DIVIDE_EPS):
        raise SingularWarp("warp matrix is not invertible")
    return from_matrices(family, np.linalg.inv(m))


# ---------------------------------------------------------------------------
# single-warp API

def _check_family(a: WarpParams, b: WarpParams):
    if a.family is not b.family:
        raise FamilyMismatch(f"cannot combine {a.family.value} with {b.family.value}")


def warp_point(wp: WarpParams, x) -> np.ndarray:
    """Warp a point ``(2,)`` or an array of points ``(M, 2)``."""
    x = np.asarray(x, dtype=np.float64)
    out = warp_points_batch(wp.family, wp.p[None], x.reshape(-1, 2))[0]
    return out.reshape(x.shape)


def compose(a: WarpParams, b: WarpParams) -> WarpParams:
    """The warp ``x -> a(b(x))``."""
    _check_family(a, b)
    return WarpParams(a.family, compose_batch(a.family, a.p[None], b.p[None])[0])


def invert(wp: WarpParams) -> WarpParams:
    return WarpParams(wp.family, invert_batch(wp.family, wp.p[None])[0])


def jacobian_stack(family: WarpFamily, pts) -> np.ndarray:
    """Identity-warp Jacobians for (D, 2) points -> (D, 2, P)."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    zeros = np.zeros_like(x)
    ones = np.ones_like(x)
    if family is WarpFamily.SIMILARITY:
        rx = [x, -y, ones, zeros]
        ry = [y, x, zeros, ones]
    else:
        rx = [x, zeros, y, zeros, ones, zeros]
        ry = [zeros, x, zeros, y, zeros, ones]
        if family is WarpFamily.HOMOGRAPHY:
            rx += [-x * x, -x * y]
            ry += [-x * y, -y * y]
    return np.stack([np.stack(rx, axis=1), np.stack(ry, axis=1)], axis=1)


def jacobian_at_identity(family: WarpFamily, x) -> np.ndarray:
    """2 x P derivative of ``warp_point`` with respect to ``p`` at ``p = 0``."""
    return jacobian_stack(family, np.asarray(x, dtype=np.float64).reshape(1, 2))[0]


def _check_rank(s):
    if s[-1] < DEGENERACY_RATIO * s[0]:
        raise DegenerateConfiguration("point configuration is rank-deficient")


def _normalizer(pts):
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d == 0:
        raise DegenerateConfiguration("all points coincide")
    s = np.sqrt(2.0) / d
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def fit_params_from_points(family: WarpFamily, src, dst) -> WarpParams:
    """Least-squares warp taking ``src`` onto ``dst`` (exact DLT for homographies)."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise ValueError("src and dst must have the same number of points")
    if family is not WarpFamily.HOMOGRAPHY:
        # similarity and affine are linear in p: W(x; p) = x + J(x) p
        a = jacobian_stack(family, src).reshape(-1, family.P)
        rhs = (dst - src).reshape(-1)
        u, s, vt = np.linalg.svd(a, full_matrices=False)
        _check_rank(s)
        p = vt.T @ ((u.T @ rhs) / s)
        return WarpParams(family, p)

    if src.shape[0] < 4:
        raise DegenerateConfiguration("homography needs at least 4 correspondences")
    ts, td = _normalizer(src), _normalizer(dst)
    hs = np.c_[src, np.ones(len(src))] @ ts.T
    hd = np.c_[dst, np.ones(len(dst))] @ td.T
    rows = []
    for (x, y, _), (u, v, _) in zip(hs, hd):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    a = np.asarray(rows)
    _, s, vt = np.linalg.svd(a)
    _check_rank(s[:8])
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.solve(td, hn @ ts)
    if abs(h[2, 2]) < DIVIDE_EPS:
        raise DegenerateConfiguration("fitted homography maps the origin to infinity")
    return WarpParams.from_matrix(family, h / h[2, 2])


def corner_rmse(a, b) -> float:
    """Root mean squared Euclidean distance between corresponding points."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))
