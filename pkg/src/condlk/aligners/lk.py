"""Steepest-descent matrices, learned gradients and the pseudo-inverse regressor.

Notation used throughout the aligners:

* ``grads`` (K*D, 2): row ``d*K + k`` is the gradient of channel ``k`` at site ``d``
* ``g`` (2*K*D,): ``grads.ravel()``, so gradient pairs are contiguous
* ``J`` (2*D, P): identity-warp Jacobians of all sites stacked
* ``G(g)`` (K*D, 2*D): block-diagonal gradient matrix, ``W = G(g) J``
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..errors import RankDeficient, ShapeMismatch, SingularHessian
from ..imageops import MultiChannelImage, SamplingGrid, finite_diff_gradients, sample_warped_vector
from ..warp import WarpFamily, WarpParams, jacobian_stack
from .cascade import RegressorLayer

RANK_RATIO = 1e-10
HESSIAN_RATIO = 1e-12


@dataclass(frozen=True, eq=False)
class GradientParams:
    g: np.ndarray
    grid: SamplingGrid
    K: int

    def __post_init__(self):
        g = np.array(self.g, dtype=np.float64).reshape(-1)
        if g.shape[0] != 2 * self.K * self.grid.D:
            raise ShapeMismatch(f"g has length {g.shape[0]}, expected {2 * self.K * self.grid.D}")
        if not np.all(np.isfinite(g)):
            raise ValueError("gradient parameters must be finite")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)

    @classmethod
    def from_gradients(cls, grads, grid: SamplingGrid) -> "GradientParams":
        grads = np.asarray(grads, dtype=np.float64)
        return cls(grads.reshape(-1), grid, grads.shape[0] // grid.D)

    @property
    def gradients(self) -> np.ndarray:
        return self.g.reshape(-1, 2)


def stacked_jacobian(family: WarpFamily, grid: SamplingGrid) -> np.ndarray:
    """(2*D, P) identity-warp Jacobians, rows ``2d`` (x) and ``2d+1`` (y)."""
    return jacobian_stack(family, grid.coords).reshape(2 * grid.D, family.P)


def build_W(grads, family: WarpFamily, grid: SamplingGrid) -> np.ndarray:
    """Steepest-descent matrix; row ``(d, k)`` is ``grad_k(x_d) @ J(x_d)``."""
    grads = np.asarray(grads, dtype=np.float64)
    d = grid.D
    if grads.ndim != 2 or grads.shape[1] != 2 or grads.shape[0] % d:
        raise ShapeMismatch(f"gradients of shape {grads.shape} do not fit a grid of {d} sites")
    k = grads.shape[0] // d
    jac = jacobian_stack(family, grid.coords)
    return np.einsum("dka,dap->dkp", grads.reshape(d, k, 2), jac).reshape(d * k, family.P)


def gradient_matrix(g, K: int, D: int) -> sp.csr_matrix:
    """Sparse block-diagonal ``G(g)`` with exactly ``2*K*D`` stored entries."""
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    j = np.arange(2 * K * D)
    rows = j // 2
    cols = 2 * (rows // K) + j % 2
    return sp.csr_matrix((g, (rows, cols)), shape=(K * D, 2 * D))


def _pinv_checked(w: np.ndarray) -> np.ndarray:
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    if s.size == 0 or s[0] == 0 or s[-1] < RANK_RATIO * s[0] or w.shape[0] < w.shape[1]:
        raise RankDeficient("steepest-descent matrix is rank deficient")
    return (vt.T / s) @ u.T


def _hessian_inverse(w: np.ndarray, error=RankDeficient, ratio=RANK_RATIO ** 2):
    h = w.T @ w
    h = 0.5 * (h + h.T)
    evals, evecs = np.linalg.eigh(h)
    if evals[-1] <= 0 or evals[0] < ratio * evals[-1]:
        raise error("pseudo-Hessian is singular")
    return h, (evecs / evals) @ evecs.T


def _grid_k(gp: GradientParams | np.ndarray, grid: SamplingGrid | None):
    if isinstance(gp, GradientParams):
        return gp.g, gp.grid, gp.K
    g = np.asarray(gp, dtype=np.float64).reshape(-1)
    return g, grid, g.shape[0] // (2 * grid.D)


def build_R_from_g(g, family: WarpFamily, grid: SamplingGrid | None = None) -> np.ndarray:
    """``R(g) = H(g)^-1 J^T G(g)^T``, the pseudo-inverse of ``G(g) J``."""
    g, grid, _ = _grid_k(g, grid)
    w = build_W(g.reshape(-1, 2), family, grid)
    if w.shape[0] < w.shape[1]:
        raise RankDeficient("fewer appearance rows than warp parameters")
    _, hinv = _hessian_inverse(w)
    return hinv @ w.T


def iclk_build(img: MultiChannelImage, family: WarpFamily, grid: SamplingGrid,
               p_gt: WarpParams | None = None) -> RegressorLayer:
    """Classic IC-LK: ``R = W^+`` from finite-difference template gradients."""
    grads = finite_diff_gradients(img, grid, p_gt)
    r = _pinv_checked(build_W(grads, family, grid))
    wp = p_gt if p_gt is not None else WarpParams.identity(family)
    template = sample_warped_vector(img, wp, grid)
    return RegressorLayer(r, template, GradientParams.from_gradients(grads, grid))


@dataclass(eq=False)
class CLKWorkspace:
    """Quantities shared by the regressor and its derivative at one ``g``."""

    J_warp: np.ndarray
    G: sp.csr_matrix
    W: np.ndarray
    H: np.ndarray
    H_inv: np.ndarray
    R: np.ndarray
    K: int
    D: int
    g: np.ndarray

    def lambda_index(self, j: int) -> tuple[int, int]:
        """(row, col) of the single active entry of ``dG/dg_j``."""
        r = j // 2
        return r, 2 * (r // self.K) + j % 2


def clk_workspace(g, family: WarpFamily, grid: SamplingGrid | None = None) -> CLKWorkspace:
    g, grid, k = _grid_k(g, grid)
    jw = stacked_jacobian(family, grid)
    gm = gradient_matrix(g, k, grid.D)
    w = np.asarray(gm @ jw)
    if w.shape[0] < w.shape[1]:
        raise SingularHessian("fewer appearance rows than warp parameters")
    h, hinv = _hessian_inverse(w, SingularHessian, HESSIAN_RATIO)
    return CLKWorkspace(jw, gm, w, h, hinv, hinv @ w.T, k, grid.D, g)


def dR_dg(ws: CLKWorkspace, g=None) -> np.ndarray:
    """Jacobian of column-major ``vec(R(g))`` with respect to ``g``, (P*K*D, 2*K*D).

    Column ``j`` is ``vec(dR/dg_j)`` with
    ``dR/dg_j = -H^-1 dH_j H^-1 J^T G^T + H^-1 J^T L_j^T`` and
    ``dH_j = J^T (G^T L_j + L_j^T G) J``.  ``L_j`` has one active entry at
    (r, c), so ``L_j J`` is the single row ``J[c]`` placed at row ``r`` and
    ``dH_j = w_r J[c]^T + J[c] w_r^T``.
    """
    if g is not None:
        g = g.g if isinstance(g, GradientParams) else np.asarray(g, dtype=np.float64).reshape(-1)
        if not np.array_equal(g, ws.g):
            raise ValueError("workspace was built at a different g")
    p, kd = ws.R.shape
    n = 2 * kd
    out = np.empty((p * kd, n))
    jr = np.arange(n)
    rows, cols = jr // 2, 2 * ((jr // 2) // ws.K) + jr % 2
    jrows = ws.J_warp[cols]                      # (n, P)   J[c]
    wrows = ws.W[rows]                           # (n, P)   w_r
    a = ws.R[:, rows].T                          # (n, P)   H^-1 w_r
    b = jrows @ ws.H_inv                         # (n, P)   H^-1 J[c]
    jr_R = jrows @ ws.R                          # (n, KD)  J[c]^T R
    wr_R = wrows @ ws.R                          # (n, KD)  w_r^T R
    for j in range(n):
        dr = -np.outer(a[j], jr_R[j]) - np.outer(b[j], wr_R[j])
        dr[:, rows[j]] += b[j]
        out[:, j] = dr.ravel(order="F")
    return out
