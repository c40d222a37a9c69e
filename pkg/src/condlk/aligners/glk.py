"""Generative LK: per-site least-squares gradients that synthesize appearance from motion."""
import numpy as np

from ..errors import UnderdeterminedSite
from ..imageops import SamplingGrid
from ..warp import WarpFamily, jacobian_stack
from .lk import GradientParams

SITE_RATIO = 1e-12


def glk_train(ts, family: WarpFamily | None = None, grid: SamplingGrid | None = None) -> GradientParams:
    """Solve ``min sum_n (x_n[d,k] - grad_k(x_d) . J_d dp_n)^2`` independently per (d, k).

    All channels of a site share the same 2x2 normal matrix.
    """
    family = family or ts.family
    grid = grid or ts.grid
    d_sites = grid.D
    n = ts.N
    k = ts.KD // d_sites
    jac = jacobian_stack(family, grid.coords)                 # (D, 2, P)
    motion = np.einsum("dap,np->dna", jac, ts.dps)            # (D, N, 2)
    normal = np.einsum("dna,dnb->dab", motion, motion)        # (D, 2, 2)
    x = ts.residuals().reshape(d_sites, k, n)                 # (D, K, N)
    rhs = np.einsum("dna,dkn->dka", motion, x)                # (D, K, 2)

    tr = normal[:, 0, 0] + normal[:, 1, 1]
    det = normal[:, 0, 0] * normal[:, 1, 1] - normal[:, 0, 1] * normal[:, 1, 0]
    bad = (tr <= 0) | (det <= SITE_RATIO * tr * tr)
    if n < 2 or bad.any():
        site = int(np.flatnonzero(bad)[0]) if bad.any() else 0
        raise UnderdeterminedSite(site)
    grads = np.linalg.solve(normal[:, None], rhs[..., None])[..., 0]   # (D, K, 2)
    return GradientParams(grads.reshape(-1), grid, k)

