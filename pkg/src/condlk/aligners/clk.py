"""Conditional LK: learn template gradients whose pseudo-inverse regressor predicts motion."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import LMStalled, RankDeficient, SingularHessian
from ..imageops import SamplingGrid
from ..warp import WarpFamily
from .glk import glk_train
from .lk import GradientParams, build_R_from_g, clk_workspace

log = logging.getLogger(__name__)

# beyond this many unknowns the damped step is solved in the residual space
PRIMAL_MAX_PARAMS = 2500


@dataclass(frozen=True)
class LMConfig:
    damping: float = 1e-3
    up: float = 10.0
    down: float = 10.0
    max_iters: int = 100
    rel_tol: float = 1e-8
    max_damping: float = 1e12
    ridge: float = 1e-10


@dataclass
class LMResult:
    g: GradientParams
    objective: float
    initial_objective: float
    iterations: int
    history: list = field(default_factory=list)
    reason: str = ""


def _unpack(gp, grid, ts):
    if isinstance(gp, GradientParams):
        return gp.g, gp.grid
    return np.asarray(gp, dtype=np.float64).reshape(-1), grid or ts.grid


def clk_residuals(g, ts, family: WarpFamily, grid: SamplingGrid | None = None) -> np.ndarray:
    """(N, P) residuals ``dp_n - R(g) (f_n - T)``."""
    g, grid = _unpack(g, grid, ts)
    r = build_R_from_g(g, family, grid)
    return ts.dps - (r @ ts.residuals()).T


def clk_objective(g, ts, family: WarpFamily | None = None, grid: SamplingGrid | None = None) -> float:
    family = family or ts.family
    return float(np.sum(clk_residuals(g, ts, family, grid) ** 2))


def clk_objective_kron(g, ts, family: WarpFamily | None = None, grid: SamplingGrid | None = None) -> float:
    """The same objective written with ``[(f_n - T)^T kron I_P] vec(R(g))``."""
    family = family or ts.family
    g, grid = _unpack(g, grid, ts)
    vr = build_R_from_g(g, family, grid).ravel(order="F")
    eye = np.eye(family.P)
    total = 0.0
    for dp, x in zip(ts.dps, ts.residuals().T):
        total += float(np.sum((dp - np.kron(x[None, :], eye) @ vr) ** 2))
    return total


def residual_jacobian(ws, X) -> np.ndarray:
    """Jacobian of the stacked residuals ``r_n = dp_n - R(g) x_n`` w.r.t. ``g``, (N*P, 2*K*D).

    Row ``n*P + i``.  Equivalent to ``-[x_n^T kron I_P] dvec(R)/dg^T`` but
    contracted analytically: for ``g_j`` at (site d, channel k, axis a),
    ``d(R x_n)/dg_j = -R[:, r] (J Z)[2d+a, n] + (H^-1 J^T)[:, 2d+a] (X - W Z)[r, n]``
    with ``Z = R X`` and ``r = d*K + k``.
    """
    p, kd = ws.R.shape
    d, k = ws.D, ws.K
    n = X.shape[1]
    z = ws.R @ X                                        # (P, N)
    s = (ws.J_warp @ z).reshape(d, 2, n)                # (D, 2, N)
    v = (ws.H_inv @ ws.J_warp.T).reshape(p, d, 2)       # (P, D, 2)
    e = (X - ws.W @ z).reshape(d, k, n)                 # (D, K, N)
    rr = ws.R.reshape(p, d, k)
    t = np.einsum("pdk,dan->npdka", rr, s) * -1.0
    t += np.einsum("pda,dkn->npdka", v, e)
    return -t.reshape(n * p, 2 * kd)


def _damped_step(jac, res, mu):
    """Solve ``(J^T J + mu I) step = -J^T r``, in whichever space is smaller."""
    m, n = jac.shape
    if n <= PRIMAL_MAX_PARAMS or n <= m:
        a = jac.T @ jac
        a[np.diag_indices_from(a)] += mu
        return -np.linalg.solve(a, jac.T @ res)
    b = jac @ jac.T
    b[np.diag_indices_from(b)] += mu
    return -jac.T @ np.linalg.solve(b, res)


def clk_train(ts, family: WarpFamily | None = None, grid: SamplingGrid | None = None,
              lm_cfg: LMConfig | None = None, g0=None) -> LMResult:
    """Levenberg-Marquardt on the conditional objective, initialized from Generative LK."""
    family = family or ts.family
    grid = grid or ts.grid
    cfg = lm_cfg or LMConfig()
    gp0 = g0 if g0 is not None else glk_train(ts, family, grid)
    g, _ = _unpack(gp0, grid, ts)
    k = g.shape[0] // (2 * grid.D)
    X = ts.residuals()

    ws = clk_workspace(g, family, grid)
    res = (ts.dps - (ws.R @ X).T).ravel()
    f = float(res @ res)
    f0 = f
    history = [f]
    lam = cfg.damping
    accepted = 0
    reason = "max_iters"
    it = 0
    for it in range(1, cfg.max_iters + 1):
        jac = residual_jacobian(ws, X)
        grad = jac.T @ res
        gn_trace = float(np.sum(jac * jac))
        scale = gn_trace / jac.shape[1]
        if scale == 0 or not np.any(grad):
            reason = "stationary"
            break
        ridge = cfg.ridge * gn_trace
        improved = False
        while lam <= cfg.max_damping:
            step = _damped_step(jac, res, lam * scale + ridge)
            g_try = g + step
            try:
                ws_try = clk_workspace(g_try, family, grid)
            except (SingularHessian, RankDeficient):
                lam *= cfg.up
                continue
            res_try = (ts.dps - (ws_try.R @ X).T).ravel()
            f_try = float(res_try @ res_try)
            if np.isfinite(f_try) and f_try < f:
                improved = True
                break
            lam *= cfg.up
        if not improved:
            reason = "max_damping"
            if accepted == 0 and np.linalg.norm(grad) > 1e-6 * (1.0 + f):
                raise LMStalled(f"no decrease found from objective {f:.6g}")
            break
        rel = (f - f_try) / f if f > 0 else 0.0
        g, ws, res, f = g_try, ws_try, res_try, f_try
        accepted += 1
        history.append(f)
        lam = max(lam / cfg.down, 1e-15)
        if rel < cfg.rel_tol or f == 0.0:
            reason = "rel_tol"
            break
    log.debug("clk lm: %d iterations, objective %.6g -> %.6g (%s)", it, f0, f, reason)
    return LMResult(GradientParams(g, grid, k), f, f0, it, history, reason)


def clk_gradient(g, ts, family: WarpFamily | None = None, grid: SamplingGrid | None = None) -> np.ndarray:
    """Gradient of the objective in ``g`` (``2 J^T r``)."""
    family = family or ts.family
    g, grid = _unpack(g, grid, ts)
    ws = clk_workspace(g, family, grid)
    X = ts.residuals()
    res = (ts.dps - (ws.R @ X).T).ravel()
    return 2.0 * residual_jacobian(ws, X).T @ res
