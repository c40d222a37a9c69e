"""Supervised Descent Method: ridge-regressed linear update predictors."""
import numpy as np

from ..errors import SingularSystem
from .cascade import RegressorCascade, RegressorLayer

SINGULAR_RATIO = 1e-10
LAMBDA_FACTORS = 10.0 ** np.arange(-4, 3)


class RidgeSolver:
    """Solves ``min_R ||Y - R X||_F^2 + lam ||R||_F^2`` for many ``lam`` from one SVD.

    ``X`` is (K*D, N) and ``Y`` is (P, N).  With ``X = U S V^T`` the solution
    ``Y X^T (X X^T + lam I)^-1`` reduces to ``Y V diag(s / (s^2 + lam)) U^T``.
    """

    def __init__(self, X, Y):
        self.X = np.asarray(X, dtype=np.float64)
        self.Y = np.asarray(Y, dtype=np.float64)
        self.U, self.s, vt = np.linalg.svd(self.X, full_matrices=False)
        self.YV = self.Y @ vt.T

    @property
    def gram_trace(self) -> float:
        return float(np.sum(self.s ** 2))

    def solve(self, lam: float) -> np.ndarray:
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        s = self.s
        if lam == 0:
            kd = self.X.shape[0]
            if s.size < kd or s[-1] <= SINGULAR_RATIO * s[0]:
                raise SingularSystem("X X^T is singular; use a positive ridge weight")
            w = 1.0 / s
        else:
            w = s / (s * s + lam)
        return (self.YV * w) @ self.U.T


def sdm_fit(X, Y, lam: float) -> np.ndarray:
    return RidgeSolver(X, Y).solve(lam)


def lambda_grid(solver: RidgeSolver, factors=LAMBDA_FACTORS) -> np.ndarray:
    """Candidate ridge weights scaled by the mean diagonal of ``X X^T``."""
    return np.asarray(factors) * solver.gram_trace / solver.X.shape[0]


def select_lambda(solver: RidgeSolver, X_val, Y_val, factors=LAMBDA_FACTORS):
    """Pick the grid weight with the smallest validation error; ties go to the smaller weight."""
    best = None
    for lam in lambda_grid(solver, factors):
        r = solver.solve(lam)
        err = float(np.sum((Y_val - r @ X_val) ** 2))
        if best is None or err < best[1]:
            best = (lam, err, r)
    return best


def sdm_train(sets, lam=None, validation_sets=None, factors=LAMBDA_FACTORS) -> RegressorCascade:
    """One ridge regressor per training set.

    ``lam`` may be a number or None; None selects it per layer on the
    matching entry of ``validation_sets``.
    """
    sets = list(sets)
    layers, chosen = [], []
    for i, ts in enumerate(sets):
        solver = RidgeSolver(ts.residuals(), ts.dps.T)
        if lam is None:
            if validation_sets is None:
                raise ValueError("lambda selection needs validation sets")
            vs = validation_sets[i]
            best_lam, _, r = select_lambda(solver, vs.residuals(), vs.dps.T, factors)
        else:
            best_lam, r = float(lam), solver.solve(float(lam))
        chosen.append(float(best_lam))
        layers.append(RegressorLayer(r, ts.template))
    base = sets[0]
    return RegressorCascade(base.family, base.grid, layers, method="sdm", meta={"lambda": chosen})
