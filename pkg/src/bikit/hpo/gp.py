"""Gaussian-process surrogate with a Matérn-5/2 kernel and expected improvement.

Targets are standardized before fitting. Length-scale and signal variance
are chosen by maximizing the log marginal likelihood over a fixed grid, so
fitting is deterministic and needs no optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.stats import norm

JITTER = 1e-6
LENGTH_SCALES = tuple(np.geomspace(0.05, 5.0, 21))
SIGNAL_VARIANCES = (0.25, 0.5, 1.0, 2.0, 4.0)
_SQRT5 = np.sqrt(5.0)


def matern52(a: np.ndarray, b: np.ndarray, length_scale: float, variance: float = 1.0) -> np.ndarray:
    d2 = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T
    r = np.sqrt(np.maximum(d2, 0.0)) / length_scale
    return variance * (1.0 + _SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-_SQRT5 * r)


@dataclass
class GaussianProcess:
    length_scale: float
    variance: float
    x: np.ndarray
    y_mean: float
    y_std: float
    chol: tuple
    alpha: np.ndarray
    log_marginal_likelihood: float

    def predict(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation in the original target units."""
        k = matern52(xs, self.x, self.length_scale, self.variance)
        mu = k @ self.alpha
        v = solve_triangular(self.chol[0], k.T, lower=self.chol[1])
        var = np.maximum(self.variance - np.sum(v * v, axis=0), 1e-12)
        return mu * self.y_std + self.y_mean, np.sqrt(var) * self.y_std


def _lml(x, y, ls, var):
    K = matern52(x, x, ls, var)
    K[np.diag_indices_from(K)] += JITTER
    try:
        c = cho_factor(K, lower=True)
    except np.linalg.LinAlgError:
        return -np.inf, None, None
    alpha = cho_solve(c, y)
    lml = -0.5 * y @ alpha - np.sum(np.log(np.diag(c[0]))) - 0.5 * len(y) * np.log(2 * np.pi)
    return lml, c, alpha


def fit_gp(x: np.ndarray, y: np.ndarray) -> GaussianProcess:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    y_mean = float(y.mean())
    y_std = float(y.std()) or 1.0
    ys = (y - y_mean) / y_std
    best = None
    for ls in LENGTH_SCALES:
        for var in SIGNAL_VARIANCES:
            lml, c, alpha = _lml(x, ys, ls, var)
            if c is not None and (best is None or lml > best[0]):
                best = (lml, ls, var, c, alpha)
    if best is None:
        raise np.linalg.LinAlgError("no grid point gave a positive-definite kernel matrix")
    lml, ls, var, c, alpha = best
    # keep (L, lower) so predict can reuse the factor
    return GaussianProcess(float(ls), float(var), x, y_mean, y_std, c, alpha, float(lml))


def expected_improvement(mu: np.ndarray, sigma: np.ndarray, best: float) -> np.ndarray:
    """EI for minimization relative to the incumbent ``best``."""
    sigma = np.maximum(sigma, 1e-12)
    imp = best - mu
    z = imp / sigma
    return imp * norm.cdf(z) + sigma * norm.pdf(z)
