"""Two-parameter inverse problem from a 1D elliptic boundary value problem.

``-(exp(u1) p')' = 1`` on (0, 1) with ``p(0) = 0``, ``p(1) = u2`` has the
closed-form solution ``p(x) = u2 x + exp(-u1)(x/2 - x^2/2)``; the data are
``p`` at two interior points.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError
from ..inverse import InverseProblem

DEFAULT_POINTS = (0.25, 0.75)
DEFAULT_OBS = (27.5, 79.7)
DEFAULT_NOISE_STD = 0.1
DEFAULT_PRIOR_STD = 10.0


def _bump(x):
    return 0.5 * x - 0.5 * x * x


def elliptic1d_forward(u, x1: float = 0.25, x2: float = 0.75) -> np.ndarray:
    """``(p(x1), p(x2))``; ``u`` may also be a ``(2, I)`` matrix of columns."""
    u = np.asarray(u, dtype=float)
    xs = np.array([x1, x2])
    if u.ndim == 1:
        return u[1] * xs + np.exp(-u[0]) * _bump(xs)
    return np.outer(xs, u[1]) + np.outer(_bump(xs), np.exp(-u[0]))


def elliptic1d_gradient(u, x1: float = 0.25, x2: float = 0.75) -> np.ndarray:
    """Jacobian ``d(p(x1), p(x2)) / d(u1, u2)``, shape (2, 2)."""
    u = np.asarray(u, dtype=float)
    xs = np.array([x1, x2])
    return np.column_stack([-np.exp(-u[0]) * _bump(xs), xs])


class Elliptic1DProblem(InverseProblem):
    """The elliptic problem with its standard noise, prior and data."""

    def __init__(self, x1: float = 0.25, x2: float = 0.75, obs=DEFAULT_OBS,
                 noise_std: float = DEFAULT_NOISE_STD, prior_std: float = DEFAULT_PRIOR_STD):
        if not 0 < x1 < x2 < 1:
            raise InvalidInputError("observation points must satisfy 0 < x1 < x2 < 1")
        self.x1, self.x2 = float(x1), float(x2)
        super().__init__(
            forward=lambda u: elliptic1d_forward(u, self.x1, self.x2),
            obs=obs,
            noise_cov=noise_std**2 * np.eye(2),
            prior_cov=prior_std**2 * np.eye(2),
            jacobian=lambda u: elliptic1d_gradient(u, self.x1, self.x2),
            batch_forward=lambda us: elliptic1d_forward(us, self.x1, self.x2),
        )


def elliptic1d_initial_positions(rng, count: int) -> np.ndarray:
    """``u1 ~ N(-3.5, 0.1^2)``, ``u2 ~ U(70, 110)``; returns ``(2, count)``."""
    return np.vstack([rng.normal(-3.5, 0.1, count), rng.uniform(70.0, 110.0, count)])
