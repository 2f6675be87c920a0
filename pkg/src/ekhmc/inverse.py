"""Bayesian inverse problems with Gaussian prior and Gaussian observation noise.

The negative log posterior is

    Phi(q) = 1/2 |y - G(q)|^2_Gamma + 1/2 |q - m0|^2_Gamma0,

with ``|v|^2_C = v^T C^{-1} v``.  Both covariances keep a Cholesky factor and
its triangular inverse, so weighted norms never form a dense inverse.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .errors import EvaluationError, InvalidInputError

THREADS_ENV = "EKHMC_NUM_THREADS"


def default_workers() -> int:
    """Thread cap for batched forward evaluations (env override, else CPU count)."""
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            raise InvalidInputError(f"{THREADS_ENV} must be an integer, got {value!r}")
    return os.cpu_count() or 1


def _spd_factor(matrix, name):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.shape[0] != matrix.shape[1]:
        raise InvalidInputError(f"{name} must be square")
    if not np.allclose(matrix, matrix.T, rtol=1e-10, atol=1e-14):
        raise InvalidInputError(f"{name} must be symmetric")
    try:
        factor = sla.cho_factor(matrix, lower=True)
    except np.linalg.LinAlgError:
        raise InvalidInputError(f"{name} must be positive definite") from None
    return matrix, factor


class InverseProblem:
    """Forward map, data and Gaussian covariances defining the potential.

    Parameters
    ----------
    forward : callable
        Maps a length-``N`` vector to a length-``J`` vector.  Must be a pure
        function of its argument.
    obs : array_like, shape (J,)
        Observed data ``y``.
    noise_cov : array_like, shape (J, J)
        Observation noise covariance.
    prior_cov : array_like, shape (N, N)
        Prior covariance.
    prior_mean : array_like, shape (N,), optional
        Defaults to zero.  A nonzero mean arises when a zero-mean problem is
        pulled back through an affine change of variables.
    jacobian : callable, optional
        ``q -> dG/dq`` of shape ``(J, N)``; enables exact gradients.
    batch_forward : callable, optional
        Vectorised forward map on ``(N, I)`` position matrices.
    """

    def __init__(
        self,
        forward: Callable,
        obs,
        noise_cov,
        prior_cov,
        prior_mean=None,
        jacobian: Callable | None = None,
        batch_forward: Callable | None = None,
    ):
        self.forward = forward
        self.obs = np.atleast_1d(np.asarray(obs, dtype=float))
        self.noise_cov, self._noise_factor = _spd_factor(noise_cov, "noise_cov")
        self.prior_cov, self._prior_factor = _spd_factor(prior_cov, "prior_cov")
        if self.noise_cov.shape[0] != self.obs.shape[0]:
            raise InvalidInputError("noise_cov does not match the data dimension")
        n = self.prior_cov.shape[0]
        self.prior_mean = np.zeros(n) if prior_mean is None else np.asarray(prior_mean, dtype=float)
        if self.prior_mean.shape != (n,):
            raise InvalidInputError("prior_mean does not match the prior covariance")
        self.jacobian = jacobian
        self.batch_forward = batch_forward
        # inverse Cholesky factors: |v|_C = |L^{-1} v|
        self.noise_whitener = sla.solve_triangular(
            self._noise_factor[0], np.eye(self.obs_dim), lower=True)
        self.prior_whitener = sla.solve_triangular(
            self._prior_factor[0], np.eye(n), lower=True)

    @property
    def dim(self) -> int:
        return self.prior_cov.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.obs.shape[0]

    @property
    def has_gradient(self) -> bool:
        return self.jacobian is not None

    def noise_solve(self, v):
        return sla.cho_solve(self._noise_factor, v, check_finite=False)

    def prior_solve(self, v):
        return sla.cho_solve(self._prior_factor, v, check_finite=False)

    @staticmethod
    def _weighted_sq(whitener, v):
        w = whitener @ v
        return float(w @ w)

    def evaluate(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        g = np.atleast_1d(np.asarray(self.forward(q), dtype=float))
        if g.shape != self.obs.shape:
            raise InvalidInputError(
                f"forward map returned shape {g.shape}, data has shape {self.obs.shape}"
            )
        return g

    def misfit(self, q, g=None) -> float:
        """Data term ``1/2 |y - G(q)|^2_Gamma``."""
        if g is None:
            g = self.evaluate(q)
        return 0.5 * self._weighted_sq(self.noise_whitener, self.obs - g)

    def prior_term(self, q) -> float:
        return 0.5 * self._weighted_sq(self.prior_whitener, np.asarray(q, dtype=float) - self.prior_mean)

    def gradient(self, q) -> np.ndarray:
        """Exact ``D Phi(q)``; requires a Jacobian."""
        if self.jacobian is None:
            raise InvalidInputError("this problem has no exact gradient")
        q = np.asarray(q, dtype=float)
        jac = np.atleast_2d(np.asarray(self.jacobian(q), dtype=float))
        residual = self.evaluate(q) - self.obs
        wn, wp = self.noise_whitener, self.prior_whitener
        return jac.T @ (wn.T @ (wn @ residual)) + wp.T @ (wp @ (q - self.prior_mean))

    def gradient_batch(self, positions) -> np.ndarray:
        positions = np.asarray(positions, dtype=float)
        return np.column_stack([self.gradient(positions[:, i]) for i in range(positions.shape[1])])


def potential(problem: InverseProblem, q) -> float:
    """Negative log posterior ``Phi(q)`` (up to the normalising constant)."""
    q = np.asarray(q, dtype=float)
    if q.shape != (problem.dim,):
        raise InvalidInputError(f"expected a vector of length {problem.dim}")
    try:
        g = problem.evaluate(q)
    except InvalidInputError:
        raise
    except Exception as exc:
        raise EvaluationError(f"forward evaluation failed: {exc}") from exc
    return problem.misfit(q, g) + problem.prior_term(q)


def forward_batch(problem: InverseProblem, positions, workers: int | None = None) -> np.ndarray:
    """Evaluate the forward map on every column; returns ``(J, I)``.

    Problems with a vectorised ``batch_forward`` use it directly.  Otherwise
    columns are evaluated independently, concurrently when ``workers > 1``;
    the result does not depend on scheduling.
    """
    positions = np.asarray(positions, dtype=float)
    if positions.ndim == 1:
        positions = positions[:, None]
    if positions.shape[0] != problem.dim or positions.shape[1] < 1:
        raise InvalidInputError("positions must be an (N, I) matrix with I >= 1")
    if problem.batch_forward is not None:
        out = np.asarray(problem.batch_forward(positions), dtype=float)
        if out.shape != (problem.obs_dim, positions.shape[1]):
            raise InvalidInputError("batch forward map returned the wrong shape")
        return out
    count = positions.shape[1]

    def one(i):
        try:
            return problem.evaluate(positions[:, i])
        except Exception as exc:
            raise EvaluationError(f"forward evaluation failed for particle {i}: {exc}", index=i) from exc

    workers = default_workers() if workers is None else workers
    if workers > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=min(workers, count)) as pool:
            columns = list(pool.map(one, range(count)))
    else:
        columns = [one(i) for i in range(count)]
    return np.column_stack(columns)


class LinearProblem(InverseProblem):
    """Inverse problem with forward map ``q -> A q`` and zero prior mean.

    Exposes the posterior precision ``B^{-1} = A^T Gamma^{-1} A + Gamma0^{-1}``,
    the posterior covariance ``post_cov`` (``B``) and ``post_shift`` (``c``).
    """

    def __init__(self, A, obs, noise_cov, prior_cov):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        self.A = A
        super().__init__(
            forward=lambda q: A @ q,
            obs=obs,
            noise_cov=noise_cov,
            prior_cov=prior_cov,
            jacobian=lambda q: A,
            batch_forward=lambda qs: A @ qs,
        )
        if A.shape != (self.obs_dim, self.dim):
            raise InvalidInputError(f"A must have shape {(self.obs_dim, self.dim)}")
        precision = A.T @ self.noise_solve(A) + self.prior_solve(np.eye(self.dim))
        self.post_precision = 0.5 * (precision + precision.T)
        self._precision_factor = sla.cho_factor(self.post_precision, lower=True)
        cov = sla.cho_solve(self._precision_factor, np.eye(self.dim))
        self.post_cov = 0.5 * (cov + cov.T)
        self.post_shift = A.T @ self.noise_solve(self.obs)

    def gradient(self, q):
        return linear_gradient(self, q)

    def gradient_batch(self, positions):
        return linear_gradient(self, positions)


def linear_gradient(problem: LinearProblem, q) -> np.ndarray:
    """``B^{-1} q - c``; accepts a vector or an ``(N, I)`` matrix of columns."""
    q = np.asarray(q, dtype=float)
    shift = problem.post_shift if q.ndim == 1 else problem.post_shift[:, None]
    return problem.post_precision @ q - shift


def posterior_moments(problem: LinearProblem):
    """Posterior mean ``B c`` and covariance ``B``."""
    mean = sla.cho_solve(problem._precision_factor, problem.post_shift)
    return mean, problem.post_cov.copy()


def random_linear_problem(rng, dim: int, obs_dim: int | None = None, noise_std: float = 0.5,
                          prior_std: float = 2.0) -> LinearProblem:
    """A well-posed random linear problem, used by tests and the CLI."""
    obs_dim = dim if obs_dim is None else obs_dim
    A = rng.standard_normal((obs_dim, dim))
    truth = prior_std * rng.standard_normal(dim)
    y = A @ truth + noise_std * rng.standard_normal(obs_dim)
    return LinearProblem(A, y, noise_std**2 * np.eye(obs_dim), prior_std**2 * np.eye(dim))
