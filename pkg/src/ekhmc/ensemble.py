"""Ensemble state and the covariance primitives used by every sampler step.

Positions and momenta are stored column-wise: an ensemble of ``I`` particles
in dimension ``N`` is a pair of ``(N, I)`` arrays.  Covariances use the
biased ``1/I`` normalisation throughout; the finite-size correction terms of
the samplers depend on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .errors import InvalidInputError

# Ensembles larger than this draw noise through an N-dimensional canonical
# basis of the row space of Q instead of a full I x I Gaussian matrix.
FULL_NOISE_MAX_COUNT = 256
_BASIS_SEED = 20220611
_SINGULAR_RCOND = 1e-12


@dataclass(frozen=True)
class Ensemble:
    """Positions and momenta of ``count`` particles in dimension ``dim``.

    ``forward_values`` optionally caches the forward map evaluated at the
    positions (a ``(J, I)`` array); it is carried along by the samplers so a
    step does not repeat work, and is never part of equality.
    """

    positions: np.ndarray
    momenta: np.ndarray
    forward_values: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        q = np.asarray(self.positions, dtype=float)
        p = np.asarray(self.momenta, dtype=float)
        if q.ndim != 2:
            raise InvalidInputError("positions must be an (N, I) matrix")
        if q.shape != p.shape:
            raise InvalidInputError(
                f"positions {q.shape} and momenta {p.shape} must have the same shape"
            )
        if q.shape[0] < 1 or q.shape[1] < 2:
            raise InvalidInputError("an ensemble needs N >= 1 and at least two particles")
        object.__setattr__(self, "positions", q)
        object.__setattr__(self, "momenta", p)

    @property
    def dim(self) -> int:
        return self.positions.shape[0]

    @property
    def count(self) -> int:
        return self.positions.shape[1]

    @classmethod
    def at_rest(cls, positions) -> "Ensemble":
        q = np.asarray(positions, dtype=float)
        return cls(q, np.zeros_like(q))

    def replace(self, positions=None, momenta=None, forward_values=None) -> "Ensemble":
        """Copy with new blocks; the forward cache survives only if positions do."""
        if positions is None:
            positions = self.positions
            if forward_values is None:
                forward_values = self.forward_values
        return Ensemble(positions, self.momenta if momenta is None else momenta, forward_values)


@dataclass(frozen=True)
class CenteredSpread:
    """Ensemble mean, deviation matrix ``Q`` and covariance ``Q Q^T / I``."""

    mean: np.ndarray
    centered: np.ndarray
    covariance: np.ndarray

    @property
    def dim(self) -> int:
        return self.centered.shape[0]

    @property
    def count(self) -> int:
        return self.centered.shape[1]


def _as_matrix(positions) -> np.ndarray:
    q = np.asarray(positions, dtype=float)
    if q.ndim == 1:
        q = q[:, None]
    if q.ndim != 2:
        raise InvalidInputError("positions must be an (N, I) matrix")
    return q


def ensemble_mean(positions) -> np.ndarray:
    """Arithmetic mean of the columns."""
    q = _as_matrix(positions)
    if q.shape[1] == 0 or q.shape[0] == 0:
        raise InvalidInputError("empty ensemble")
    return q.mean(axis=1)


def ensemble_covariance(positions) -> CenteredSpread:
    """Mean, centred deviations and the ``1/I`` ensemble covariance."""
    q = _as_matrix(positions)
    if q.shape[1] < 2:
        raise InvalidInputError("ensemble covariance needs at least two particles")
    mean = ensemble_mean(q)
    centered = q - mean[:, None]
    cov = centered @ centered.T / q.shape[1]
    cov = 0.5 * (cov + cov.T)
    return CenteredSpread(mean, centered, cov)


def generalized_sqrt(spread: CenteredSpread) -> np.ndarray:
    """The ``(N, I)`` factor ``S = Q / sqrt(I)`` with ``S S^T = C_q``."""
    return spread.centered / np.sqrt(spread.count)


def covariance_solve(spread: CenteredSpread, rhs) -> np.ndarray:
    """Solve ``C_q x = rhs``, regularising when ``C_q`` is numerically singular.

    The shift is ``1e-10 * trace(C_q) / N`` times the identity.  A collapsed
    ensemble (zero covariance) has nothing to invert and returns zeros, which
    is the right limit for every caller since the right-hand sides built from
    ``Q`` vanish with it.
    """
    cov = spread.covariance
    rhs = np.asarray(rhs, dtype=float)
    n = cov.shape[0]
    trace = float(np.trace(cov))
    if trace <= 0.0:
        return np.zeros_like(rhs)
    if spread.count > n:
        try:
            factor = sla.cho_factor(cov, lower=True, check_finite=False)
            diag = np.abs(np.diag(factor[0]))
            if diag.min() ** 2 > _SINGULAR_RCOND * diag.max() ** 2:
                return sla.cho_solve(factor, rhs, check_finite=False)
        except np.linalg.LinAlgError:
            pass
    shifted = cov + (1e-10 * trace / n) * np.eye(n)
    return sla.solve(shifted, rhs, assume_a="pos", check_finite=False)


@lru_cache(maxsize=16)
def _probe_matrix(count: int, dim: int) -> np.ndarray:
    probe = np.random.default_rng(_BASIS_SEED).standard_normal((count, dim))
    probe.setflags(write=False)
    return probe


def _row_space_factor(centered: np.ndarray) -> np.ndarray | None:
    """``Q V`` for a canonical orthonormal basis ``V`` of the row space of ``Q``.

    ``V`` is the Q-factor of ``P E`` where ``P`` projects onto the row space and
    ``E`` is a fixed probe matrix.  ``P`` is unchanged by ``Q -> A Q`` for any
    invertible ``A``, so the factor transforms exactly like ``Q``.  Returns
    None when ``Q Q^T`` is too ill conditioned to build the projector.
    """
    n, count = centered.shape
    gram = centered @ centered.T
    try:
        factor = sla.cho_factor(gram, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return None
    diag = np.abs(np.diag(factor[0]))
    if diag.min() ** 2 <= 1e-10 * diag.max() ** 2:
        return None
    probe = _probe_matrix(count, n)
    projected = centered.T @ sla.cho_solve(factor, centered @ probe, check_finite=False)
    basis, r = np.linalg.qr(projected)
    basis = basis * np.sign(np.diag(r))
    return centered @ basis


def preconditioned_noise(spread: CenteredSpread, scale: float, rng, method: str = "auto") -> np.ndarray:
    """Draw an ``(N, I)`` noise matrix whose columns are iid ``N(0, scale*C_q)``.

    ``method="full"`` realises ``sqrt(scale) * (Q/sqrt(I)) @ Xi`` with ``Xi`` an
    ``I x I`` standard normal matrix, column ``i`` driving particle ``i``.
    ``method="reduced"`` draws only an ``N x I`` Gaussian and maps it through
    ``Q V`` (see :func:`_row_space_factor`); the joint law is identical and the
    affine equivariance of the full form is kept.  ``"auto"`` uses the full
    form for ensembles of at most ``FULL_NOISE_MAX_COUNT`` particles.
    """
    if not scale > 0:
        raise InvalidInputError("noise scale must be positive")
    if method not in ("auto", "full", "reduced"):
        raise InvalidInputError(f"unknown noise method {method!r}")
    n, count = spread.centered.shape
    amplitude = np.sqrt(scale / count)
    if method == "reduced" or (method == "auto" and count > FULL_NOISE_MAX_COUNT):
        if count > n:
            factor = _row_space_factor(spread.centered)
            if factor is not None:
                return amplitude * (factor @ rng.standard_normal((n, count)))
        if count > FULL_NOISE_MAX_COUNT:
            # rank-deficient Q: thin SVD keeps the law, not the equivariance
            u, s, _ = np.linalg.svd(spread.centered, full_matrices=False)
            return amplitude * ((u * s) @ rng.standard_normal((len(s), count)))
    xi = rng.standard_normal((count, count))
    return amplitude * (spread.centered @ xi)


def affine_map(ensemble: Ensemble, A, b) -> Ensemble:
    """Push an ensemble through ``q -> A q + b``, ``p -> A p``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    n = ensemble.dim
    if A.shape != (n, n) or b.shape != (n,):
        raise InvalidInputError("affine map dimensions do not match the ensemble")
    if np.linalg.cond(A) > 1e14:
        raise InvalidInputError("affine map matrix is singular")
    return Ensemble(A @ ensemble.positions + b[:, None], A @ ensemble.momenta)
