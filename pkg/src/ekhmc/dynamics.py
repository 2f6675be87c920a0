"""Ensemble Kalman hybrid Monte Carlo (EKHMC).

Second-order ensemble Langevin dynamics with the ensemble covariance as
preconditioner and mass matrix, plus the finite-size drift corrections that
make the product of posteriors invariant for a finite ensemble.  Time
stepping splits each iteration into a kick-drift-kick Hamiltonian substep and
an exact Ornstein-Uhlenbeck update of the momenta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import (
    Ensemble,
    CenteredSpread,
    covariance_solve,
    ensemble_covariance,
    preconditioned_noise,
)
from .errors import InvalidInputError, SamplerError
from .inverse import InverseProblem, forward_batch, potential

MODES = ("gradient-free", "exact")
MOMENTUM_INITS = ("zero", "gaussian-prior-cov")
ADAPT_NORMS = ("frobenius", "rms")

# stream tags for counter-based random substreams
_STEP_STREAM = 1
_INIT_STREAM = 2


def step_rng(seed: int, iteration: int, stream: int = _STEP_STREAM) -> np.random.Generator:
    """Random stream owned by one (seed, iteration) pair."""
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, stream, iteration])


@dataclass(frozen=True)
class SamplerConfig:
    gamma: float = 1.0
    eps: float = 0.1
    adapt_a: float = 0.0
    iters: int = 100
    seed: int = 0
    momentum_init: str = "zero"
    mode: str = "gradient-free"
    noise: str = "auto"
    adapt_norm: str = "frobenius"

    def __post_init__(self):
        if not self.gamma > 0:
            raise InvalidInputError("gamma must be positive")
        if not self.eps > 0:
            raise InvalidInputError("eps must be positive")
        if not self.adapt_a >= 0:
            raise InvalidInputError("adapt_a must be nonnegative")
        if int(self.iters) != self.iters or self.iters < 1:
            raise InvalidInputError("iters must be a positive integer")
        if self.momentum_init not in MOMENTUM_INITS:
            raise InvalidInputError(f"momentum_init must be one of {MOMENTUM_INITS}")
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}")
        if self.noise not in ("auto", "full", "reduced"):
            raise InvalidInputError("noise must be auto, full or reduced")
        if self.adapt_norm not in ADAPT_NORMS:
            raise InvalidInputError(f"adapt_norm must be one of {ADAPT_NORMS}")


@dataclass(frozen=True)
class StepRecord:
    iter: int
    eff_step: float
    mean_q: np.ndarray
    cov_eigs: np.ndarray
    force_norm: float


def _record(iteration, eff_step, positions, force_norm) -> StepRecord:
    spread = ensemble_covariance(positions)
    eigs = np.linalg.eigvalsh(spread.covariance)[::-1]
    return StepRecord(iteration, float(eff_step), spread.mean, eigs, float(force_norm))


def _finite_size_terms(spread: CenteredSpread, momenta: np.ndarray) -> np.ndarray:
    """``(1/I) p p^T C^{-1} qhat + ((1+N)/I) qhat`` for every particle."""
    n, count = spread.centered.shape
    weighted = covariance_solve(spread, spread.centered)
    coef = np.einsum("ij,ij->j", momenta, weighted)
    return (momenta * coef + (1 + n) * spread.centered) / count


def force_exact(problem: InverseProblem, ensemble: Ensemble, cov=None) -> np.ndarray:
    """Momentum force using the exact gradient of the potential.

    With ``cov`` given, that matrix replaces the ensemble covariance and is
    treated as constant, so the finite-size corrections drop out; this is the
    plain preconditioned Hamiltonian force used for conservation checks.
    """
    grads = problem.gradient_batch(ensemble.positions)
    if cov is not None:
        return -np.asarray(cov, dtype=float) @ grads
    spread = ensemble_covariance(ensemble.positions)
    return -spread.covariance @ grads + _finite_size_terms(spread, ensemble.momenta)


def force_gradient_free(problem: InverseProblem, ensemble: Ensemble, gvals) -> np.ndarray:
    """Momentum force with ``C_q D Phi`` replaced by ensemble differences.

    ``gvals`` holds the forward map at each particle, shape ``(J, I)``.  For a
    linear forward map the difference approximation is exact and this equals
    :func:`force_exact`.
    """
    gvals = np.asarray(gvals, dtype=float)
    if gvals.shape != (problem.obs_dim, ensemble.count):
        raise InvalidInputError(
            f"forward values have shape {gvals.shape}, expected {(problem.obs_dim, ensemble.count)}"
        )
    spread = ensemble_covariance(ensemble.positions)
    count = ensemble.count
    dg = gvals - gvals.mean(axis=1, keepdims=True)
    weighted_residual = problem.noise_solve(gvals - problem.obs[:, None])
    # sum_k <G_k - Gbar, G_i - y>_Gamma q_k; the weights sum to zero so qhat_k
    # may stand in for q_k, which avoids cancellation for off-centre ensembles
    data = (spread.centered @ dg.T) @ weighted_residual / count
    prior = spread.covariance @ problem.prior_solve(ensemble.positions - problem.prior_mean[:, None])
    return -prior - data + _finite_size_terms(spread, ensemble.momenta)


def _force(problem, ensemble: Ensemble, mode: str, cov=None):
    """Force plus an ensemble carrying forward values for its positions."""
    if mode == "exact":
        return force_exact(problem, ensemble, cov=cov), ensemble
    if mode != "gradient-free":
        raise InvalidInputError(f"unknown mode {mode!r}")
    if ensemble.forward_values is None:
        ensemble = ensemble.replace(forward_values=forward_batch(problem, ensemble.positions))
    return force_gradient_free(problem, ensemble, ensemble.forward_values), ensemble


def force_magnitude(force, norm: str = "frobenius") -> float:
    """Size ``|F|`` of a force matrix entering the adaptive step.

    ``"frobenius"`` is the Frobenius norm over all particles; ``"rms"`` divides
    it by ``sqrt(I)``, which makes the per-particle step independent of the
    ensemble size.
    """
    force = np.atleast_2d(np.asarray(force, dtype=float))
    total = float(np.linalg.norm(force))
    if norm == "frobenius":
        return total
    if norm == "rms":
        return total / np.sqrt(force.shape[1])
    raise InvalidInputError(f"norm must be one of {ADAPT_NORMS}")


def adaptive_step(eps: float, a: float, force, norm: str = "frobenius") -> float:
    """Step size ``eps / (a |F| + 1)``, see :func:`force_magnitude`."""
    if not eps > 0:
        raise InvalidInputError("eps must be positive")
    if not a >= 0:
        raise InvalidInputError("adaptive coefficient must be nonnegative")
    return eps / (a * force_magnitude(force, norm) + 1.0)


def hamiltonian_substep(problem, ensemble: Ensemble, eps_eff: float, mode: str = "gradient-free",
                        force=None, cov=None) -> Ensemble:
    """Kick-drift-kick over ``eps_eff``; forces are recomputed at the second kick.

    ``force`` may pass in the force already evaluated at ``ensemble``.
    """
    if not eps_eff > 0:
        raise InvalidInputError("step size must be positive")
    if force is None:
        force, ensemble = _force(problem, ensemble, mode, cov)
    half = 0.5 * eps_eff
    p_half = ensemble.momenta + half * force
    moved = Ensemble(ensemble.positions + eps_eff * p_half, p_half)
    force_new, moved = _force(problem, moved, mode, cov)
    return moved.replace(momenta=p_half + half * force_new)


def ou_substep(ensemble: Ensemble, gamma: float, eps_eff: float, rng, noise: str = "auto") -> Ensemble:
    """Exact OU update of momenta with covariance-preconditioned noise.

    ``p <- exp(-gamma h) p + eta``, ``eta ~ N(0, (1 - exp(-2 gamma h)) C_q)`` with
    ``C_q`` from the current positions.
    """
    if not gamma > 0:
        raise InvalidInputError("gamma must be positive")
    decay = np.exp(-gamma * eps_eff)
    variance = -np.expm1(-2.0 * gamma * eps_eff)
    spread = ensemble_covariance(ensemble.positions)
    momenta = decay * ensemble.momenta
    if variance > 0:
        momenta = momenta + preconditioned_noise(spread, variance, rng, method=noise)
    return ensemble.replace(momenta=momenta)


def ekhmc_step(problem, ensemble: Ensemble, cfg: SamplerConfig, rng, iteration: int = 0):
    """One EKHMC iteration; returns the new ensemble and its trace record."""
    force, ensemble = _force(problem, ensemble, cfg.mode)
    eps_eff = adaptive_step(cfg.eps, cfg.adapt_a, force, cfg.adapt_norm)
    moved = hamiltonian_substep(problem, ensemble, eps_eff, cfg.mode, force=force)
    out = ou_substep(moved, cfg.gamma, eps_eff, rng, noise=cfg.noise)
    return out, _record(iteration, eps_eff, out.positions, force_magnitude(force, cfg.adapt_norm))


def initial_ensemble(positions, cfg: SamplerConfig) -> Ensemble:
    """Attach momenta to initial positions according to ``cfg.momentum_init``."""
    positions = np.asarray(positions, dtype=float)
    if cfg.momentum_init == "zero":
        return Ensemble.at_rest(positions)
    spread = ensemble_covariance(positions)
    rng = step_rng(cfg.seed, 0, _INIT_STREAM)
    return Ensemble(positions, preconditioned_noise(spread, 1.0, rng, method=cfg.noise))


def run_sampler(problem, init: Ensemble, cfg: SamplerConfig, callback=None):
    """Run ``cfg.iters`` EKHMC steps.

    Iteration ``k`` (1-based) draws from ``step_rng(cfg.seed, k)``, so a run is
    reproducible from the seed alone.  ``callback(k, ensemble, record)`` is
    invoked after every step.  On failure a :class:`SamplerError` carries the
    last good ensemble and the partial trace.
    """
    ensemble = init
    trace: list[StepRecord] = []
    for k in range(1, cfg.iters + 1):
        try:
            ensemble, record = ekhmc_step(problem, ensemble, cfg, step_rng(cfg.seed, k), iteration=k)
        except Exception as exc:
            raise SamplerError(f"EKHMC failed at iteration {k}: {exc}", ensemble, trace) from exc
        if not np.all(np.isfinite(ensemble.positions)):
            raise SamplerError(f"non-finite positions at iteration {k}", ensemble, trace)
        trace.append(record)
        if callback is not None:
            callback(k, ensemble, record)
    return ensemble, trace


def frozen_hamiltonian(problem, ensemble: Ensemble, cov) -> float:
    """``sum_i 1/2 p_i^T C^{-1} p_i + Phi(q_i)`` for a fixed mass matrix ``C``."""
    cov = np.asarray(cov, dtype=float)
    kinetic = 0.5 * np.einsum("ij,ij->", ensemble.momenta, np.linalg.solve(cov, ensemble.momenta))
    return kinetic + sum(potential(problem, q) for q in ensemble.positions.T)
