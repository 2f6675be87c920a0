"""Reference samplers: the first-order ensemble Kalman sampler, pCN and HMC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import StepRecord, _record, adaptive_step, force_gradient_free, force_magnitude, step_rng
from .ensemble import Ensemble, ensemble_covariance, preconditioned_noise
from .errors import InvalidInputError, SamplerError
from .inverse import InverseProblem, forward_batch, potential


def eks_drift(problem: InverseProblem, positions, gvals=None) -> np.ndarray:
    """Position drift of the ensemble Kalman sampler.

    This is the EKHMC momentum force evaluated with zero momenta: the
    difference-approximated preconditioned gradient plus the
    ``((1+N)/I)(q - qbar)`` finite-size correction.
    """
    positions = np.asarray(positions, dtype=float)
    if gvals is None:
        gvals = forward_batch(problem, positions)
    return force_gradient_free(problem, Ensemble.at_rest(positions), gvals)


def eks_step(problem: InverseProblem, positions, eps: float, a: float, rng,
             noise: str = "auto", return_step: bool = False, adapt_norm: str = "frobenius"):
    """One explicit Euler-Maruyama step of the ensemble Kalman sampler.

    ``q <- q + h drift + sqrt(2 h) * noise`` where each noise column is
    ``N(0, C_q)`` and ``h = eps / (a |drift| + 1)``, the same rule as EKHMC.
    """
    positions = np.asarray(positions, dtype=float)
    if positions.shape[1] < 2:
        raise InvalidInputError("EKS needs at least two particles")
    drift = eks_drift(problem, positions)
    h = adaptive_step(eps, a, drift, adapt_norm)
    spread = ensemble_covariance(positions)
    new = positions + h * drift + preconditioned_noise(spread, 2.0 * h, rng, method=noise)
    if return_step:
        return new, h, force_magnitude(drift, adapt_norm)
    return new


def run_eks(problem, positions, eps: float, a: float, iters: int, seed: int = 0,
            noise: str = "auto", callback=None, adapt_norm: str = "frobenius"):
    """Iterate :func:`eks_step`; returns final positions and a StepRecord trace.

    Uses the same per-iteration random streams as the EKHMC driver.
    """
    q = np.asarray(positions, dtype=float)
    trace: list[StepRecord] = []
    for k in range(1, iters + 1):
        try:
            q, h, fnorm = eks_step(problem, q, eps, a, step_rng(seed, k), noise=noise, return_step=True,
                                   adapt_norm=adapt_norm)
        except Exception as exc:
            raise SamplerError(f"EKS failed at iteration {k}: {exc}", Ensemble.at_rest(q), trace) from exc
        if not np.all(np.isfinite(q)):
            raise SamplerError(f"non-finite positions at iteration {k}", Ensemble.at_rest(q), trace)
        record = _record(k, h, q, fnorm)
        trace.append(record)
        if callback is not None:
            callback(k, q, record)
    return q, trace


@dataclass(frozen=True)
class PcnConfig:
    beta: float = 0.1
    iters: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise InvalidInputError("beta must lie in (0, 1]")
        if int(self.iters) != self.iters or self.iters < 1:
            raise InvalidInputError("iters must be a positive integer")


def _prior_draw(problem: InverseProblem, z):
    return problem._prior_factor[0] @ z


def pcn_step(problem: InverseProblem, q, cfg: PcnConfig, rng):
    """One preconditioned Crank-Nicolson step.

    Proposal ``m0 + sqrt(1 - beta^2)(q - m0) + beta xi`` with ``xi ~ N(0, Gamma0)``,
    accepted with probability ``min(1, exp(misfit(q) - misfit(q')))``.  The
    prior term never enters the acceptance ratio.
    """
    q = np.asarray(q, dtype=float)
    new, accepted, _ = _pcn_move(problem, q, problem.misfit(q), cfg.beta,
                                 rng.standard_normal(problem.dim), rng.random())
    return new, accepted


def _pcn_move(problem, q, misfit_q, beta, z, u):
    m0 = problem.prior_mean
    proposal = m0 + np.sqrt(1.0 - beta * beta) * (q - m0) + beta * _prior_draw(problem, z)
    misfit_new = problem.misfit(proposal)
    log_ratio = misfit_q - misfit_new
    if log_ratio >= 0 or np.log(u) < log_ratio:
        return proposal, True, misfit_new
    return q, False, misfit_q


def pcn_chain(problem: InverseProblem, q0, cfg: PcnConfig, thin: int = 1):
    """Run ``cfg.iters`` pCN steps from ``q0``.

    Returns ``(samples, acceptance_rate)`` with ``samples`` of shape
    ``(iters // thin, N)``.  Random numbers come in blocks from one stream
    seeded by ``cfg.seed``.
    """
    rng = np.random.default_rng(cfg.seed)
    q = np.asarray(q0, dtype=float).copy()
    misfit_q = problem.misfit(q)
    samples = np.empty((cfg.iters // thin, problem.dim))
    accepted = 0
    block = 8192
    for start in range(0, cfg.iters, block):
        stop = min(start + block, cfg.iters)
        zs = rng.standard_normal((stop - start, problem.dim))
        us = rng.random(stop - start)
        for j in range(stop - start):
            q, ok, misfit_q = _pcn_move(problem, q, misfit_q, cfg.beta, zs[j], us[j])
            accepted += ok
            k = start + j + 1
            if k % thin == 0:
                samples[k // thin - 1] = q
    return samples, accepted / cfg.iters


def _leapfrog(problem, q, p, eps, steps):
    p = p - 0.5 * eps * problem.gradient(q)
    for i in range(steps):
        q = q + eps * p
        if i < steps - 1:
            p = p - eps * problem.gradient(q)
    p = p - 0.5 * eps * problem.gradient(q)
    return q, p


def hmc_energy_error(problem, q, p, eps: float, steps: int) -> float:
    """``H(end) - H(start)`` along one leapfrog trajectory (identity mass)."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    q1, p1 = _leapfrog(problem, q, p, eps, steps)
    return (potential(problem, q1) + 0.5 * p1 @ p1) - (potential(problem, q) + 0.5 * p @ p)


def hmc_step(problem: InverseProblem, q, leapfrog_eps: float, leapfrog_L: int, rng):
    """One identity-mass HMC transition with Metropolis correction."""
    if leapfrog_L < 1:
        raise InvalidInputError("HMC needs at least one leapfrog step")
    if not leapfrog_eps > 0:
        raise InvalidInputError("leapfrog step must be positive")
    if not problem.has_gradient:
        raise InvalidInputError("HMC requires a problem with an exact gradient")
    q = np.asarray(q, dtype=float)
    p = rng.standard_normal(problem.dim)
    q1, p1 = _leapfrog(problem, q, p, leapfrog_eps, leapfrog_L)
    dh = (potential(problem, q1) + 0.5 * p1 @ p1) - (potential(problem, q) + 0.5 * p @ p)
    if np.isfinite(dh) and (dh <= 0 or np.log(rng.random()) < -dh):
        return q1, True
    return q, False


def hmc_chain(problem, q0, leapfrog_eps: float, leapfrog_L: int, iters: int, seed: int = 0):
    """Run ``iters`` HMC transitions; returns ``(samples, acceptance_rate)``."""
    rng = np.random.default_rng(seed)
    q = np.asarray(q0, dtype=float).copy()
    samples = np.empty((iters, problem.dim))
    accepted = 0
    for k in range(iters):
        q, ok = hmc_step(problem, q, leapfrog_eps, leapfrog_L, rng)
        accepted += ok
        samples[k] = q
    return samples, accepted / iters
