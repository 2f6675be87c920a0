"""Mean-field moment equations for linear-Gaussian problems.

For a linear forward map the mean-field dynamics keep Gaussian laws Gaussian,
and the mean and covariance blocks obey a closed ODE system.  This module
integrates that system, maps it to the problem-independent coordinates
``x1 = B^{1/2}(B^{-1} m_q - c)``, ``x2 = B^{-1/2} m_p``, ``X = B^{-1/2} C_q B^{-1/2}``
(and likewise ``Y``, ``Z`` for ``C_p``, ``C_qp``), and analyses the local
convergence rate as a function of the damping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .ensemble import Ensemble
from .errors import InvalidInputError, NumericalError
from .inverse import LinearProblem, posterior_moments


@dataclass(frozen=True)
class MomentState:
    m_q: np.ndarray
    m_p: np.ndarray
    C_q: np.ndarray
    C_p: np.ndarray
    C_qp: np.ndarray

    @property
    def dim(self) -> int:
        return self.m_q.shape[0]

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.m_q, self.m_p, self.C_q.ravel(), self.C_p.ravel(), self.C_qp.ravel()])

    @classmethod
    def unflatten(cls, v, n: int) -> "MomentState":
        nn = n * n
        return cls(
            v[:n].copy(),
            v[n:2 * n].copy(),
            v[2 * n:2 * n + nn].reshape(n, n).copy(),
            v[2 * n + nn:2 * n + 2 * nn].reshape(n, n).copy(),
            v[2 * n + 2 * nn:].reshape(n, n).copy(),
        )

    def mean(self) -> np.ndarray:
        return np.concatenate([self.m_q, self.m_p])

    def covariance(self) -> np.ndarray:
        return np.block([[self.C_q, self.C_qp], [self.C_qp.T, self.C_p]])

    @classmethod
    def gibbs(cls, problem: LinearProblem) -> "MomentState":
        """The non-degenerate steady state ``(Bc, 0, B, B, 0)``."""
        mean, cov = posterior_moments(problem)
        n = problem.dim
        return cls(mean, np.zeros(n), cov.copy(), cov.copy(), np.zeros((n, n)))

    @classmethod
    def from_ensemble(cls, ensemble: Ensemble) -> "MomentState":
        """Empirical moments of an ensemble (``1/I`` normalisation)."""
        z = np.vstack([ensemble.positions, ensemble.momenta])
        mean = z.mean(axis=1)
        dz = z - mean[:, None]
        cov = dz @ dz.T / z.shape[1]
        n = ensemble.dim
        return cls(mean[:n], mean[n:], cov[:n, :n], cov[n:, n:], cov[:n, n:])


def moment_rhs(s: MomentState, problem: LinearProblem, gamma: float) -> MomentState:
    """Time derivative of every moment block under the mean-field dynamics."""
    if not gamma > 0:
        raise InvalidInputError("gamma must be positive")
    prec = problem.post_precision
    c = problem.post_shift
    cq_prec_cqp = s.C_q @ prec @ s.C_qp
    return MomentState(
        m_q=s.m_p.copy(),
        m_p=-s.C_q @ (prec @ s.m_q - c) - gamma * s.m_p,
        C_q=s.C_qp + s.C_qp.T,
        C_p=-cq_prec_cqp - cq_prec_cqp.T - 2 * gamma * s.C_p + 2 * gamma * s.C_q,
        C_qp=-gamma * s.C_qp - s.C_q @ prec @ s.C_q + s.C_p,
    )


def default_dt(gamma: float) -> float:
    return min(0.01, 0.1 / gamma)


def _rk4(s: MomentState, problem, gamma, dt, steps, t0=0.0):
    n = s.dim
    v = s.flatten()

    def f(x):
        return moment_rhs(MomentState.unflatten(x, n), problem, gamma).flatten()

    for k in range(steps):
        k1 = f(v)
        k2 = f(v + 0.5 * dt * k1)
        k3 = f(v + 0.5 * dt * k2)
        k4 = f(v + dt * k3)
        v = v + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(v)):
            t = t0 + (k + 1) * dt
            raise NumericalError(f"moment ODE diverged at t={t:.6g}", time=t)
    return MomentState.unflatten(v, n)


@dataclass(frozen=True)
class MomentTrajectory:
    times: np.ndarray
    states: list

    @property
    def final(self) -> MomentState:
        return self.states[-1]


def integrate_moments(s0: MomentState, problem: LinearProblem, gamma: float, t_end: float,
                      dt: float | None = None) -> MomentTrajectory:
    """Classical RK4 on the moment ODEs, sampled every ``dt`` up to ``t_end``.

    ``dt`` defaults to ``min(0.01, 0.1/gamma)`` and is shrunk slightly, if
    needed, so that an integer number of steps lands on ``t_end``.
    """
    dt = default_dt(gamma) if dt is None else dt
    if not dt > 0 or t_end < dt * (1 - 1e-12):
        raise InvalidInputError("need dt > 0 and t_end >= dt")
    steps = int(np.ceil(t_end / dt - 1e-9))
    dt = t_end / steps
    states = [s0]
    s = s0
    for k in range(steps):
        s = _rk4(s, problem, gamma, dt, 1, t0=k * dt)
        states.append(s)
    return MomentTrajectory(np.arange(steps + 1) * dt, states)


def moments_at(s0: MomentState, problem: LinearProblem, gamma: float, times,
               dt: float | None = None) -> list:
    """ODE solution at arbitrary increasing times (starting from ``times[0]``)."""
    dt = default_dt(gamma) if dt is None else dt
    times = np.asarray(times, dtype=float)
    out = [s0]
    s = s0
    for t_prev, t_next in zip(times[:-1], times[1:]):
        span = t_next - t_prev
        if span < 0:
            raise InvalidInputError("times must be nondecreasing")
        steps = max(1, int(np.ceil(span / dt - 1e-9)))
        if span > 0:
            s = _rk4(s, problem, gamma, span / steps, steps, t0=t_prev)
        out.append(s)
    return out


def _sym_sqrt(problem: LinearProblem):
    w, v = np.linalg.eigh(problem.post_cov)
    root = (v * np.sqrt(w)) @ v.T
    inv_root = (v / np.sqrt(w)) @ v.T
    return root, inv_root


def to_transformed(s: MomentState, problem: LinearProblem) -> MomentState:
    """Map a state to the ``B``- and ``c``-independent coordinates."""
    root, inv_root = _sym_sqrt(problem)
    return MomentState(
        m_q=root @ (problem.post_precision @ s.m_q - problem.post_shift),
        m_p=inv_root @ s.m_p,
        C_q=inv_root @ s.C_q @ inv_root,
        C_p=inv_root @ s.C_p @ inv_root,
        C_qp=inv_root @ s.C_qp @ inv_root,
    )


def from_transformed(s: MomentState, problem: LinearProblem) -> MomentState:
    """Inverse of :func:`to_transformed`."""
    root, _ = _sym_sqrt(problem)
    mean, _ = posterior_moments(problem)
    return MomentState(
        m_q=root @ s.m_q + mean,
        m_p=root @ s.m_p,
        C_q=root @ s.C_q @ root,
        C_p=root @ s.C_p @ root,
        C_qp=root @ s.C_qp @ root,
    )


def steady_states_transformed(X) -> MomentState:
    """Steady state ``(0, 0, X, X, 0)`` of the transformed system for a projection ``X``.

    ``X = I`` is the stable Gibbs state; any other projection gives a
    degenerate, unstable steady state.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] != X.shape[1]:
        raise InvalidInputError("X must be square")
    if not np.allclose(X, X.T, atol=1e-10) or np.max(np.abs(X @ X - X)) > 1e-10:
        raise InvalidInputError("X must be a symmetric projection (X @ X == X)")
    n = X.shape[0]
    return MomentState(np.zeros(n), np.zeros(n), X.copy(), X.copy(), np.zeros((n, n)))


def gap_cubic(x, gamma):
    """Characteristic polynomial of the linearisation at the Gibbs state."""
    return x**3 + 3 * gamma * x**2 + (2 * gamma**2 + 6) * x + 4 * gamma


def spectral_gap(gamma: float) -> float:
    """Decay rate of the slowest linearised mode at the Gibbs state."""
    if not gamma > 0:
        raise InvalidInputError("gamma must be positive")
    roots = np.roots([1.0, 3 * gamma, 2 * gamma**2 + 6, 4 * gamma])
    return float(-np.max(roots.real))


def optimal_gamma():
    """Closed-form damping maximising the spectral gap, and that gap."""
    x0 = -np.sqrt(12.0 - np.sqrt(128.0))
    gamma0 = -(4.0 + 3.0 * x0**2) / (4.0 * x0)
    return float(gamma0), float(-x0)


def gamma_sweep(gamma_min: float, gamma_max: float, steps: int):
    """Spectral gap on a log-spaced damping grid; returns ``(gammas, gaps)``."""
    if not 0 < gamma_min < gamma_max or steps < 2:
        raise InvalidInputError("need 0 < gamma_min < gamma_max and at least two points")
    gammas = np.geomspace(gamma_min, gamma_max, steps)
    return gammas, np.array([spectral_gap(g) for g in gammas])


@dataclass(frozen=True)
class GaussianityReport:
    times: np.ndarray
    mean_error: np.ndarray
    cov_error: np.ndarray
    skewness: np.ndarray
    excess_kurtosis: np.ndarray

    @property
    def max_moment_error(self) -> float:
        return float(max(self.mean_error.max(), self.cov_error.max()))

    @property
    def max_abs_skewness(self) -> float:
        return float(np.abs(self.skewness).max())

    @property
    def max_abs_kurtosis(self) -> float:
        return float(np.abs(self.excess_kurtosis).max())


def gaussian_preservation_residual(problem: LinearProblem, gamma: float, s0: MomentState,
                                   times, ensembles) -> GaussianityReport:
    """Compare an ensemble trajectory with the moment ODEs and probe Gaussianity.

    ``ensembles[k]`` is the ensemble at ``times[k]``, started from a Gaussian
    with moments ``s0``.  The mean mismatch is ``|m_emp - m_ode|`` over
    ``sqrt(trace C_ode)`` (the mean can pass through zero, so it is measured
    against the spread); the covariance mismatch is the relative Frobenius
    error of the full ``2N x 2N`` covariance.
    """
    if np.min(np.linalg.eigvalsh(s0.C_q)) <= 0:
        raise InvalidInputError("initial position covariance must be positive definite")
    if len(times) != len(ensembles):
        raise InvalidInputError("times and ensembles must have equal length")
    reference = moments_at(s0, problem, gamma, times)
    mean_err, cov_err, skew, kurt = [], [], [], []
    for ref, ens in zip(reference, ensembles):
        emp = MomentState.from_ensemble(ens)
        c_ref = ref.covariance()
        mean_err.append(np.linalg.norm(emp.mean() - ref.mean()) / np.sqrt(np.trace(c_ref)))
        cov_err.append(np.linalg.norm(emp.covariance() - c_ref) / np.linalg.norm(c_ref))
        skew.append(stats.skew(ens.positions, axis=1))
        kurt.append(stats.kurtosis(ens.positions, axis=1, fisher=True))
    return GaussianityReport(np.asarray(times, dtype=float), np.array(mean_err), np.array(cov_err),
                             np.array(skew), np.array(kurt))
