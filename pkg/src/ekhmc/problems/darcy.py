"""Steady Darcy flow on the unit square with a log-Gaussian permeability.

The log-permeability is a truncated cosine (Karhunen-Loeve) series with
eigenvalues ``(pi^2 |l|^2 + tau^2)^(-alpha)``; the pressure solves
``-div(a grad p) = f`` with ``p = 0`` on the boundary, discretised by a
five-point finite-volume stencil with harmonic-mean face transmissibilities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RectBivariateSpline

from ..errors import InvalidInputError, NumericalError
from ..inverse import InverseProblem

BASES = ("neumann", "plane-wave")


def kl_indices(dim: int) -> np.ndarray:
    """First ``dim`` nonzero pairs in Z>=0^2 ordered by (|l|^2, l1, l2)."""
    if dim < 1:
        raise InvalidInputError("KL dimension must be positive")
    side = int(np.ceil(np.sqrt(4 * dim / np.pi))) + 2
    pairs = [(l1, l2) for l1 in range(side) for l2 in range(side) if (l1, l2) != (0, 0)]
    pairs.sort(key=lambda l: (l[0] ** 2 + l[1] ** 2, l[0], l[1]))
    return np.array(pairs[:dim], dtype=int)


@dataclass(frozen=True)
class KLField:
    """Truncated cosine expansion of a mean-zero Gaussian field on [0, 1]^2.

    ``basis="neumann"`` uses ``cos(pi l1 x1) cos(pi l2 x2)``, the eigenfunctions
    of the Neumann Laplacian, whose spatial means vanish.  ``"plane-wave"``
    uses ``cos(pi (l1 x1 + l2 x2))`` instead.
    """

    tau: float = 3.0
    alpha: float = 2.0
    dim: int = 256
    basis: str = "neumann"
    indices: np.ndarray = field(init=False, repr=False, compare=False)
    eigen: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.basis not in BASES:
            raise InvalidInputError(f"basis must be one of {BASES}")
        idx = kl_indices(self.dim)
        lam = (np.pi**2 * (idx**2).sum(axis=1) + self.tau**2) ** (-self.alpha)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "eigen", lam)

    def basis_matrix(self, points) -> np.ndarray:
        """``phi_l(x)`` for every point (rows) and mode (columns)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        l1 = self.indices[:, 0]
        l2 = self.indices[:, 1]
        if self.basis == "neumann":
            return np.cos(np.pi * np.outer(pts[:, 0], l1)) * np.cos(np.pi * np.outer(pts[:, 1], l2))
        return np.cos(np.pi * (np.outer(pts[:, 0], l1) + np.outer(pts[:, 1], l2)))


def kl_log_permeability(kl: KLField, u, points) -> np.ndarray:
    """``log a(x; u) = sum_l u_l sqrt(lambda_l) phi_l(x)`` at each point."""
    u = np.asarray(u, dtype=float)
    if u.shape != (kl.dim,):
        raise InvalidInputError(f"expected {kl.dim} KL coefficients, got shape {u.shape}")
    return kl.basis_matrix(points) @ (u * np.sqrt(kl.eigen))


def observation_nodes(grid_size: int, per_side: int) -> np.ndarray:
    """Flat indices of the grid nodes nearest to a ``per_side``^2 uniform lattice."""
    h = 1.0 / (grid_size + 1)
    targets = np.arange(1, per_side + 1) / (per_side + 1)
    ids = np.clip(np.rint(targets / h).astype(int) - 1, 0, grid_size - 1)
    if len(np.unique(ids)) != per_side:
        raise InvalidInputError("observation lattice too fine for the grid")
    return (ids[:, None] * grid_size + ids[None, :]).ravel()


class DarcyProblem:
    """Grid, permeability field, source and observation layout.

    Parameters
    ----------
    grid_size : int
        Number ``M`` of interior nodes per side; spacing ``h = 1/(M+1)``.
    kl : KLField
    source : float or callable
        Constant source value, or ``f(x1, x2)`` evaluated on the grid.
    obs_idx : array_like of int, optional
        Flat node indices (row-major, ``x1`` major); defaults to a 7 x 7 lattice.
    """

    def __init__(self, grid_size: int = 32, kl: KLField | None = None, source=1.0, obs_idx=None):
        if grid_size < 8:
            raise InvalidInputError("grid_size must be at least 8")
        self.grid_size = M = int(grid_size)
        self.kl = KLField() if kl is None else kl
        self.h = 1.0 / (M + 1)
        full = np.arange(M + 2) * self.h
        self.nodes = full[1:-1]
        x1, x2 = np.meshgrid(full, full, indexing="ij")
        # log-permeability is evaluated on the grid including boundary nodes
        self._basis = self.kl.basis_matrix(np.column_stack([x1.ravel(), x2.ravel()]))
        ix1, ix2 = np.meshgrid(self.nodes, self.nodes, indexing="ij")
        if callable(source):
            self.source = np.asarray(source(ix1, ix2), dtype=float) * np.ones((M, M))
        else:
            self.source = float(source) * np.ones((M, M))
        self.obs_idx = observation_nodes(M, 7) if obs_idx is None else np.asarray(obs_idx, dtype=int)
        if self.obs_idx.ndim != 1 or len(np.unique(self.obs_idx)) != len(self.obs_idx):
            raise InvalidInputError("obs_idx must be a list of distinct node indices")
        if self.obs_idx.min() < 0 or self.obs_idx.max() >= M * M:
            raise InvalidInputError("obs_idx out of grid bounds")
        self._build_pattern()

    def _build_pattern(self):
        M = self.grid_size
        node = np.arange(M * M).reshape(M, M)
        # interior-interior faces along x1 and x2
        self._east = (node[:-1, :].ravel(), node[1:, :].ravel())
        self._north = (node[:, :-1].ravel(), node[:, 1:].ravel())

    def permeability(self, u) -> np.ndarray:
        """``a`` on the ``(M+2) x (M+2)`` grid including boundary nodes."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.kl.dim,):
            raise InvalidInputError(f"expected {self.kl.dim} KL coefficients")
        M = self.grid_size
        return np.exp(self._basis @ (u * np.sqrt(self.kl.eigen))).reshape(M + 2, M + 2)

    def system(self, a_full) -> sp.csr_matrix:
        """Finite-volume stiffness matrix (scaled by ``1/h^2``) for nodal ``a``."""
        M = self.grid_size
        a = a_full

        def hmean(x, y):
            return 2.0 * x * y / (x + y)

        # transmissibility on every face of every interior cell
        t_w = hmean(a[1:-1, 1:-1], a[:-2, 1:-1])
        t_e = hmean(a[1:-1, 1:-1], a[2:, 1:-1])
        t_s = hmean(a[1:-1, 1:-1], a[1:-1, :-2])
        t_n = hmean(a[1:-1, 1:-1], a[1:-1, 2:])
        diag = (t_w + t_e + t_s + t_n).ravel()
        te = t_e[:-1, :].ravel()
        tn = t_n[:, :-1].ravel()
        rows = np.concatenate([np.arange(M * M), self._east[0], self._east[1], self._north[0], self._north[1]])
        cols = np.concatenate([np.arange(M * M), self._east[1], self._east[0], self._north[1], self._north[0]])
        vals = np.concatenate([diag, -te, -te, -tn, -tn])
        return sp.csr_matrix((vals, (rows, cols)), shape=(M * M, M * M)) / self.h**2

    def solve_with_permeability(self, a_full) -> np.ndarray:
        K = self.system(a_full)
        rhs = self.source.ravel()
        p = spla.spsolve(K.tocsc(), rhs)
        res = np.linalg.norm(K @ p - rhs)
        scale = max(np.linalg.norm(rhs), 1e-300)
        if not np.all(np.isfinite(p)) or res > 1e-10 * scale:
            raise NumericalError(f"pressure solve failed (relative residual {res / scale:.3g})", iterations=1)
        return p.reshape(self.grid_size, self.grid_size)

    def forward(self, u) -> np.ndarray:
        return darcy_observe(self, darcy_solve(self, u))


def darcy_solve(prob: DarcyProblem, u) -> np.ndarray:
    """Interior pressure ``p[i, j]`` at ``(x1, x2) = ((i+1) h, (j+1) h)``."""
    return prob.solve_with_permeability(prob.permeability(u))


def darcy_observe(prob: DarcyProblem, pressure) -> np.ndarray:
    """Pressure values at the observation nodes, in stored order."""
    return np.asarray(pressure, dtype=float).ravel()[prob.obs_idx]


def interpolate_pressure(prob: DarcyProblem, pressure, x1, x2) -> np.ndarray:
    """Bicubic spline of the pressure (zero on the boundary) on the tensor grid ``x1 x x2``.

    Lets solutions on non-nested grids be compared at common points.
    """
    M = prob.grid_size
    full = np.zeros((M + 2, M + 2))
    full[1:-1, 1:-1] = np.asarray(pressure, dtype=float).reshape(M, M)
    nodes = np.arange(M + 2) * prob.h
    return RectBivariateSpline(nodes, nodes, full, kx=3, ky=3)(np.atleast_1d(x1), np.atleast_1d(x2))


def generate_synthetic_data(prob: DarcyProblem, rng, noise_std: float = 0.1):
    """Truth ``u ~ N(0, I_d)`` and data ``y = G(u) + eta``, ``eta ~ N(0, noise_std^2 I)``."""
    u_true = rng.standard_normal(prob.kl.dim)
    clean = prob.forward(u_true)
    eta = rng.standard_normal(clean.shape)
    return u_true, clean + noise_std * eta


def darcy_inverse_problem(prob: DarcyProblem, obs, noise_std: float = 0.1,
                          prior_std: float = 10.0) -> InverseProblem:
    d = prob.kl.dim
    k = len(prob.obs_idx)
    return InverseProblem(prob.forward, obs, noise_std**2 * np.eye(k), prior_std**2 * np.eye(d))


def save_synthetic(path, u_true, obs, seed: int, config: dict) -> None:
    """Write truth, data, seed and generating config as JSON."""
    payload = {
        "seed": int(seed),
        "config": config,
        "u_true": [float(x) for x in u_true],
        "y": [float(x) for x in obs],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_synthetic(path):
    payload = json.loads(Path(path).read_text())
    return np.array(payload["u_true"]), np.array(payload["y"]), payload["seed"], payload["config"]
