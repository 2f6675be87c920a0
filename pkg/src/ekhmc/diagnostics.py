"""Ensemble metrics, covariance spectra and convergence bookkeeping."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .ensemble import ensemble_covariance
from .errors import InvalidInputError


@dataclass
class MetricSeries:
    """A named scalar recorded at strictly increasing iterations."""

    name: str
    iter: list = field(default_factory=list)
    value: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.iter) != len(self.value):
            raise InvalidInputError("iter and value must have equal length")
        if any(b <= a for a, b in zip(self.iter, self.iter[1:])):
            raise InvalidInputError("iterations must be strictly increasing")

    def append(self, iteration: int, value: float) -> None:
        if self.iter and iteration <= self.iter[-1]:
            raise InvalidInputError("iterations must be strictly increasing")
        self.iter.append(int(iteration))
        self.value.append(float(value))

    def __len__(self):
        return len(self.iter)


def _check(positions, reference):
    q = np.asarray(positions, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if q.ndim != 2 or ref.shape != (q.shape[0],):
        raise InvalidInputError("reference must have one entry per coordinate")
    return q, ref


def metric_l2(positions, reference) -> float:
    """Root-mean-square Euclidean distance of the particles from ``reference``."""
    q, ref = _check(positions, reference)
    return float(np.sqrt(np.mean(np.sum((q - ref[:, None]) ** 2, axis=0))))


def metric_hminus2(positions, reference, eigen) -> float:
    """As :func:`metric_l2` with coordinate ``l`` weighted by ``sqrt(lambda_l)``."""
    q, ref = _check(positions, reference)
    lam = np.asarray(eigen, dtype=float)
    if lam.shape != ref.shape or np.any(lam <= 0):
        raise InvalidInputError("eigenvalues must be positive, one per coordinate")
    diff = (q - ref[:, None]) * np.sqrt(lam)[:, None]
    return float(np.sqrt(np.mean(np.sum(diff**2, axis=0))))


def covariance_spectrum(positions) -> np.ndarray:
    """Eigenvalues of the ensemble covariance, largest first."""
    return np.linalg.eigvalsh(ensemble_covariance(positions).covariance)[::-1]


class Convergence(NamedTuple):
    iteration: int
    converged: bool


def convergence_iteration(series: MetricSeries, tol_frac: float) -> Convergence:
    """First iteration after which the series stays within ``tol_frac`` of its final value.

    Distances are relative to ``|final|`` (absolute when the final value is
    zero).  If only the final point qualifies, the last iteration is returned
    with ``converged=False``.
    """
    if not 0 < tol_frac < 1:
        raise InvalidInputError("tol_frac must lie in (0, 1)")
    if len(series) == 0:
        raise InvalidInputError("empty series")
    values = np.asarray(series.value, dtype=float)
    final = values[-1]
    band = tol_frac * (abs(final) if final != 0 else 1.0)
    outside = np.nonzero(np.abs(values - final) > band)[0]
    k = 0 if len(outside) == 0 else int(outside[-1]) + 1
    last = len(values) - 1
    if k >= last and len(values) > 1 and len(outside) > 0:
        return Convergence(series.iter[last], False)
    return Convergence(series.iter[k], True)


def batch_means_se(samples, batches: int = 50) -> np.ndarray:
    """Monte Carlo standard error of a (correlated) series mean, by batch means."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = (len(x) // batches) * batches
    if n == 0:
        raise InvalidInputError("series shorter than the number of batches")
    means = x[len(x) - n:].reshape(batches, n // batches, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(batches)


def format_float(x: float) -> str:
    """Locale-independent round-trip representation (17 significant digits)."""
    return format(float(x), ".17g")


def series_to_csv(series: MetricSeries) -> str:
    buf = io.StringIO()
    buf.write(f"# metric: {series.name}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iter", "value"])
    for it, v in zip(series.iter, series.value):
        writer.writerow([it, format_float(v)])
    return buf.getvalue()


def write_series_csv(series: MetricSeries, path) -> None:
    Path(path).write_text(series_to_csv(series))


def read_series_csv(path) -> MetricSeries:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# metric:"):
        raise InvalidInputError(f"{path}: missing metric header line")
    name = lines[0].split(":", 1)[1].strip()
    rows = list(csv.reader(lines[1:]))
    if rows[0] != ["iter", "value"]:
        raise InvalidInputError(f"{path}: unexpected columns {rows[0]}")
    return MetricSeries(name, [int(r[0]) for r in rows[1:]], [float(r[1]) for r in rows[1:]])
