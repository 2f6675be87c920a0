"""Experiment orchestration: build a problem, run a sampler, write outputs.

Output layout inside ``output_dir``:

``positions.csv``
    Final particle positions, one row per particle (columns ``q1..qN``).  For
    the MCMC samplers, one row per stored chain sample.
``trace.csv``
    One row per iteration: ``iter, eff_step, force_norm, mean_1..N,
    eig_1..N`` for ensemble samplers; ``iter, q_1..N`` for MCMC chains.
``metrics_<name>.csv``
    One scalar series each, see :func:`ekhmc.diagnostics.series_to_csv`.
``summary.json``
    Config echo, seed, wall time and final values.
``synthetic.json``
    Darcy only: truth, data and generating seed.
"""

from __future__ import annotations

import csv
import io
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import PcnConfig, hmc_chain, pcn_chain, run_eks
from .config import ConfigError, ExperimentConfig
from .diagnostics import MetricSeries, format_float, metric_hminus2, metric_l2, write_series_csv
from .dynamics import SamplerConfig, initial_ensemble, run_sampler, step_rng
from .errors import EvaluationError, InvalidInputError, NumericalError, SamplerError
from .inverse import posterior_moments, random_linear_problem
from .linear import gamma_sweep, optimal_gamma
from .problems import DarcyProblem, Elliptic1DProblem, KLField, elliptic1d_initial_positions
from .problems.darcy import darcy_inverse_problem, generate_synthetic_data, observation_nodes, save_synthetic

_POSITION_STREAM = 3
# covariance eigenvalues are tracked only for low-dimensional problems
_MAX_TRACKED_EIGS = 8


@dataclass
class Setup:
    problem: object
    positions: np.ndarray
    reference_mean: np.ndarray | None = None
    reference_cov: np.ndarray | None = None
    truth: np.ndarray | None = None
    eigen: np.ndarray | None = None
    extras: dict = field(default_factory=dict)


@dataclass
class ExperimentResult:
    positions: np.ndarray
    trace_header: list
    trace_rows: list
    metrics: list
    summary: dict


def build_setup(cfg: ExperimentConfig) -> Setup:
    """Problem, initial positions and any reference quantities."""
    init_rng = step_rng(cfg.seed, 0, _POSITION_STREAM)
    count = cfg.particles if cfg.sampler in ("ekhmc", "eks") else 1
    if cfg.problem == "linear":
        problem = random_linear_problem(np.random.default_rng(cfg.data_seed), cfg.linear_dim,
                                        cfg.obs_dim, noise_std=cfg.noise_std, prior_std=cfg.prior_std)
        mean, cov = posterior_moments(problem)
        positions = cfg.init_std * init_rng.standard_normal((cfg.linear_dim, count))
        return Setup(problem, positions, reference_mean=mean, reference_cov=cov)
    if cfg.problem == "elliptic1d":
        problem = Elliptic1DProblem(noise_std=cfg.noise_std, prior_std=cfg.prior_std)
        return Setup(problem, elliptic1d_initial_positions(init_rng, count))
    kl = KLField(dim=cfg.kl_dim, basis=cfg.kl_basis)
    darcy = DarcyProblem(cfg.grid_size, kl, source=cfg.source,
                         obs_idx=observation_nodes(cfg.grid_size, cfg.obs_per_side))
    truth, obs = generate_synthetic_data(darcy, np.random.default_rng(cfg.data_seed), cfg.noise_std)
    problem = darcy_inverse_problem(darcy, obs, noise_std=cfg.noise_std, prior_std=cfg.prior_std)
    positions = cfg.init_std * init_rng.standard_normal((cfg.kl_dim, count))
    return Setup(problem, positions, truth=truth, eigen=kl.eigen, extras={"darcy": darcy, "obs": obs})


def _metric_names(cfg, setup, dim):
    if setup.truth is not None:
        return ["d_l2", "d_hminus2"]
    names = [f"mean_{j + 1}" for j in range(min(dim, _MAX_TRACKED_EIGS))]
    names += [f"cov_eig_{j + 1}" for j in range(min(dim, _MAX_TRACKED_EIGS))]
    if setup.reference_mean is not None:
        names += ["mean_error", "cov_error"]
    return names


def _metric_values(setup, positions, record=None):
    """Metric values in :func:`_metric_names` order for one ensemble."""
    q = np.asarray(positions)
    if setup.truth is not None:
        return [metric_l2(q, setup.truth), metric_hminus2(q, setup.truth, setup.eigen)]
    k = min(q.shape[0], _MAX_TRACKED_EIGS)
    mean = q.mean(axis=1)
    eigs = record.cov_eigs if record is not None else np.linalg.eigvalsh(np.atleast_2d(np.cov(q, bias=True)))[::-1]
    values = list(mean[:k]) + list(eigs[:k])
    if setup.reference_mean is not None:
        dq = q - mean[:, None]
        cov = dq @ dq.T / q.shape[1]
        values.append(np.linalg.norm(mean - setup.reference_mean) / np.linalg.norm(setup.reference_mean))
        values.append(np.linalg.norm(cov - setup.reference_cov) / np.linalg.norm(setup.reference_cov))
    return values


def _ensemble_run(cfg, setup):
    dim = setup.positions.shape[0]
    names = _metric_names(cfg, setup, dim)
    series = [MetricSeries(n) for n in names]
    for s, v in zip(series, _metric_values(setup, setup.positions)):
        s.append(0, v)
    rows = []

    def observe(k, positions, record):
        for s, v in zip(series, _metric_values(setup, positions, record)):
            s.append(k, v)
        rows.append([k, record.eff_step, record.force_norm, *record.mean_q, *record.cov_eigs[:_MAX_TRACKED_EIGS]])

    if cfg.sampler == "ekhmc":
        scfg = SamplerConfig(gamma=cfg.gamma, eps=cfg.eps, adapt_a=cfg.adapt_a, iters=cfg.iters, seed=cfg.seed,
                             momentum_init=cfg.momentum_init, mode=cfg.mode, noise=cfg.noise,
                             adapt_norm=cfg.adapt_norm)
        ens, _ = run_sampler(setup.problem, initial_ensemble(setup.positions, scfg), scfg,
                             callback=lambda k, e, r: observe(k, e.positions, r))
        final = ens.positions
    else:
        final, _ = run_eks(setup.problem, setup.positions, cfg.eps, cfg.adapt_a, cfg.iters, seed=cfg.seed,
                           noise=cfg.noise, callback=observe, adapt_norm=cfg.adapt_norm)
    k = min(dim, _MAX_TRACKED_EIGS)
    header = ["iter", "eff_step", "force_norm"] + [f"mean_{j + 1}" for j in range(dim)]
    header += [f"eig_{j + 1}" for j in range(k)]
    return final, header, rows, series, {}


def _chain_run(cfg, setup):
    q0 = setup.positions[:, 0]
    if cfg.sampler == "pcn":
        samples, rate = pcn_chain(setup.problem, q0, PcnConfig(beta=cfg.beta, iters=cfg.iters, seed=cfg.seed),
                                  thin=cfg.thin)
    else:
        if not setup.problem.has_gradient:
            raise ConfigError("sampler: hmc needs an exact gradient", "sampler")
        samples, rate = hmc_chain(setup.problem, q0, cfg.leapfrog_eps, cfg.leapfrog_steps, cfg.iters, seed=cfg.seed)
        samples = samples[cfg.thin - 1::cfg.thin]
    iters = (np.arange(len(samples)) + 1) * cfg.thin
    kept = samples[iters > cfg.burn_in]
    if len(kept) < 2:
        raise ConfigError("burn_in: leaves fewer than two samples", "burn_in")
    dim = samples.shape[1]
    header = ["iter"] + [f"q_{j + 1}" for j in range(dim)]
    rows = [[int(i), *s] for i, s in zip(iters, samples)]
    series = []
    if setup.truth is not None:
        series = [MetricSeries("d_l2"), MetricSeries("d_hminus2")]
        for i, s in zip(iters, samples):
            series[0].append(int(i), metric_l2(s[:, None], setup.truth))
            series[1].append(int(i), metric_hminus2(s[:, None], setup.truth, setup.eigen))
    else:
        running = np.cumsum(samples, axis=0) / np.arange(1, len(samples) + 1)[:, None]
        for j in range(min(dim, _MAX_TRACKED_EIGS)):
            series.append(MetricSeries(f"running_mean_{j + 1}", [int(i) for i in iters], list(running[:, j])))
    return kept.T, header, rows, series, {"acceptance_rate": rate, "samples_kept": int(len(kept))}


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([v if isinstance(v, (int, np.integer)) else format_float(v) for v in row])
    return buf.getvalue()


def positions_csv(positions) -> str:
    q = np.asarray(positions)
    return _csv_text([f"q{j + 1}" for j in range(q.shape[0])], q.T.tolist())


def execute(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run the configured experiment; raises on any failure."""
    start = time.perf_counter()
    setup = build_setup(cfg)
    if cfg.sampler in ("ekhmc", "eks"):
        final, header, rows, series, extra = _ensemble_run(cfg, setup)
    else:
        final, header, rows, series, extra = _chain_run(cfg, setup)
    wall = time.perf_counter() - start
    mean = final.mean(axis=1)
    dq = final - mean[:, None]
    eigs = np.linalg.eigvalsh(dq @ dq.T / final.shape[1])[::-1]
    summary = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "wall_time_s": wall,
        "final_mean": mean.tolist(),
        "final_cov_eigs": eigs.tolist(),
        "final_metrics": {s.name: s.value[-1] for s in series if len(s)},
        **extra,
    }
    if setup.reference_mean is not None:
        summary["posterior_mean"] = setup.reference_mean.tolist()
        summary["mean_rel_error"] = float(np.linalg.norm(mean - setup.reference_mean)
                                          / np.linalg.norm(setup.reference_mean))
    result = ExperimentResult(final, header, rows, series, summary)
    if write:
        write_outputs(cfg, setup, result)
    return result


def write_outputs(cfg: ExperimentConfig, setup: Setup, result: ExperimentResult) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "positions.csv").write_text(positions_csv(result.positions))
    (out / "trace.csv").write_text(_csv_text(result.trace_header, result.trace_rows))
    for s in result.metrics:
        write_series_csv(s, out / f"metrics_{s.name}.csv")
    if setup.truth is not None:
        save_synthetic(out / "synthetic.json", setup.truth, setup.extras["obs"], cfg.data_seed,
                       {"grid_size": cfg.grid_size, "kl_dim": cfg.kl_dim, "kl_basis": cfg.kl_basis,
                        "source": cfg.source, "noise_std": cfg.noise_std, "obs_per_side": cfg.obs_per_side})
    (out / "summary.json").write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n")
    if cfg.figures:
        from . import plotting

        if result.metrics:
            plotting.plot_metric_series(result.metrics, out / "metrics.png", title=f"{cfg.sampler} on {cfg.problem}")
        if result.positions.shape[0] >= 2:
            plotting.plot_samples(result.positions, out / "samples.png", reference=setup.reference_mean)
    return out


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run and write outputs; returns a process exit status.

    0 on success, 1 for configuration problems, 2 for numerical failures.
    """
    try:
        execute(cfg)
    except (ConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, SamplerError, EvaluationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def sweep_csv(gammas, gaps) -> str:
    return _csv_text(["gamma", "gap"], [[g, v] for g, v in zip(gammas, gaps)])


def emit_gamma_sweep(gamma_min: float, gamma_max: float, steps: int, path, figure=None) -> int:
    """Write the spectral-gap sweep as CSV (and optionally a PNG); returns an exit status."""
    try:
        gammas, gaps = gamma_sweep(gamma_min, gamma_max, steps)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        Path(path).write_text(sweep_csv(gammas, gaps))
        if figure is not None:
            from .plotting import plot_gamma_sweep

            plot_gamma_sweep(gammas, gaps, figure, optimum=optimal_gamma()[0])
    except OSError as exc:
        print(f"error: cannot write {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 1
    return 0
