"""Experiment orchestration: realization farming, aggregation, file output.

A run farms independent realizations over a process pool, merges their
integer counters (an exact, order-insensitive reduction, so results do not
depend on the worker count), then per radius and subdomain type builds the
transition matrix, its stationary distribution, and the constrained
truncated-normal fits for both the chain and the raw simulation histogram.
Counters are always accumulated with the state cap at the particle count,
so smaller caps (including full cap-calibration sweeps) can be derived
later without re-simulating.

Realization seeds derive from seed_sequence(base_seed, radius_index,
realization_index); they are independent of scheduling order.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from diskmc import fitstats
from diskmc.chain import (
    CONVENTION_ARRIVAL,
    CalibrationResult,
    StationaryDistribution,
    TransitionMatrix,
    assemble,
    calibrate_n_states,
    stationary_distribution,
)
from diskmc.domain import KIND_TO_INDICES, PARTICLE_COUNT, SimConfig, SubdomainKind
from diskmc.dynamics import simulate_realization
from diskmc.fitstats import (
    NormalSummary,
    RegressionResult,
    TruncNormFit,
    fit_trunc_normal,
    linear_fit,
    summarize_realization_means,
)
from diskmc.occupancy import OccupancyCounters, accumulate, merge, pool, truncate, zero_counters

MASTER_STATE_CAP = PARTICLE_COUNT  # counters keep every reachable state

KIND_ORDER = (SubdomainKind.CORNER, SubdomainKind.ONE_WALL, SubdomainKind.CENTER)
MODEL_CONTINUOUS = "continuous"
MODEL_CHAIN = "chain"

HISTOGRAM_HEADER = ["radius", "kind", "state", "empirical_prob", "chain_pi",
                    "fitted_density"]
FITS_HEADER = ["radius", "kind", "model", "mu", "sigma", "sse",
               "constraint_residual", "iterations"]
REGRESSION_HEADER = ["kind", "model", "slope", "intercept", "r_squared"]
CONVERGENCE_HEADER = ["radius", "kind", "realizations", "mean", "std"]
CONVERGENCE_HIST_HEADER = ["radius", "kind", "realizations", "bin_lo", "bin_hi",
                           "density"]
CALIBRATION_HEADER = ["radius", "kind", "n_states", "mu", "sigma", "sse",
                      "chosen", "stabilized"]


class ExperimentError(RuntimeError):
    """The experiment violated one of its own health gates."""


@dataclass
class ExperimentSpec:
    """Everything a full experiment needs, CLI- and JSON-mappable."""

    config: SimConfig
    radius_list: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)
    ns_candidates: tuple[int, ...] = ()
    realization_sweep: tuple[int, ...] = ()
    output_dir: Path = Path("diskmc-out")
    workers: int = 1
    burn_in: int = 0
    chain_convention: str = CONVENTION_ARRIVAL
    rare_event_tolerance: float = 1e-3
    max_failure_fraction: float = 1e-3

    def __post_init__(self):
        self.radius_list = tuple(float(r) for r in self.radius_list)
        self.ns_candidates = tuple(int(n) for n in self.ns_candidates)
        self.realization_sweep = tuple(int(n) for n in self.realization_sweep)
        self.output_dir = Path(self.output_dir)
        if not self.radius_list:
            raise ValueError("radius_list must not be empty")
        if self.realization_sweep and max(self.realization_sweep) > self.config.realizations:
            raise ValueError("realization_sweep exceeds configured realizations")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not 0 <= self.burn_in < self.config.steps:
            raise ValueError("burn_in must be in [0, steps)")

    def config_for(self, radius: float) -> SimConfig:
        return dataclasses.replace(self.config, radius=radius)


@dataclass
class KindCell:
    """Everything derived for one (radius, subdomain type) pair."""

    kind: SubdomainKind
    empirical_pmf: np.ndarray | None = None
    matrix: TransitionMatrix | None = None
    stationary: StationaryDistribution | None = None
    fit_chain: TruncNormFit | None = None
    fit_continuous: TruncNormFit | None = None
    summary: NormalSummary | None = None
    continuous_mean: float = math.nan
    error: str | None = None

    @property
    def complete(self) -> bool:
        return self.error is None


@dataclass
class RadiusResult:
    """Merged counters and per-kind derivations for one radius."""

    radius: float
    counters: OccupancyCounters  # master cap
    realization_means: np.ndarray  # (realizations, 9) time-averaged occupancy
    failures: list[tuple[int, str]]
    energy_drift_max: float
    cells: dict[SubdomainKind, KindCell] = field(default_factory=dict)

    def type_mean_series(self, kind: SubdomainKind) -> np.ndarray:
        """Per-realization occupancy time average, averaged over the kind's cells."""
        cols = [i - 1 for i in KIND_TO_INDICES[kind]]
        return self.realization_means[:, cols].mean(axis=1)


@dataclass
class ConvergenceStudy:
    """Realization-count sweep of the per-kind mean statistics."""

    rows: list[dict]  # radius, kind, realizations, mean, std
    histograms: list[dict]  # radius, kind, realizations, bin_lo, bin_hi, density


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    radius_results: dict[float, RadiusResult]
    regressions: dict[tuple[str, str], RegressionResult]  # (kind, model) -> fit
    convergence: ConvergenceStudy | None = None
    calibrations: list[tuple[float, CalibrationResult]] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# realization farming

_WORKER_CTX: tuple[SimConfig, int, int] | None = None


def _init_worker(config: SimConfig, radius_index: int, burn_in: int) -> None:
    global _WORKER_CTX
    _WORKER_CTX = (config, radius_index, burn_in)


def _run_one(realization_index: int):
    config, radius_index, burn_in = _WORKER_CTX
    return _simulate_one(config, radius_index, burn_in, realization_index)


def _simulate_one(config: SimConfig, radius_index: int, burn_in: int,
                  realization_index: int):
    seed = np.random.SeedSequence(
        (config.base_seed, radius_index, realization_index)
    )
    try:
        rec = simulate_realization(config, seed)
        counters = accumulate(rec.occupancy, MASTER_STATE_CAP, burn_in)
        eta_bar = rec.occupancy[1 + burn_in:].mean(axis=0, dtype=np.float64)
        return realization_index, counters, eta_bar, rec.energy_drift, None
    except Exception as exc:  # isolated per-realization failure
        return realization_index, None, None, math.nan, f"{type(exc).__name__}: {exc}"


def _simulate_radius(spec: ExperimentSpec, radius: float,
                     radius_index: int) -> RadiusResult:
    config = spec.config_for(radius)
    n = config.realizations
    results = [None] * n

    if spec.workers == 1 or n == 1:
        for idx in range(n):
            results[idx] = _simulate_one(config, radius_index, spec.burn_in, idx)
    else:
        # Compile the kernel (and populate its disk cache) before forking so
        # the workers inherit or quickly reload the compiled code.
        simulate_realization(dataclasses.replace(config, steps=2), 0)
        chunk = max(1, n // (spec.workers * 8))
        with Pool(spec.workers, initializer=_init_worker,
                  initargs=(config, radius_index, spec.burn_in)) as workers:
            for item in workers.imap_unordered(_run_one, range(n), chunksize=chunk):
                results[item[0]] = item

    counters = zero_counters(MASTER_STATE_CAP)
    means = np.full((n, 9), math.nan)
    failures = []
    drift_max = 0.0
    for idx, item_counters, eta_bar, drift, error in results:
        if error is not None:
            failures.append((idx, error))
            continue
        counters = merge(counters, item_counters)
        means[idx] = eta_bar
        drift_max = max(drift_max, drift)

    if len(failures) > spec.max_failure_fraction * n:
        raise ExperimentError(
            f"radius {radius}: {len(failures)}/{n} realizations failed; "
            f"first: {failures[0]}"
        )
    counters.check_accounting()
    rate = counters.rare_event_rate
    if rate > spec.rare_event_tolerance:
        raise ExperimentError(
            f"radius {radius}: rare-event rate {rate:.2e} per subdomain-step "
            f"exceeds {spec.rare_event_tolerance:.2e}; decrease dt"
        )
    ok = ~np.isnan(means[:, 0])
    return RadiusResult(
        radius=radius,
        counters=counters,
        realization_means=means[ok],
        failures=failures,
        energy_drift_max=drift_max,
    )


# ---------------------------------------------------------------------------
# per-radius derivations

def _build_cells(result: RadiusResult, spec: ExperimentSpec) -> None:
    n_states = spec.config.n_states
    capped = truncate(result.counters, n_states)
    pooled = pool(capped)
    for kind in KIND_ORDER:
        cell = KindCell(kind=kind)
        try:
            pk = pooled[kind]
            cell.empirical_pmf = pk.empirical_pmf()
            cell.matrix = assemble(pooled, kind, spec.chain_convention)
            cell.stationary = stationary_distribution(cell.matrix)
            cell.fit_chain = fit_trunc_normal(cell.stationary.pi, n_states)
            cell.fit_continuous = fit_trunc_normal(cell.empirical_pmf, n_states)
            type_means = result.type_mean_series(kind)
            cell.continuous_mean = float(type_means.mean())
            if len(type_means) >= 2:
                cell.summary = summarize_realization_means(type_means)
        except Exception as exc:
            cell.error = f"{type(exc).__name__}: {exc}"
        result.cells[kind] = cell


def _fit_regressions(radius_results: dict[float, RadiusResult]):
    regressions = {}
    for kind in KIND_ORDER:
        for model in (MODEL_CONTINUOUS, MODEL_CHAIN):
            points = []
            for radius, rr in sorted(radius_results.items()):
                cell = rr.cells.get(kind)
                if cell is None or not cell.complete:
                    continue
                if model == MODEL_CONTINUOUS:
                    points.append((radius, cell.continuous_mean))
                else:
                    points.append((radius, cell.stationary.mean()))
            if len(points) >= 2 and len({p[0] for p in points}) >= 2:
                x, y = zip(*points)
                regressions[(kind.value, model)] = linear_fit(x, y)
    return regressions


def _convergence_from_results(spec: ExperimentSpec,
                              radius_results: dict[float, RadiusResult]) -> ConvergenceStudy:
    rows = []
    hist_rows = []
    for radius, rr in sorted(radius_results.items()):
        for kind in KIND_ORDER:
            series = rr.type_mean_series(kind)
            if len(series) < 2:
                continue
            edges = np.histogram_bin_edges(series, bins="auto")
            for count in spec.realization_sweep:
                prefix = series[:count]
                if len(prefix) < 2:
                    continue
                s = summarize_realization_means(prefix)
                rows.append({
                    "radius": radius, "kind": kind.value,
                    "realizations": count, "mean": s.mean, "std": s.std,
                })
                density, _ = np.histogram(prefix, bins=edges, density=True)
                for lo, hi, d in zip(edges[:-1], edges[1:], density):
                    hist_rows.append({
                        "radius": radius, "kind": kind.value,
                        "realizations": count, "bin_lo": float(lo),
                        "bin_hi": float(hi), "density": float(d),
                    })
    return ConvergenceStudy(rows=rows, histograms=hist_rows)


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Simulate every radius, derive all statistics, and write the outputs."""
    started = time.time()
    radius_results: dict[float, RadiusResult] = {}
    for radius_index, radius in enumerate(spec.radius_list):
        rr = _simulate_radius(spec, radius, radius_index)
        _build_cells(rr, spec)
        radius_results[radius] = rr

    regressions = _fit_regressions(radius_results)
    convergence = (_convergence_from_results(spec, radius_results)
                   if spec.realization_sweep else None)

    calibrations = []
    if spec.ns_candidates:
        for radius, rr in sorted(radius_results.items()):
            for kind in KIND_ORDER:
                calibrations.append(
                    (radius, calibrate_n_states(rr.counters, kind,
                                                spec.ns_candidates,
                                                spec.chain_convention))
                )

    result = ExperimentResult(
        spec=spec,
        radius_results=radius_results,
        regressions=regressions,
        convergence=convergence,
        calibrations=calibrations,
        diagnostics=_diagnostics(spec, radius_results, time.time() - started),
    )
    emit_outputs(result, spec.output_dir)
    return result


def convergence_study(spec: ExperimentSpec) -> ConvergenceStudy:
    """Realization-count convergence table from one simulation pool.

    Prefixes of the realization pool are reused; nothing is re-simulated for
    the smaller counts.
    """
    if not spec.realization_sweep:
        raise ValueError("spec.realization_sweep must be set")
    radius_results = {}
    for radius_index, radius in enumerate(spec.radius_list):
        radius_results[radius] = _simulate_radius(spec, radius, radius_index)
    return _convergence_from_results(spec, radius_results)


def _diagnostics(spec: ExperimentSpec, radius_results, runtime: float) -> dict:
    per_radius = {}
    for radius, rr in sorted(radius_results.items()):
        boundary = {}
        for kind, cell in rr.cells.items():
            if cell.matrix is not None:
                boundary[kind.value] = {
                    "stay_adjustment": cell.matrix.stay_adjustment.tolist(),
                    "overflow_samples": cell.matrix.overflow_total,
                }
        per_radius[f"{radius:.6g}"] = {
            "realizations_ok": int(len(rr.realization_means)),
            "failures": [{"index": i, "error": e} for i, e in rr.failures],
            "rare_events": rr.counters.rare_events,
            "rare_event_rate": rr.counters.rare_event_rate,
            "overflow_steps_at_cap": int(
                truncate(rr.counters, spec.config.n_states).overflow_steps.sum()
            ),
            "max_energy_drift": rr.energy_drift_max,
            "boundary_adjustments": boundary,
            "cell_errors": {
                kind.value: cell.error
                for kind, cell in rr.cells.items() if cell.error
            },
        }
    return {
        "seeds": {
            "base_seed": spec.config.base_seed,
            "scheme": "numpy SeedSequence((base_seed, radius_index, realization_index))",
            "radius_order": list(spec.radius_list),
        },
        "burn_in": spec.burn_in,
        "chain_convention": spec.chain_convention,
        "n_states": spec.config.n_states,
        "per_radius": per_radius,
        "runtime_seconds": runtime,
    }


# ---------------------------------------------------------------------------
# file output

def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def emit_outputs(result: ExperimentResult, output_dir) -> None:
    """Write all experiment files (schemas documented in the README)."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = result.spec
    n_states = spec.config.n_states

    hist_rows = []
    fit_rows = []
    matrices_doc = {}
    for radius, rr in sorted(result.radius_results.items()):
        radius_key = f"{radius:.6g}"
        matrices_doc[radius_key] = {}
        for kind in KIND_ORDER:
            cell = rr.cells.get(kind)
            if cell is None or not cell.complete:
                matrices_doc[radius_key][kind.value] = {"error": cell.error if cell else "missing"}
                continue
            density = np.array([
                fitstats.trunc_normal_pdf(float(j), cell.fit_chain.params)
                for j in range(n_states + 1)
            ])
            for j in range(n_states + 1):
                hist_rows.append([
                    radius, kind.value, j,
                    float(cell.empirical_pmf[j]),
                    float(cell.stationary.pi[j]),
                    float(density[j]),
                ])
            for model, fit in ((MODEL_CHAIN, cell.fit_chain),
                               (MODEL_CONTINUOUS, cell.fit_continuous)):
                fit_rows.append([
                    radius, kind.value, model, fit.mu, fit.sigma, fit.sse,
                    fit.constraint_residual, fit.iterations,
                ])
            doc = cell.matrix.to_json_dict()
            doc["stationary"] = cell.stationary.pi.tolist()
            matrices_doc[radius_key][kind.value] = doc

    _write_csv(out / "histograms.csv", HISTOGRAM_HEADER, hist_rows)
    _write_csv(out / "fits.csv", FITS_HEADER, fit_rows)

    regression_rows = [
        [kind, model, reg.slope, reg.intercept, reg.r_squared]
        for (kind, model), reg in sorted(result.regressions.items())
    ]
    _write_csv(out / "regression.csv", REGRESSION_HEADER, regression_rows)

    with open(out / "matrices.json", "w") as fh:
        json.dump(matrices_doc, fh, indent=1)

    with open(out / "diagnostics.json", "w") as fh:
        json.dump(result.diagnostics, fh, indent=1)

    for radius, rr in sorted(result.radius_results.items()):
        tag = f"{radius:.6g}"
        with open(out / f"counters_R{tag}.json", "w") as fh:
            doc = rr.counters.to_json_dict()
            doc["radius"] = radius
            doc["base_seed"] = spec.config.base_seed
            doc["steps_per_realization"] = spec.config.steps
            json.dump(doc, fh)
        with open(out / f"realization_means_R{tag}.json", "w") as fh:
            json.dump({
                "radius": radius,
                "per_subdomain_time_averages": rr.realization_means.tolist(),
            }, fh)

    if result.convergence is not None:
        _write_csv(out / "convergence.csv", CONVERGENCE_HEADER, [
            [r["radius"], r["kind"], r["realizations"], r["mean"], r["std"]]
            for r in result.convergence.rows
        ])
        _write_csv(out / "convergence_hist.csv", CONVERGENCE_HIST_HEADER, [
            [r["radius"], r["kind"], r["realizations"], r["bin_lo"],
             r["bin_hi"], r["density"]]
            for r in result.convergence.histograms
        ])

    if result.calibrations:
        rows = []
        for radius, cal in result.calibrations:
            for row in cal.rows:
                rows.append([radius, cal.kind.value, row.n_states, row.mu,
                             row.sigma, row.sse, cal.chosen, cal.stabilized])
        _write_csv(out / "calibration.csv", CALIBRATION_HEADER, rows)


# ---------------------------------------------------------------------------
# re-fitting from saved counters

def refit_from_counters(counter_files: list[Path], n_states: int,
                        convention: str = CONVENTION_ARRIVAL,
                        output_dir: Path | str = "diskmc-refit") -> dict:
    """Recompute matrices, stationary laws, and fits from counter files.

    No simulation happens; the counter files must come from
    :func:`run_experiment` (master state cap).  Returns the fits document
    and writes fits.csv / regression.csv / matrices.json / histograms.csv.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    hist_rows = []
    fit_rows = []
    matrices_doc = {}
    chain_points = {kind: [] for kind in KIND_ORDER}
    continuous_points = {kind: [] for kind in KIND_ORDER}

    for path in sorted(Path(p) for p in counter_files):
        doc = json.loads(Path(path).read_text())
        radius = float(doc["radius"])
        counters = OccupancyCounters.from_json_dict(doc)
        capped = truncate(counters, n_states)
        pooled = pool(capped)
        radius_key = f"{radius:.6g}"
        matrices_doc[radius_key] = {}
        for kind in KIND_ORDER:
            pk = pooled[kind]
            empirical = pk.empirical_pmf()
            matrix = assemble(pooled, kind, convention)
            pi = stationary_distribution(matrix)
            fit_chain = fit_trunc_normal(pi.pi, n_states)
            fit_cont = fit_trunc_normal(empirical, n_states)
            chain_points[kind].append((radius, pi.mean()))
            continuous_points[kind].append((radius, float(empirical @ np.arange(n_states + 1))))
            for j in range(n_states + 1):
                hist_rows.append([
                    radius, kind.value, j, float(empirical[j]), float(pi.pi[j]),
                    float(fitstats.trunc_normal_pdf(float(j), fit_chain.params)),
                ])
            for model, fit in ((MODEL_CHAIN, fit_chain), (MODEL_CONTINUOUS, fit_cont)):
                fit_rows.append([radius, kind.value, model, fit.mu, fit.sigma,
                                 fit.sse, fit.constraint_residual, fit.iterations])
            m_doc = matrix.to_json_dict()
            m_doc["stationary"] = pi.pi.tolist()
            matrices_doc[radius_key][kind.value] = m_doc

    regression_rows = []
    for kind in KIND_ORDER:
        for model, points in ((MODEL_CONTINUOUS, continuous_points[kind]),
                              (MODEL_CHAIN, chain_points[kind])):
            if len({p[0] for p in points}) >= 2:
                x, y = zip(*points)
                reg = linear_fit(x, y)
                regression_rows.append([kind.value, model, reg.slope,
                                        reg.intercept, reg.r_squared])

    _write_csv(out / "histograms.csv", HISTOGRAM_HEADER, hist_rows)
    _write_csv(out / "fits.csv", FITS_HEADER, fit_rows)
    _write_csv(out / "regression.csv", REGRESSION_HEADER, regression_rows)
    with open(out / "matrices.json", "w") as fh:
        json.dump(matrices_doc, fh, indent=1)
    return matrices_doc
