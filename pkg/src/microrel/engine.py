"""Hybrid reliability evaluation of an islandable microgrid.

Daily Monte-Carlo state sampling estimates, for every load point, the
probability that local renewable generation can carry it through an islanding
event under strict priority dispatch.  Those probabilities are then combined
analytically with the feeder's interruption statistics and the upstream-link
data to produce per-load-point indices (failure rate, unavailability, repair
time) and the customer-weighted system indices SAIFI, SAIDI, CAIDI, ENS and
AENS.

Years are independent given the seed: every simulated year consumes an RNG
substream derived from (seed, year index), so runs are reproducible and the
result is invariant to how many workers simulate the years.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .network import (
    ContributionTable,
    NetworkModel,
    UpstreamLink,
    build_contribution_table,
)
from .res_models import (
    DAYS_PER_YEAR,
    DgUnit,
    ResourceDistributions,
    sample_daily_resources,
    unit_power_series,
)

__all__ = [
    "DISPATCH_SERVE_IF_FITS",
    "DISPATCH_BLOCKING",
    "Scenario",
    "PResEstimate",
    "LoadPointIndices",
    "SystemIndices",
    "RunResult",
    "SweepResult",
    "priority_dispatch",
    "simulate_year",
    "combine_analytical",
    "compute_system_indices",
    "run",
    "sensitivity_sweep",
    "CONVERGENCE_WINDOW_YEARS",
    "MIN_CONVERGENCE_YEARS",
]

DISPATCH_SERVE_IF_FITS = "serve_if_fits"
DISPATCH_BLOCKING = "blocking"

# Convergence rule: stop once the 100-year moving average of the running ENS
# estimate changes by less than the scenario tolerance over a window, with a
# floor of 1000 years so the estimate never freezes prematurely.  Scenarios
# with no DG fleet have nothing stochastic to estimate and settle in one year.
CONVERGENCE_WINDOW_YEARS = 100
MIN_CONVERGENCE_YEARS = 1000
_YEARS_PER_BLOCK = 512

_IDENTITY_RTOL = 1e-9
_MAX_SEED = 2**64


def _default_load_factors() -> tuple[float, ...]:
    return (1.0,) * DAYS_PER_YEAR


@dataclass(frozen=True)
class Scenario:
    """One complete reliability study.

    Attributes:
        name: Study label, echoed into reports.
        network: Feeder model (aggregate or topology mode).
        distributions: Fitted resource distributions for the DG fleet.
        fleet: Renewable DG units; may be empty (grid-only study).
        seed: Base RNG seed; all randomness derives from it.
        load_factors: 365 per-day multipliers applied to every load level.
        p_islanding: Probability that islanding succeeds on an upstream
            failure; 1 means the island always forms, 0 disables the fleet's
            contribution entirely.
        max_years: Simulation-year cap.
        tolerance: Relative-change convergence threshold.
        dispatch: "serve_if_fits" (a load that does not fit is skipped but
            later, smaller loads are still considered) or "blocking" (stop at
            the first load that does not fit).
        sweep_p: Optional islanding-success probabilities for sweeps.
    """

    name: str
    network: NetworkModel
    distributions: ResourceDistributions
    fleet: tuple[DgUnit, ...] = ()
    seed: int = 0
    load_factors: tuple[float, ...] = field(default_factory=_default_load_factors)
    p_islanding: float = 1.0
    max_years: int = 100_000
    tolerance: float = 0.005
    dispatch: str = DISPATCH_SERVE_IF_FITS
    sweep_p: Optional[tuple[float, ...]] = None
    description: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "fleet", tuple(self.fleet))
        object.__setattr__(self, "load_factors", tuple(float(f) for f in self.load_factors))
        if not (0 <= self.seed < _MAX_SEED):
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")
        if len(self.load_factors) != DAYS_PER_YEAR:
            raise ValueError(
                f"load_factors must have {DAYS_PER_YEAR} entries, got {len(self.load_factors)}"
            )
        if any(f < 0.0 or not math.isfinite(f) for f in self.load_factors):
            raise ValueError("load factors must be finite and >= 0")
        if not (0.0 <= self.p_islanding <= 1.0):
            raise ValueError(f"p_islanding must lie in [0, 1], got {self.p_islanding}")
        if self.max_years < 1:
            raise ValueError(f"max_years must be >= 1, got {self.max_years}")
        if not self.tolerance > 0.0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.dispatch not in (DISPATCH_SERVE_IF_FITS, DISPATCH_BLOCKING):
            raise ValueError(f"unknown dispatch rule {self.dispatch!r}")
        names = [unit.name for unit in self.fleet]
        if len(set(names)) != len(names):
            raise ValueError("fleet unit names must be unique")
        for unit in self.fleet:
            region = getattr(unit.device, "region_id", None)
            if region is not None and region not in self.distributions.wind_regions:
                raise ValueError(
                    f"unit {unit.name!r} references unknown wind region {region!r}"
                )
        if self.sweep_p is not None:
            object.__setattr__(self, "sweep_p", tuple(float(p) for p in self.sweep_p))
            if any(not 0.0 <= p <= 1.0 for p in self.sweep_p):
                raise ValueError("sweep_p values must lie in [0, 1]")


@dataclass(frozen=True)
class PResEstimate:
    """Estimated probability that the fleet fully serves one load point."""

    supplied_days: int
    total_days: int

    def __post_init__(self) -> None:
        if self.total_days < 1:
            raise ValueError("total_days must be >= 1")
        if not 0 <= self.supplied_days <= self.total_days:
            raise ValueError("supplied_days must lie in [0, total_days]")

    @property
    def p_res(self) -> float:
        return self.supplied_days / self.total_days


@dataclass(frozen=True)
class LoadPointIndices:
    """Per-load-point reliability indices.

    ``repair_time`` is unavailability / failure rate; when the failure rate
    is zero it is reported as 0 with ``repair_time_defined`` cleared.
    """

    failure_rate: float  # occurrences/yr
    unavailability: float  # hours/yr
    repair_time: float  # hours
    repair_time_defined: bool = True

    def __post_init__(self) -> None:
        for name in ("failure_rate", "unavailability", "repair_time"):
            value = getattr(self, name)
            if value < 0.0 or not math.isfinite(value):
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if self.repair_time_defined:
            residual = abs(self.repair_time * self.failure_rate - self.unavailability)
            if residual > _IDENTITY_RTOL * max(1.0, self.unavailability):
                raise ValueError("repair_time * failure_rate must equal unavailability")


@dataclass(frozen=True)
class SystemIndices:
    """System-level indices for one study case."""

    saifi: float  # interruptions / yr / customer
    saidi: float  # hours / yr / customer
    caidi: float  # hours / interruption
    ens: float  # kWh / yr
    aens: float  # kWh / yr / customer


# ---------------------------------------------------------------------------
# Priority dispatch
# ---------------------------------------------------------------------------

def priority_dispatch(total_res: float,
                      loads: Sequence[tuple[str, float]],
                      blocking: bool = False) -> set[str]:
    """Serve priority-ordered loads from a renewable generation budget.

    ``loads`` must be sorted from highest to lowest priority.  A load is
    supplied only if its full level fits in the remaining capacity, in which
    case its level is deducted; surplus generation is curtailed.  Under the
    default rule, a load that does not fit is skipped and lower-priority
    loads are still considered; with ``blocking=True`` dispatch stops at the
    first load that does not fit.
    """
    if total_res < 0.0:
        raise ValueError(f"generation must be >= 0, got {total_res}")
    remaining = float(total_res)
    served: set[str] = set()
    for lp_id, level in loads:
        if level < 0.0:
            raise ValueError(f"load level for {lp_id!r} must be >= 0")
        if level <= remaining:
            served.add(lp_id)
            remaining -= level
        elif blocking:
            break
    return served


# ---------------------------------------------------------------------------
# Yearly simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _SimContext:
    """Picklable bundle of everything a worker needs to simulate years."""

    distributions: ResourceDistributions
    fleet: tuple[DgUnit, ...]
    lp_ids: tuple[str, ...]  # priority order, most sensitive first
    levels: tuple[float, ...]  # aligned with lp_ids
    load_factors: tuple[float, ...]
    blocking: bool
    seed: int


def _context_for(scenario: Scenario) -> _SimContext:
    order = scenario.network.priority_order()
    levels = tuple(scenario.network.load_point(lp_id).load_level for lp_id in order)
    return _SimContext(
        distributions=scenario.distributions,
        fleet=scenario.fleet,
        lp_ids=order,
        levels=levels,
        load_factors=scenario.load_factors,
        blocking=scenario.dispatch == DISPATCH_BLOCKING,
        seed=scenario.seed,
    )


def _simulate_block(ctx: _SimContext, start_year: int, n_years: int) -> np.ndarray:
    """Supplied-day counts, shape (n_years, n_load_points), priority order."""
    n_days = n_years * DAYS_PER_YEAR
    resources = sample_daily_resources(
        ctx.distributions, ctx.fleet, ctx.seed, n_days, start_year=start_year
    )
    total = np.zeros(n_days)
    for unit in ctx.fleet:
        total += unit_power_series(unit, resources)
    remaining = total.reshape(n_years, DAYS_PER_YEAR)

    factors = np.asarray(ctx.load_factors)
    counts = np.zeros((n_years, len(ctx.lp_ids)), dtype=np.int64)
    if ctx.blocking:
        alive = np.ones((n_years, DAYS_PER_YEAR), dtype=bool)
    remaining = remaining.copy()
    for column, level in enumerate(ctx.levels):
        need = level * factors  # (365,) broadcast over years
        fits = need <= remaining
        if ctx.blocking:
            fits &= alive
            alive = fits
        counts[:, column] = fits.sum(axis=1)
        remaining = remaining - need * fits
    return counts


def _simulate_block_task(args: tuple[_SimContext, int, int]) -> np.ndarray:
    ctx, start_year, n_years = args
    return _simulate_block(ctx, start_year, n_years)


def simulate_year(scenario: Scenario, year_index: int) -> dict[str, int]:
    """Supplied-day counts for one simulated year, keyed by load point id."""
    if year_index < 0:
        raise ValueError("year_index must be >= 0")
    ctx = _context_for(scenario)
    counts = _simulate_block(ctx, year_index, 1)[0]
    return dict(zip(ctx.lp_ids, (int(c) for c in counts)))


# ---------------------------------------------------------------------------
# Analytical combination and system indices
# ---------------------------------------------------------------------------

def _p_res_value(estimate: Union[PResEstimate, float]) -> float:
    p = estimate.p_res if isinstance(estimate, PResEstimate) else float(estimate)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"supply probability must lie in [0, 1], got {p}")
    return p


def combine_analytical(p_res: Mapping[str, Union[PResEstimate, float]],
                       contributions: ContributionTable,
                       upstream: UpstreamLink,
                       p_islanding: float = 1.0) -> dict[str, LoadPointIndices]:
    """Combine supply probabilities with network and upstream statistics.

    For each load point i with supply probability p_i::

        lambda_i = sum(lambda_j) + (1 - p_islanding * p_i) * lambda_up
        U_i      = sum(lambda_j * r_j) + (1 - p_islanding * p_i) * lambda_up * r_up

    An upstream failure interrupts the load point only when the island fails
    to form or the fleet cannot carry the load, hence the (1 - p) weight on
    the upstream term.  With p_islanding = 0 the fleet contributes nothing.
    """
    if not 0.0 <= p_islanding <= 1.0:
        raise ValueError(f"p_islanding must lie in [0, 1], got {p_islanding}")
    indices = {}
    for lp_id in contributions.load_point_ids:
        if lp_id not in p_res:
            raise KeyError(f"missing supply probability for load point {lp_id!r}")
        p_effective = p_islanding * _p_res_value(p_res[lp_id])
        lam = contributions.sum_lambda(lp_id) + (1.0 - p_effective) * upstream.failure_rate
        u = contributions.sum_lambda_r(lp_id) + (
            (1.0 - p_effective) * upstream.failure_rate * upstream.repair_time
        )
        if lam > 0.0:
            indices[lp_id] = LoadPointIndices(lam, u, u / lam)
        else:
            indices[lp_id] = LoadPointIndices(lam, u, 0.0, repair_time_defined=False)
    return indices


def compute_system_indices(per_lp: Mapping[str, LoadPointIndices],
                           network: NetworkModel) -> SystemIndices:
    """Customer- and load-weighted system indices.

    SAIFI and SAIDI weight the per-load-point failure rate and
    unavailability by customer count; CAIDI is their ratio; ENS weights
    unavailability by load level; AENS is ENS per customer.
    """
    n_total = network.total_customers
    if n_total == 0:
        raise ZeroDivisionError("system has no customers")
    missing = [lp.id for lp in network.load_points if lp.id not in per_lp]
    if missing:
        raise KeyError(f"missing indices for load points {missing}")
    saifi = math.fsum(
        per_lp[lp.id].failure_rate * lp.customers for lp in network.load_points
    ) / n_total
    saidi = math.fsum(
        per_lp[lp.id].unavailability * lp.customers for lp in network.load_points
    ) / n_total
    if saifi == 0.0:
        raise ZeroDivisionError("SAIFI is zero; CAIDI is undefined")
    ens = math.fsum(
        per_lp[lp.id].unavailability * lp.load_level for lp in network.load_points
    )
    return SystemIndices(
        saifi=saifi,
        saidi=saidi,
        caidi=saidi / saifi,
        ens=ens,
        aens=ens / n_total,
    )


# ---------------------------------------------------------------------------
# Full evaluation with convergence control
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    """Everything a completed evaluation produced."""

    scenario_name: str
    seed: int
    years_run: int
    converged: bool
    p_res: dict[str, PResEstimate]
    per_lp: dict[str, LoadPointIndices]
    system: SystemIndices
    running_ens: np.ndarray  # running ENS estimate after each year
    statistic: np.ndarray  # convergence statistic per year (NaN until defined)


@dataclass
class SweepResult:
    """Sensitivity of the system indices to islanding-success probability."""

    base: RunResult
    rows: tuple[tuple[float, SystemIndices], ...]


def _running_ens_series(counts: np.ndarray, ctx_lp_ids: Sequence[str],
                        network: NetworkModel, table: ContributionTable,
                        p_islanding: float) -> np.ndarray:
    """Running ENS estimate after each simulated year (vectorized)."""
    years = counts.shape[0]
    cumulative = np.cumsum(counts, axis=0, dtype=np.float64)
    total_days = DAYS_PER_YEAR * np.arange(1, years + 1, dtype=np.float64)
    p = cumulative / total_days[:, None]
    upstream = network.upstream
    levels = np.array([network.load_point(lp).load_level for lp in ctx_lp_ids])
    sum_lr = np.array([table.sum_lambda_r(lp) for lp in ctx_lp_ids])
    u = sum_lr[None, :] + (1.0 - p_islanding * p) * (
        upstream.failure_rate * upstream.repair_time
    )
    return u @ levels


def _moving_average(series: np.ndarray, window: int) -> np.ndarray:
    """means[t] = mean(series[t-window+1 .. t]); NaN before the window fills."""
    out = np.full(series.size, np.nan)
    if series.size >= window:
        csum = np.concatenate(([0.0], np.cumsum(series)))
        out[window - 1:] = (csum[window:] - csum[:-window]) / window
    return out


def _convergence_statistic(running_ens: np.ndarray, window: int) -> np.ndarray:
    """Relative change between window-mean ENS and its value a window earlier."""
    means = _moving_average(running_ens, window)
    stat = np.full(running_ens.size, np.nan)
    if running_ens.size >= 2 * window:
        current = means[2 * window - 1:]
        earlier = means[window - 1:-window]
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.abs(current - earlier) / np.abs(earlier)
        rel = np.where(
            earlier == 0.0, np.where(current == 0.0, 0.0, np.inf), rel
        )
        stat[2 * window - 1:] = rel
    return stat


def _find_stop_year(statistic: np.ndarray, tolerance: float,
                    max_years: int) -> Optional[int]:
    """First year (1-based) meeting the convergence rule, or None."""
    first = MIN_CONVERGENCE_YEARS
    limit = min(statistic.size, max_years)
    if limit < first:
        return None
    window = statistic[first - 1:limit]
    hits = np.flatnonzero(window < tolerance)
    if hits.size == 0:
        return None
    return first + int(hits[0])


def run(scenario: Scenario, workers: int = 1) -> RunResult:
    """Execute the full evaluation for one scenario.

    Years are simulated in fixed-size blocks until the convergence rule
    triggers or ``scenario.max_years`` is reached.  Blocks may be simulated
    by parallel worker processes; because every year draws from its own
    (seed, year) substream and the stopping year is a function of the
    per-year series alone, the result is identical for any worker count.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    table = build_contribution_table(scenario.network)
    ctx = _context_for(scenario)
    n_lp = len(ctx.lp_ids)

    if not scenario.fleet:
        # Nothing stochastic: the supply probability is exactly zero.
        counts = np.zeros((1, n_lp), dtype=np.int64)
        converged = True
        years_run = 1
    else:
        blocks: list[np.ndarray] = []
        simulated = 0
        converged = False
        years_run = 0
        pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
        try:
            while simulated < scenario.max_years:
                wave = []
                for _ in range(max(workers, 1)):
                    if simulated + sum(n for _, n in wave) >= scenario.max_years:
                        break
                    start = simulated + sum(n for _, n in wave)
                    size = min(_YEARS_PER_BLOCK, scenario.max_years - start)
                    wave.append((start, size))
                if not wave:
                    break
                tasks = [(ctx, start, size) for start, size in wave]
                if pool is not None and len(tasks) > 1:
                    results = list(pool.map(_simulate_block_task, tasks))
                else:
                    results = [_simulate_block_task(t) for t in tasks]
                blocks.extend(results)
                simulated += sum(size for _, size in wave)

                counts_so_far = np.concatenate(blocks, axis=0)
                running = _running_ens_series(
                    counts_so_far, ctx.lp_ids, scenario.network, table,
                    scenario.p_islanding,
                )
                statistic = _convergence_statistic(running, CONVERGENCE_WINDOW_YEARS)
                stop = _find_stop_year(statistic, scenario.tolerance, scenario.max_years)
                if stop is not None:
                    converged = True
                    years_run = stop
                    break
            if not converged:
                years_run = min(simulated, scenario.max_years)
        finally:
            if pool is not None:
                pool.shutdown()
        counts = np.concatenate(blocks, axis=0)[:years_run]

    running_ens = _running_ens_series(
        counts, ctx.lp_ids, scenario.network, table, scenario.p_islanding
    )
    statistic = _convergence_statistic(running_ens, CONVERGENCE_WINDOW_YEARS)

    totals = counts.sum(axis=0)
    total_days = DAYS_PER_YEAR * years_run
    p_res = {
        lp_id: PResEstimate(int(totals[i]), total_days)
        for i, lp_id in enumerate(ctx.lp_ids)
    }
    per_lp = combine_analytical(p_res, table, scenario.network.upstream,
                                scenario.p_islanding)
    system = compute_system_indices(per_lp, scenario.network)
    return RunResult(
        scenario_name=scenario.name,
        seed=scenario.seed,
        years_run=years_run,
        converged=converged,
        p_res=p_res,
        per_lp=per_lp,
        system=system,
        running_ens=running_ens,
        statistic=statistic,
    )


def sensitivity_sweep(scenario: Scenario,
                      p_values: Iterable[float],
                      workers: int = 1) -> SweepResult:
    """Recompute the system indices for several islanding-success levels.

    The Monte-Carlo estimate is produced once (supply probabilities do not
    depend on the islanding outcome) and each probability is applied through
    the analytical combination, so every index is exactly affine in p.
    """
    p_list = [float(p) for p in p_values]
    if not p_list:
        raise ValueError("at least one probability value is required")
    for p in p_list:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"islanding probability must lie in [0, 1], got {p}")
    base = run(scenario, workers=workers)
    table = build_contribution_table(scenario.network)
    rows = []
    for p in p_list:
        per_lp = combine_analytical(base.p_res, table, scenario.network.upstream, p)
        rows.append((p, compute_system_indices(per_lp, scenario.network)))
    return SweepResult(base=base, rows=tuple(rows))
