"""Engine tests: dispatch, analytical combination, indices, full runs."""

import dataclasses
import math

import numpy as np
import pytest

from microrel import engine
from microrel.engine import (
    LoadPointIndices,
    PResEstimate,
    Scenario,
    combine_analytical,
    compute_system_indices,
    priority_dispatch,
    run,
    sensitivity_sweep,
    simulate_year,
)
from microrel.network import (
    LoadPoint,
    LoadPointAggregate,
    NetworkModel,
    UpstreamLink,
    build_contribution_table,
    load_calibrated_dataset,
)
from microrel.res_models import (
    BetaParams,
    DgUnit,
    PvArraySpec,
    ResourceDistributions,
    WeibullParams,
    WindTurbineSpec,
)
from microrel.scenario_io import bundled_scenarios
from oracles import dispatch_by_enumeration

PRIORITY_LOADS = [("LP9", 500.0), ("LP3", 3000.0), ("LP4", 1000.0), ("LP2", 1000.0)]

TABLE_V_CASE1 = {
    "LP2": (0.726, 11.042, 8.017),
    "LP3": (0.726, 10.823, 7.858),
    "LP4": (0.726, 10.093, 7.328),
    "LP9": (0.656, 10.554, 6.924),
}


@pytest.fixture(scope="module")
def cases():
    return bundled_scenarios()


def _zero_p_res():
    return {lp: 0.0 for lp in ("LP2", "LP3", "LP4", "LP9")}


# ---------------------------------------------------------------------------
# Priority dispatch
# ---------------------------------------------------------------------------

def test_dispatch_nothing_served_without_generation():
    assert priority_dispatch(0.0, PRIORITY_LOADS) == set()


def test_dispatch_exact_capacity_serves_everything():
    assert priority_dispatch(5500.0, PRIORITY_LOADS) == {"LP9", "LP3", "LP4", "LP2"}


def test_dispatch_partial_capacity_respects_priority():
    served = priority_dispatch(3600.0, PRIORITY_LOADS)
    assert served == {"LP9", "LP3"}
    assert priority_dispatch(3600.0, PRIORITY_LOADS, blocking=True) == {"LP9", "LP3"}


def test_dispatch_rules_differ_when_a_skip_frees_capacity():
    # 1600 kW: LP3 does not fit; serve-if-fits passes over it to LP4 while
    # the blocking rule stops the scan.
    assert priority_dispatch(1600.0, PRIORITY_LOADS) == {"LP9", "LP4"}
    assert priority_dispatch(1600.0, PRIORITY_LOADS, blocking=True) == {"LP9"}


def test_dispatch_rejects_negative_generation():
    with pytest.raises(ValueError):
        priority_dispatch(-1.0, PRIORITY_LOADS)


@pytest.mark.parametrize("blocking", [False, True])
def test_dispatch_matches_subset_enumeration(blocking):
    rng = np.random.default_rng(314)
    for _ in range(1000):
        n = rng.integers(1, 7)
        loads = [(f"L{i}", float(rng.integers(0, 40)) * 25.0) for i in range(n)]
        total = float(rng.integers(0, 60)) * 25.0
        expected = dispatch_by_enumeration(total, loads, blocking=blocking)
        assert priority_dispatch(total, loads, blocking=blocking) == expected


# ---------------------------------------------------------------------------
# Analytical combination
# ---------------------------------------------------------------------------

def test_combination_without_supply_reproduces_published_case1_rows():
    net = load_calibrated_dataset()
    table = build_contribution_table(net)
    per_lp = combine_analytical(_zero_p_res(), table, net.upstream, p_islanding=1.0)
    for lp_id, (lam, r, u) in TABLE_V_CASE1.items():
        assert per_lp[lp_id].failure_rate == pytest.approx(lam, abs=1e-3)
        assert per_lp[lp_id].repair_time == pytest.approx(r, abs=1e-3)
        assert per_lp[lp_id].unavailability == pytest.approx(u, abs=1e-3)


def test_combination_with_certain_supply_removes_upstream_term():
    net = load_calibrated_dataset()
    table = build_contribution_table(net)
    p_res = dict(_zero_p_res(), LP9=1.0)
    per_lp = combine_analytical(p_res, table, net.upstream, p_islanding=1.0)
    assert per_lp["LP9"].failure_rate == pytest.approx(0.156, abs=1e-12)
    assert per_lp["LP9"].unavailability == pytest.approx(1.924, abs=1e-12)


def test_combination_with_zero_islanding_ignores_supply():
    net = load_calibrated_dataset()
    table = build_contribution_table(net)
    certain = {lp: 1.0 for lp in _zero_p_res()}
    with_res = combine_analytical(certain, table, net.upstream, p_islanding=0.0)
    without = combine_analytical(_zero_p_res(), table, net.upstream, p_islanding=1.0)
    for lp_id in certain:
        assert with_res[lp_id] == without[lp_id]


def test_combination_accepts_estimates_and_floats():
    net = load_calibrated_dataset()
    table = build_contribution_table(net)
    estimates = {lp: PResEstimate(0, 365) for lp in _zero_p_res()}
    assert combine_analytical(estimates, table, net.upstream) == \
        combine_analytical(_zero_p_res(), table, net.upstream)


def test_combination_zero_rate_flags_undefined_repair_time():
    net = NetworkModel(
        load_points=(LoadPoint("L1", 10.0, 1, 1),),
        upstream=UpstreamLink(0.0, 0.0),
        aggregates={"L1": LoadPointAggregate(0.0, 0.0)},
    )
    per_lp = combine_analytical({"L1": 0.0}, build_contribution_table(net),
                                net.upstream)
    assert per_lp["L1"].failure_rate == 0.0
    assert per_lp["L1"].repair_time == 0.0
    assert not per_lp["L1"].repair_time_defined


def test_combination_validates_probabilities():
    net = load_calibrated_dataset()
    table = build_contribution_table(net)
    with pytest.raises(ValueError):
        combine_analytical({lp: 1.5 for lp in _zero_p_res()}, table, net.upstream)
    with pytest.raises(ValueError):
        combine_analytical(_zero_p_res(), table, net.upstream, p_islanding=2.0)
    with pytest.raises(KeyError):
        combine_analytical({"LP2": 0.0}, table, net.upstream)


def test_load_point_indices_identity_enforced():
    with pytest.raises(ValueError):
        LoadPointIndices(failure_rate=1.0, unavailability=5.0, repair_time=3.0)
    ok = LoadPointIndices(failure_rate=2.0, unavailability=5.0, repair_time=2.5)
    assert ok.repair_time * ok.failure_rate == pytest.approx(ok.unavailability)


# ---------------------------------------------------------------------------
# System indices
# ---------------------------------------------------------------------------

def _published_case1_per_lp():
    return {
        lp_id: LoadPointIndices(lam, u, u / lam)
        for lp_id, (lam, _, u) in TABLE_V_CASE1.items()
    }


def test_system_indices_close_published_case1_arithmetic():
    net = load_calibrated_dataset()
    system = compute_system_indices(_published_case1_per_lp(), net)
    assert system.ens == pytest.approx(42381.0, abs=1e-6)
    assert system.saifi == pytest.approx(0.721, abs=1e-9)
    assert system.saidi == pytest.approx(7.624714285714286, abs=1e-9)
    assert system.aens == pytest.approx(42381.0 / 700.0, abs=1e-9)
    assert system.caidi * system.saifi == pytest.approx(system.saidi, rel=1e-12)


def test_system_indices_require_customers_and_interruptions():
    no_customers = NetworkModel(
        load_points=(LoadPoint("L1", 10.0, 0, 1),),
        upstream=UpstreamLink(0.5, 10.0),
        aggregates={"L1": LoadPointAggregate(0.1, 1.0)},
    )
    with pytest.raises(ZeroDivisionError):
        compute_system_indices(
            {"L1": LoadPointIndices(0.1, 1.0, 10.0)}, no_customers)
    perfect = NetworkModel(
        load_points=(LoadPoint("L1", 10.0, 5, 1),),
        upstream=UpstreamLink(0.0, 0.0),
        aggregates={"L1": LoadPointAggregate(0.0, 0.0)},
    )
    with pytest.raises(ZeroDivisionError):
        compute_system_indices(
            {"L1": LoadPointIndices(0.0, 0.0, 0.0, repair_time_defined=False)},
            perfect)


def test_system_indices_reject_missing_load_point():
    with pytest.raises(KeyError):
        compute_system_indices({"LP2": LoadPointIndices(0.1, 1.0, 10.0)},
                               load_calibrated_dataset())


# ---------------------------------------------------------------------------
# Yearly simulation
# ---------------------------------------------------------------------------

def test_simulate_year_empty_fleet_serves_nothing(cases):
    counts = simulate_year(cases["case1"], 0)
    assert counts == {"LP9": 0, "LP3": 0, "LP4": 0, "LP2": 0}


def test_simulate_year_oversized_always_on_unit_serves_everything(cases):
    # A PV array whose standard irradiance is absurdly small is pinned at
    # rated output for any positive irradiance draw, making it an always-on
    # source larger than the total load.
    always_on = DgUnit("BIG", "LP1", PvArraySpec(p_sn=6000.0, g_std=1e-20, r_c=1e-21))
    scenario = dataclasses.replace(cases["case3"], fleet=(always_on,))
    counts = simulate_year(scenario, 0)
    assert counts == {"LP9": 365, "LP3": 365, "LP4": 365, "LP2": 365}


def test_simulate_year_is_deterministic(cases):
    assert simulate_year(cases["case3"], 7) == simulate_year(cases["case3"], 7)
    assert simulate_year(cases["case3"], 7) != simulate_year(cases["case3"], 8)


def test_simulate_year_counts_within_bounds(cases):
    counts = simulate_year(cases["case3"], 0)
    assert all(0 <= c <= 365 for c in counts.values())


def test_simulate_year_rejects_negative_year(cases):
    with pytest.raises(ValueError):
        simulate_year(cases["case3"], -1)


def test_priority_dominance_of_top_ranked_load(cases):
    # LP9 is served on any day with at least its own level available, so its
    # estimate dominates every other load point in every run.
    for year in range(20):
        counts = simulate_year(cases["case3"], year)
        assert counts["LP9"] >= max(counts.values())


def test_p_res_estimate_validation():
    with pytest.raises(ValueError):
        PResEstimate(-1, 365)
    with pytest.raises(ValueError):
        PResEstimate(366, 365)
    with pytest.raises(ValueError):
        PResEstimate(0, 0)
    assert PResEstimate(73, 365).p_res == pytest.approx(0.2)


# ---------------------------------------------------------------------------
# Full runs
# ---------------------------------------------------------------------------

def test_run_case1_converges_in_one_year_to_published_values(cases):
    result = run(cases["case1"])
    assert result.years_run == 1
    assert result.converged
    for lp_id, (lam, r, u) in TABLE_V_CASE1.items():
        assert result.per_lp[lp_id].failure_rate == pytest.approx(lam, abs=1e-3)
        assert result.per_lp[lp_id].unavailability == pytest.approx(u, abs=1e-3)
    assert result.system.ens == pytest.approx(42381.0, abs=1.0)


def test_run_is_deterministic_for_fixed_seed(cases):
    a = run(cases["case3"])
    b = run(cases["case3"])
    assert a.years_run == b.years_run
    assert a.p_res == b.p_res
    assert a.system == b.system
    np.testing.assert_array_equal(a.running_ens, b.running_ens)


def test_run_seed_changes_results(cases):
    a = run(cases["case3"])
    b = run(dataclasses.replace(cases["case3"], seed=999))
    assert a.p_res != b.p_res


def test_run_worker_count_does_not_change_results(cases):
    scenario = cases["case3"]
    inline = run(scenario, workers=1)
    pooled = run(scenario, workers=2)
    assert inline.years_run == pooled.years_run
    assert inline.p_res == pooled.p_res
    assert inline.system == pooled.system


def test_run_respects_max_years_and_reports_nonconvergence(cases):
    scenario = dataclasses.replace(cases["case3"], max_years=300)
    result = run(scenario)
    assert result.years_run == 300
    assert not result.converged


def test_run_convergence_floor(cases):
    result = run(cases["case3"])
    assert result.converged
    assert result.years_run >= engine.MIN_CONVERGENCE_YEARS


def test_run_statistic_trace_shape(cases):
    result = run(cases["case3"])
    assert result.running_ens.size == result.years_run
    assert result.statistic.size == result.years_run
    window = engine.CONVERGENCE_WINDOW_YEARS
    assert np.all(np.isnan(result.statistic[: 2 * window - 1]))
    assert np.isfinite(result.statistic[2 * window :]).all()


def test_adding_a_unit_never_hurts_under_blocking(cases):
    # Blocking dispatch serves load i exactly when the day's generation
    # covers the priority prefix through i, so extra generation can only
    # help; with paired per-year substreams the comparison is day-by-day.
    base = cases["case3"]
    extra_unit = DgUnit(
        "WTG9", "LP6",
        WindTurbineSpec(1000.0, 14.0, 3.0, 25.0, "region1"),
    )
    bigger = dataclasses.replace(base, fleet=base.fleet + (extra_unit,))
    small = run(base)
    grown = run(bigger)
    for lp_id in small.p_res:
        assert grown.p_res[lp_id].supplied_days >= small.p_res[lp_id].supplied_days
        assert grown.per_lp[lp_id].failure_rate <= small.per_lp[lp_id].failure_rate
        assert grown.per_lp[lp_id].unavailability <= small.per_lp[lp_id].unavailability
    assert grown.system.ens <= small.system.ens


def test_disjoint_half_runs_agree_within_sampling_error(cases):
    # Two disjoint 10000-year estimates are Bernoulli proportions over
    # 3.65e6 day trials each and must agree to within 3 standard errors.
    scenario = cases["case3"]
    ctx = engine._context_for(scenario)
    half_years = 10_000
    first = engine._simulate_block(ctx, 0, half_years).sum(axis=0)
    second = engine._simulate_block(ctx, half_years, half_years).sum(axis=0)
    n = half_years * 365
    for i, lp_id in enumerate(ctx.lp_ids):
        p1 = first[i] / n
        p2 = second[i] / n
        pooled = (first[i] + second[i]) / (2 * n)
        se = math.sqrt(max(pooled * (1.0 - pooled), 1e-12) * 2.0 / n)
        assert abs(p1 - p2) <= 3.0 * se, f"{lp_id}: {p1} vs {p2} (se {se})"


def test_run_rejects_bad_worker_count(cases):
    with pytest.raises(ValueError):
        run(cases["case1"], workers=0)


# ---------------------------------------------------------------------------
# Sensitivity sweep
# ---------------------------------------------------------------------------

def test_sweep_indices_are_affine_in_islanding_probability(cases):
    sweep = sensitivity_sweep(cases["sweep"], [1.0, 0.5, 0.0])
    by_p = {p: s for p, s in sweep.rows}
    for attr in ("saifi", "saidi", "caidi", "ens", "aens"):
        lo = getattr(by_p[0.0], attr)
        hi = getattr(by_p[1.0], attr)
        mid = getattr(by_p[0.5], attr)
        if attr == "caidi":
            continue  # a ratio of two affine quantities, not itself affine
        assert abs(mid - 0.5 * (lo + hi)) < 1e-6 * lo


def test_sweep_zero_probability_row_equals_no_dg_case(cases):
    sweep = sensitivity_sweep(cases["sweep"], [0.0])
    baseline = run(cases["case1"])
    zero_row = sweep.rows[0][1]
    assert zero_row.ens == pytest.approx(baseline.system.ens, abs=1e-6)
    assert zero_row.saifi == pytest.approx(baseline.system.saifi, abs=1e-12)
    assert zero_row.saidi == pytest.approx(baseline.system.saidi, abs=1e-12)


def test_sweep_unit_probability_row_equals_base_run(cases):
    sweep = sensitivity_sweep(cases["sweep"], [1.0])
    assert sweep.rows[0][1] == sweep.base.system


def test_sweep_validates_probabilities(cases):
    with pytest.raises(ValueError):
        sensitivity_sweep(cases["sweep"], [1.2])
    with pytest.raises(ValueError):
        sensitivity_sweep(cases["sweep"], [])


# ---------------------------------------------------------------------------
# Scenario validation
# ---------------------------------------------------------------------------

def _tiny_scenario(**overrides):
    defaults = dict(
        name="tiny",
        network=load_calibrated_dataset(),
        distributions=ResourceDistributions(
            wind_regions={"r": WeibullParams(7.88, 2.62, "r")},
            irradiance=BetaParams(1.03745, 1.38279),
        ),
        fleet=(DgUnit("W", "LP7", WindTurbineSpec(2000.0, 15.0, 3.0, 25.0, "r")),),
        seed=1,
    )
    defaults.update(overrides)
    return Scenario(**defaults)


def test_scenario_validates_fields():
    assert _tiny_scenario().dispatch == engine.DISPATCH_SERVE_IF_FITS
    with pytest.raises(ValueError):
        _tiny_scenario(p_islanding=1.5)
    with pytest.raises(ValueError):
        _tiny_scenario(load_factors=(1.0,) * 100)
    with pytest.raises(ValueError):
        _tiny_scenario(load_factors=(-1.0,) + (1.0,) * 364)
    with pytest.raises(ValueError):
        _tiny_scenario(tolerance=0.0)
    with pytest.raises(ValueError):
        _tiny_scenario(max_years=0)
    with pytest.raises(ValueError):
        _tiny_scenario(dispatch="greedy")
    with pytest.raises(ValueError):
        _tiny_scenario(seed=-1)
    with pytest.raises(ValueError):
        _tiny_scenario(sweep_p=(0.5, 1.2))


def test_scenario_rejects_unknown_region_reference():
    with pytest.raises(ValueError):
        _tiny_scenario(
            fleet=(DgUnit("W", "LP7",
                          WindTurbineSpec(2000.0, 15.0, 3.0, 25.0, "elsewhere")),))


def test_scenario_rejects_duplicate_unit_names():
    unit = DgUnit("W", "LP7", WindTurbineSpec(2000.0, 15.0, 3.0, 25.0, "r"))
    with pytest.raises(ValueError):
        _tiny_scenario(fleet=(unit, unit))
