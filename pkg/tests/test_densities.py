import math

import numpy as np
import pytest

from arw1d.core import Configuration, Odometer, Region
from arw1d.densities import (
    ChainState,
    OuterPoint,
    as_region,
    estimate_aggregate,
    estimate_inner,
    estimate_outer,
    fold_outer_points,
    hill_tail_exponent,
    inner_quantile,
    run_chain,
    sample_interval_stabilization,
    sample_w0,
    stationary_chain_step,
)
from arw1d.stacks import derive_trial_seed, source


def test_as_region_forms():
    assert as_region(5) == Region.interval(-2, 2)
    assert as_region(4) == Region.interval(-2, 1)
    assert as_region((-3, 7)) == Region.interval(-3, 7)
    assert as_region(Region.interval(0, 0)) == Region.interval(0, 0)
    with pytest.raises(ValueError):
        as_region(0)


# ---------------------------------------------------------------- inner


def test_interval_sample_counts_survivors():
    for seed in range(10):
        count = sample_interval_stabilization(17, 1.0, seed)
        assert 0 <= count <= 17


def test_interval_sample_flags_on_tiny_cap():
    assert sample_interval_stabilization(33, 1.0, 3, cap=5) is None


def test_inner_quantile_matches_sorted_rank():
    # (1-q) quantile, rounded upward to an observed value
    d = np.array([0.2, 0.8, 0.4, 0.6, 0.5])
    s = np.sort(d)
    for q in (0.5, 0.25, 1e-3):
        level = 1.0 - q
        rank = math.ceil(level * (len(d) - 1))
        assert inner_quantile(d, q) == s[rank]


def test_estimate_inner_fields_and_quantile():
    est = estimate_inner(32, 1.0, 120, q=0.1, base_seed=3)
    assert est.trials == 120 and est.flagged == 0
    assert est.interval_size == 32
    assert 0.0 < est.mean_density < 1.0
    s = np.sort(est.densities)
    rank = math.ceil(0.9 * (len(s) - 1))
    assert est.zeta_in_hat == s[rank]


def test_estimate_inner_monotone_in_quantile_level():
    tight = estimate_inner(24, 1.0, 150, q=1e-3, base_seed=9)
    loose = estimate_inner(24, 1.0, 150, q=0.5, base_seed=9)
    assert tight.zeta_in_hat >= loose.zeta_in_hat


def test_estimate_inner_is_deterministic():
    a = estimate_inner(16, 0.5, 60, base_seed=11)
    b = estimate_inner(16, 0.5, 60, base_seed=11)
    assert a.zeta_in_hat == b.zeta_in_hat
    assert np.array_equal(a.densities, b.densities)


def test_inner_density_grows_with_sleep_rate():
    lazy = estimate_inner(48, 0.2, 80, base_seed=2)
    eager = estimate_inner(48, 5.0, 80, base_seed=2)
    assert eager.mean_density > lazy.mean_density


# ---------------------------------------------------------------- chain


def test_chain_step_matches_bulk_run():
    for seed in (3, 14, 77):
        region = (-8, 7)
        src = source(seed, 1.0)
        state = ChainState.empty(region)
        v = (as_region(region).a + as_region(region).b) // 2
        for _ in range(50):
            state = stationary_chain_step(state, v, src)
        bulk = run_chain(region, 1.0, seed, steps=50, burn_in=0)
        assert bulk.final.config == state.config
        assert bulk.final.odometer == state.odometer


def test_chain_single_site_survival_law():
    # a lone inserted walker survives exactly when its first decisive
    # draw is a sleep: probability lam / (1 + lam)
    for lam, p in ((1.0, 0.5), (3.0, 0.75)):
        run = run_chain((0, 0), lam, 31, steps=10 ** 4, burn_in=0)
        sigma = math.sqrt(p * (1 - p) / 10 ** 4)
        assert abs(run.density - p) <= 4 * sigma


def test_chain_insertion_wakes_sleeper():
    # with a sleeper at the insertion site there are two walkers to kill:
    # two opening right-steps empty the single-site interval, which can
    # only happen if the insertion woke the sleeper
    seed = _find_seed_rr()
    state = ChainState(as_region((0, 0)), Configuration({}, {0}), 1, Odometer())
    nxt = stationary_chain_step(state, 0, source(seed, 1.0))
    assert nxt.config == Configuration()
    assert nxt.odometer[0] == 2


def _find_seed_rr():
    from arw1d.stacks import Instruction
    for seed in range(10 ** 4):
        src = source(seed, 1.0)
        if (src.draw(0, 1) is Instruction.STEP_RIGHT
                and src.draw(0, 2) is Instruction.STEP_RIGHT):
            return seed
    raise AssertionError("no opening double right-step below 10^4")


def test_chain_validates_insertion_site():
    with pytest.raises(ValueError):
        run_chain((-4, 4), 1.0, 5, steps=10, v=9)
    state = ChainState.empty((-4, 4))
    with pytest.raises(ValueError):
        stationary_chain_step(state, 9, source(5, 1.0))


def test_chain_burn_in_only_affects_reported_density():
    a = run_chain((-6, 6), 1.0, 8, steps=400, burn_in=0)
    b = run_chain((-6, 6), 1.0, 8, steps=400, burn_in=100)
    assert np.array_equal(a.survivors, b.survivors)
    assert a.final.config == b.final.config
    assert b.density == float(a.survivors[100:].mean()) / 13


def test_chain_rejects_bad_burn_in():
    with pytest.raises(ValueError):
        run_chain((-4, 4), 1.0, 5, steps=10, burn_in=10)


def test_chain_state_validation():
    with pytest.raises((ValueError, TypeError)):
        ChainState.empty(None)
    with pytest.raises(ValueError):
        ChainState(as_region(3), Configuration({0: 1}), 0, Odometer())


# ---------------------------------------------------------------- outer


def test_w0_schedule_and_convergence_rule():
    s = sample_w0(0.2, 1.0, 5)
    assert s.windows[0] == 64
    assert all(b == 2 * a for a, b in zip(s.windows, s.windows[1:]))
    assert list(s.values) == sorted(s.values)
    if s.converged:
        assert s.values[-1] == s.values[-2] == s.values[-3] == s.w0


def test_w0_monotone_across_many_seeds():
    converged = 0
    for i in range(50):
        s = sample_w0(0.3, 1.0, derive_trial_seed(21, i))
        assert list(s.values) == sorted(s.values)
        assert not s.flagged
        converged += s.converged
    assert converged >= 45


def test_w0_short_schedule_cannot_converge():
    s = sample_w0(0.3, 1.0, 9, L0=64, L_max=128)
    assert not s.converged and s.w0 is None
    assert len(s.values) == 2


def test_w0_near_empty_window_is_zero():
    for i in range(20):
        s = sample_w0(0.01, 1.0, derive_trial_seed(22, i))
        if s.converged:
            assert s.w0 >= 0
    # a seed with no open site near the origin stabilizes instantly
    zeros = [sample_w0(0.01, 1.0, derive_trial_seed(22, i)).w0 == 0
             for i in range(20)]
    assert any(zeros)


def test_hill_exponent_hand_computed():
    vals = [1.0] * 97 + [math.e, math.e ** 2, math.e ** 4]
    # k = 5, reference x_(6) = 1, log sum = 4 + 2 + 1 + 0 + 0
    assert hill_tail_exponent(np.array(vals)) == pytest.approx(5 / 7)


def test_hill_exponent_degenerate_cases():
    assert hill_tail_exponent(np.array([1.0] * 10)) == math.inf  # too few
    assert hill_tail_exponent(np.array([3.0] * 100)) == math.inf  # no spread
    assert hill_tail_exponent(np.zeros(100)) == math.inf  # nothing positive


def test_hill_exponent_separates_tails():
    rng = np.random.default_rng(1)
    pareto = rng.uniform(size=2 * 10 ** 4) ** (-1.0 / 1.5)
    assert hill_tail_exponent(pareto) < 2.5
    light = rng.poisson(2.0, size=2 * 10 ** 4).astype(float)
    assert hill_tail_exponent(light) > 3.0


def _point(z, accepted):
    return OuterPoint(z, 100, 100, 0.0, 1.0, 10.0 if accepted else 1.0,
                      accepted, False)


def test_fold_outer_points_takes_largest_accepted():
    grid = (0.1, 0.2, 0.3, 0.4)
    est = fold_outer_points(1.0, grid, [_point(z, z <= 0.2) for z in grid])
    assert est.zeta_out_hat == 0.2
    assert est.downward_violations == ()
    assert est.grid_step == pytest.approx(0.1)


def test_fold_outer_points_reports_closure_violations():
    grid = (0.1, 0.2, 0.3)
    pts = [_point(0.1, True), _point(0.2, False), _point(0.3, True)]
    est = fold_outer_points(1.0, grid, pts)
    assert est.zeta_out_hat == 0.3
    assert est.downward_violations == (0.2,)


def test_fold_outer_points_none_accepted():
    grid = (0.2, 0.4)
    est = fold_outer_points(1.0, grid, [_point(z, False) for z in grid])
    assert est.zeta_out_hat is None
    assert est.downward_violations == ()


def test_estimate_outer_small_grid():
    est = estimate_outer(1.0, [0.15, 0.3], 30, base_seed=13)
    again = estimate_outer(1.0, [0.15, 0.3], 30, base_seed=13)
    assert est == again
    assert est.grid == (0.15, 0.3)
    for p in est.points:
        assert p.trials == 30 and 0 <= p.converged <= 30
    assert est.zeta_out_hat in (None, 0.15, 0.3)


def test_estimate_outer_validates_grid():
    with pytest.raises(ValueError):
        estimate_outer(1.0, [], 30)
    with pytest.raises(ValueError):
        estimate_outer(1.0, [0.5, 1.2], 30)
    with pytest.raises(ValueError):
        estimate_outer(1.0, [0.5], 5)


# ------------------------------------------------------------- aggregate


def test_aggregate_fired_set_is_interval_around_origin():
    est = estimate_aggregate(60, 1.0, 15, base_seed=4)
    assert np.all(est.lefts <= 0) and np.all(est.rights >= 0)
    assert np.all(est.sizes == est.rights - est.lefts + 1)
    assert est.max_extent <= 10 * 60
    assert est.zeta_agg_hat == pytest.approx(60 / est.sizes.mean())


def test_aggregate_infinite_rate_is_nearly_exact():
    # the fired set misses at most the two endpoints of the occupied
    # interval, so the density ratio lands in [1, n/(n-2)]
    n = 100
    est = estimate_aggregate(n, math.inf, 40, base_seed=6)
    assert np.all((est.sizes >= n - 2) & (est.sizes <= n))
    assert 1.0 <= est.zeta_agg_hat <= n / (n - 2)


def test_aggregate_is_deterministic():
    a = estimate_aggregate(40, 1.0, 10, base_seed=1)
    b = estimate_aggregate(40, 1.0, 10, base_seed=1)
    assert np.array_equal(a.sizes, b.sizes)


def test_aggregate_validation():
    with pytest.raises(ValueError):
        estimate_aggregate(5, 1.0, 10)
    with pytest.raises(ValueError):
        estimate_aggregate(50, 1.0, 0)


# ------------------------------------------------- reduced-scale sandwich


def test_density_sandwich_reduced_scale():
    """Desk-scale version of the three-estimator ordering: the outer
    estimate minus its grid resolution stays below the aggregate
    estimate, which stays below the inner estimate plus its spread."""
    lam = 1.0
    inner = estimate_inner(128, lam, 300, q=1e-3, base_seed=100)
    outer = estimate_outer(lam, np.arange(0.30, 0.85, 0.10), 120, base_seed=200)
    agg = estimate_aggregate(400, lam, 60, base_seed=300)

    assert outer.zeta_out_hat is not None
    lo = outer.zeta_out_hat - 3 * outer.grid_step
    hi = inner.zeta_in_hat + 3 * inner.std_density
    assert lo <= agg.zeta_agg_hat <= hi, (lo, agg.zeta_agg_hat, hi)
