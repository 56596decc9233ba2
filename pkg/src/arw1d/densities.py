"""Monte Carlo density estimators.

Three densities are estimated, each with its own protocol:

* inner: stabilize the all-active interval configuration with a sink at
  the boundary and take a high quantile of the surviving fraction;
* outer: approximate the infinite-volume odometer at the origin by
  whole-line stabilization of Bernoulli windows of doubling width, then
  decide per density whether its third moment looks finite via a Hill
  tail-exponent rule;
* aggregate: the ratio of particles to fired sites for a point source.

Plus the insertion Markov chain on a killed interval (add one active,
stabilize, repeat), whose stationary density is a fourth diagnostic.

All estimators derive per-trial seeds from a base seed by a fixed pure
rule, so output is independent of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _engine
from .core import Configuration, Odometer, Region, Status, stabilize
from .idla import PercolationEnv
from .stacks import InstructionSource, derive_trial_seed, source

__all__ = [
    "InnerDensityEstimate", "WindowedOdometerSample", "OuterPoint",
    "OuterDensityEstimate", "AggregateEstimate", "ChainState", "ChainRun",
    "as_region", "sample_interval_stabilization", "estimate_inner",
    "inner_quantile", "stationary_chain_step", "run_chain",
    "sample_w0", "hill_tail_exponent", "outer_point", "fold_outer_points",
    "estimate_outer", "aggregate_trial", "estimate_aggregate",
]


def as_region(interval) -> Region:
    """Accept a Region, an (a, b) pair, or a bare size (centered at 0)."""
    if isinstance(interval, Region):
        return interval
    if isinstance(interval, int):
        if interval < 1:
            raise ValueError("interval size must be positive")
        lo = -(interval // 2)
        return Region.interval(lo, lo + interval - 1)
    return Region.interval(*interval)


# ---------------------------------------------------------------- inner

def sample_interval_stabilization(interval, lam, seed: int,
                                  cap: int | None = None) -> int | None:
    """Surviving particle count after stabilizing one active particle per
    site of the interval, killing at the boundary.

    Returns None for a flagged sample (step cap exceeded).
    """
    region = as_region(interval)
    src = source(seed, lam)
    c = Configuration.indicator(region)
    result = stabilize(c, src, region, cap=cap)
    if result.status is not Status.STABLE:
        return None
    return result.final.particle_count()


@dataclass(frozen=True)
class InnerDensityEstimate:
    interval_size: int
    trials: int
    flagged: int
    mean_density: float
    std_density: float
    quantile_level: float
    zeta_in_hat: float
    densities: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        if not (0.0 <= self.mean_density <= 1.0):
            raise ValueError("mean density out of range")
        if not (0.0 <= self.zeta_in_hat <= 1.0):
            raise ValueError("density quantile out of range")


def inner_quantile(densities: np.ndarray, q: float) -> float:
    """Empirical (1-q)-quantile, as an attained sample value so that the
    estimate is nonincreasing in q on fixed data."""
    return float(np.quantile(densities, 1.0 - q, method="higher"))


def estimate_inner(interval, lam, trials: int, q: float = 1e-3,
                   base_seed: int = 0, cap: int | None = None) -> InnerDensityEstimate:
    """High-quantile estimate of the surviving density of the all-active
    interval configuration."""
    region = as_region(interval)
    if trials < 1:
        raise ValueError("need at least one trial")
    if not (0.0 < q < 1.0):
        raise ValueError("quantile level must lie in (0, 1)")
    vals = []
    flagged = 0
    for i in range(trials):
        count = sample_interval_stabilization(region, lam,
                                              derive_trial_seed(base_seed, i), cap)
        if count is None:
            flagged += 1
        else:
            vals.append(count / region.size())
    if not vals:
        raise RuntimeError("every sample was flagged; raise the step cap")
    densities = np.asarray(vals)
    return InnerDensityEstimate(
        interval_size=region.size(), trials=trials, flagged=flagged,
        mean_density=float(densities.mean()),
        std_density=float(densities.std(ddof=1)) if len(vals) > 1 else 0.0,
        quantile_level=q, zeta_in_hat=inner_quantile(densities, q),
        densities=densities)


# ---------------------------------------------------------------- chain

@dataclass(frozen=True)
class ChainState:
    """Stable configuration on a killed interval, between insertions.

    The odometer is carried so the next step keeps consuming where the
    previous one stopped: each site's stack is read once, in order,
    across the whole chain history.
    """

    region: Region
    config: Configuration
    steps: int
    odometer: Odometer

    def __post_init__(self):
        if self.region.is_whole_line:
            raise ValueError("the chain lives on a finite interval")
        if self.config.active:
            raise ValueError("chain states are stable: no active particles")

    @classmethod
    def empty(cls, interval) -> "ChainState":
        return cls(as_region(interval), Configuration(), 0, Odometer())

    @property
    def density(self) -> float:
        return self.config.particle_count() / self.region.size()


def stationary_chain_step(state: ChainState, v: int,
                          src: InstructionSource,
                          cap: int | None = None) -> ChainState:
    """Add one active particle at v (waking a sleeper there on contact)
    and stabilize with the sink at the interval boundary."""
    if not state.region.contains(v):
        raise ValueError("insertion site must lie in the interval")
    active = {v: 2} if v in state.config.sleeping else {v: 1}
    sleeping = state.config.sleeping - {v}
    c = Configuration(active, sleeping)
    shifted = src.shifted(state.odometer.as_shift())
    result = stabilize(c, shifted, state.region, cap=cap)
    if result.status is not Status.STABLE:
        raise RuntimeError("step cap exceeded inside a chain step")
    return ChainState(state.region, result.final, state.steps + 1,
                      state.odometer + result.odometer)


@dataclass(frozen=True)
class ChainRun:
    region: Region
    insertion_site: int
    burn_in: int
    survivors: np.ndarray = field(repr=False, compare=False)
    final: ChainState

    @property
    def density(self) -> float:
        """Mean sleeping fraction over the post-burn-in steps."""
        tail = self.survivors[self.burn_in:]
        return float(tail.mean()) / self.region.size()

    def half_densities(self) -> tuple[float, float]:
        tail = self.survivors[self.burn_in:]
        h = len(tail) // 2
        m = self.region.size()
        return float(tail[:h].mean()) / m, float(tail[h:].mean()) / m


def run_chain(interval, lam, seed: int, steps: int, v: int | None = None,
              burn_in: int | None = None,
              cap_per_step: int = 10 ** 6) -> ChainRun:
    """Run the insertion chain in bulk on the compiled engine.

    Per-seed identical to iterating stationary_chain_step, which the test
    suite checks; burn_in defaults to 10 * interval size and only affects
    the reported density, not the recorded trajectory.
    """
    region = as_region(interval)
    src = source(seed, lam)
    if src.rate.is_infinite:
        raise ValueError("the chain needs a finite sleep rate")
    if v is None:
        v = (region.a + region.b) // 2
    if not region.contains(v):
        raise ValueError("insertion site must lie in the interval")
    if burn_in is None:
        burn_in = 10 * region.size()
    if not (0 <= burn_in < steps):
        raise ValueError("burn-in must leave at least one measured step")
    status, survivors, _steps, _kills, (count, asleep, odo) = _engine.chain_window(
        src.seed, src.rate.sleep_threshold, region.a, region.b, v, steps,
        cap_per_step)
    if status != _engine.STATUS_STABLE:
        raise RuntimeError("step cap exceeded inside a chain step")
    sites = np.flatnonzero(asleep) + region.a
    final = ChainState(region,
                       Configuration({}, set(int(x) for x in sites)),
                       steps,
                       Odometer({region.a + i: int(k)
                                 for i, k in enumerate(odo) if k}))
    return ChainRun(region, v, burn_in, survivors, final)


# ---------------------------------------------------------------- outer

@dataclass(frozen=True)
class WindowedOdometerSample:
    """Origin odometer of Bernoulli(zeta) configurations truncated to
    windows [-L, L] of doubling width, stabilized on the whole line.

    Per seed the values are nondecreasing in L (wider windows only add
    particles), so convergence is announced when two consecutive
    doublings leave the value unchanged.
    """

    zeta: float
    lam: float
    windows: tuple[int, ...]
    values: tuple[int, ...]
    converged: bool
    flagged: bool
    w0: int | None

    def __post_init__(self):
        if any(b < a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("windowed odometer values must be nondecreasing")
        if self.converged and self.w0 != self.values[-1]:
            raise ValueError("converged value must be the last recorded one")


def sample_w0(zeta: float, lam, seed: int, L0: int = 64,
              L_max: int = 4096, window_cap: int = 10 ** 7) -> WindowedOdometerSample:
    """One windowed-odometer sample; the percolation environment and the
    instruction stacks are both functions of the seed alone, so every
    window of the schedule reads the same randomness."""
    if L0 < 2:
        raise ValueError("initial window must have L >= 2")
    if L_max < L0:
        raise ValueError("window schedule is empty")
    env = PercolationEnv(zeta, seed)
    src = source(seed, lam)
    windows: list[int] = []
    values: list[int] = []
    flagged = False
    L = L0
    while L <= L_max:
        open_sites = np.flatnonzero(env.open_block(-L, L)) - L
        c = Configuration({int(x): 1 for x in open_sites})
        try:
            result = stabilize(c, src, cap=window_cap)
        except _engine.EngineError:
            flagged = True
            break
        if result.status is not Status.STABLE:
            flagged = True
            break
        windows.append(L)
        values.append(result.odometer[0])
        if len(values) >= 3 and values[-1] == values[-2] == values[-3]:
            return WindowedOdometerSample(zeta, lam, tuple(windows),
                                          tuple(values), True, False,
                                          values[-1])
        L *= 2
    return WindowedOdometerSample(zeta, lam, tuple(windows), tuple(values),
                                  False, flagged, None)


def hill_tail_exponent(values: np.ndarray, top_fraction: float = 0.05) -> float:
    """Hill estimator over the top order statistics of the positive part
    of the sample; +inf when the tail is too thin to estimate (few
    positive values, or no spread at the top), which callers treat as a
    light tail."""
    x = np.sort(np.asarray(values, dtype=float))
    x = x[x > 0][::-1]
    if x.size < 20:
        return math.inf
    k = min(max(1, int(top_fraction * x.size)), x.size - 1)
    ref = x[k]
    s = float(np.log(x[:k] / ref).sum())
    if s <= 0.0:
        return math.inf
    return k / s


@dataclass(frozen=True)
class OuterPoint:
    zeta: float
    trials: int
    converged: int
    nonconverged_fraction: float
    third_moment: float
    tail_exponent: float
    accepted: bool
    supercritical_for_procedure: bool


@dataclass(frozen=True)
class OuterDensityEstimate:
    lam: float
    grid: tuple[float, ...]
    points: tuple[OuterPoint, ...]
    zeta_out_hat: float | None
    grid_step: float
    downward_violations: tuple[float, ...]


def outer_point(zeta: float, trials: int, converged_values: Sequence[int],
                top_fraction: float = 0.05, exponent_threshold: float = 3.0,
                nonconv_threshold: float = 0.05) -> OuterPoint:
    """Fold one grid point's converged odometer values into its verdict."""
    nconv = len(converged_values)
    frac = 1.0 - nconv / trials
    arr = np.asarray(converged_values, dtype=float)
    moment = float(np.mean(arr ** 3)) if nconv else math.inf
    alpha = hill_tail_exponent(arr, top_fraction) if nconv else 0.0
    accepted = (alpha > exponent_threshold) and (frac <= nonconv_threshold)
    return OuterPoint(zeta, trials, nconv, frac, moment, alpha,
                      accepted, nconv == 0)


def fold_outer_points(lam, grid: tuple[float, ...],
                      points: Sequence[OuterPoint]) -> OuterDensityEstimate:
    accepted_z = [p.zeta for p in points if p.accepted]
    zhat = max(accepted_z) if accepted_z else None
    violations = tuple(p.zeta for p in points
                       if not p.accepted and zhat is not None and p.zeta < zhat)
    step = min(b - a for a, b in zip(grid, grid[1:])) if len(grid) > 1 else grid[0]
    return OuterDensityEstimate(float(lam), grid, tuple(points), zhat,
                                step, violations)


def estimate_outer(lam, grid: Sequence[float], trials: int,
                   base_seed: int = 0, L0: int = 64, L_max: int = 4096,
                   top_fraction: float = 0.05, exponent_threshold: float = 3.0,
                   nonconv_threshold: float = 0.05,
                   window_cap: int = 10 ** 7) -> OuterDensityEstimate:
    """Grid scan for the largest Bernoulli density whose origin odometer
    still looks third-moment-finite.

    The same per-trial seeds are reused at every grid point, so moving up
    the grid only adds particles per seed; the accepted set should then
    be downward-closed up to estimator noise, and any violation is
    reported rather than repaired.
    """
    grid = tuple(sorted(float(z) for z in grid))
    if not grid or not (0.0 < grid[0] and grid[-1] < 1.0):
        raise ValueError("grid must lie in (0, 1)")
    if trials < 10:
        raise ValueError("too few trials per grid point")
    seeds = [derive_trial_seed(base_seed, i) for i in range(trials)]
    points = []
    for zeta in grid:
        w0s = []
        for s in seeds:
            samp = sample_w0(zeta, lam, s, L0, L_max, window_cap)
            if samp.converged:
                w0s.append(samp.w0)
        points.append(outer_point(zeta, trials, w0s, top_fraction,
                                  exponent_threshold, nonconv_threshold))
    return fold_outer_points(lam, grid, points)


# ------------------------------------------------------------- aggregate

@dataclass(frozen=True)
class AggregateEstimate:
    n: int
    trials: int
    mean_size: float
    zeta_agg_hat: float
    max_extent: int
    sizes: np.ndarray = field(repr=False, compare=False)
    lefts: np.ndarray = field(repr=False, compare=False)
    rights: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        if np.any(self.sizes < 1):
            raise ValueError("the fired set contains the origin, so #A >= 1")


def aggregate_trial(n: int, lam, seed: int,
                    cap: int | None = None) -> tuple[int, int, int, int]:
    """One point-source run; returns (left, right, size, survivors) where
    the first three describe the fired set, validated to be an interval
    around the origin."""
    src = source(seed, lam)
    result = stabilize(Configuration.point_source(n), src, cap=cap)
    if result.status is not Status.STABLE:
        raise RuntimeError("step cap exceeded in a point-source run")
    u = result.odometer
    span = u.support_interval()
    if span is None or not u.support_is_interval() or not (span[0] <= 0 <= span[1]):
        raise AssertionError("fired set must be an interval around 0")
    return (span[0], span[1], span[1] - span[0] + 1,
            result.final.particle_count())


def estimate_aggregate(n: int, lam, trials: int,
                       base_seed: int = 0, cap: int | None = None) -> AggregateEstimate:
    """Fired-set statistics of the n-particle point source; the aggregate
    density estimate is n over the mean fired-set size."""
    if n < 10:
        raise ValueError("aggregate estimation needs n >= 10")
    if trials < 1:
        raise ValueError("need at least one trial")
    sizes = np.zeros(trials, np.int64)
    lefts = np.zeros(trials, np.int64)
    rights = np.zeros(trials, np.int64)
    for i in range(trials):
        lefts[i], rights[i], sizes[i], _ = aggregate_trial(
            n, lam, derive_trial_seed(base_seed, i), cap)
    mean_size = float(sizes.mean())
    return AggregateEstimate(n, trials, mean_size, n / mean_size,
                             int(max(rights.max(), -lefts.min())),
                             sizes, lefts, rights)
