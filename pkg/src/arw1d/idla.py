"""Internal DLA machinery.

Point-source cluster growth with its boundary martingale, fill of a
killed interval, the percolated variant in which walkers settle only at
open sites, and gap statistics of the percolation environment.

Each process exists in two forms where scale demands it: an exact
stack-consuming engine (used by the couplings, where the odometer and
per-seed replay matter) and an exit-law sampler that draws each walker's
absorption side directly from the gambler's ruin law. The samplers are
equal in law to the engines, which the test suite checks at small sizes
against hand-enumerated distributions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import _engine
from .core import Configuration, Odometer, Region, StabilizationResult, Status
from .stacks import SALT_ENV, InstructionSource, cell_hash, cell_hash_block, split_seed

__all__ = [
    "ClusterTrace", "MartingaleTrace", "PercolationEnv", "GapSample",
    "run_point_idla", "sample_cluster_trace", "martingale",
    "run_killed_idla", "sample_killed_fill",
    "run_percolated_idla", "sample_percolated_extents", "gaps",
]


@dataclass(frozen=True)
class ClusterTrace:
    """Growth record: after k walkers the cluster is [-a[k], b[k]].

    The origin is occupied before the first walker, so a[0] = b[0] = 0
    and each walker extends exactly one side: a[k] + b[k] = k.
    """

    a: np.ndarray
    b: np.ndarray
    n: int

    def __post_init__(self):
        if len(self.a) != self.n + 1 or len(self.b) != self.n + 1:
            raise ValueError("trace length must be n + 1")
        if self.a[0] != 0 or self.b[0] != 0:
            raise ValueError("trace must start from the origin cluster")
        da = np.diff(self.a)
        db = np.diff(self.b)
        if np.any(da < 0) or np.any(db < 0):
            raise ValueError("extents must be nondecreasing")
        if np.any(self.a + self.b != np.arange(self.n + 1)):
            raise ValueError("one settled walker per step is required")

    @property
    def final_interval(self) -> tuple[int, int]:
        return (-int(self.a[-1]), int(self.b[-1]))


@dataclass(frozen=True)
class MartingaleTrace:
    values: np.ndarray

    def __post_init__(self):
        if self.values[0] != 0:
            raise ValueError("martingale must start at 0")


def martingale(t: ClusterTrace) -> MartingaleTrace:
    """(k+1) b_k - k(k+1)/2, exactly, in integer arithmetic."""
    k = np.arange(t.n + 1, dtype=np.int64)
    vals = (k + 1) * t.b.astype(np.int64) - (k * (k + 1)) // 2
    return MartingaleTrace(vals)


def _trace_from_settle_order(order: Iterable[int], n: int) -> ClusterTrace:
    a = np.zeros(n + 1, np.int64)
    b = np.zeros(n + 1, np.int64)
    for k, x in enumerate(order, start=1):
        a[k], b[k] = a[k - 1], b[k - 1]
        if x == b[k - 1] + 1:
            b[k] += 1
        elif x == -a[k - 1] - 1:
            a[k] += 1
        else:
            raise AssertionError(f"walker settled off the frontier: {x}")
    return ClusterTrace(a, b, n)


def run_point_idla(n: int, src: InstructionSource, cap: int | None = None) -> ClusterTrace:
    """Grow the cluster by n sequential walkers released at the occupied
    origin, consuming instructions from src (sleeps are consumed and
    ignored; a walker in motion is never alone)."""
    if n < 1:
        raise ValueError("need at least one walker")
    if cap is None:
        cap = 100 * n ** 3 + 1000
    status, order, _occ, _odo, _steps, _kills = _engine.walkers_window(
        src.seed, src.rate.sleep_threshold, n, 0, src.offset.support,
        None, "all", None, {0}, cap)
    if status != _engine.STATUS_STABLE:
        raise RuntimeError("step cap exceeded while growing the cluster")
    return _trace_from_settle_order(order, n)


def sample_cluster_trace(n: int, seed: int) -> ClusterTrace:
    """Exit-law sampler for run_point_idla, O(1) per walker.

    A walker released at 0 over the cluster [-a, b] exits it at -a-1 or
    b+1; simple random walk absorbed at those two points leaves to the
    right with probability (a+1)/(a+b+2).
    """
    rng = np.random.default_rng(np.random.PCG64(seed))
    u = rng.random(n)
    a = np.zeros(n + 1, np.int64)
    b = np.zeros(n + 1, np.int64)
    ai = bi = 0
    for k in range(1, n + 1):
        if u[k - 1] < (ai + 1) / (ai + bi + 2):
            bi += 1
        else:
            ai += 1
        a[k], b[k] = ai, bi
    return ClusterTrace(a, b, n)


def run_killed_idla(n: int, interval: Region | tuple[int, int],
                    src: InstructionSource,
                    cap: int | None = None) -> tuple[bool, StabilizationResult]:
    """IDLA from n particles at the origin, killed upon exiting I.

    filled is true iff the final occupancy is one particle on every site
    of I; survivors stay active.
    """
    region = interval if isinstance(interval, Region) else Region.interval(*interval)
    if not region.contains(0):
        raise ValueError("the origin must lie in the killed interval")
    if n < 1:
        raise ValueError("need at least one particle")
    if cap is None:
        cap = 100 * n ** 3 + 1000
    status_code, _order, occ, odo, steps, kills = _engine.walkers_window(
        src.seed, src.rate.sleep_threshold, n, 0, src.offset.support,
        (region.a, region.b), "all", None, set(), cap)
    status = Status.STABLE if status_code == _engine.STATUS_STABLE else Status.STEP_CAP_EXCEEDED
    final = Configuration({x: 1 for x in occ})
    result = StabilizationResult(final, Odometer(odo), steps, status, kills)
    filled = len(occ) == region.size()
    return filled, result


def sample_killed_fill(n: int, interval: Region | tuple[int, int],
                       seed: int) -> tuple[bool, int, int]:
    """Exit-law sampler for run_killed_idla; returns (filled, survivors,
    kills). Equal in law to the engine's fill indicator and counts."""
    region = interval if isinstance(interval, Region) else Region.interval(*interval)
    if not region.contains(0):
        raise ValueError("the origin must lie in the killed interval")
    rng = np.random.default_rng(np.random.PCG64(seed))
    lo, hi = region.a, region.b
    ai = bi = 0
    survivors = 1  # the first walker settles at the vacant origin
    kills = 0
    for k in range(2, n + 1):
        if -ai == lo and bi == hi:
            kills += n - k + 1
            break
        goes_right = rng.random() < (ai + 1) / (ai + bi + 2)
        if goes_right:
            if bi + 1 <= hi:
                bi += 1
                survivors += 1
            else:
                kills += 1
        else:
            if -(ai + 1) >= lo:
                ai += 1
                survivors += 1
            else:
                kills += 1
    filled = (-ai == lo and bi == hi) if n >= 1 else False
    return filled, survivors, kills


@dataclass(frozen=True)
class PercolationEnv:
    """Site percolation read off a pure counter-based hash, independent
    of any instruction stream by construction (separate seed channel)."""

    zeta: float
    env_seed: int

    def __post_init__(self):
        if not (0.0 < self.zeta <= 1.0):
            raise ValueError("density must lie in (0, 1]")

    @property
    def _stream(self) -> int:
        return split_seed(self.env_seed, SALT_ENV)

    @property
    def _threshold(self) -> int:
        return int(math.floor(self.zeta * float(1 << 53)))

    def open(self, x: int) -> bool:
        return (cell_hash(self._stream, x, 0) >> 11) < self._threshold

    def open_block(self, lo: int, hi: int) -> np.ndarray:
        xs = (np.arange(lo, hi + 1).astype(np.int64)).view(np.uint64)
        ks = np.zeros(hi - lo + 1, np.uint64)
        z = cell_hash_block(self._stream, xs, ks)
        return (z >> np.uint64(11)) < np.uint64(self._threshold)

    def next_open(self, start: int, direction: int) -> int:
        """Nearest open site strictly beyond start in the given direction
        (+1 or -1)."""
        step = 1 if direction > 0 else -1
        x = start + step
        chunk = 16  # geometric growth: short gaps dominate
        while True:
            lo, hi = (x, x + chunk - 1) if step > 0 else (x - chunk + 1, x)
            block = self.open_block(lo, hi)
            idx = np.flatnonzero(block if step > 0 else block[::-1])
            if idx.size:
                return (lo + int(idx[0])) if step > 0 else (hi - int(idx[0]))
            x += step * chunk
            chunk = min(chunk * 2, 4096)


def run_percolated_idla(n: int, env: PercolationEnv, src: InstructionSource,
                        cap: int | None = None) -> tuple[Odometer, set[int]]:
    """n walkers from the origin, each walking until it stands on a
    vacant open site; sleep instructions are consumed and counted in the
    odometer but have no effect. Settling consumes nothing."""
    if n < 1:
        raise ValueError("need at least one walker")
    if cap is None:
        cap = 10 ** 9
    status, _order, occ, odo, _steps, _kills = _engine.walkers_window(
        src.seed, src.rate.sleep_threshold, n, 0, src.offset.support,
        None, "open", env.open_block, set(), cap)
    if status != _engine.STATUS_STABLE:
        raise RuntimeError("step cap exceeded during the percolated phase")
    return Odometer(odo), {int(x) for x in occ}


@dataclass(frozen=True)
class PercolatedExtents:
    left: int
    right: int
    settled: int
    vacant_left: int
    vacant_right: int


def sample_percolated_extents(n: int, env: PercolationEnv, seed: int) -> PercolatedExtents:
    """Exit-law sampler for the settled set of run_percolated_idla.

    The settled set is always every open site of a window around the
    origin, so its law is determined by the two frontier pointers; each
    walker joins the nearer-in-law frontier by the gambler's ruin split.
    """
    if n < 1:
        raise ValueError("need at least one walker")
    rng = np.random.default_rng(np.random.PCG64(seed))
    u = rng.random(n)
    vl = env.next_open(0, -1)
    vr = env.next_open(0, +1)
    start = 0
    if env.open(0):
        start = 1  # the first walker settles where it stands
    for k in range(start, n):
        # invariant: settled set = open sites strictly between vl and vr
        if u[k] < (0 - vl) / (vr - vl):
            vr = env.next_open(vr, +1)
        else:
            vl = env.next_open(vl, -1)
    left = env.next_open(vl, +1)
    right = env.next_open(vr, -1)
    return PercolatedExtents(left, right, n, vl, vr)


@dataclass(frozen=True)
class GapSample:
    gaps: np.ndarray
    start: int
    direction: int

    def __post_init__(self):
        if np.any(self.gaps < 1):
            raise ValueError("gaps are distances between distinct sites")


def gaps(env: PercolationEnv, start: int, direction: int, count: int) -> GapSample:
    """First `count` gaps between consecutive open sites strictly beyond
    start, scanning outward."""
    if count < 1:
        raise ValueError("need at least one gap")
    step = 1 if direction > 0 else -1
    sites = [env.next_open(start, step)]
    while len(sites) < count + 1:
        sites.append(env.next_open(sites[-1], step))
    arr = np.abs(np.diff(np.asarray(sites, dtype=np.int64)))
    return GapSample(arr, start, step)
