"""Exact per-seed replay checks and a statistical stack-freshness check.

Two identities are verified seed by seed, bit for bit:

* the killed/boundary-source coupling: the full stabilization of a point
  source agrees on an interval with the stabilization driven by shifted
  stacks plus the observed boundary odometer values;
* the two-stage decomposition: the point-source odometer is dominated
  pointwise by the settle-at-open-sites odometer plus the odometer of a
  windowed all-open-active stage run on shifted stacks.

Both rest on the same mechanism: stabilization consumes a prefix of each
stack, and what remains is again a fresh source (the strong Markov
property of stacks). The third check probes that mechanism statistically
and ships with an adversarial rule that peeks before deciding, as a
negative control that must fail.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import Configuration, Region, stabilize, boundary_source_stabilize
from .idla import PercolationEnv, run_killed_idla, run_percolated_idla
from .stacks import Instruction, derive_trial_seed, source

__all__ = [
    "CouplingVerdict", "CouplingCertificate", "crucial_coupling_check",
    "DecompositionVerdict", "DecompositionCertificate",
    "outer_decomposition_check", "SmpReport", "smp_check",
    "probe_counts", "pooled_smp_report",
]


class CouplingVerdict(enum.Enum):
    EXACT_MATCH = "ExactMatch"
    EVENT_FAILED = "EventFailed"
    MISMATCH = "Mismatch"


@dataclass(frozen=True)
class CouplingCertificate:
    seed: int
    n: int
    interval: Region
    event_held: bool
    l: int
    r: int
    verdict: CouplingVerdict
    mismatch_sites: tuple[int, ...] = ()

    def __post_init__(self):
        if (self.verdict is CouplingVerdict.MISMATCH) != bool(self.mismatch_sites):
            raise ValueError("mismatch sites accompany exactly the Mismatch verdict")


def crucial_coupling_check(n: int, interval, seed: int,
                           lam: float = 1.0,
                           cap: int | None = None) -> CouplingCertificate:
    """Replay the killed-fill construction against the full run.

    Full run: stabilize n particles at the origin, read the odometer at
    the two boundary vertices (l left, r right). Fill run: the same n
    walkers, same stacks, killed at the boundary. If they fill the
    interval, the remaining stacks (shifted by the fill odometer) plus
    l and r boundary emissions must reproduce the full run's final state
    on the interval exactly.
    """
    region = interval if isinstance(interval, Region) else Region.interval(*interval)
    if region.is_whole_line or not region.contains(0):
        raise ValueError("need a finite interval containing the origin")
    src = source(seed, lam)
    if src.rate.is_infinite:
        raise ValueError("the coupling is about the finite-rate walk")

    full = stabilize(Configuration.point_source(n), src, cap=cap)
    a, b = region.boundary
    l, r = full.odometer[a], full.odometer[b]

    filled, fill = run_killed_idla(n, region, src, cap=cap)
    if not filled:
        return CouplingCertificate(seed, n, region, False, l, r,
                                   CouplingVerdict.EVENT_FAILED)

    shifted = src.shifted(fill.odometer.as_shift())
    replay = boundary_source_stabilize(region, l, r, shifted, cap=cap)

    want = full.final.restricted(region)
    got = replay.final
    bad = tuple(x for x in range(region.a, region.b + 1)
                if want.state(x) != got.state(x))
    if bad:
        return CouplingCertificate(seed, n, region, True, l, r,
                                   CouplingVerdict.MISMATCH, bad)
    return CouplingCertificate(seed, n, region, True, l, r,
                               CouplingVerdict.EXACT_MATCH)


class DecompositionVerdict(enum.Enum):
    DOMINATED = "Dominated"
    WINDOW_TOO_SMALL = "WindowTooSmall"
    VIOLATED = "Violated"


@dataclass(frozen=True)
class DecompositionCertificate:
    instruction_seed: int
    env_seed: int
    n: int
    zeta: float
    window: int
    verdict: DecompositionVerdict
    violated_sites: tuple[int, ...] = ()

    def __post_init__(self):
        if (self.verdict is DecompositionVerdict.VIOLATED) != bool(self.violated_sites):
            raise ValueError("violated sites accompany exactly the Violated verdict")


def outer_decomposition_check(n: int, zeta: float, seeds: tuple[int, int],
                              L: int, lam: float = 1.0,
                              L_cap: int | None = None,
                              cap: int | None = None) -> DecompositionCertificate:
    """Check u(x) <= v(x) + w'(x) pointwise for one seed pair.

    u: odometer of the plain point-source stabilization. v: odometer of
    the settle-at-open-sites phase with the same stacks. w': odometer of
    stabilizing one active particle at every open site of [-L, L] on the
    whole line with stacks shifted by v. The domination is guaranteed
    whenever the settle phase's sites sit inside [-L/2, L/2]; the window
    doubles until that holds or the cap is reached.
    """
    instr_seed, env_seed = seeds
    src = source(instr_seed, lam)
    if src.rate.is_infinite:
        raise ValueError("the decomposition is about the finite-rate walk")
    env = PercolationEnv(zeta, env_seed)
    if L_cap is None:
        L_cap = 16 * L

    full = stabilize(Configuration.point_source(n), src, cap=cap)
    u = full.odometer

    v, settled = run_percolated_idla(n, env, src)
    reach = max(abs(x) for x in settled)
    while 2 * reach > L and 2 * L <= L_cap:
        L *= 2
    if 2 * reach > L:
        return DecompositionCertificate(instr_seed, env_seed, n, zeta, L,
                                        DecompositionVerdict.WINDOW_TOO_SMALL)

    open_sites = np.flatnonzero(env.open_block(-L, L)) - L
    stage2 = Configuration({int(x): 1 for x in open_sites})
    w = stabilize(stage2, src.shifted(v.as_shift()), cap=cap).odometer

    sites = u.support() | v.support() | w.support()
    bad = tuple(sorted(x for x in sites if u[x] > v[x] + w[x]))
    if bad:
        return DecompositionCertificate(instr_seed, env_seed, n, zeta, L,
                                        DecompositionVerdict.VIOLATED, bad)
    return DecompositionCertificate(instr_seed, env_seed, n, zeta, L,
                                    DecompositionVerdict.DOMINATED)


@dataclass(frozen=True)
class SmpReport:
    stop_rule: str
    lam: float
    seeds: int
    probe_sites: int
    counts: tuple[int, int, int]
    expected: tuple[float, float, float]
    chi2: float
    p_value: float
    passed: bool


def probe_counts(stop_rule, lam: float, seed: int, m: int) -> tuple[int, int, int]:
    """For one seed, run the exploration named by stop_rule, then read the
    first unexplored instruction at each of m fixed probe sites; returns
    (sleeps, lefts, rights).

    stop_rule is one of:
      None or "none"       explore nothing; probes read row 1 directly;
      ("point", n)         stabilize n particles at the origin first and
                           probe past its odometer;
      "adversarial"        peek at row 1 and step over it exactly when it
                           is a sleep instruction. Not a stopping rule:
                           the decision uses the probed future, so the
                           probe law is skewed and tests against the
                           one-cell law should fail.
    """
    probe_sites = range(-(m // 2), -(m // 2) + m)
    src = source(seed, lam)
    if stop_rule in (None, "none"):
        depth = {x: 0 for x in probe_sites}
    elif isinstance(stop_rule, tuple) and stop_rule[0] == "point":
        u = stabilize(Configuration.point_source(stop_rule[1]), src).odometer
        depth = {x: u[x] for x in probe_sites}
    elif stop_rule == "adversarial":
        depth = {x: (1 if src.draw(x, 1) is Instruction.SLEEP else 0)
                 for x in probe_sites}
    else:
        raise ValueError(f"unknown stop rule: {stop_rule!r}")
    out = [0, 0, 0]
    for x in probe_sites:
        out[src.draw(x, depth[x] + 1)] += 1
    return tuple(out)


def pooled_smp_report(stop_rule, lam: float, seeds: int, m: int,
                      counts, alpha: float = 0.01) -> SmpReport:
    """Chi-square the pooled probe counts against the one-cell law."""
    counts = np.asarray(counts, np.int64)
    p_sleep = lam / (1.0 + lam)
    p_step = 0.5 / (1.0 + lam)
    total = counts.sum()
    expected = (total * p_sleep, total * p_step, total * p_step)
    chi2, p_value = stats.chisquare(counts, expected)
    rule_name = stop_rule if isinstance(stop_rule, str) else \
        ("none" if stop_rule is None else f"point:{stop_rule[1]}")
    return SmpReport(rule_name, lam, seeds, m, tuple(int(c) for c in counts),
                     expected, float(chi2), float(p_value),
                     bool(p_value > alpha))


def smp_check(stop_rule, lam: float, seeds: int, m: int = 5,
              base_seed: int = 0, alpha: float = 0.01) -> SmpReport:
    """Pool probe_counts over derived per-trial seeds and test the result;
    see probe_counts for the stop rules."""
    if seeds < 100:
        raise ValueError("too few seeds for a frequency test")
    counts = np.zeros(3, np.int64)
    for i in range(seeds):
        c = probe_counts(stop_rule, lam, derive_trial_seed(base_seed, i), m)
        counts += np.asarray(c, np.int64)
    return pooled_smp_report(stop_rule, lam, seeds, m, counts, alpha)
