"""Experiment runner.

Every estimator and verification in the package is exposed as a
subcommand that writes three artifacts into --out: trials.csv (one row
per trial), summary.csv (the folded result), and manifest.json (config
echo, seed derivation rule, wall clock, summary).

Trials are keyed by (base_seed, trial_index) through a fixed pure
derivation, computed in index order no matter how many workers run them,
so trials.csv is byte-identical across reruns and worker counts. A
manifest.json can be passed back via --config to reproduce its run.

Exit status: 0 on success, 2 when any exact invariant is violated by the
results (or a run dies mid-trial), 3 for configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import multiprocessing
import os
import random
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import _engine, __version__
from .core import (Configuration, FiringPolicy, Region, stabilize,
                   trap_stabilize)
from .couplings import (CouplingVerdict, DecompositionVerdict,
                        crucial_coupling_check, outer_decomposition_check,
                        pooled_smp_report, probe_counts)
from .densities import (aggregate_trial, as_region, fold_outer_points,
                        inner_quantile, outer_point, run_chain,
                        sample_interval_stabilization, sample_w0)
from .idla import (PercolationEnv, martingale, run_killed_idla,
                   run_percolated_idla, run_point_idla, sample_cluster_trace,
                   sample_killed_fill, sample_percolated_extents)
from .stacks import derive_trial_seed, source

SEED_RULE = ("trial_seed = mix64((base_seed XOR 0x8BB84B93962EACC9)"
             " + (trial_index + 1) * 0x9E3779B97F4A7C15) mod 2^64")


class ConfigError(ValueError):
    pass


def _parse_span(text: str) -> tuple[int, int]:
    try:
        a, b = text.split(":")
        return int(a), int(b)
    except Exception:
        raise ConfigError(f"expected an interval like -25:25, got {text!r}")


def _parse_grid(value) -> tuple[float, ...]:
    if isinstance(value, (list, tuple)):
        pts = tuple(float(z) for z in value)
    elif ":" in value:
        try:
            a, b, step = (float(t) for t in value.split(":"))
        except Exception:
            raise ConfigError(f"expected lo:hi:step, got {value!r}")
        if step <= 0 or b < a:
            raise ConfigError("grid bounds must satisfy lo <= hi, step > 0")
        count = int(round((b - a) / step)) + 1
        pts = tuple(round(a + i * step, 12) for i in range(count))
    else:
        try:
            pts = tuple(float(t) for t in value.split(","))
        except Exception:
            raise ConfigError(f"cannot parse grid {value!r}")
    if not pts or not all(0.0 < z < 1.0 for z in pts):
        raise ConfigError("grid points must lie in (0, 1)")
    return pts


def _parse_stop_rule(text: str):
    if text in ("none", "adversarial"):
        return text
    if text.startswith("point:"):
        try:
            return ("point", int(text.split(":", 1)[1]))
        except ValueError:
            pass
    raise ConfigError(f"unknown stop rule {text!r}; use none, point:N,"
                      " or adversarial")


def _json_default(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    raise TypeError(f"not JSON-serializable: {type(v).__name__}")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, np.integer):
        return str(int(v))
    if isinstance(v, np.floating):
        return repr(float(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


# --------------------------------------------------------------- trials
# One pure function per command: (cfg, trial_index) -> row tuple. These
# are what worker processes execute; everything they need rides in cfg.

def _trial_abelian(cfg, i):
    seed = derive_trial_seed(cfg["base_seed"], i)
    rng = random.Random(seed)
    lam = rng.choice([0.5, 1.0, 2.0])
    total = rng.randint(1, cfg["max_particles"])
    n_active = rng.randint(0, total)
    active: dict[int, int] = {}
    for _ in range(n_active):
        x = rng.randint(-6, 6)
        active[x] = active.get(x, 0) + 1
    sleeping: set[int] = set()
    while len(sleeping) < total - n_active:
        x = rng.randint(-10, 10)
        if x not in active and x not in sleeping:
            sleeping.add(x)
    c = Configuration(active, sleeping)
    sites = set(active) | sleeping
    if rng.random() < 0.5:
        region = Region()
        region_text = "line"
    else:
        pad = rng.randint(0, 3)
        lo = min(sites, default=0) - pad
        hi = max(sites, default=0) + pad
        region = Region.interval(lo, hi)
        region_text = f"{lo}:{hi}"
    src = source(rng.getrandbits(63), lam)
    r1 = stabilize(c, src, region, FiringPolicy.random(rng.getrandbits(32)))
    r2 = stabilize(c, src, region, FiringPolicy.random(rng.getrandbits(32)))
    agree = (r1.odometer == r2.odometer) and (r1.final == r2.final)
    return (i, seed, lam, region_text, total, int(agree))


def _trial_least_action(cfg, i):
    seed = derive_trial_seed(cfg["base_seed"], i)
    src = source(seed, cfg["lam"])
    legal = stabilize(Configuration.point_source(cfg["n"]), src)
    trap = trap_stabilize(cfg["n"], src, cfg["clambda"])
    lt, tt = legal.odometer.total(), trap.odometer.total()
    return (i, seed, lt, tt, int(tt >= lt),
            int(trap.odometer.dominates(legal.odometer)))


def _trial_smp(cfg, i):
    seed = derive_trial_seed(cfg["base_seed"], i)
    rule = cfg["stop_rule"]
    if isinstance(rule, list):
        rule = tuple(rule)  # JSON round-trip turns tuples into lists
    s, left, right = probe_counts(rule, cfg["lam"], seed, cfg["probes"])
    return (i, seed, s, left, right)


def _trial_spread(cfg, i):
    seed = derive_trial_seed(cfg["base_seed"], i)
    left, right, size, survivors = aggregate_trial(cfg["n"], cfg["lam"], seed)
    return (i, seed, left, right, size, survivors)


def _trial_inner(cfg, i):
    seed = derive_trial_seed(cfg["base_seed"], i)
    count = sample_interval_stabilization(cfg["interval"], cfg["lam"], seed)
    if count is None:
        return (i, seed, -1, "", 1)
    return (i, seed, count, count / as_region(cfg["interval"]).size(), 0)


def _trial_outer(cfg, i):
    zi, ti = divmod(i, cfg["trials"])
    zeta = cfg["grid"][zi]
    # identical per-trial seeds at every grid point: raising zeta then
    # only adds particles on the same randomness
    seed = derive_trial_seed(cfg["base_seed"], ti)
    samp = sample_w0(zeta, cfg["lam"], seed, cfg["L0"], cfg["Lmax"],
                     cfg["window_cap"])
    return (zeta, ti, seed, int(samp.converged), int(samp.flagged),
            samp.windows[-1] if samp.windows else 0,
            samp.w0 if samp.converged else -1)


def _trial_chain(cfg, i):
    seed = derive_trial_seed(cfg["base_seed"], i)
    region = as_region(cfg["interval"])
    v = {"center": (region.a + region.b) // 2,
         "left": region.a}.get(cfg["v"], None)
    if v is None:
        v = int(cfg["v"])
    burn = cfg["burn_in"] if cfg["burn_in"] >= 0 else None
    run = run_chain(region, cfg["lam"], seed, cfg["steps"], v, burn)
    h1, h2 = run.half_densities()
    return (i, seed, v, run.density, h1, h2,
            run.final.config.particle_count())


def _trial_idla_shape(cfg, i):
    seed = derive_trial_seed(cfg["base_seed"], i)
    n = cfg["n"]
    if cfg["exact"]:
        tr = run_point_idla(n, source(seed, cfg["lam"]))
    else:
        tr = sample_cluster_trace(n, seed)
    a_n, b_n = int(tr.a[-1]), int(tr.b[-1])
    m_n = int(martingale(tr).values[-1])
    within = abs(b_n - n / 2) <= n ** 0.6
    return (i, seed, a_n, b_n, m_n, int(within))


def _trial_idla_fill(cfg, i):
    seed = derive_trial_seed(cfg["base_seed"], i)
    radius = int((1.0 - cfg["eps"]) * cfg["n"] / 2)
    span = (-radius, radius)
    if cfg["exact"]:
        filled, res = run_killed_idla(cfg["n"], span, source(seed, cfg["lam"]))
        survivors = res.final.particle_count()
        kills = res.kills
    else:
        filled, survivors, kills = sample_killed_fill(cfg["n"], span, seed)
    return (i, seed, int(filled), survivors, kills)


def _trial_percolated(cfg, i):
    env_seed = derive_trial_seed(cfg["base_seed"], 2 * i)
    walk_seed = derive_trial_seed(cfg["base_seed"], 2 * i + 1)
    env = PercolationEnv(cfg["zeta"], env_seed)
    n = cfg["n"]
    if cfg["exact"]:
        _v, settled = run_percolated_idla(n, env, source(walk_seed, cfg["lam"]))
        left, right, count = min(settled), max(settled), len(settled)
    else:
        ext = sample_percolated_extents(n, env, walk_seed)
        left, right, count = ext.left, ext.right, ext.settled
    r_lo = (1.0 - cfg["eps"]) * n / (2.0 * cfg["zeta"])
    r_hi = (1.0 + cfg["eps"]) * n / (2.0 * cfg["zeta"])
    inner_ok = (-left >= r_lo) and (right >= r_lo)
    outer_ok = (-left <= r_hi) and (right <= r_hi)
    return (i, env_seed, walk_seed, left, right, count,
            int(inner_ok), int(outer_ok), int(count == n))


def _trial_couple(cfg, i):
    seed = derive_trial_seed(cfg["base_seed"], i)
    cert = crucial_coupling_check(cfg["n"], tuple(cfg["interval"]), seed,
                                  cfg["lam"])
    detail = ";".join(str(x) for x in cert.mismatch_sites)
    return (i, seed, cert.verdict.value, int(cert.event_held),
            cert.l, cert.r, detail)


def _trial_decompose(cfg, i):
    instr_seed = derive_trial_seed(cfg["base_seed"], 2 * i)
    env_seed = derive_trial_seed(cfg["base_seed"], 2 * i + 1)
    cert = outer_decomposition_check(cfg["n"], cfg["zeta"],
                                     (instr_seed, env_seed), cfg["L"],
                                     cfg["lam"], cfg["Lcap"])
    detail = ";".join(str(x) for x in cert.violated_sites)
    return (i, instr_seed, env_seed, cert.verdict.value, cert.window, detail)


def _trial_trap(cfg, i):
    seed = derive_trial_seed(cfg["base_seed"], i)
    src = source(seed, cfg["lam"])
    res = trap_stabilize(cfg["n"], src, cfg["clambda"])
    delta = max(1, 2 * math.ceil(cfg["clambda"] * math.log(cfg["n"])))
    total = res.odometer.total()
    return (i, seed, delta, total, int(total > cfg["n"] ** 4))


# ------------------------------------------------------------ summaries

def _summarize_abelian(cfg, rows):
    failures = [r for r in rows if not r[5]]
    header = ("instances", "failures")
    s_rows = [(len(rows), len(failures))]
    violations = [f"trial {r[0]}: firing policies disagreed" for r in failures]
    return header, s_rows, violations, {"instances": len(rows),
                                        "failures": len(failures)}


def _summarize_least_action(cfg, rows):
    bad = [r for r in rows if not (r[4] and r[5])]
    header = ("trials", "failures", "mean_legal_total", "mean_trap_total")
    ml = sum(r[2] for r in rows) / len(rows)
    mt = sum(r[3] for r in rows) / len(rows)
    s_rows = [(len(rows), len(bad), ml, mt)]
    violations = [f"trial {r[0]}: trap odometer fails to dominate" for r in bad]
    return header, s_rows, violations, {"trials": len(rows),
                                        "failures": len(bad)}


def _summarize_smp(cfg, rows):
    counts = (sum(r[2] for r in rows), sum(r[3] for r in rows),
              sum(r[4] for r in rows))
    rule = cfg["stop_rule"]
    if isinstance(rule, list):
        rule = tuple(rule)
    rep = pooled_smp_report(rule, cfg["lam"], len(rows), cfg["probes"],
                            counts, cfg["alpha"])
    header = ("stop_rule", "seeds", "probes", "sleeps", "lefts", "rights",
              "chi2", "p_value", "passed")
    s_rows = [(rep.stop_rule, rep.seeds, rep.probe_sites, *rep.counts,
               rep.chi2, rep.p_value, int(rep.passed))]
    return header, s_rows, [], {"chi2": rep.chi2, "p_value": rep.p_value,
                                "passed": rep.passed}


def _summarize_spread(cfg, rows):
    sizes = np.array([r[4] for r in rows], dtype=np.int64)
    mean_size = float(sizes.mean())
    zeta_agg = cfg["n"] / mean_size
    max_extent = max(max(r[3], -r[2]) for r in rows)
    header = ("n", "trials", "mean_size", "zeta_agg_hat", "max_extent")
    s_rows = [(cfg["n"], len(rows), mean_size, zeta_agg, max_extent)]
    return header, s_rows, [], {"mean_size": mean_size,
                                "zeta_agg_hat": zeta_agg,
                                "max_extent": int(max_extent)}


def _summarize_inner(cfg, rows):
    vals = np.array([r[3] for r in rows if not r[4]], dtype=float)
    flagged = sum(r[4] for r in rows)
    if vals.size == 0:
        raise RuntimeError("every sample was flagged")
    zhat = inner_quantile(vals, cfg["q"])
    header = ("interval", "trials", "flagged", "mean_density", "std_density",
              "q", "zeta_in_hat")
    std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    s_rows = [(cfg["interval"], len(rows), flagged, float(vals.mean()),
               std, cfg["q"], zhat)]
    return header, s_rows, [], {"zeta_in_hat": zhat,
                                "mean_density": float(vals.mean()),
                                "flagged": int(flagged)}


def _summarize_outer(cfg, rows):
    grid = tuple(cfg["grid"])
    trials = cfg["trials"]
    points = []
    for zi, zeta in enumerate(grid):
        chunk = rows[zi * trials:(zi + 1) * trials]
        conv = [r[6] for r in chunk if r[3]]
        points.append(outer_point(zeta, trials, conv, cfg["top_fraction"],
                                  cfg["exponent_threshold"],
                                  cfg["nonconv_threshold"]))
    est = fold_outer_points(cfg["lam"], grid, points)
    header = ("zeta", "trials", "converged", "nonconverged_fraction",
              "third_moment", "tail_exponent", "accepted")
    s_rows = [(p.zeta, p.trials, p.converged, p.nonconverged_fraction,
               p.third_moment, p.tail_exponent, int(p.accepted))
              for p in est.points]
    summary = {"zeta_out_hat": est.zeta_out_hat, "grid_step": est.grid_step,
               "downward_violations": list(est.downward_violations)}
    return header, s_rows, [], summary


def _summarize_chain(cfg, rows):
    dens = [r[3] for r in rows]
    header = ("trials", "steps", "insertion_site", "mean_density",
              "max_half_gap")
    gap = max(abs(r[4] - r[5]) for r in rows)
    s_rows = [(len(rows), cfg["steps"], cfg["v"],
               float(np.mean(dens)), gap)]
    return header, s_rows, [], {"mean_density": float(np.mean(dens)),
                                "max_half_gap": float(gap)}


def _summarize_idla_shape(cfg, rows):
    n = cfg["n"]
    within = np.mean([r[5] for r in rows])
    ms = np.array([r[4] for r in rows], dtype=float)
    stderr = float(ms.std(ddof=1) / math.sqrt(len(rows))) if len(rows) > 1 else 0.0
    header = ("n", "trials", "freq_within", "mean_martingale",
              "stderr_martingale")
    s_rows = [(n, len(rows), float(within), float(ms.mean()), stderr)]
    return header, s_rows, [], {"freq_within": float(within),
                                "mean_martingale": float(ms.mean()),
                                "stderr_martingale": stderr}


def _summarize_idla_fill(cfg, rows):
    freq = float(np.mean([r[2] for r in rows]))
    header = ("n", "eps", "trials", "fill_freq")
    s_rows = [(cfg["n"], cfg["eps"], len(rows), freq)]
    return header, s_rows, [], {"fill_freq": freq}


def _summarize_percolated(cfg, rows):
    both = float(np.mean([r[6] and r[7] for r in rows]))
    exact_n = float(np.mean([r[8] for r in rows]))
    header = ("n", "zeta", "eps", "trials", "freq_both_inclusions",
              "freq_settled_n")
    s_rows = [(cfg["n"], cfg["zeta"], cfg["eps"], len(rows), both, exact_n)]
    return header, s_rows, [], {"freq_both_inclusions": both,
                                "freq_settled_n": exact_n}


def _summarize_couple(cfg, rows):
    tally = {v.value: 0 for v in CouplingVerdict}
    for r in rows:
        tally[r[2]] += 1
    header = ("trials", "exact_match", "event_failed", "mismatch")
    s_rows = [(len(rows), tally["ExactMatch"], tally["EventFailed"],
               tally["Mismatch"])]
    violations = [f"trial {r[0]}: coupling mismatch at sites {r[6]}"
                  for r in rows if r[2] == "Mismatch"]
    return header, s_rows, violations, tally


def _summarize_decompose(cfg, rows):
    tally = {v.value: 0 for v in DecompositionVerdict}
    for r in rows:
        tally[r[3]] += 1
    header = ("trials", "dominated", "window_too_small", "violated")
    s_rows = [(len(rows), tally["Dominated"], tally["WindowTooSmall"],
               tally["Violated"])]
    violations = [f"trial {r[0]}: domination violated at sites {r[5]}"
                  for r in rows if r[3] == "Violated"]
    return header, s_rows, violations, tally


def _summarize_trap(cfg, rows):
    totals = np.array([r[3] for r in rows], dtype=float)
    frac = float(np.mean([r[4] for r in rows]))
    header = ("n", "clambda", "trials", "mean_total", "frac_exceeding_n4")
    s_rows = [(cfg["n"], cfg["clambda"], len(rows), float(totals.mean()),
               frac)]
    return header, s_rows, [], {"mean_total": float(totals.mean()),
                                "frac_exceeding_n4": frac}


# ------------------------------------------------------------- registry

@dataclass(frozen=True)
class CommandSpec:
    add_args: Callable
    make_config: Callable
    n_trials: Callable
    trial: Callable
    trial_header: tuple[str, ...]
    summarize: Callable
    help: str


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", dest="base_seed", type=int, default=0,
                   help="base seed; trial seeds derive from it")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0,
                   help="sleep rate; inf selects the settle-on-arrival walk")


def _cfg(args, *keys):
    d = {k: getattr(args, k) for k in keys}
    d["base_seed"] = args.base_seed
    return d


def _args_abelian(p):
    p.add_argument("--seed", dest="base_seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--max-particles", dest="max_particles", type=int,
                   default=20)


def _args_least_action(p):
    _common(p)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--clambda", type=float, default=0.1,
                   help="trap grid coefficient; the spacing is"
                        " 2*ceil(clambda*ln n)")


def _args_smp(p):
    _common(p)
    p.add_argument("--stop-rule", dest="stop_rule", default="point:20",
                   help="none | point:N | adversarial")
    p.add_argument("--probes", type=int, default=5)
    p.add_argument("--alpha", type=float, default=0.01)


def _args_spread(p):
    _common(p)
    p.add_argument("--n", type=int, default=1000)


def _args_inner(p):
    _common(p)
    p.add_argument("--interval", type=int, default=256,
                   help="interval size (centered at 0)")
    p.add_argument("--q", type=float, default=1e-3)


def _args_outer(p):
    _common(p)
    p.add_argument("--grid", default="0.1:0.9:0.1",
                   help="lo:hi:step or comma-separated densities")
    p.add_argument("--L0", type=int, default=64)
    p.add_argument("--Lmax", type=int, default=4096)
    p.add_argument("--window-cap", dest="window_cap", type=int,
                   default=10 ** 7)
    p.add_argument("--top-fraction", dest="top_fraction", type=float,
                   default=0.05)
    p.add_argument("--exponent-threshold", dest="exponent_threshold",
                   type=float, default=3.0)
    p.add_argument("--nonconv-threshold", dest="nonconv_threshold",
                   type=float, default=0.05)


def _args_chain(p):
    _common(p)
    p.add_argument("--interval", type=int, default=64)
    p.add_argument("--steps", type=int, default=10 ** 5)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=-1,
                   help="-1 means 10 * interval size")
    p.add_argument("--v", default="center",
                   help="insertion site: center, left, or an integer")


def _args_idla_shape(p):
    _common(p)
    p.set_defaults(lam=math.inf)
    p.add_argument("--n", type=int, default=10 ** 4)
    p.add_argument("--exact", action="store_true",
                   help="walk the instruction stacks instead of the"
                        " exit-law sampler")


def _args_idla_fill(p):
    _common(p)
    p.set_defaults(lam=math.inf)
    p.add_argument("--n", type=int, default=10 ** 4)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--exact", action="store_true")


def _args_percolated(p):
    _common(p)
    p.set_defaults(lam=math.inf)
    p.add_argument("--n", type=int, default=10 ** 4)
    p.add_argument("--zeta", type=float, default=0.5)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--exact", action="store_true")


def _args_couple(p):
    _common(p)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--interval", default="-25:25")


def _args_decompose(p):
    _common(p)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--zeta", type=float, default=0.25)
    p.add_argument("--L", type=int, default=10 ** 4)
    p.add_argument("--Lcap", type=int, default=None)


def _args_trap(p):
    _common(p)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--clambda", type=float, default=0.1)


def _check_positive(cfg, *keys):
    for k in keys:
        if cfg[k] < 1:
            raise ConfigError(f"{k} must be positive")
    return cfg


def _check_unit_open(cfg, *keys):
    for k in keys:
        if not (0.0 < cfg[k] < 1.0):
            raise ConfigError(f"{k} must lie in (0, 1)")
    return cfg


_SPECS: dict[str, CommandSpec] = {
    "abelian-check": CommandSpec(
        _args_abelian,
        lambda a: _check_positive(_cfg(a, "instances", "max_particles"),
                                  "instances", "max_particles"),
        lambda c: c["instances"], _trial_abelian,
        ("trial", "seed", "lambda", "region", "particles", "agree"),
        _summarize_abelian,
        "stabilize random instances under two firing orders, compare"),
    "least-action-check": CommandSpec(
        _args_least_action,
        lambda a: _check_positive(_cfg(a, "trials", "lam", "n", "clambda"),
                                  "trials", "n"),
        lambda c: c["trials"], _trial_least_action,
        ("trial", "seed", "legal_total", "trap_total", "total_ok",
         "pointwise_ok"),
        _summarize_least_action,
        "check the trap odometer dominates the legal one"),
    "smp-check": CommandSpec(
        _args_smp,
        lambda a: {**_check_positive(_cfg(a, "trials", "lam", "probes",
                                          "alpha"), "trials", "probes"),
                   "stop_rule": _parse_stop_rule(a.stop_rule)
                   if isinstance(a.stop_rule, str) else a.stop_rule},
        lambda c: c["trials"], _trial_smp,
        ("trial", "seed", "sleeps", "lefts", "rights"),
        _summarize_smp,
        "probe instruction freshness past a stopping time"),
    "spread": CommandSpec(
        _args_spread,
        lambda a: _check_positive(_cfg(a, "trials", "lam", "n"),
                                  "trials", "n"),
        lambda c: c["trials"], _trial_spread,
        ("trial", "seed", "left", "right", "size", "survivors"),
        _summarize_spread,
        "fired-set statistics of the point source"),
    "inner": CommandSpec(
        _args_inner,
        lambda a: _check_unit_open(
            _check_positive(_cfg(a, "trials", "lam", "interval", "q"),
                            "trials", "interval"), "q"),
        lambda c: c["trials"], _trial_inner,
        ("trial", "seed", "survivors", "density", "flagged"),
        _summarize_inner,
        "surviving density of the all-active interval"),
    "outer": CommandSpec(
        _args_outer,
        lambda a: {**_check_positive(
            _cfg(a, "trials", "lam", "L0", "Lmax", "window_cap",
                 "top_fraction", "exponent_threshold", "nonconv_threshold"),
            "trials", "L0"),
            "grid": list(_parse_grid(a.grid))},
        lambda c: len(c["grid"]) * c["trials"], _trial_outer,
        ("zeta", "trial", "seed", "converged", "flagged", "last_window",
         "w0"),
        _summarize_outer,
        "windowed-odometer tail scan over a density grid"),
    "chain": CommandSpec(
        _args_chain,
        lambda a: _check_positive(_cfg(a, "trials", "lam", "interval",
                                       "steps", "burn_in", "v"),
                                  "trials", "interval", "steps"),
        lambda c: c["trials"], _trial_chain,
        ("trial", "seed", "v", "density", "first_half", "second_half",
         "final_count"),
        _summarize_chain,
        "insertion chain stationary density"),
    "idla-shape": CommandSpec(
        _args_idla_shape,
        lambda a: _check_positive(_cfg(a, "trials", "lam", "n", "exact"),
                                  "trials", "n"),
        lambda c: c["trials"], _trial_idla_shape,
        ("trial", "seed", "a_n", "b_n", "M_n", "within"),
        _summarize_idla_shape,
        "cluster extents and boundary martingale"),
    "idla-fill": CommandSpec(
        _args_idla_fill,
        lambda a: _check_positive(_cfg(a, "trials", "lam", "n", "eps",
                                       "exact"), "trials", "n"),
        lambda c: c["trials"], _trial_idla_fill,
        ("trial", "seed", "filled", "survivors", "kills"),
        _summarize_idla_fill,
        "fill frequency of the killed interval"),
    "percolated-idla": CommandSpec(
        _args_percolated,
        lambda a: _check_positive(_cfg(a, "trials", "lam", "n", "zeta",
                                       "eps", "exact"), "trials", "n"),
        lambda c: c["trials"], _trial_percolated,
        ("trial", "env_seed", "walk_seed", "left", "right", "settled",
         "inner_ok", "outer_ok", "settled_is_n"),
        _summarize_percolated,
        "settled-set extents in a percolation environment"),
    "couple": CommandSpec(
        _args_couple,
        lambda a: {**_check_positive(_cfg(a, "trials", "lam", "n"),
                                     "trials", "n"),
                   "interval": list(_parse_span(a.interval))
                   if isinstance(a.interval, str) else list(a.interval)},
        lambda c: c["trials"], _trial_couple,
        ("trial", "seed", "verdict", "event_held", "l", "r", "detail"),
        _summarize_couple,
        "exact replay of the killed/boundary-source coupling"),
    "decompose": CommandSpec(
        _args_decompose,
        lambda a: _check_positive(_cfg(a, "trials", "lam", "n", "zeta", "L",
                                       "Lcap"), "trials", "n", "L"),
        lambda c: c["trials"], _trial_decompose,
        ("trial", "instr_seed", "env_seed", "verdict", "window", "detail"),
        _summarize_decompose,
        "pointwise odometer domination across the two-stage split"),
    "trap-odometer": CommandSpec(
        _args_trap,
        lambda a: _check_positive(_cfg(a, "trials", "lam", "n", "clambda"),
                                  "trials", "n"),
        lambda c: c["trials"], _trial_trap,
        ("trial", "seed", "delta", "total", "exceeds_n4"),
        _summarize_trap,
        "total instruction consumption of the trap procedure"),
}


# --------------------------------------------------------------- runner

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2; the contract wants 3
        self.print_usage(sys.stderr)
        self.exit(3, f"{self.prog}: error: {message}\n")


def _build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = _Parser(prog="arw",
                     description="activated random walk experiment runner")
    subs = parser.add_subparsers(dest="command", required=True)
    by_name = {}
    for name, spec in _SPECS.items():
        sub = subs.add_parser(name, help=spec.help)
        spec.add_args(sub)
        sub.add_argument("--out", default="arw_out",
                         help="output directory for the three artifacts")
        sub.add_argument("--workers", type=int, default=1,
                         help="worker processes; ARW_WORKERS overrides")
        sub.add_argument("--config", default=None,
                         help="flat JSON (or a manifest.json) supplying"
                              " defaults; explicit flags win")
        by_name[name] = sub
    return parser, by_name


def _worker(job):
    name, cfg, i = job
    return _SPECS[name].trial(cfg, i)


def _execute(name: str, cfg: dict, n: int, workers: int) -> list:
    if workers <= 1 or n <= 1:
        return [_SPECS[name].trial(cfg, i) for i in range(n)]
    _engine.warmup()  # compile once; forked workers inherit the machine code
    ctx = multiprocessing.get_context("fork")
    jobs = [(name, cfg, i) for i in range(n)]
    chunk = max(1, n // (workers * 8))
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
        return list(ex.map(_worker, jobs, chunksize=chunk))


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
            if isinstance(data, dict) and "config" in data and "command" in data:
                if data["command"] != args.command:
                    raise ConfigError(
                        f"manifest is for {data['command']!r}, not"
                        f" {args.command!r}")
                data = data["config"]
            if not isinstance(data, dict):
                raise ConfigError("config must be a flat JSON object")
            known = set(vars(args))
            bad = sorted(set(data) - known)
            if bad:
                raise ConfigError(f"unknown config keys: {', '.join(bad)}")
            subs[args.command].set_defaults(**data)
            args = parser.parse_args(argv)
        spec = _SPECS[args.command]
        cfg = spec.make_config(args)
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        workers = int(os.environ.get("ARW_WORKERS", args.workers))
    except SystemExit as e:
        return int(e.code or 0)
    except (ConfigError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3

    t0 = time.monotonic()
    try:
        rows = _execute(args.command, cfg, spec.n_trials(cfg), workers)
        header, s_rows, violations, summary = spec.summarize(cfg, rows)
    except Exception as e:
        print(f"run failed: {e}", file=sys.stderr)
        return 2
    wall = time.monotonic() - t0

    _write_csv(outdir / "trials.csv", spec.trial_header, rows)
    _write_csv(outdir / "summary.csv", header, s_rows)
    manifest = {
        "command": args.command,
        "config": cfg,
        "workers": workers,
        "seed_rule": SEED_RULE,
        "engine_version": __version__,
        "trials_written": len(rows),
        "wall_clock_s": round(wall, 3),
        "summary": summary,
    }
    with open(outdir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True,
                  default=_json_default)
        f.write("\n")

    for line in violations:
        print(f"violation: {line}", file=sys.stderr)
    kv = " ".join(f"{k}={v}" for k, v in summary.items())
    print(f"{args.command}: {len(rows)} trials, {wall:.2f}s  {kv}")
    return 2 if violations else 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
