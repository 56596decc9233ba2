"""Compiled single-trial engines.

Every engine works on a dense window of the lattice: site = base + index.
Kernels never allocate their result sparsely and never call back into
Python; wrappers translate between sparse maps and windows, and rerun a
kernel from scratch with a wider window when it reports NEED_GROW. The
rerun is exact because instruction cells are pure functions of
(seed, site, index).

The hash below must stay bit-identical to stacks.cell_hash; the test
suite enforces this on a grid of cells.
"""

from __future__ import annotations

import numpy as np
from numba import njit

STATUS_STABLE = 0
STATUS_STEP_CAP = 1
STATUS_NEED_GROW = 2

_U = np.uint64
_GOLDEN = _U(0x9E3779B97F4A7C15)
_MIX1 = _U(0xBF58476D1CE4E5B9)
_MIX2 = _U(0x94D049BB133111EB)
_S30 = _U(30)
_S27 = _U(27)
_S31 = _U(31)
_S11 = _U(11)
_ONE = _U(1)

_MASK64 = (1 << 64) - 1

# window growth limit: 2**23 sites ~ 200 MB of engine state
_MAX_WINDOW = 1 << 23


@njit(cache=True, inline="always")
def _cell(seed, x, k):
    z = seed ^ (x * _GOLDEN) ^ (k * _MIX1)
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    z = z ^ (z >> _S31)
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit(cache=True)
def _drain(seed, t_sleep, count, asleep, odo, shiftarr, base,
           min_fire, kill_mode, cap, steps0, kills0):
    """Fire every window site holding >= min_fire active particles until
    none remains. Returns (status, steps, kills).

    kill_mode: a move past the window edge removes the particle (interval
    sink). Otherwise the window is a truncation of the full line and an
    edge move aborts with NEED_GROW.
    """
    m = count.shape[0]
    queue = np.empty(m + 1, np.int64)
    inq = np.zeros(m, np.uint8)
    head = 0
    tail = 0
    for i in range(m):
        if count[i] >= min_fire:
            queue[tail] = i
            tail += 1
            inq[i] = 1
    steps = steps0
    kills = kills0
    cap_hit = False
    while head != tail and not cap_hit:
        x = queue[head]
        head += 1
        if head == m + 1:
            head = 0
        inq[x] = 0
        while count[x] >= min_fire:
            if steps >= cap:
                cap_hit = True
                break
            k = odo[x] + 1 + shiftarr[x]
            odo[x] += 1
            steps += 1
            z = _cell(seed, base + _U(x), _U(k))
            if (z >> _S11) < t_sleep:
                if count[x] == 1:
                    # lone particle falls asleep; with company the sleep
                    # instruction is consumed without effect
                    count[x] = 0
                    asleep[x] = 1
            else:
                count[x] -= 1
                if (z & _ONE) == _U(0):
                    y = x - 1
                else:
                    y = x + 1
                if y < 0 or y >= m:
                    if kill_mode:
                        kills += 1
                        continue
                    return STATUS_NEED_GROW, steps, kills
                count[y] += 1
                if asleep[y] == 1:
                    asleep[y] = 0
                    count[y] += 1
                if inq[y] == 0 and count[y] >= min_fire:
                    queue[tail] = y
                    tail += 1
                    if tail == m + 1:
                        tail = 0
                    inq[y] = 1
    if cap_hit:
        return STATUS_STEP_CAP, steps, kills
    return STATUS_STABLE, steps, kills


@njit(cache=True)
def _walkers(seed, t_sleep, occ, settleable, odo, shiftarr, base,
             n_walkers, origin, kill_mode, cap, settled_out):
    """Release n walkers one at a time from `origin` (window index).

    A walker settles the first time it stands on a vacant settleable
    site; until then it consumes instructions at its current site (sleep
    instructions are consumed and ignored, a moving walker never rests).
    settled_out[w] = settle index, or -1 for a killed walker.
    """
    m = occ.shape[0]
    steps = np.int64(0)
    kills = 0
    for w in range(n_walkers):
        x = origin
        while True:
            if occ[x] == 0 and settleable[x] == 1:
                occ[x] = 1
                settled_out[w] = x
                break
            if steps >= cap:
                return STATUS_STEP_CAP, steps, kills
            k = odo[x] + 1 + shiftarr[x]
            odo[x] += 1
            steps += 1
            z = _cell(seed, base + _U(x), _U(k))
            if (z >> _S11) < t_sleep:
                continue
            if (z & _ONE) == _U(0):
                y = x - 1
            else:
                y = x + 1
            if y < 0 or y >= m:
                if kill_mode:
                    kills += 1
                    settled_out[w] = -1
                    break
                return STATUS_NEED_GROW, steps, kills
            x = y
    return STATUS_STABLE, steps, kills


@njit(cache=True)
def _chain(seed, t_sleep, count, asleep, odo, shiftarr, base, v_idx,
           n_steps, cap_per_step, survivors_out):
    """Insertion chain: add one active particle at v_idx, stabilize with
    the window edges as sinks, record the survivor count; repeat.

    The odometer persists across steps, so every step reads fresh cells.
    """
    steps = np.int64(0)
    kills = 0
    for t in range(n_steps):
        count[v_idx] += 1
        if asleep[v_idx] == 1:
            asleep[v_idx] = 0
            count[v_idx] += 1
        status, steps, kills = _drain(seed, t_sleep, count, asleep, odo,
                                      shiftarr, base, 1, True,
                                      steps + cap_per_step, steps, kills)
        if status != STATUS_STABLE:
            return status, steps, kills, t
        total = 0
        for i in range(count.shape[0]):
            total += asleep[i]
        survivors_out[t] = total
    return STATUS_STABLE, steps, kills, n_steps


def _window_params(seed: int, t_sleep: int):
    return _U(seed & _MASK64), _U(t_sleep)


def _build_shift(shift_map, base: int, m: int) -> np.ndarray:
    arr = np.zeros(m, np.int64)
    if shift_map:
        for site, v in shift_map.items():
            idx = site - base
            if 0 <= idx < m:
                arr[idx] = v
    return arr


class EngineError(RuntimeError):
    pass


def arw_window(seed, t_sleep, active, sleeping, shift_map, region, min_fire, cap):
    """Stabilize a sparse configuration.

    active: {site: n_active}, sleeping: iterable of sites with one sleeper.
    region: None for the full line, else (a, b) interval with outside sink.
    Returns (status, final_active, final_sleeping, odometer, steps, kills).
    """
    sleeping = set(sleeping)
    sites = list(active.keys()) + list(sleeping) + [0]
    total = sum(active.values()) + len(sleeping)
    if region is not None:
        a, b = region
        base = a
        m = b - a + 1
        grow = False
        for s in list(active) + list(sleeping):
            if not (a <= s <= b):
                raise EngineError(f"site {s} outside interval region [{a}, {b}]")
    else:
        margin = max(64, 2 * total + 16)
        grow = True
    while True:
        if grow:
            lo = min(sites) - margin
            hi = max(sites) + margin
            base = lo
            m = hi - lo + 1
            if m > _MAX_WINDOW:
                raise EngineError("window exceeded the growth limit")
        count = np.zeros(m, np.int64)
        asleep = np.zeros(m, np.uint8)
        odo = np.zeros(m, np.int64)
        for s, n in active.items():
            count[s - base] = n
        for s in sleeping:
            asleep[s - base] = 1
        shiftarr = _build_shift(shift_map, base, m)
        su, ts = _window_params(seed, t_sleep)
        status, steps, kills = _drain(su, ts, count, asleep, odo, shiftarr,
                                      _U(base & _MASK64), min_fire, not grow,
                                      cap, 0, 0)
        if status == STATUS_NEED_GROW:
            margin *= 2
            continue
        fin_active = {}
        fin_sleeping = set()
        odom = {}
        for i in range(m):
            if count[i] > 0:
                fin_active[base + i] = int(count[i])
            if asleep[i] == 1:
                fin_sleeping.add(base + i)
            if odo[i] > 0:
                odom[base + i] = int(odo[i])
        return status, fin_active, fin_sleeping, odom, int(steps), int(kills)


def walkers_window(seed, t_sleep, n_walkers, origin, shift_map, region,
                   settle_kind, settle_arg, occupied0, cap):
    """Sequential walker engine.

    settle_kind: 'all' (any vacant site), 'grid' (vacant multiples of
    settle_arg), 'open' (vacant sites where settle_arg(lo, hi) marks open).
    occupied0: initially occupied sites (walkers pass over them).
    Returns (status, settled_sites_in_order, occupied, odometer, steps, kills).
    """
    if region is not None:
        a, b = region
        if not (a <= origin <= b):
            raise EngineError("origin outside killed region")
        base, m = a, b - a + 1
        grow = False
    else:
        margin = max(64, 4 * n_walkers + 64)
        if settle_kind == "grid":
            margin = max(margin, (n_walkers // 2 + 8) * settle_arg + 64)
        grow = True
    while True:
        if grow:
            pts = [origin] + list(occupied0)
            base = min(pts) - margin
            m = (max(pts) + margin) - base + 1
            if m > _MAX_WINDOW:
                raise EngineError("window exceeded the growth limit")
        occ = np.zeros(m, np.uint8)
        for s in occupied0:
            occ[s - base] = 1
        if settle_kind == "all":
            settleable = np.ones(m, np.uint8)
        elif settle_kind == "grid":
            delta = settle_arg
            settleable = np.zeros(m, np.uint8)
            settleable[(-base) % delta::delta] = 1
        elif settle_kind == "open":
            settleable = settle_arg(base, base + m - 1).astype(np.uint8)
        else:
            raise ValueError(settle_kind)
        odo = np.zeros(m, np.int64)
        shiftarr = _build_shift(shift_map, base, m)
        settled = np.full(n_walkers, -1, np.int64)
        su, ts = _window_params(seed, t_sleep)
        status, steps, kills = _walkers(su, ts, occ, settleable, odo, shiftarr,
                                        _U(base & _MASK64), n_walkers,
                                        origin - base, not grow, cap, settled)
        if status == STATUS_NEED_GROW:
            margin *= 2
            continue
        order = [base + int(i) if i >= 0 else None for i in settled]
        occupied = {base + i for i in np.flatnonzero(occ)}
        odom = {base + int(i): int(odo[i]) for i in np.flatnonzero(odo)}
        return status, order, occupied, odom, int(steps), int(kills)


def chain_window(seed, t_sleep, a, b, v, n_steps, cap_per_step,
                 count0=None, asleep0=None, odo0=None):
    """Run the insertion chain on interval [a, b] with insertions at v.

    Returns (status, survivors per step, steps, kills, state) where state
    carries the window arrays for continuation runs.
    """
    m = b - a + 1
    count = np.zeros(m, np.int64) if count0 is None else count0.copy()
    asleep = np.zeros(m, np.uint8) if asleep0 is None else asleep0.copy()
    odo = np.zeros(m, np.int64) if odo0 is None else odo0.copy()
    shiftarr = np.zeros(m, np.int64)
    survivors = np.zeros(n_steps, np.int64)
    su, ts = _window_params(seed, t_sleep)
    status, steps, kills, done = _chain(su, ts, count, asleep, odo, shiftarr,
                                        _U(a & _MASK64), v - a, n_steps,
                                        cap_per_step, survivors)
    return status, survivors[:done], int(steps), int(kills), (count, asleep, odo)


def warmup():
    """Touch every kernel once so forked CLI workers inherit compiled code."""
    arw_window(1, 1 << 52, {0: 2}, set(), None, None, 1, 10_000)
    walkers_window(1, 1 << 52, 2, 0, None, None, "all", None, set(), 10_000)
    chain_window(1, 1 << 52, -2, 2, 0, 2, 10_000)
