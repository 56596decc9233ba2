"""Deterministic, randomly addressable instruction stacks.

Every lattice site x carries an infinite column of instructions
(sleep, step left, step right), and the engines consume them in order.
All couplings in this package hinge on two properties of the stacks:

* purity: cell (x, k) always holds the same instruction for a given seed,
  so any run can be replayed bit for bit;
* exact shift semantics: a source shifted by f reads cell (x, k + f(x)),
  which is how "resume after a stopped exploration" is expressed.

Cells are produced by a counter-based hash (no sequential state), so the
cost of reading cell (x, k) is independent of x and k and concurrent
trial workers can share one immutable source.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

_MASK64 = (1 << 64) - 1

# splitmix64 increment and finalizer multipliers
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Channel salts keep the instruction stream, the percolation environment,
# and derived per-trial seeds in provably disjoint hash domains.
SALT_ENV = 0xD1B54A32D192ED03
SALT_TRIAL = 0x8BB84B93962EACC9
SALT_SPLIT = 0x2545F4914F6CDD1D


def mix64(z: int) -> int:
    """splitmix64 finalizer; bijective on 64-bit words."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def cell_hash(seed: int, x: int, k: int) -> int:
    """Pure 64-bit hash of one stack cell.

    Two finalizer rounds: one round leaves visible linear structure when
    only x or only k varies, two pass the cross-cell independence checks.
    """
    z = (int(seed) ^ ((int(x) & _MASK64) * _GOLDEN)
         ^ ((int(k) & _MASK64) * _MIX1)) & _MASK64
    return mix64(mix64(z))


def _mix_block(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def cell_hash_block(seed: int, xs: np.ndarray, ks: np.ndarray) -> np.ndarray:
    """Vectorized cell_hash over equal-length uint64 arrays."""
    with np.errstate(over="ignore"):
        z = np.uint64(seed & _MASK64) ^ (xs.astype(np.uint64) * np.uint64(_GOLDEN)) \
            ^ (ks.astype(np.uint64) * np.uint64(_MIX1))
        return _mix_block(_mix_block(z))


def split_seed(seed: int, salt: int) -> int:
    """Derive an independent 64-bit stream seed from (seed, salt)."""
    return mix64((seed ^ salt) & _MASK64)


def derive_trial_seed(base_seed: int, trial_index: int) -> int:
    """Per-trial seed: injective in trial_index for a fixed base.

    base + (i+1) * GOLDEN walks the splitmix64 counter, so distinct trial
    indices can never collide for the same base; the finalizer plus salt
    decorrelates nearby bases.
    """
    if trial_index < 0:
        raise ValueError("trial_index must be >= 0")
    state = (base_seed ^ SALT_TRIAL) + (trial_index + 1) * _GOLDEN
    return mix64(state & _MASK64)


class Instruction(enum.IntEnum):
    SLEEP = 0
    STEP_LEFT = 1
    STEP_RIGHT = 2


@dataclass(frozen=True)
class SleepRate:
    """Sleep rate parameter; lam = inf selects the aggregation regime
    in which stacks carry no sleep instructions at all."""

    lam: float
    is_infinite: bool = False

    def __post_init__(self):
        if self.is_infinite:
            object.__setattr__(self, "lam", math.inf)
        elif not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError("sleep rate must be positive and finite (or use infinite())")

    @classmethod
    def finite(cls, lam: float) -> "SleepRate":
        return cls(float(lam), False)

    @classmethod
    def infinite(cls) -> "SleepRate":
        return cls(math.inf, True)

    @classmethod
    def of(cls, lam) -> "SleepRate":
        if isinstance(lam, SleepRate):
            return lam
        if lam == math.inf:
            return cls.infinite()
        return cls.finite(lam)

    @property
    def sleep_probability(self) -> float:
        return 0.0 if self.is_infinite else self.lam / (1.0 + self.lam)

    @property
    def sleep_threshold(self) -> int:
        """Integer threshold on the top 53 hash bits; a cell is a sleep
        instruction iff (hash >> 11) < threshold. Ties resolve toward
        sleep by construction of the strict inequality on the floor."""
        if self.is_infinite:
            return 0
        return int(math.floor(self.sleep_probability * float(1 << 53)))


_ZERO_SHIFT_MAP: dict = {}


@dataclass(frozen=True)
class StackShift:
    """Finitely supported map site -> nonnegative index offset."""

    support: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        cleaned = {int(x): int(v) for x, v in self.support.items() if int(v) != 0}
        for x, v in cleaned.items():
            if v < 0:
                raise ValueError(f"shift at {x} is negative")
        object.__setattr__(self, "support", cleaned)

    def __call__(self, x: int) -> int:
        return self.support.get(x, 0)

    def __add__(self, other: "StackShift") -> "StackShift":
        out = dict(self.support)
        for x, v in other.support.items():
            out[x] = out.get(x, 0) + v
        return StackShift(out)

    def __bool__(self) -> bool:
        return bool(self.support)

    @classmethod
    def zero(cls) -> "StackShift":
        return cls(_ZERO_SHIFT_MAP)

    @classmethod
    def from_counts(cls, counts: Mapping[int, int]) -> "StackShift":
        return cls(dict(counts))


@dataclass(frozen=True)
class InstructionSource:
    """Immutable instruction stack family addressed by (site, index)."""

    seed: int
    rate: SleepRate
    offset: StackShift = field(default_factory=StackShift.zero)

    def __post_init__(self):
        object.__setattr__(self, "seed", self.seed & _MASK64)

    def draw(self, x: int, k: int) -> Instruction:
        if k < 1:
            raise ValueError(f"stack index must be >= 1, got {k}")
        z = cell_hash(self.seed, x, k + self.offset(x))
        if (z >> 11) < self.rate.sleep_threshold:
            return Instruction.SLEEP
        return Instruction.STEP_LEFT if (z & 1) == 0 else Instruction.STEP_RIGHT

    def draw_block(self, x: int, k0: int, m: int) -> np.ndarray:
        """Instructions at cells (x, k0..k0+m-1) as an int8 array."""
        if k0 < 1:
            raise ValueError("stack index must be >= 1")
        ks = np.arange(k0, k0 + m, dtype=np.uint64) + np.uint64(self.offset(x))
        xs = np.full(m, x & _MASK64, dtype=np.uint64)
        z = cell_hash_block(self.seed, xs, ks)
        out = np.where((z & np.uint64(1)) == 0, np.int8(Instruction.STEP_LEFT),
                       np.int8(Instruction.STEP_RIGHT))
        out[(z >> np.uint64(11)) < np.uint64(self.rate.sleep_threshold)] = np.int8(Instruction.SLEEP)
        return out

    def shifted(self, f: StackShift) -> "InstructionSource":
        return InstructionSource(self.seed, self.rate, self.offset + f)


def source(seed: int, lam, offset: StackShift | None = None) -> InstructionSource:
    """Convenience constructor; lam may be a float or math.inf."""
    return InstructionSource(seed, SleepRate.of(lam), offset or StackShift.zero())


def draw(src: InstructionSource, x: int, k: int) -> Instruction:
    return src.draw(x, k)


def shift(src: InstructionSource, f: StackShift) -> InstructionSource:
    return src.shifted(f)


@dataclass(frozen=True)
class FrequencyTable:
    sleep: int
    left: int
    right: int

    @property
    def total(self) -> int:
        return self.sleep + self.left + self.right

    @property
    def frequencies(self) -> tuple[float, float, float]:
        t = max(self.total, 1)
        return (self.sleep / t, self.left / t, self.right / t)


def empirical_law(src: InstructionSource, sites: Iterable[int], m: int) -> FrequencyTable:
    """Pooled frequencies of the first m fresh instructions at each site."""
    if m < 1:
        raise ValueError("m must be >= 1")
    sleep = left = right = 0
    for x in sites:
        block = src.draw_block(x, 1, m)
        sleep += int(np.count_nonzero(block == np.int8(Instruction.SLEEP)))
        left += int(np.count_nonzero(block == np.int8(Instruction.STEP_LEFT)))
        right += int(np.count_nonzero(block == np.int8(Instruction.STEP_RIGHT)))
    return FrequencyTable(sleep, left, right)
