"""Scheduling policies expressed as rank functions.

Every policy maps a job's age (and its size or class, when the scheduler is
allowed to know them) to a rank; the server always works on the job of
minimum rank.  Ranks are ``(band, value)`` pairs compared lexicographically.
Band 0 is a locked band that sits below every ordinary rank and is how
nonpreemptive service and mid-checkpoint service are expressed.

Rank functions are piecewise linear in age.  A segment covers
``[start, next_start)``; the rank at exactly ``start`` may differ from the
rank on the open interior (a "point" rank), which is how SJF's age-0 rank,
checkpoint ages and quantization boundaries of decreasing ranks are encoded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, NamedTuple, Optional

import numba
import numpy as np

from . import dist as _dist
from .dist import DiscreteDist, DistError

AGE_TOL = 1e-9
FCFS_RANK = 1.0


class PolicyError(ValueError):
    pass


class Rank(NamedTuple):
    band: int
    value: float


class Piece(NamedTuple):
    """Linear piece on the open interval just after some age."""
    band: int
    value: float
    slope: float
    end: float


def _tol(x: float) -> float:
    return AGE_TOL * max(1.0, abs(x))


class RankFunction:
    """Piecewise-linear rank curve on ``[0, inf)``."""

    def __init__(self, starts, values, slopes, bands=None, point_values=None, point_bands=None):
        self.starts = np.asarray(starts, dtype=float)
        n = self.starts.size
        self.values = np.asarray(values, dtype=float)
        self.slopes = np.asarray(slopes, dtype=float)
        self.bands = np.ones(n, dtype=np.int64) if bands is None else np.asarray(bands, dtype=np.int64)
        self.point_values = (np.full(n, np.nan) if point_values is None
                             else np.asarray(point_values, dtype=float))
        self.point_bands = (self.bands.copy() if point_bands is None
                            else np.asarray(point_bands, dtype=np.int64))
        if n == 0 or self.starts[0] != 0.0:
            raise PolicyError("rank function must start at age 0")
        if np.any(np.diff(self.starts) <= 0):
            raise PolicyError("segment starts must be strictly increasing")
        if not np.all(np.isfinite(self.slopes)):
            raise PolicyError("slopes must be finite")
        for arr in (self.values, self.slopes, self.bands, self.point_values, self.point_bands):
            arr.setflags(write=False)

    @classmethod
    def constant(cls, value: float, band: int = 1) -> "RankFunction":
        return cls([0.0], [value], [0.0], [band])

    @classmethod
    def linear(cls, value: float, slope: float) -> "RankFunction":
        return cls([0.0], [value], [slope])

    @classmethod
    def steps(cls, ages, values) -> "RankFunction":
        """Piecewise constant, merging runs of equal values."""
        ages = np.asarray(ages, dtype=float)
        values = np.asarray(values, dtype=float)
        keep = np.ones(values.size, dtype=bool)
        keep[1:] = values[1:] != values[:-1]
        return cls(ages[keep], values[keep], np.zeros(int(keep.sum())))

    def __len__(self):
        return self.starts.size

    def _index(self, age: float) -> int:
        return int(np.searchsorted(self.starts, age + _tol(age), side="right")) - 1

    def end_of(self, i: int) -> float:
        return float(self.starts[i + 1]) if i + 1 < self.starts.size else math.inf

    def right(self, age: float) -> Piece:
        """The piece in effect just after ``age``."""
        i = self._index(age)
        v = self.values[i] + self.slopes[i] * (age - self.starts[i])
        return Piece(int(self.bands[i]), float(v), float(self.slopes[i]), self.end_of(i))

    def at(self, age: float) -> Rank:
        """Rank of a job sitting (not being served) at exactly ``age``."""
        if age < -_tol(age):
            raise PolicyError("age must be non-negative")
        age = max(age, 0.0)
        i = self._index(age)
        if abs(age - self.starts[i]) <= _tol(age) and not math.isnan(self.point_values[i]):
            return Rank(int(self.point_bands[i]), float(self.point_values[i]))
        return Rank(int(self.bands[i]), float(self.values[i] + self.slopes[i] * (age - self.starts[i])))

    def sample(self, ages) -> list[Rank]:
        return [self.at(float(a)) for a in ages]

    def __repr__(self):
        return f"RankFunction({len(self)} segments)"


class CheckpointedRank:
    """Inner rank at checkpoint ages ``k*delta``; locked band in between."""

    def __init__(self, inner, delta: float):
        if not delta > 0:
            raise PolicyError("checkpoint gap must be positive")
        self.inner = inner
        self.delta = float(delta)

    def on_lattice(self, age: float) -> bool:
        k = round(age / self.delta)
        return abs(age - k * self.delta) <= _tol(age)

    def right(self, age: float) -> Piece:
        k = math.floor((age + _tol(age)) / self.delta)
        return Piece(0, 0.0, 0.0, (k + 1) * self.delta)

    def at(self, age: float) -> Rank:
        if self.on_lattice(age):
            return self.inner.at(age)
        return Rank(0, 0.0)

    def sample(self, ages) -> list[Rank]:
        return [self.at(float(a)) for a in ages]


# --- policy specs ------------------------------------------------------------

class PolicySpec:
    """Base for declarative policy descriptions."""
    size_aware = False
    class_aware = False
    name = "?"

    def label(self) -> str:
        return self.name


@dataclass(frozen=True)
class FCFS(PolicySpec):
    name = "FCFS"


@dataclass(frozen=True)
class FB(PolicySpec):
    name = "FB"


@dataclass(frozen=True)
class SRPT(PolicySpec):
    name = "SRPT"
    size_aware = True


@dataclass(frozen=True)
class PSJF(PolicySpec):
    name = "PSJF"
    size_aware = True


@dataclass(frozen=True)
class SJF(PolicySpec):
    name = "SJF"
    size_aware = True


@dataclass(frozen=True)
class PPrio(PolicySpec):
    """Preemptive priority; ``order`` lists classes from best to worst."""
    order: tuple
    name = "P-Prio"
    class_aware = True

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(self.order))
        if len(set(self.order)) != len(self.order):
            raise PolicyError("priority order lists a class twice")


@dataclass(frozen=True)
class SERPT(PolicySpec):
    dist: DiscreteDist
    name = "SERPT"


@dataclass(frozen=True)
class Gittins(PolicySpec):
    dist: DiscreteDist
    name = "Gittins"


def _freeze_map(m: Mapping) -> tuple:
    return tuple(sorted(dict(m).items(), key=lambda kv: str(kv[0])))


@dataclass(frozen=True)
class ClassSERPT(PolicySpec):
    """``dists`` maps class id to that class's size distribution."""
    dists: tuple
    name = "Class-SERPT"
    class_aware = True

    def __init__(self, dists: Mapping):
        object.__setattr__(self, "dists", _freeze_map(dists))

    def dist_of(self, cls) -> DiscreteDist:
        for k, d in self.dists:
            if k == cls:
                return d
        raise PolicyError(f"no distribution for class {cls!r}")


@dataclass(frozen=True)
class ClassGittins(ClassSERPT):
    name = "Class-Gittins"

    def __init__(self, dists: Mapping):
        super().__init__(dists)


# --- SERPT and Gittins -------------------------------------------------------

def serpt_rank(d: DiscreteDist, a: float) -> float:
    """Expected remaining size at age ``a``."""
    return _dist.expected_remaining(d, a)


def gittins_rank(d: DiscreteDist, a: float, literal: bool = False) -> float:
    """Gittins rank at age ``a``: the least ratio of expected service to
    completion probability over service cutoffs ``b > a``.

    ``b`` ranges over support points above ``a``.  The default numerator is
    ``E[min(S, b) - a | S > a]``.  ``literal=True`` uses
    ``E[min(S - a, b) | S > a]`` instead, for comparison only.
    """
    s = d.sizes
    k = int(np.searchsorted(s, a, side="right"))
    p = d.probs[k:]
    tot = p.sum()
    if tot <= 0:
        raise DistError(f"age {a} is beyond the support (max {d.max_size})")
    sz = s[k:]
    cand = np.flatnonzero(p)
    best = math.inf
    for c in cand:
        b = sz[c]
        if literal:
            num = np.dot(np.minimum(sz - a, b), p)
        else:
            num = np.dot(np.minimum(sz, b) - a, p)
        den = p[: c + 1].sum()
        if den > 0:
            best = min(best, num / den)
    return float(best)


@numba.njit(cache=True)
def _gittins_grid(p, step):
    n = p.size
    # suffix[i] = P(S >= i)
    suffix = np.zeros(n + 1)
    for i in range(n - 1, -1, -1):
        suffix[i] = suffix[i + 1] + p[i]
    out = np.full(n - 1, np.inf)
    for j in range(n - 1):
        if suffix[j + 1] <= 0:
            break
        num = 0.0   # sum_{j<i<=b} (i-j) p_i
        den = 0.0   # P(j < S <= b)
        best = np.inf
        for b in range(j + 1, n):
            num += (b - j) * p[b]
            den += p[b]
            if p[b] > 0 and den > 0:
                r = (num + (b - j) * suffix[b + 1]) / den
                if r < best:
                    best = r
        out[j] = best * step
    return out


def _serpt_grid(d: DiscreteDist) -> np.ndarray:
    p = d.probs
    i = np.arange(p.size, dtype=float)
    # suffix sums over i > j
    tail_p = np.cumsum(p[::-1])[::-1]
    tail_ip = np.cumsum((i * p)[::-1])[::-1]
    j = np.arange(p.size - 1, dtype=float)
    t = tail_p[1:]
    return (tail_ip[1:] - j * t) / t * d.step


@lru_cache(maxsize=256)
def rank_table(d: DiscreteDist, which: str) -> RankFunction:
    """Piecewise-constant SERPT or Gittins curve on the grid of ``d``."""
    if which == "serpt":
        vals = _serpt_grid(d)
    elif which == "gittins":
        vals = _gittins_grid(np.ascontiguousarray(d.probs), d.step)
    else:
        raise PolicyError(which)
    ages = np.arange(vals.size) * d.step
    return RankFunction.steps(ages, vals)


def class_rank(policy: ClassSERPT, cls, a: float) -> float:
    d = policy.dist_of(cls)
    if isinstance(policy, ClassGittins):
        return gittins_rank(d, a)
    return serpt_rank(d, a)


# --- rank curves -------------------------------------------------------------

def rank_curve(policy: PolicySpec, size: Optional[float] = None, cls=None):
    """Rank function a job of the given size and class experiences."""
    from . import transform

    if isinstance(policy, transform.Lpl):
        return transform.quantize(rank_curve(policy.inner, size, cls), policy.cutoffs)
    if isinstance(policy, transform.Checkpointed):
        return CheckpointedRank(rank_curve(policy.inner, size, cls), policy.config.delta)
    if policy.size_aware and size is None:
        raise PolicyError(f"{policy.name} needs the job size")
    if isinstance(policy, FCFS):
        return RankFunction.constant(FCFS_RANK)
    if isinstance(policy, FB):
        return RankFunction.linear(0.0, 1.0)
    if isinstance(policy, SRPT):
        return RankFunction([0.0, size], [size, 0.0], [-1.0, 0.0])
    if isinstance(policy, PSJF):
        return RankFunction.constant(size)
    if isinstance(policy, SJF):
        return RankFunction([0.0], [0.0], [0.0], bands=[0], point_values=[size], point_bands=[1])
    if isinstance(policy, PPrio):
        if cls not in policy.order:
            raise PolicyError(f"class {cls!r} is not in the priority order")
        return RankFunction.constant(float(policy.order.index(cls) + 1))
    if isinstance(policy, SERPT):
        return rank_table(policy.dist, "serpt")
    if isinstance(policy, Gittins):
        return rank_table(policy.dist, "gittins")
    if isinstance(policy, ClassSERPT):
        if cls is None:
            raise PolicyError(f"{policy.name} needs the job class")
        which = "gittins" if isinstance(policy, ClassGittins) else "serpt"
        return rank_table(policy.dist_of(cls), which)
    raise PolicyError(f"unsupported policy {policy!r}")


def classes_of(policy: PolicySpec) -> list:
    """Class ids a class-aware policy knows about (empty otherwise)."""
    from . import transform

    while isinstance(policy, (transform.Lpl, transform.Checkpointed)):
        policy = policy.inner
    if isinstance(policy, PPrio):
        return list(policy.order)
    if isinstance(policy, ClassSERPT):
        return [k for k, _ in policy.dists]
    return []


def base_of(policy: PolicySpec) -> PolicySpec:
    from . import transform

    while isinstance(policy, (transform.Lpl, transform.Checkpointed)):
        policy = policy.inner
    return policy


def describe(policy: PolicySpec) -> str:
    from . import transform

    if isinstance(policy, transform.Lpl):
        return f"LPL{policy.cutoffs.levels}-{describe(policy.inner)}"
    if isinstance(policy, transform.Checkpointed):
        return f"{describe(policy.inner)}+ckpt"
    return policy.name


def dump_rows(policy: PolicySpec, classes, step: float, max_age: float, size=None):
    """(class, age, band, rank) rows sampled on the age grid."""
    n = int(math.floor(max_age / step + 1e-9))
    ages = np.arange(n + 1) * step
    rows = []
    for c in classes:
        curve = rank_curve(policy, size=size, cls=c)
        for a in ages:
            r = curve.at(float(a))
            rows.append((c, float(a), r.band, r.value))
    return rows
