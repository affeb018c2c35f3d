"""Policy transformations: limited priority levels and preemption checkpoints.

``lpl(X, cutoffs)`` maps any rank value ``r`` of policy X with
``c[i-1] <= r < c[i]`` to level ``i`` (``c[0] = 0``, ``c[n] = inf``), so the
server only ever distinguishes ``n`` priorities.

``checkpointify(X, cfg)`` lets a job be preempted only at ages that are
multiples of ``cfg.delta``; between those ages the job is locked in service,
and each checkpoint it reaches costs ``cfg.gamma`` of frozen-age server time.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import dist as _dist
from .dist import DiscreteDist
from .policy import PolicyError, PolicySpec, RankFunction

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CutoffVector:
    cutoffs: tuple = ()

    def __post_init__(self):
        c = tuple(float(x) for x in self.cutoffs)
        object.__setattr__(self, "cutoffs", c)
        if any(not (x > 0 and math.isfinite(x)) for x in c):
            raise PolicyError("cutoffs must be positive and finite")
        if any(b <= a for a, b in zip(c, c[1:])):
            raise PolicyError(f"cutoffs must be strictly increasing: {c}")

    @property
    def levels(self) -> int:
        return len(self.cutoffs) + 1

    def level(self, r: float) -> int:
        """1-based level of rank value ``r`` (half-open buckets)."""
        return int(np.searchsorted(self.cutoffs, r, side="right")) + 1

    def to_json(self) -> str:
        return json.dumps(list(self.cutoffs))

    @classmethod
    def from_json(cls, text) -> "CutoffVector":
        obj = json.loads(text) if isinstance(text, str) else text
        return cls(tuple(obj))


@dataclass(frozen=True)
class CheckpointConfig:
    delta: float
    gamma: float = 0.0

    def __post_init__(self):
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise PolicyError("checkpoint gap delta must be positive")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise PolicyError("checkpoint overhead gamma must be non-negative")


@dataclass(frozen=True)
class Lpl(PolicySpec):
    inner: PolicySpec
    cutoffs: CutoffVector = field(default_factory=CutoffVector)

    @property
    def size_aware(self):
        return self.inner.size_aware

    @property
    def class_aware(self):
        return self.inner.class_aware

    @property
    def name(self):
        return f"LPL-{self.inner.name}"


@dataclass(frozen=True)
class Checkpointed(PolicySpec):
    inner: PolicySpec
    config: CheckpointConfig

    @property
    def size_aware(self):
        return self.inner.size_aware

    @property
    def class_aware(self):
        return self.inner.class_aware

    @property
    def name(self):
        return self.inner.name


def _contains(policy, kind) -> bool:
    while isinstance(policy, (Lpl, Checkpointed)):
        if isinstance(policy, kind):
            return True
        policy = policy.inner
    return False


def lpl(inner: PolicySpec, cutoffs) -> Lpl:
    if not isinstance(cutoffs, CutoffVector):
        cutoffs = CutoffVector(tuple(cutoffs))
    if _contains(inner, Lpl):
        raise PolicyError("policy is already LPL-wrapped")
    if _contains(inner, Checkpointed):
        raise PolicyError("checkpointing must be the outermost transformation")
    return Lpl(inner, cutoffs)


def checkpointify(inner: PolicySpec, cfg: CheckpointConfig) -> Checkpointed:
    if _contains(inner, Checkpointed):
        raise PolicyError("policy is already checkpointed")
    return Checkpointed(inner, cfg)


def quantize(curve: RankFunction, cutoffs: CutoffVector) -> RankFunction:
    """Quantize a piecewise-linear rank curve into LPL levels."""
    c = np.asarray(cutoffs.cutoffs, dtype=float)
    starts, vals, bands, pvals, pbands = [], [], [], [], []

    def emit(age, band, val, pband=None, pval=None):
        starts.append(age)
        vals.append(val)
        bands.append(band)
        pvals.append(np.nan if pval is None else pval)
        pbands.append(band if pband is None else pband)

    def lev(r, strict=False):
        return float(np.searchsorted(c, r, side="left" if strict else "right") + 1)

    for i in range(len(curve)):
        s0, end = float(curve.starts[i]), curve.end_of(i)
        b, v0, m = int(curve.bands[i]), float(curve.values[i]), float(curve.slopes[i])
        pv = curve.point_values[i]
        pb = int(curve.point_bands[i])
        if math.isnan(pv):
            pv, pb = v0, b
        point = (pb, lev(pv) if pb == 1 else pv)
        if b != 1:
            emit(s0, b, v0, *point)
            continue
        if m == 0:
            emit(s0, 1, lev(v0), *point)
            continue
        if m > 0:
            emit(s0, 1, lev(v0), *point)
            for ck in c[c > v0]:
                a = s0 + (ck - v0) / m
                if a >= end:
                    break
                emit(a, 1, lev(ck))
        else:
            emit(s0, 1, lev(v0, strict=True), *point)
            for ck in c[c < v0][::-1]:
                a = s0 + (v0 - ck) / (-m)
                if a >= end:
                    break
                # at the crossing age the value equals ck (upper bucket);
                # just after, it is below ck
                emit(a, 1, lev(ck, strict=True), 1, lev(ck))

    # merge consecutive equal segments whose start carries no distinct point rank
    keep = [0]
    for j in range(1, len(starts)):
        k = keep[-1]
        same = bands[j] == bands[k] and vals[j] == vals[k]
        trivial_point = pbands[j] == bands[j] and (np.isnan(pvals[j]) or pvals[j] == vals[j])
        if same and trivial_point:
            continue
        keep.append(j)
    pick = lambda xs: [xs[j] for j in keep]
    pv = [np.nan if (pb == b and (np.isnan(p) or p == v)) else p
          for p, pb, b, v in zip(pick(pvals), pick(pbands), pick(bands), pick(vals))]
    return RankFunction(pick(starts), pick(vals), np.zeros(len(keep)), pick(bands), pv, pick(pbands))


def heuristic_cutoffs(d: DiscreteDist, n: int) -> CutoffVector:
    """Cutoffs that split E[S] evenly between ``n`` levels.

    Sizes are scanned upward and level ``k`` is closed at the first grid
    point where the cumulative contribution ``E[S 1(S <= s)]`` reaches
    ``k/n`` of ``E[S]``; the cutoff sits one grid step above that point.
    """
    if n < 1:
        raise PolicyError("need at least one level")
    if n > d.support.size:
        raise PolicyError(f"{n} levels exceed the {d.support.size} support points")
    if n == 1:
        return CutoffVector(())
    contrib = np.cumsum(d.sizes * d.probs)
    total = contrib[-1]
    idx = []
    for k in range(1, n):
        i = int(np.searchsorted(contrib, k / n * total * (1 - 1e-12), side="left"))
        if idx and i <= idx[-1]:
            i = idx[-1] + 1
        idx.append(i)
    return CutoffVector(tuple((i + 1) * d.step for i in idx))


def bucket_loads(d: DiscreteDist, cutoffs: CutoffVector) -> np.ndarray:
    """E[S 1(c[i-1] <= S < c[i])] for each level."""
    lv = np.searchsorted(cutoffs.cutoffs, d.sizes, side="right")
    return np.bincount(lv, weights=d.sizes * d.probs, minlength=cutoffs.levels)


def _grid_cutoff(x: float, step: float) -> float:
    return max(1, round(x / step)) * step


def optimize_cutoffs(d: DiscreteDist, lam: float, family: PolicySpec, n: int,
                     budget: int = 200, seed: int = 0, cfg=None, initial=(),
                     candidates_per_axis: int = 8) -> CutoffVector:
    """Coordinate descent on simulated mean response time.

    Every candidate is simulated on the same arrival stream, so comparisons
    use common random numbers.  The heuristic cutoffs (and any ``initial``
    vectors) are always evaluated first, so the result never does worse
    than they do on that stream.
    """
    from .engine import SimConfig, UnstableError, simulate

    if budget < 1:
        raise PolicyError("budget must be at least 1")
    if _dist.load(d, lam) >= 1:
        raise UnstableError(f"load {_dist.load(d, lam):.4f} >= 1")
    if n == 1:
        return CutoffVector(())
    if cfg is None:
        cfg = SimConfig(seed=seed, jobs_per_replication=50_000, replications=1)

    cache: dict[tuple, float] = {}

    def objective(cv: tuple) -> float:
        if cv not in cache:
            if len(cache) >= budget:
                return math.inf
            res = simulate(lpl(family, cv), d, lam, cfg)
            cache[cv] = res.mean_T
            log.debug("cutoffs %s -> %.6g", cv, cache[cv])
        return cache[cv]

    starts = []
    try:
        starts.append(heuristic_cutoffs(d, n).cutoffs)
    except PolicyError:
        # degenerate support: geometric spread over the grid
        hi = max(d.max_size, d.step * (n + 1))
        g = np.geomspace(d.step, hi, n + 1)[1:-1]
        starts.append(tuple(sorted({_grid_cutoff(x, d.step) for x in g})))
    for v in initial:
        v = CutoffVector(tuple(v)).cutoffs
        if len(v) == n - 1:
            starts.append(v)
    best = min(starts, key=objective)
    best_val = objective(best)

    spread = 4.0
    while len(cache) < budget:
        improved = False
        for i in range(n - 1):
            lo = best[i - 1] if i > 0 else d.step * 0.5
            hi = best[i + 1] if i + 1 < n - 1 else max(d.max_size, d.step) * 2
            a = max(lo, best[i] / spread)
            b = min(hi, best[i] * spread)
            vals = {_grid_cutoff(x, d.step) for x in np.geomspace(a, b, candidates_per_axis)}
            for x in sorted(vals):
                if not (lo < x < hi) or x == best[i]:
                    continue
                cand = best[:i] + (x,) + best[i + 1:]
                val = objective(cand)
                if val < best_val:
                    best, best_val, improved = cand, val, True
                if len(cache) >= budget:
                    break
            if len(cache) >= budget:
                break
        if not improved:
            if spread <= 1.05:
                break
            spread = math.sqrt(spread)
    return CutoffVector(best)
