"""M/G/1 simulation of rank-function policies.

Arrivals are Poisson, sizes i.i.d. from a :class:`~ranksim.dist.DiscreteDist`
(optionally with a class drawn first).  Service is preemptive-resume: at
every instant the server works on the job(s) of minimum rank, ties going to
the earliest arrival, except that tied jobs whose ranks rise with service
share the server (processor sharing), which is how FB behaves.

The arrival stream depends only on (seed, replication, lambda, dists), never
on the policy, so runs on the same seed use common random numbers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np
from scipy import stats as _stats

from . import _kernel
from . import dist as _dist
from . import policy as _pol
from .dist import DiscreteDist
from .transform import Checkpointed, Lpl

RNG_NAME = "numpy Philox4x64-10, SeedSequence([seed, replication])"


class UnstableError(RuntimeError):
    """Effective load is at least 1 and no override was given."""


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    jobs_per_replication: int = 200_000
    warmup_fraction: float = 0.2
    replications: int = 10
    tie_mode: str = "processor-sharing"
    horizon: Optional[float] = None

    def __post_init__(self):
        if self.jobs_per_replication < 1:
            raise ValueError("jobs_per_replication must be at least 1")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.tie_mode not in ("processor-sharing", "fcfs-only"):
            raise ValueError(f"unknown tie_mode {self.tie_mode!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass
class Trace:
    """Everything one replication produced, per job in arrival order."""
    arrivals: np.ndarray
    sizes: np.ndarray
    classes: np.ndarray
    completions: np.ndarray
    busy_start: np.ndarray
    busy_end: np.ndarray
    overhead_time: float
    violations: int
    truncated: bool
    events: int

    @property
    def response_times(self) -> np.ndarray:
        return self.completions - self.arrivals


@dataclass
class SimResult:
    mean_T: float
    ci_half_width: float
    mean_N: float
    measured_utilization: float
    completed_jobs: int
    rho_effective: float
    lam: float
    seed: int
    replication_means: list = field(default_factory=list)
    replication_N: list = field(default_factory=list)
    truncated: bool = False
    violations: int = 0
    mean_size: float = math.nan
    rng: str = RNG_NAME


# --- arrival streams -----------------------------------------------------------

DistsArg = Union[DiscreteDist, Mapping]


def class_table(dists: DistsArg) -> tuple[list, list, np.ndarray]:
    """Normalize to (labels, class dists, class probabilities)."""
    if isinstance(dists, DiscreteDist):
        return [None], [dists], np.array([1.0])
    labels, ds, ps = [], [], []
    for label, entry in dists.items():
        d, p = entry
        if not isinstance(d, DiscreteDist):
            raise TypeError(f"class {label!r}: expected (DiscreteDist, probability)")
        labels.append(label)
        ds.append(d)
        ps.append(float(p))
    ps = np.array(ps)
    if ps.size == 0 or np.any(ps < 0) or ps.sum() <= 0:
        raise ValueError("class map has no positive probability")
    if np.any(ps == 0):
        raise ValueError("class map contains a zero-probability class")
    if abs(ps.sum() - 1) > 1e-9:
        raise ValueError(f"class probabilities sum to {ps.sum()}")
    return labels, ds, ps / ps.sum()


def overall_dist(dists: DistsArg) -> DiscreteDist:
    labels, ds, ps = class_table(dists)
    return ds[0] if len(ds) == 1 else _dist.mixture(ds, ps)


def _generator(seed: int, replication: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replication)])))


def arrival_stream(seed: int, lam: float, dists: DistsArg, n: int, replication: int = 0):
    """Deterministic (times, sizes, class indices) for ``n`` arrivals."""
    if not lam > 0:
        raise ValueError("arrival rate must be positive")
    labels, ds, ps = class_table(dists)
    rng = _generator(seed, replication)
    times = np.cumsum(rng.exponential(1.0 / lam, n))
    u_cls = rng.random(n)
    u_size = rng.random(n)
    cum = np.cumsum(ps)
    cum[-1] = 1.0
    cls = np.searchsorted(cum, u_cls, side="right").astype(np.int64)
    sizes = np.empty(n)
    for k, d in enumerate(ds):
        sel = cls == k
        cdf = np.cumsum(d.probs)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, u_size[sel], side="right")
        sizes[sel] = idx * d.step
    return times, sizes, cls


# --- policy compilation --------------------------------------------------------

@dataclass
class Compiled:
    kind: int
    ts: np.ndarray
    tv: np.ndarray
    tsl: np.ndarray
    toff: np.ndarray
    tlen: np.ndarray
    pmx: np.ndarray
    cut: np.ndarray
    delta: float
    gamma: float


def _range_max(ts, tv, tsl, toff, tlen) -> np.ndarray:
    """Binary-lifting table of per-piece maxima, one row per power of two."""
    nxt = np.append(ts[1:], np.inf)
    last = np.zeros(ts.size, dtype=bool)
    last[toff + tlen - 1] = True
    nxt[last] = np.inf
    with np.errstate(invalid="ignore"):
        end_val = np.where(tsl > 0, tv + tsl * (nxt - ts), tv)
    rows = [np.maximum(tv, np.nan_to_num(end_val, nan=np.inf))]
    width = 1
    while width * 2 <= max(int(tlen.max()), 1):
        prev = rows[-1]
        shifted = np.append(prev[width:], np.full(width, -np.inf))
        rows.append(np.maximum(prev, shifted))
        width *= 2
    return np.ascontiguousarray(np.vstack(rows))


def compile_policy(policy: _pol.PolicySpec, labels: list) -> Compiled:
    """Flatten a policy into kernel arrays.

    Table policies are quantized here (so the kernel sees plain step
    curves); the closed-form size-aware kinds carry LPL cutoffs through.
    """
    delta = gamma = 0.0
    if isinstance(policy, Checkpointed):
        delta, gamma = policy.config.delta, policy.config.gamma
        policy = policy.inner
    base = policy.inner if isinstance(policy, Lpl) else policy
    if isinstance(base, (Lpl, Checkpointed)):
        raise _pol.PolicyError("nested transformations are not supported by the engine")

    closed = {_pol.SRPT: _kernel.SRPT, _pol.PSJF: _kernel.PSJF, _pol.SJF: _kernel.SJF}
    if type(base) in closed:
        cut = np.asarray(policy.cutoffs.cutoffs if isinstance(policy, Lpl) else (), dtype=float)
        if isinstance(policy, Lpl) and cut.size == 0:
            # a single level; an empty array would mean "no quantization"
            cut = np.array([np.inf])
        one = np.zeros(1)
        z = np.zeros(1, dtype=np.int64)
        return Compiled(closed[type(base)], one, one, one, z, z + 1, np.zeros((1, 1)),
                        cut, delta, gamma)

    curves = []
    for label in labels:
        if base.class_aware and label is None:
            raise _pol.PolicyError(f"{base.name} needs classes in the workload")
        c = _pol.rank_curve(policy, cls=label)
        if np.any(c.bands != 1) or not np.all(np.isnan(c.point_values)):
            raise _pol.PolicyError("table curves must be plain band-1 curves")
        curves.append(c)
    toff = np.cumsum([0] + [len(c) for c in curves[:-1]]).astype(np.int64)
    tlen = np.array([len(c) for c in curves], dtype=np.int64)
    ts = np.concatenate([c.starts for c in curves]).astype(float)
    tv = np.concatenate([c.values for c in curves]).astype(float)
    tsl = np.concatenate([c.slopes for c in curves]).astype(float)
    pmx = _range_max(ts, tv, tsl, toff, tlen)
    return Compiled(_kernel.TABLE, ts, tv, tsl, toff, tlen, pmx, np.zeros(0), delta, gamma)


# --- running -------------------------------------------------------------------

def effective_load(policy: _pol.PolicySpec, dists: DistsArg, lam: float) -> float:
    d = overall_dist(dists)
    if isinstance(policy, Checkpointed):
        from .oracle import rho_prime
        return rho_prime(d, lam, policy.config.delta, policy.config.gamma)
    return _dist.load(d, lam)


def run_stream(policy: _pol.PolicySpec, times, sizes, cls, labels,
               tie_mode: str = "processor-sharing", horizon: float = math.inf) -> Trace:
    """Run the kernel on an explicit arrival stream."""
    cp = compile_policy(policy, labels)
    times = np.ascontiguousarray(times, dtype=float)
    sizes = np.ascontiguousarray(sizes, dtype=float)
    cls = np.ascontiguousarray(cls, dtype=np.int64)
    n = times.size
    if n and (np.any(np.diff(times) < 0) or np.any(sizes <= 0)):
        raise SimulationError("arrival times must be sorted and sizes positive")
    comp = np.full(n, np.nan)
    bs = np.zeros(n + 1)
    be = np.zeros(n + 1)
    st = np.zeros(_kernel.N_STATS)
    nb = _kernel.run(times, sizes, cls, cp.kind, cp.ts, cp.tv, cp.tsl, cp.toff, cp.tlen,
                     cp.pmx, cp.cut, float(cp.delta), float(cp.gamma), tie_mode == "processor-sharing",
                     float(horizon), comp, bs, be, st)
    if st[_kernel.ST_STUCK]:
        raise SimulationError("event loop made no progress")
    return Trace(times, sizes, cls, comp, bs[:nb].copy(), be[:nb].copy(),
                 float(st[_kernel.ST_OVERHEAD]), int(st[_kernel.ST_VIOLATIONS]),
                 bool(st[_kernel.ST_TRUNCATED]), int(st[_kernel.ST_EVENTS]))


def mean_jobs_in_system(trace: Trace, start: float = 0.0, end: Optional[float] = None) -> float:
    """Time-average number in system over ``[start, end]``."""
    a = trace.arrivals
    c = np.where(np.isnan(trace.completions), np.inf, trace.completions)
    if end is None:
        end = float(np.nanmax(trace.completions))
    if end <= start:
        return 0.0
    overlap = np.clip(np.minimum(c, end) - np.maximum(a, start), 0.0, None)
    return float(overlap.sum() / (end - start))


def busy_fraction(trace: Trace, start: float, end: float) -> float:
    if end <= start:
        return 0.0
    ov = np.clip(np.minimum(trace.busy_end, end) - np.maximum(trace.busy_start, start), 0.0, None)
    return float(ov.sum() / (end - start))


def _replication(policy, dists, lam, cfg: SimConfig, r: int, horizon: float):
    labels, _, _ = class_table(dists)
    times, sizes, cls = arrival_stream(cfg.seed, lam, dists, cfg.jobs_per_replication, r)
    tr = run_stream(policy, times, sizes, cls, labels, cfg.tie_mode, horizon)
    done = ~np.isnan(tr.completions)
    comp = tr.completions[done]
    order = np.argsort(comp, kind="stable")
    warm = int(cfg.warmup_fraction * comp.size)
    if comp.size - warm < 1:
        return math.nan, math.nan, math.nan, 0, tr, math.nan
    t_w = float(comp[order[warm - 1]]) if warm > 0 else 0.0
    t_end = float(comp[order[-1]])
    # Regenerative window: from the first empty instant after warmup to the
    # start of the last busy period, so no job straddles either end.
    if not tr.truncated and tr.busy_end.size > 1:
        k = int(np.searchsorted(tr.busy_end, t_w))
        if k < tr.busy_end.size and tr.busy_start[-1] > tr.busy_end[k]:
            t_w, t_end = float(tr.busy_end[k]), float(tr.busy_start[-1])
            m = (tr.arrivals >= t_w) & (tr.arrivals < t_end)
            rt = (tr.completions - tr.arrivals)[m]
            return (float(rt.mean()), mean_jobs_in_system(tr, t_w, t_end),
                    busy_fraction(tr, t_w, t_end), int(rt.size), tr, float(tr.sizes[m].mean()))
    rt = (tr.completions - tr.arrivals)[done][order[warm:]]
    mean_size = float(tr.sizes[done][order[warm:]].mean())
    return (float(rt.mean()), mean_jobs_in_system(tr, t_w, t_end),
            busy_fraction(tr, t_w, t_end), int(rt.size), tr, mean_size)


def simulate(policy: _pol.PolicySpec, dists: DistsArg, lam: float, cfg: SimConfig = SimConfig(),
             override_unstable: bool = False, workers: int = 1) -> SimResult:
    """Mean response time of ``policy`` over independent replications."""
    rho_eff = effective_load(policy, dists, lam)
    horizon = math.inf
    if rho_eff >= 1:
        if not override_unstable:
            raise UnstableError(f"effective load {rho_eff:.4f} >= 1")
        horizon = cfg.horizon if cfg.horizon is not None else cfg.jobs_per_replication / lam
    elif cfg.horizon is not None:
        horizon = cfg.horizon

    reps = range(cfg.replications)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            outs = list(ex.map(lambda r: _replication(policy, dists, lam, cfg, r, horizon), reps))
    else:
        outs = [_replication(policy, dists, lam, cfg, r, horizon) for r in reps]

    means = [o[0] for o in outs]
    ns = [o[1] for o in outs]
    utils = [o[2] for o in outs]
    R = len(means)
    m = float(np.mean(means))
    if R > 1:
        half = float(_stats.t.ppf(0.975, R - 1) * np.std(means, ddof=1) / math.sqrt(R))
    else:
        half = math.inf
    return SimResult(
        mean_T=m, ci_half_width=half, mean_N=float(np.mean(ns)),
        measured_utilization=float(np.mean(utils)), completed_jobs=int(sum(o[3] for o in outs)),
        rho_effective=rho_eff, lam=lam, seed=cfg.seed, replication_means=means, replication_N=ns,
        truncated=any(o[4].truncated for o in outs), violations=sum(o[4].violations for o in outs),
        mean_size=float(np.mean([o[5] for o in outs])),
    )
