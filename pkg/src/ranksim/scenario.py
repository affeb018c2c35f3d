"""Four-application workloads and the worst-case ratio study.

A scenario mixes jobs from four applications A-D.  Each application's
size is a Gaussian truncated to [0, 16] and discretized with step 1/16.
The Gaussian means fall one per interval [0,4], [4,8], [8,12], [12,16], so
labels in increasing mean order line up with the intervals.

Applications are grouped into two classes in three ways.  A system id
spells out the class of A, B, C and D in turn: in System 1221, class 1 holds
A and D, class 2 holds B and C.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import dist as _dist
from . import policy as _pol
from .dist import DiscreteDist, TruncGaussian

log = logging.getLogger(__name__)

APPS = ("A", "B", "C", "D")
SYSTEMS = ("1122", "1212", "1221")
OBLIVIOUS = "oblivious"
STEP = 1 / 16
SUPPORT = (0.0, 16.0)
MEAN_INTERVALS = ((0.0, 4.0), (4.0, 8.0), (8.0, 12.0), (12.0, 16.0))
STDDEV_RANGE = (0.25, 2.0)
APP_WEIGHTS = (0.25, 0.25, 0.25, 0.25)
RUNNING_EXAMPLE_SEED = 15

OBLIVIOUS_POLICIES = ("FCFS", "FB", "SERPT", "Gittins")
CLASS_POLICIES = ("FCFS", "FB", "P-Prio", "SERPT", "Gittins")


@dataclass(frozen=True)
class Scenario:
    seed: int
    means: tuple
    stddevs: tuple
    app_dists: tuple
    app_weights: tuple = APP_WEIGHTS

    def overall(self) -> DiscreteDist:
        return _dist.mixture(self.app_dists, self.app_weights)

    def class_map(self, system: str) -> dict:
        """Application label -> class id (1 or 2)."""
        _check_system(system)
        return {a: int(c) for a, c in zip(APPS, system)}


def _check_system(system):
    if system not in SYSTEMS:
        raise ValueError(f"unknown system {system!r}; expected one of {SYSTEMS}")


def random_scenario(seed: int) -> Scenario:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed)])))
    means = tuple(float(rng.uniform(lo, hi)) for lo, hi in MEAN_INTERVALS)
    sds = tuple(float(rng.uniform(*STDDEV_RANGE)) for _ in APPS)
    dists = tuple(_dist.discretize(TruncGaussian(m, s, *SUPPORT), STEP, SUPPORT[1])
                  for m, s in zip(means, sds))
    return Scenario(int(seed), means, sds, dists)


def running_example() -> Scenario:
    return random_scenario(RUNNING_EXAMPLE_SEED)


def class_dists(s: Scenario, system: str) -> dict:
    """Class id -> (class size distribution, class probability)."""
    cmap = s.class_map(system)
    out = {}
    for k in (1, 2):
        idx = [i for i, a in enumerate(APPS) if cmap[a] == k]
        w = np.array([s.app_weights[i] for i in idx])
        out[k] = (_dist.mixture([s.app_dists[i] for i in idx], w / w.sum()), float(w.sum()))
    return out


def setting_workload(s: Scenario, setting: str):
    """Workload argument for the engine: overall dist or class map."""
    return s.overall() if setting == OBLIVIOUS else class_dists(s, setting)


def make_policy(name: str, s: Scenario, setting: str) -> _pol.PolicySpec:
    """Policy ``name`` as it is run in ``setting`` (size-oblivious or a system id)."""
    if name == "FCFS":
        return _pol.FCFS()
    if name == "FB":
        return _pol.FB()
    if setting == OBLIVIOUS:
        d = s.overall()
        if name == "SERPT":
            return _pol.SERPT(d)
        if name == "Gittins":
            return _pol.Gittins(d)
        raise ValueError(f"policy {name!r} is not available without classes")
    cds = {k: v[0] for k, v in class_dists(s, setting).items()}
    if name == "SERPT":
        return _pol.ClassSERPT(cds)
    if name == "Gittins":
        return _pol.ClassGittins(cds)
    if name == "P-Prio":
        # smaller expected size first
        return _pol.PPrio(tuple(sorted(cds, key=lambda k: _dist.mean(cds[k]))))
    raise ValueError(f"unknown policy {name!r}")


def worst_case_table(scenarios, rho: float = 0.95, policies=None, settings=None,
                     cfg=None, workers: int = 1):
    """Per-scenario mean response times and the max ratio against Gittins.

    Returns ``(rows, summary)``.  Each row holds one (scenario, setting,
    policy) result; ``summary`` maps (setting, policy) to the largest ratio
    mean_T(policy) / mean_T(Gittins) over the scenarios.  Within one
    scenario and setting every policy sees the same arrival stream.
    """
    from .engine import SimConfig, simulate

    cfg = cfg or SimConfig()
    settings = settings or (OBLIVIOUS,) + SYSTEMS
    rows = []
    summary: dict = {}
    for s in scenarios:
        lam = rho / _dist.mean(s.overall())
        for setting in settings:
            names = policies or (OBLIVIOUS_POLICIES if setting == OBLIVIOUS else CLASS_POLICIES)
            names = ["Gittins"] + [n for n in names if n != "Gittins"]
            work = setting_workload(s, setting)
            ref = None
            for name in names:
                pol = make_policy(name, s, setting)
                res = simulate(pol, work, lam, cfg, workers=workers)
                if ref is None:
                    ref = res.mean_T
                ratio = res.mean_T / ref
                log.info("scenario %d %s %s: T=%.4g ratio=%.4f", s.seed, setting, name, res.mean_T, ratio)
                rows.append(dict(scenario=s.seed, setting=setting, policy=name, lam=lam,
                                 mean_T=res.mean_T, ci=res.ci_half_width, mean_N=res.mean_N,
                                 ratio=ratio))
                key = (setting, name)
                summary[key] = max(summary.get(key, -math.inf), ratio)
    return rows, summary
