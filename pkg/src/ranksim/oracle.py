"""Analytic baselines for the M/G/1 on a size grid.

All formulas are evaluated by summation over the pmf.  For a grid with
step ``h`` and a job of size ``x`` (a grid point):

FCFS (Pollaczek-Khinchine)::

    E[T] = E[S] + lam E[S^2] / (2 (1 - rho))

SRPT, with FCFS among equal remaining sizes::

    rho_le(x) = lam E[S 1(S <= x)],   rho_lt(x) = lam E[S 1(S < x)]
    m2(x)     = E[S^2 1(S <= x)] + x^2 P(S > x)
    T(x)      = lam m2(x) / (2 (1 - rho_le(x)) (1 - rho_lt(x)))
                + h * sum_{k=1..x/h} 1 / (1 - rho_le((k-1) h))

The residence sum uses the fact that while the remaining size lies in
((k-1)h, kh] only arrivals of size <= (k-1)h preempt.

FB (jobs at equal age share the server)::

    rho_x = lam E[min(S, x)]
    T(x)  = (x + lam E[min(S, x)^2] / (2 (1 - rho_x))) / (1 - rho_x)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dist as _dist
from .dist import DiscreteDist


class OracleError(ValueError):
    pass


def _check_load(d, lam):
    rho = _dist.load(d, lam)
    if lam < 0:
        raise OracleError("arrival rate must be non-negative")
    if rho >= 1:
        raise OracleError(f"load {rho:.4f} >= 1")
    return rho


def pk_fcfs_mean(d: DiscreteDist, lam: float) -> float:
    rho = _check_load(d, lam)
    return _dist.mean(d) + lam * _dist.second_moment(d) / (2 * (1 - rho))


def _partial(d):
    x = d.sizes
    p = d.probs
    m1 = np.cumsum(x * p)           # E[S 1(S <= x)]
    m2 = np.cumsum(x * x * p)
    tail = 1.0 - np.cumsum(p)       # P(S > x)
    tail[tail < 0] = 0.0
    return x, p, m1, m2, tail


def srpt_response(d: DiscreteDist, lam: float) -> np.ndarray:
    """Mean response time of a size-x job under SRPT, for every grid point x."""
    _check_load(d, lam)
    x, p, m1, m2, tail = _partial(d)
    rho_le = lam * m1
    rho_lt = rho_le - lam * x * p
    wait = lam * (m2 + x * x * tail) / (2 * (1 - rho_le) * (1 - rho_lt))
    inv = 1.0 / (1.0 - rho_le)
    resid = d.step * (np.cumsum(inv) - inv)   # sum over grid points below x
    return wait + resid


def srpt_mean(d: DiscreteDist, lam: float) -> float:
    return float(np.dot(d.probs, srpt_response(d, lam)))


def fb_response(d: DiscreteDist, lam: float) -> np.ndarray:
    """Mean response time of a size-x job under FB, for every grid point x."""
    _check_load(d, lam)
    x, p, m1, m2, tail = _partial(d)
    e1 = m1 + x * tail
    e2 = m2 + x * x * tail
    rx = lam * e1
    return (x + lam * e2 / (2 * (1 - rx))) / (1 - rx)


def fb_mean(d: DiscreteDist, lam: float) -> float:
    return float(np.dot(d.probs, fb_response(d, lam)))


def fcfs_srpt_bound_check(d: DiscreteDist, lam: float) -> bool:
    """Is FCFS within a factor s_max/s_min of SRPT?"""
    sup = d.support
    ratio = d.step * sup[-1] / (d.step * sup[0])
    return pk_fcfs_mean(d, lam) <= ratio * srpt_mean(d, lam) * (1 + 1e-12)


# --- checkpoint overhead ------------------------------------------------------

def _checkpoints(sizes, delta):
    # floor with a relative guard so that s = k*delta counts k checkpoints
    return np.floor(sizes / delta * (1 + 1e-12))


def effective_dist(d: DiscreteDist, delta: float, gamma: float) -> DiscreteDist:
    """Distribution of size plus checkpoint overhead, rounded up to the grid."""
    if not delta > 0:
        raise OracleError("delta must be positive")
    if gamma == 0:
        return d
    sup = d.support
    s = d.step * sup
    s_eff = s + _checkpoints(s, delta) * gamma
    idx = np.ceil(s_eff / d.step * (1 - 1e-12)).astype(np.int64)
    probs = np.bincount(idx, weights=d.probs[sup], minlength=int(idx.max()) + 1)
    return DiscreteDist(d.step, probs)


def rho_prime(d: DiscreteDist, lam: float, delta: float, gamma: float) -> float:
    """lam * E[S + floor(S/delta) gamma], computed before re-gridding."""
    if not delta > 0:
        raise OracleError("delta must be positive")
    k = _checkpoints(d.sizes, delta)
    return float(lam * (_dist.mean(d) + gamma * np.dot(d.probs, k)))


def _check_rho(rho):
    if not 0 < rho < 1:
        raise OracleError(f"rho must be in (0, 1), got {rho}")


def delta_safe(gamma: float, rho: float) -> float:
    _check_rho(rho)
    return gamma * rho / (1 - rho)


def delta_rot(rho: float, gamma: float, mean_size: float) -> float:
    _check_rho(rho)
    return math.sqrt(gamma * mean_size / rho) / (1 - rho)


def right_wall(rho: float, mean_size: float) -> float:
    _check_rho(rho)
    return mean_size / (rho * rho * (1 - rho))


@dataclass(frozen=True)
class CheckpointAssessment:
    rho: float
    rho_prime: float
    delta_safe: float
    delta_rule_of_thumb: float
    right_wall: float
    stable: bool
    outside_rule_of_thumb: bool


def assess(d: DiscreteDist, lam: float, cfg) -> CheckpointAssessment:
    """Stability and tuning summary for checkpoint gap ``cfg.delta`` and overhead ``cfg.gamma``."""
    es = _dist.mean(d)
    rho = lam * es
    _check_rho(rho)
    rp = rho_prime(d, lam, cfg.delta, cfg.gamma)
    ds = delta_safe(cfg.gamma, rho)
    dr = delta_rot(rho, cfg.gamma, es)
    rw = right_wall(rho, es)
    return CheckpointAssessment(rho, rp, ds, dr, rw, rp < 1, not (ds < dr < rw))
