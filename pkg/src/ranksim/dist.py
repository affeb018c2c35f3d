"""Job-size distributions on a uniform size grid.

A :class:`DiscreteDist` holds a probability mass function where index ``i``
stands for size ``i * step``.  Everything downstream (moments, SERPT and
Gittins ranks, analytic oracles, the simulator's size sampler) reads sizes
from this one representation.

Continuous families are described by small parametric spec classes and turned
into grids with :func:`discretize`.  The mass of ``((i-1)*step, i*step]`` is
assigned to grid point ``i``; mass above the cap is lumped at the top point.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

PROB_TOL = 1e-9


class DistError(ValueError):
    """Invalid distribution parameters or an undefined conditional quantity."""


@dataclass(frozen=True, eq=False)
class DiscreteDist:
    step: float
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not (self.step > 0 and math.isfinite(self.step)):
            raise DistError(f"grid step must be positive, got {self.step}")
        p = np.array(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 2:
            raise DistError("probs must be a 1-d array with at least one positive size")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise DistError("probabilities must be finite and non-negative")
        if p[0] != 0.0:
            raise DistError("size 0 must carry zero probability")
        total = p.sum()
        if abs(total - 1.0) > PROB_TOL:
            raise DistError(f"probabilities sum to {total}, not 1")
        # trim trailing zeros so the last index is the max support point
        nz = np.flatnonzero(p)
        p = p[: nz[-1] + 1]
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def sizes(self) -> np.ndarray:
        return np.arange(self.probs.size) * self.step

    @property
    def max_index(self) -> int:
        return self.probs.size - 1

    @property
    def max_size(self) -> float:
        return self.max_index * self.step

    @property
    def min_size(self) -> float:
        return int(np.flatnonzero(self.probs)[0]) * self.step

    @property
    def support(self) -> np.ndarray:
        """Indices with positive mass."""
        return np.flatnonzero(self.probs)

    def __eq__(self, other):
        if not isinstance(other, DiscreteDist):
            return NotImplemented
        return self.step == other.step and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash((self.step, self.probs.tobytes()))

    def __repr__(self):
        return (f"DiscreteDist(step={self.step}, points={self.support.size}, "
                f"max={self.max_size:g}, mean={mean(self):.6g})")


def point_mass(size: float, step: float | None = None) -> DiscreteDist:
    """Deterministic size.  ``size`` must be a multiple of ``step``."""
    if step is None:
        step = size
    i = int(round(size / step))
    if i < 1 or abs(i * step - size) > 1e-9 * max(1.0, size):
        raise DistError(f"size {size} is not a positive multiple of step {step}")
    p = np.zeros(i + 1)
    p[i] = 1.0
    return DiscreteDist(step, p)


def from_points(points: dict[float, float], step: float) -> DiscreteDist:
    """Build a pmf from ``{size: probability}``, sizes on the grid."""
    idx = {}
    for s, w in points.items():
        i = int(round(s / step))
        if i < 1 or abs(i * step - s) > 1e-9 * max(1.0, s):
            raise DistError(f"size {s} is not on the grid of step {step}")
        idx[i] = idx.get(i, 0.0) + w
    p = np.zeros(max(idx) + 1)
    for i, w in idx.items():
        p[i] = w
    return DiscreteDist(step, p)


# --- parametric families ---------------------------------------------------

@dataclass(frozen=True)
class Exponential:
    rate: float
    kind = "exponential"

    def __post_init__(self):
        if not self.rate > 0:
            raise DistError("rate must be positive")

    def cdf(self, x):
        return -np.expm1(-self.rate * np.asarray(x, dtype=float))

    @property
    def upper(self):
        return math.inf


@dataclass(frozen=True)
class BoundedPareto:
    """Density proportional to ``x**-2`` on ``[lo, hi]``."""
    lo: float
    hi: float
    kind = "bounded_pareto"

    def __post_init__(self):
        if not (0 < self.lo < self.hi):
            raise DistError("need 0 < lo < hi")

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        return (1.0 - self.lo / x) / (1.0 - self.lo / self.hi)

    @property
    def upper(self):
        return self.hi


@dataclass(frozen=True)
class WeibullQuarter:
    """Density ``x**(-3/4) * exp(-x**(1/4)) / 4``; mean 24, scv 69."""
    kind = "weibull_quarter"

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return -np.expm1(-(x ** 0.25))

    @property
    def upper(self):
        return math.inf


@dataclass(frozen=True)
class Hyperexp2Balanced:
    """Two-phase hyperexponential with balanced means."""
    mean: float
    scv: float
    kind = "hyperexp2_balanced"

    def __post_init__(self):
        if not self.mean > 0:
            raise DistError("mean must be positive")
        if not self.scv > 1:
            raise DistError("hyperexponential needs scv > 1")

    def phases(self):
        p1 = 0.5 * (1.0 + math.sqrt((self.scv - 1.0) / (self.scv + 1.0)))
        p2 = 1.0 - p1
        return p1, p2, 2.0 * p1 / self.mean, 2.0 * p2 / self.mean

    def cdf(self, x):
        p1, p2, mu1, mu2 = self.phases()
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return 1.0 - p1 * np.exp(-mu1 * x) - p2 * np.exp(-mu2 * x)

    @property
    def upper(self):
        return math.inf


@dataclass(frozen=True)
class TruncGaussian:
    """Gaussian restricted to ``[lo, hi]`` and renormalized."""
    mean: float
    stddev: float
    lo: float
    hi: float
    kind = "trunc_gaussian"

    def __post_init__(self):
        if not self.stddev > 0:
            raise DistError("stddev must be positive")
        if not self.lo < self.hi:
            raise DistError("need lo < hi")
        if self._mass() <= 0:
            raise DistError("no Gaussian mass inside [lo, hi]")

    def _phi(self, x):
        from scipy.special import ndtr
        return ndtr((np.asarray(x, dtype=float) - self.mean) / self.stddev)

    def _mass(self):
        return float(self._phi(self.hi) - self._phi(self.lo))

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        return (self._phi(x) - self._phi(self.lo)) / self._mass()

    @property
    def upper(self):
        return self.hi


@dataclass(frozen=True)
class Mixture:
    weights: tuple
    components: tuple
    kind = "mixture"

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "components", tuple(self.components))
        if len(self.weights) != len(self.components) or not self.weights:
            raise DistError("mixture needs one weight per component")
        if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1) > PROB_TOL:
            raise DistError("mixture weights must be non-negative and sum to 1")

    def cdf(self, x):
        return sum(w * c.cdf(x) for w, c in zip(self.weights, self.components))

    @property
    def upper(self):
        return max(c.upper for c in self.components)


ParametricSpec = Union[Exponential, BoundedPareto, WeibullQuarter,
                       Hyperexp2Balanced, TruncGaussian, Mixture]

_KINDS = {
    "exponential": (Exponential, ("rate",)),
    "bounded_pareto": (BoundedPareto, ("lo", "hi")),
    "weibull_quarter": (WeibullQuarter, ()),
    "hyperexp2_balanced": (Hyperexp2Balanced, ("mean", "scv")),
    "trunc_gaussian": (TruncGaussian, ("mean", "stddev", "lo", "hi")),
}


def spec_from_json(obj: dict) -> ParametricSpec:
    """Inverse of :func:`spec_to_json`; ``{"kind": ..., params...}``."""
    try:
        kind = obj["kind"]
    except (KeyError, TypeError):
        raise DistError(f"distribution spec needs a 'kind': {obj!r}") from None
    if kind == "mixture":
        return Mixture(tuple(obj["weights"]),
                       tuple(spec_from_json(c) for c in obj["components"]))
    if kind not in _KINDS:
        raise DistError(f"unknown distribution kind {kind!r}")
    cls, params = _KINDS[kind]
    extra = set(obj) - set(params) - {"kind"}
    if extra:
        raise DistError(f"unexpected keys for {kind}: {sorted(extra)}")
    try:
        return cls(**{k: float(obj[k]) for k in params})
    except KeyError as e:
        raise DistError(f"{kind} is missing parameter {e}") from None


def spec_to_json(spec: ParametricSpec) -> dict:
    if isinstance(spec, Mixture):
        return {"kind": "mixture", "weights": list(spec.weights),
                "components": [spec_to_json(c) for c in spec.components]}
    _, params = _KINDS[spec.kind]
    return {"kind": spec.kind, **{k: getattr(spec, k) for k in params}}


def discretize(spec: ParametricSpec, step: float, cap: float) -> DiscreteDist:
    """Upper-bin discretization of a continuous law, truncated at ``cap``."""
    if not (step > 0 and math.isfinite(step)):
        raise DistError("step must be positive")
    if not (cap >= step and math.isfinite(cap)):
        raise DistError("cap must be finite and at least one step")
    top = int(math.floor(cap / step + 1e-9))
    if math.isfinite(spec.upper):
        top = min(top, int(math.ceil(spec.upper / step - 1e-9)))
    if top < 1:
        raise DistError("grid has no positive size below the cap")
    cdf = np.asarray(spec.cdf(np.arange(top + 1) * step), dtype=float)
    p = np.zeros(top + 1)
    # any mass at or below zero joins the first grid point
    p[1] = cdf[1]
    p[2:] = np.diff(cdf[1:])
    p = np.maximum(p, 0.0)
    p[top] += max(0.0, 1.0 - cdf[top])
    p /= p.sum()
    return DiscreteDist(step, p)


# --- queries ------------------------------------------------------------------

def mean(d: DiscreteDist) -> float:
    return float(np.dot(d.sizes, d.probs))


def second_moment(d: DiscreteDist) -> float:
    s = d.sizes
    return float(np.dot(s * s, d.probs))


def scv(d: DiscreteDist) -> float:
    m = mean(d)
    return (second_moment(d) - m * m) / (m * m)


def _above(d: DiscreteDist, a: float) -> int:
    """First grid index whose size is strictly greater than ``a``."""
    return int(np.searchsorted(d.sizes, a, side="right"))


def tail(d: DiscreteDist, a: float) -> float:
    """P(S > a)."""
    return float(d.probs[_above(d, a):].sum())


def expected_remaining(d: DiscreteDist, a: float) -> float:
    """E[S - a | S > a]."""
    k = _above(d, a)
    p = d.probs[k:]
    t = p.sum()
    if t <= 0:
        raise DistError(f"age {a} is beyond the support (max {d.max_size})")
    return float(np.dot(d.sizes[k:] - a, p) / t)


def load(d: DiscreteDist, lam: float) -> float:
    if lam < 0:
        raise DistError("arrival rate must be non-negative")
    return lam * mean(d)


def mixture(components: Sequence[DiscreteDist], weights: Sequence[float]) -> DiscreteDist:
    if len(components) != len(weights) or not components:
        raise DistError("mixture needs one weight per component")
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > PROB_TOL:
        raise DistError("mixture weights must be non-negative and sum to 1")
    step = components[0].step
    for c in components[1:]:
        if not math.isclose(c.step, step, rel_tol=1e-12):
            raise DistError(f"mismatched grid steps {step} and {c.step}")
    n = max(c.probs.size for c in components)
    p = np.zeros(n)
    for wi, c in zip(w, components):
        p[: c.probs.size] += wi * c.probs
    return DiscreteDist(step, p / p.sum())


def to_csv(d: DiscreteDist, path) -> None:
    """Two columns (size, probability), support points only."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["size", "probability"])
        for i in d.support:
            w.writerow([repr(float(i * d.step)), repr(float(d.probs[i]))])


def from_csv(path, step: float) -> DiscreteDist:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    return from_points({float(r["size"]): float(r["probability"]) for r in rows}, step)


# Table-1 style high-variance distributions.
TABLE1_STEP = 0.125


def bounded_pareto_table1(step: float = TABLE1_STEP, cap: float = 1e5) -> DiscreteDist:
    return discretize(BoundedPareto(1.0, 1e5), step, cap)


def weibull_table1(step: float = TABLE1_STEP, cap: float = 5000.0) -> DiscreteDist:
    return discretize(WeibullQuarter(), step, cap)
