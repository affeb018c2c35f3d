import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from ranksim import dist as D


def pmf_strategy(max_len=30):
    return st.lists(st.floats(0, 1), min_size=1, max_size=max_len).filter(
        lambda xs: sum(xs) > 1e-6)


def make(xs, step=0.5):
    p = np.concatenate(([0.0], np.asarray(xs)))
    return D.DiscreteDist(step, p / p.sum())


# --- construction ---------------------------------------------------------------

def test_rejects_mass_at_zero():
    with pytest.raises(D.DistError):
        D.DiscreteDist(1.0, np.array([0.5, 0.5]))


def test_rejects_bad_sum_and_negative():
    with pytest.raises(D.DistError):
        D.DiscreteDist(1.0, np.array([0.0, 0.5, 0.4]))
    with pytest.raises(D.DistError):
        D.DiscreteDist(1.0, np.array([0.0, 1.5, -0.5]))


def test_point_mass_and_from_points():
    d = D.point_mass(3.0)
    assert D.mean(d) == pytest.approx(3.0)
    assert D.scv(d) == pytest.approx(0.0, abs=1e-12)
    u = D.from_points({1: 0.5, 3: 0.5}, 1.0)
    assert D.mean(u) == pytest.approx(2.0)


@pytest.mark.parametrize("step,cap", [(0.0, 1.0), (-1, 1.0), (0.5, 0.1)])
def test_discretize_bad_grid(step, cap):
    with pytest.raises(D.DistError):
        D.discretize(D.Exponential(1.0), step, cap)


def test_bad_parameters():
    for bad in (lambda: D.Exponential(0), lambda: D.BoundedPareto(2, 1),
                lambda: D.Hyperexp2Balanced(1, 0.5), lambda: D.TruncGaussian(1, 0, 0, 2),
                lambda: D.Mixture((0.5, 0.6), (D.Exponential(1), D.Exponential(2)))):
        with pytest.raises(D.DistError):
            bad()


# --- discretization examples ----------------------------------------------------

def test_exponential_mean_within_half_step():
    d = D.discretize(D.Exponential(1.0), 0.125, 5000)
    assert abs(D.mean(d) - 1.0) <= 0.07
    # upper-bin rule: mean is step / (1 - e^-step), summed exactly
    h = 0.125
    assert D.mean(d) == pytest.approx(h / (1 - math.exp(-h)), rel=1e-9)


def test_bounded_pareto_table1_scv():
    d = D.bounded_pareto_table1()
    assert D.scv(d) == pytest.approx(753, rel=0.05)
    # frozen direct-summation values
    assert D.mean(d) == pytest.approx(11.576840672105597, rel=1e-9)
    assert D.scv(d) == pytest.approx(745.1500493858236, rel=1e-9)


def test_weibull_moments_untruncated():
    # E[S^n] = Gamma(1 + 4n) by substituting u = x^(1/4)
    m1 = integrate.quad(lambda u: u ** 4 * math.exp(-u), 0, np.inf)[0]
    m2 = integrate.quad(lambda u: u ** 8 * math.exp(-u), 0, np.inf)[0]
    assert m1 == pytest.approx(24)
    assert m2 == pytest.approx(40320)
    assert m2 / m1 ** 2 - 1 == pytest.approx(69)


def capped_weibull_scv(cap):
    top = cap ** 0.25
    m1 = integrate.quad(lambda u: u ** 4 * math.exp(-u), 0, top)[0]
    m2 = integrate.quad(lambda u: u ** 8 * math.exp(-u), 0, top)[0]
    tail = math.exp(-top)
    m1 += cap * tail
    m2 += cap * cap * tail
    return m2 / m1 ** 2 - 1


def test_weibull_capped_scv_matches_quadrature():
    d = D.weibull_table1()
    # the capped law (tail lumped at 5000) has scv about 44, not 55..69
    assert capped_weibull_scv(5000) == pytest.approx(44.017, abs=0.01)
    assert D.scv(d) == pytest.approx(capped_weibull_scv(5000), rel=0.02)
    assert D.scv(d) == pytest.approx(43.70535869630811, rel=1e-9)


def test_weibull_scv_converges_with_step():
    target = capped_weibull_scv(5000)
    coarse = D.discretize(D.WeibullQuarter(), 0.5, 5000)
    fine = D.discretize(D.WeibullQuarter(), 0.125, 5000)
    assert abs(D.scv(fine) - target) < abs(D.scv(coarse) - target)


def test_hyperexp_balanced():
    h = D.Hyperexp2Balanced(1.0, 100.0)
    p1, p2, mu1, mu2 = h.phases()
    assert p1 / mu1 == pytest.approx(p2 / mu2)
    assert p1 / mu1 + p2 / mu2 == pytest.approx(1.0, abs=1e-9)
    m2 = 2 * (p1 / mu1 ** 2 + p2 / mu2 ** 2)
    assert m2 - 1 == pytest.approx(100.0, rel=1e-9)
    d = D.discretize(h, 0.001, 5000)
    assert D.scv(d) == pytest.approx(100, rel=0.01)


def test_trunc_gaussian_restricted():
    d = D.discretize(D.TruncGaussian(2.0, 1.0, 0.0, 16.0), 1 / 16, 16)
    assert d.max_size <= 16
    assert 2.0 < D.mean(d) < 2.2


def test_lumped_tail_at_cap():
    d = D.discretize(D.Exponential(0.01), 1.0, 10)
    assert d.max_size == 10
    # P(9 < S <= 10) plus everything above 10
    assert d.probs[10] == pytest.approx(math.exp(-0.09), rel=1e-9)


# --- queries ----------------------------------------------------------------------

def test_expected_remaining_examples():
    d = D.point_mass(3.0)
    assert D.expected_remaining(d, 1.0) == pytest.approx(2.0)
    two = D.from_points({1: 0.9, 10: 0.1}, 1.0)
    assert D.expected_remaining(two, 1.0) == pytest.approx(9.0)
    e = D.discretize(D.Exponential(1.0), 0.01, 60)
    for a in (0.0, 1.0, 5.0):
        assert D.expected_remaining(e, a) == pytest.approx(1.0, abs=2 * 0.01)
    with pytest.raises(D.DistError):
        D.expected_remaining(d, 3.0)


def test_load_examples():
    assert D.load(D.point_mass(2.0), 0.25) == pytest.approx(0.5)
    bp = D.bounded_pareto_table1()
    assert D.load(bp, 0.8 / D.mean(bp)) == pytest.approx(0.8)


def test_mixture_examples():
    a, b = D.point_mass(1.0, 1.0), D.point_mass(3.0, 1.0)
    assert D.mean(D.mixture([a, b], [0.5, 0.5])) == pytest.approx(2.0)
    assert D.mixture([a], [1.0]) == a
    with pytest.raises(D.DistError):
        D.mixture([D.point_mass(1.0, 0.5), D.point_mass(1.0, 0.25)], [0.5, 0.5])


def test_csv_roundtrip(tmp_path):
    d = D.discretize(D.Exponential(1.0), 0.25, 5)
    D.to_csv(d, tmp_path / "d.csv")
    back = D.from_csv(tmp_path / "d.csv", 0.25)
    assert np.allclose(back.probs, d.probs)


def test_spec_json_roundtrip():
    spec = D.Mixture((0.3, 0.7), (D.Exponential(2.0), D.TruncGaussian(1, 2, 0, 5)))
    assert D.spec_from_json(D.spec_to_json(spec)) == spec
    with pytest.raises(D.DistError):
        D.spec_from_json({"kind": "exponential", "rate": 1, "extra": 2})


# --- properties ------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(pmf_strategy(), st.floats(0, 20))
def test_tail_and_remaining_properties(xs, a):
    d = make(xs)
    assert d.probs.sum() == pytest.approx(1.0, abs=1e-9)
    assert D.tail(d, 0.0) == pytest.approx(1.0)
    assert D.tail(d, a) >= D.tail(d, a + 0.7) - 1e-15
    if D.tail(d, a) > 0:
        r = D.expected_remaining(d, a)
        assert -1e-12 <= r <= d.max_size - a + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(pmf_strategy(10), min_size=1, max_size=4), st.data())
def test_mixture_mean_is_weighted_mean(comps, data):
    ds = [make(c) for c in comps]
    w = np.array(data.draw(st.lists(st.floats(0.01, 1), min_size=len(ds), max_size=len(ds))))
    w = w / w.sum()
    m = D.mixture(ds, w)
    assert D.mean(m) == pytest.approx(sum(wi * D.mean(d) for wi, d in zip(w, ds)), abs=1e-9)
