import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ranksim import dist as D
from ranksim import policy as P
from ranksim import transform as T
from ranksim.engine import SimConfig, simulate


# --- cutoff vectors ------------------------------------------------------------

def test_cutoff_vector_validation():
    assert T.CutoffVector(()).levels == 1
    for bad in ((2, 1), (0, 1), (1, math.inf), (1, 1)):
        with pytest.raises(P.PolicyError):
            T.CutoffVector(bad)


def test_cutoff_json_roundtrip():
    cv = T.CutoffVector((1.5, 7.0))
    assert T.CutoffVector.from_json(cv.to_json()) == cv


def test_half_open_levels():
    cv = T.CutoffVector((1.0, 3.0))
    assert [cv.level(r) for r in (0.0, 0.99, 1.0, 2.9, 3.0, 50)] == [1, 1, 2, 2, 3, 3]


# --- lpl ------------------------------------------------------------------------

def test_lpl_srpt_two_levels():
    pol = T.lpl(P.SRPT(), [1])
    assert P.rank_curve(pol, size=0.5).at(0).value == 1
    assert P.rank_curve(pol, size=2).at(0).value == 2


def test_lpl_srpt_decays_into_better_level():
    c = P.rank_curve(T.lpl(P.SRPT(), [1, 3]), size=5)
    assert c.at(0).value == 3
    assert c.at(2).value == 3   # remaining exactly 3 sits in the upper bucket
    assert c.at(2.5).value == 2
    assert c.at(4.5).value == 1


def test_lpl_fb_single_cutoff():
    c = P.rank_curve(T.lpl(P.FB(), [2.5]), size=None)
    assert [c.at(a).value for a in (0, 1, 2.49, 2.5, 9)] == [1, 1, 1, 2, 2]


@pytest.mark.parametrize("size", [0.3, 4.0, 50.0])
def test_lpl_psjf_constant(size):
    c = P.rank_curve(T.lpl(P.PSJF(), [1, 10]), size=size)
    assert len(c) == 1


def test_transform_nesting_rules():
    cp = T.checkpointify(P.FB(), T.CheckpointConfig(1.0))
    with pytest.raises(P.PolicyError):
        T.lpl(cp, [1])
    with pytest.raises(P.PolicyError):
        T.lpl(T.lpl(P.FB(), [1]), [2])
    with pytest.raises(P.PolicyError):
        T.checkpointify(cp, T.CheckpointConfig(2.0))
    with pytest.raises(P.PolicyError):
        T.CheckpointConfig(0.0)
    with pytest.raises(P.PolicyError):
        T.CheckpointConfig(1.0, -0.1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.1, 100), min_size=1, max_size=6, unique=True),
       st.floats(0.05, 60), st.floats(0.05, 60), st.floats(0, 1))
def test_lpl_monotone_and_bounded(cuts, s1, s2, frac):
    cv = T.CutoffVector(tuple(sorted(cuts)))
    pol = T.lpl(P.SRPT(), cv)
    a1, a2 = frac * s1 * 0.999, frac * s2 * 0.999
    r1 = P.rank_curve(P.SRPT(), size=s1).at(a1).value
    r2 = P.rank_curve(P.SRPT(), size=s2).at(a2).value
    q1 = P.rank_curve(pol, size=s1).at(a1).value
    q2 = P.rank_curve(pol, size=s2).at(a2).value
    assert q1 in range(1, cv.levels + 1) and q2 in range(1, cv.levels + 1)
    if r1 < r2:
        assert q1 <= q2


def test_lpl_table_policy_levels():
    d = D.discretize(D.Hyperexp2Balanced(1, 10), 0.25, 50)
    c = P.rank_curve(T.lpl(P.SERPT(d), [1.0, 5.0]))
    assert set(np.unique(c.values)) <= {1.0, 2.0, 3.0}


# --- heuristic cutoffs --------------------------------------------------------

def test_heuristic_single_level():
    assert T.heuristic_cutoffs(D.point_mass(2.0), 1).cutoffs == ()


def test_heuristic_uniform_three():
    d = D.from_points({1: 1 / 3, 2: 1 / 3, 3: 1 / 3}, 1.0)
    cv = T.heuristic_cutoffs(d, 2)
    assert cv.level(1) == cv.level(2) == 1
    assert cv.level(3) == 2
    assert np.allclose(T.bucket_loads(d, cv), [1, 1])


def test_heuristic_bounded_pareto_two_levels():
    d = D.bounded_pareto_table1()
    cv = T.heuristic_cutoffs(d, 2)
    (c1,) = cv.cutoffs
    half = D.mean(d) / 2
    below = float(np.sum((d.sizes * d.probs)[d.sizes < c1]))
    below_prev = float(np.sum((d.sizes * d.probs)[d.sizes < c1 - d.step]))
    # greedy boundary: the quota is reached exactly at the last grid point below c1
    assert below_prev < half <= below
    assert c1 == pytest.approx(306.5)


@pytest.mark.parametrize("n", [2, 3, 6])
def test_heuristic_bucket_loads_balanced(n):
    d = D.bounded_pareto_table1()
    cv = T.heuristic_cutoffs(d, n)
    loads = T.bucket_loads(d, cv)
    assert loads.sum() == pytest.approx(D.mean(d))
    top = float(np.max(d.sizes * d.probs))
    assert np.all(np.abs(loads - D.mean(d) / n) <= top + 1e-12)


def test_heuristic_too_many_levels():
    with pytest.raises(P.PolicyError):
        T.heuristic_cutoffs(D.from_points({1: 0.5, 2: 0.5}, 1.0), 3)


# --- optimizer --------------------------------------------------------------------

def test_optimize_single_level():
    d = D.discretize(D.Exponential(1.0), 0.25, 20)
    assert T.optimize_cutoffs(d, 0.5, P.SRPT(), 1, budget=1).cutoffs == ()


def test_optimize_point_mass():
    cv = T.optimize_cutoffs(D.point_mass(2.0, 0.5), 0.3, P.SRPT(), 3, budget=6,
                            cfg=SimConfig(jobs_per_replication=2000, replications=1))
    assert cv.levels == 3


def test_optimize_unstable():
    from ranksim.engine import UnstableError
    with pytest.raises(UnstableError):
        T.optimize_cutoffs(D.point_mass(2.0), 0.6, P.SRPT(), 2)


def test_optimize_not_worse_than_heuristic():
    d = D.bounded_pareto_table1()
    lam = 0.8 / D.mean(d)
    cfg = SimConfig(seed=3, jobs_per_replication=20_000, replications=1)
    heur = T.heuristic_cutoffs(d, 2)
    opt = T.optimize_cutoffs(d, lam, P.SRPT(), 2, budget=12, cfg=cfg)
    t_h = simulate(T.lpl(P.SRPT(), heur), d, lam, cfg).mean_T
    t_o = simulate(T.lpl(P.SRPT(), opt), d, lam, cfg).mean_T
    assert t_o <= t_h


# --- checkpoints -------------------------------------------------------------------

def test_checkpointed_fb_rank():
    c = P.rank_curve(T.checkpointify(P.FB(), T.CheckpointConfig(1.0, 0.1)))
    for k in range(5):
        assert c.at(float(k)) == (1, k)
        assert c.at(k + 0.5).band == 0
    # age 0 is a checkpoint: a fresh job is preemptible
    assert c.at(0.0).band == 1


def test_checkpoint_preserves_lattice_ranks():
    d = D.discretize(D.Hyperexp2Balanced(1, 10), 0.25, 50)
    inner = P.Gittins(d)
    c = P.rank_curve(T.checkpointify(inner, T.CheckpointConfig(0.75)))
    ref = P.rank_curve(inner)
    for k in range(20):
        assert c.at(0.75 * k) == ref.at(0.75 * k)
