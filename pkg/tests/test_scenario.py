import numpy as np
import pytest

from ranksim import dist as D
from ranksim import policy as P
from ranksim import scenario as S
from ranksim.engine import SimConfig, simulate


def test_deterministic():
    a, b = S.random_scenario(9), S.random_scenario(9)
    assert a.means == b.means and a.stddevs == b.stddevs
    assert all(np.array_equal(x.probs, y.probs) for x, y in zip(a.app_dists, b.app_dists))
    assert S.random_scenario(10).means != a.means


def test_means_ordered_and_bounded():
    for seed in range(100):
        s = S.random_scenario(seed)
        assert list(s.means) == sorted(s.means)
        for (lo, hi), m in zip(S.MEAN_INTERVALS, s.means):
            assert lo <= m <= hi
        assert all(S.STDDEV_RANGE[0] <= x <= S.STDDEV_RANGE[1] for x in s.stddevs)
        assert 0 < D.mean(s.overall()) < 16


def test_overall_is_weighted_mean():
    s = S.random_scenario(4)
    want = sum(w * D.mean(d) for w, d in zip(s.app_weights, s.app_dists))
    assert D.mean(s.overall()) == pytest.approx(want, abs=1e-9)


def test_class_dists():
    s = S.random_scenario(3)
    cds = S.class_dists(s, "1122")
    cd = D.mixture([s.app_dists[2], s.app_dists[3]], [0.5, 0.5])
    assert np.allclose(cds[2][0].probs, cd.probs, atol=1e-15)
    for system in S.SYSTEMS:
        cds = S.class_dists(s, system)
        assert cds[1][1] == cds[2][1] == pytest.approx(0.5)
        back = D.mixture([cds[1][0], cds[2][0]], [cds[1][1], cds[2][1]])
        assert np.allclose(back.probs, s.overall().probs, atol=1e-12)
    with pytest.raises(ValueError):
        S.class_dists(s, "1111")


def test_make_policy():
    s = S.running_example()
    assert isinstance(S.make_policy("SERPT", s, S.OBLIVIOUS), P.SERPT)
    assert isinstance(S.make_policy("Gittins", s, "1212"), P.ClassGittins)
    pp = S.make_policy("P-Prio", s, "1221")
    assert pp.order == (1, 2)
    with pytest.raises(ValueError):
        S.make_policy("P-Prio", s, S.OBLIVIOUS)


def test_worst_case_table_small():
    cfg = SimConfig(seed=1, jobs_per_replication=20_000, replications=2)
    rows, summary = S.worst_case_table([S.random_scenario(0), S.random_scenario(1)], 0.8,
                                       cfg=cfg, settings=(S.OBLIVIOUS, "1212"))
    assert len(rows) == 2 * (len(S.OBLIVIOUS_POLICIES) + len(S.CLASS_POLICIES))
    assert summary[(S.OBLIVIOUS, "Gittins")] == 1.0
    assert summary[("1212", "Gittins")] == 1.0
    for r in rows:
        if r["policy"] == "SERPT":
            assert r["ratio"] >= 0.97


# --- the running example ------------------------------------------------------------

@pytest.fixture(scope="module")
def example_results():
    s = S.running_example()
    lam = 0.8 / D.mean(s.overall())
    cfg = SimConfig(seed=5, jobs_per_replication=100_000, replications=4)
    out = {}
    for setting in (S.OBLIVIOUS,) + S.SYSTEMS:
        work = S.setting_workload(s, setting)
        names = S.OBLIVIOUS_POLICIES if setting == S.OBLIVIOUS else S.CLASS_POLICIES
        for name in names:
            out[setting, name] = simulate(S.make_policy(name, s, setting), work, lam, cfg).mean_T
    return out


def ratio(res, setting, name):
    return res[setting, name] / res[setting, "Gittins"]


def test_example_class_one_is_smaller():
    s = S.running_example()
    for system in S.SYSTEMS:
        cds = S.class_dists(s, system)
        assert D.mean(cds[1][0]) < D.mean(cds[2][0])


def test_example_serpt_near_gittins(example_results):
    assert ratio(example_results, S.OBLIVIOUS, "SERPT") <= 1.03
    for system in S.SYSTEMS:
        assert ratio(example_results, system, "SERPT") <= 1.12


def test_example_pprio_by_system(example_results):
    r = example_results
    # 1122: classes separate sizes well, so static priority is nearly optimal
    assert ratio(r, "1122", "P-Prio") <= 1.03
    # 1212: noticeably worse, but not dramatically
    assert 1.02 <= ratio(r, "1212", "P-Prio") <= 1.2
    # 1221: worse than ignoring classes altogether
    assert r["1221", "P-Prio"] > r[S.OBLIVIOUS, "SERPT"]
    assert r["1221", "P-Prio"] > r[S.OBLIVIOUS, "Gittins"]


def test_example_class_rank_rises():
    s = S.running_example()
    curve = P.rank_table(S.class_dists(s, "1221")[1][0], "serpt")
    assert curve.at(1.0).value > curve.at(0.0).value
