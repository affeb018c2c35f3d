import csv
import io
import json

import pytest

from ranksim import cli

FAST = {"jobs_per_replication": 20_000, "replications": 2}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def read_csv(path):
    text = open(path, encoding="utf-8", newline="").read()
    head = [ln[2:] for ln in text.splitlines() if ln.startswith("# ")]
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    rows = list(csv.DictReader(io.StringIO("\n".join(body))))
    return dict(h.split(": ", 1) for h in head), rows, text


MM1 = {"workload": {"dist": {"kind": "exponential", "rate": 1.0}, "step": 0.01, "cap": 40},
       "policy": "FCFS", "lambda": 0.5, "seed": 3,
       "sim": {"jobs_per_replication": 100_000, "replications": 4}}


def test_simulate_mm1(tmp_path):
    out = tmp_path / "o.csv"
    assert cli.run(["simulate", "--config", write(tmp_path, MM1), "--out", str(out)]) == 0
    head, rows, _ = read_csv(out)
    assert head["seed"] == "3" and "Philox" in head["rng"]
    assert len(rows) == 1
    assert float(rows[0]["mean_T"]) == pytest.approx(2.0, rel=0.03)


def test_rerun_byte_identical_and_jobs(tmp_path):
    cfg = write(tmp_path, dict(MM1, sim=FAST))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    cli.run(["simulate", "--config", cfg, "--out", str(a)])
    cli.run(["simulate", "--config", cfg, "--out", str(b), "--jobs", "2"])
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.csv"
    cli.run(["simulate", "--config", cfg, "--out", str(c), "--seed", "4"])
    assert read_csv(a)[1] != read_csv(c)[1]


def test_config_errors(tmp_path):
    bad = dict(MM1, bogus=1)
    assert cli.run(["simulate", "--config", write(tmp_path, bad)]) == 1
    assert cli.run(["simulate", "--config", str(tmp_path / "missing.json")]) == 1
    nolevels = dict(MM1, policy={"name": "SRPT", "levels": 2, "cutoffs": [1.0]})
    assert cli.run(["simulate", "--config", write(tmp_path, nolevels)]) == 1


def test_unstable_exit_and_override(tmp_path):
    cfg = write(tmp_path, dict(MM1, **{"lambda": 1.2}, sim=FAST))
    assert cli.run(["simulate", "--config", cfg]) == 2
    out = tmp_path / "o.csv"
    assert cli.run(["simulate", "--config", cfg, "--override-unstable", "--out", str(out)]) == 0
    assert read_csv(out)[1][0]["truncated"] == "true"


def test_dist_info_and_rank_dump(tmp_path):
    out = tmp_path / "d.csv"
    cfg = {"workload": {"table1": "bounded_pareto"}}
    assert cli.run(["dist", "info", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    vals = {r["quantity"]: float(r["value"]) for r in read_csv(out)[1]}
    assert vals["scv"] == pytest.approx(745.15, rel=1e-4)
    out2 = tmp_path / "r.csv"
    cfg = {"workload": {"point_mass": 2.0, "step": 0.5}, "policy": "FB"}
    assert cli.run(["rank", "dump", "--config", write(tmp_path, cfg), "--out", str(out2)]) == 0
    rows = read_csv(out2)[1]
    assert [float(r["rank"]) for r in rows] == [float(r["age"]) for r in rows]


def test_compare_ratio_columns(tmp_path):
    cfg = {"workload": {"scenario": 15}, "policies": ["Gittins", "FCFS", "SERPT"],
           "loads": [0.5], "sim": FAST}
    out = tmp_path / "c.csv"
    assert cli.run(["compare", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    rows = read_csv(out)[1]
    assert len(rows) == 3
    ref = float(rows[0]["mean_T"])
    for r in rows:
        assert float(r["ratio_to_reference"]) == pytest.approx(float(r["mean_T"]) / ref, rel=1e-12)


def test_lpl_sweep_row_count(tmp_path):
    cfg = {"workload": {"table1": "bounded_pareto"}, "inner": "SRPT", "rho": 0.8,
           "sim": {"jobs_per_replication": 5000, "replications": 2},
           "optimizer": {"jobs_per_replication": 3000, "budget": 4}}
    out = tmp_path / "l.csv"
    assert cli.run(["lpl-sweep", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    rows = read_csv(out)[1]
    assert len(rows) == 15
    assert rows[0]["strategy"] == "baseline"
    assert sorted({r["strategy"] for r in rows[1:]}) == ["heuristic", "optimized"]
    base = float(rows[0]["mean_T"])
    for r in rows:
        assert float(r["ratio_to_baseline"]) == pytest.approx(float(r["mean_T"]) / base, rel=1e-12)


def test_checkpoint_sweep_header(tmp_path):
    cfg = {"workload": {"point_mass": 1.0}, "policy": "FB", "rho": 0.8, "gamma_fraction": 0.1,
           "deltas": [0.3, 0.5, 2.0], "sim": FAST}
    out = tmp_path / "k.csv"
    assert cli.run(["checkpoint-sweep", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    head, rows, _ = read_csv(out)
    assert float(head["delta_safe"]) == pytest.approx(0.4)
    # below delta_safe the row is flagged rather than fatal
    assert rows[0]["stable"] == "false" and rows[0]["mean_T"] == ""
    assert rows[1]["stable"] == "true"


def test_scenarios_run(tmp_path):
    cfg = {"count": 1, "sim": {"jobs_per_replication": 5000, "replications": 2}}
    out = tmp_path / "s.csv"
    argv = ["scenarios", "run", "--config", write(tmp_path, cfg), "--out", str(out),
            "--rho", "0.8", "--systems", "oblivious,1221"]
    assert cli.run(argv) == 0
    rows = read_csv(out)[1]
    assert len(rows) == 4 + 5
    summary = read_csv(tmp_path / "s.summary.csv")[1]
    assert {r["setting"] for r in summary} == {"oblivious", "1221"}
    assert cli.run(argv[:-2] + ["--systems", "1331"]) == 1
