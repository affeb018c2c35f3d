"""Command-line front end.

Every command reads a JSON config (validated against the schema of the
same name under ``schemas/``) and writes CSV with a ``#`` provenance
header.  Exit codes: 0 success, 1 config error, 2 unstable load without
``--override-unstable``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from importlib import resources

import jsonschema
import numpy as np

from . import __version__
from . import dist as _dist
from . import engine as _eng
from . import oracle as _orc
from . import policy as _pol
from . import scenario as _scn
from . import transform as _tr

log = logging.getLogger("ranksim")

DEFAULT_LOADS = (0.2, 0.4, 0.6, 0.8, 0.9, 0.95)
EXIT_OK, EXIT_CONFIG, EXIT_UNSTABLE = 0, 1, 2


class ConfigError(Exception):
    pass


class Unstable(Exception):
    pass


# --- config ------------------------------------------------------------------

def load_schema(name: str) -> dict:
    text = resources.files("ranksim").joinpath("schemas", f"{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


def read_config(path, schema: str, seed=None) -> dict:
    if path is None:
        cfg = {}
    else:
        try:
            with open(path, encoding="utf-8") as f:
                cfg = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
    if seed is not None:
        cfg["seed"] = seed
    try:
        jsonschema.validate(cfg, load_schema(schema))
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {e.message}") from None
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def build_workload(w: dict):
    """(engine workload, overall dist, scenario or None, setting)."""
    try:
        if "table1" in w:
            step = w.get("step", _dist.TABLE1_STEP)
            if w["table1"] == "bounded_pareto":
                d = _dist.bounded_pareto_table1(step, w.get("cap", 1e5))
            else:
                d = _dist.weibull_table1(step, w.get("cap", 5000.0))
            return d, d, None, _scn.OBLIVIOUS
        if "dist" in w:
            d = _dist.discretize(_dist.spec_from_json(w["dist"]), w["step"], w["cap"])
            return d, d, None, _scn.OBLIVIOUS
        if "csv" in w:
            d = _dist.from_csv(w["csv"], w["step"])
            return d, d, None, _scn.OBLIVIOUS
        if "point_mass" in w:
            d = _dist.point_mass(w["point_mass"], w.get("step"))
            return d, d, None, _scn.OBLIVIOUS
        s = _scn.random_scenario(w["scenario"])
        setting = w.get("setting", _scn.OBLIVIOUS)
        return _scn.setting_workload(s, setting), s.overall(), s, setting
    except (_dist.DistError, OSError, KeyError, ValueError) as e:
        raise ConfigError(f"bad workload: {e}") from None


def _class_dists(work) -> dict:
    if isinstance(work, _dist.DiscreteDist):
        return {}
    return {k: v[0] for k, v in work.items()}


def build_policy(p, work, overall) -> _pol.PolicySpec:
    """Policy from its config form; SERPT and Gittins use class
    distributions when the workload has classes."""
    if isinstance(p, str):
        p = {"name": p}
    name = p["name"]
    classes = _class_dists(work)
    try:
        if name == "FCFS":
            pol = _pol.FCFS()
        elif name == "FB":
            pol = _pol.FB()
        elif name == "SRPT":
            pol = _pol.SRPT()
        elif name == "PSJF":
            pol = _pol.PSJF()
        elif name == "SJF":
            pol = _pol.SJF()
        elif name in ("SERPT", "Gittins"):
            if classes:
                pol = _pol.ClassSERPT(classes) if name == "SERPT" else _pol.ClassGittins(classes)
            else:
                pol = _pol.SERPT(overall) if name == "SERPT" else _pol.Gittins(overall)
        else:
            if not classes:
                raise ConfigError("P-Prio needs a workload with classes")
            order = p.get("order") or sorted(classes, key=lambda k: _dist.mean(classes[k]))
            pol = _pol.PPrio(tuple(order))
        if "cutoffs" in p and "levels" in p:
            raise ConfigError("give either cutoffs or levels, not both")
        if "cutoffs" in p:
            pol = _tr.lpl(pol, p["cutoffs"])
        elif "levels" in p:
            pol = _tr.lpl(pol, _tr.heuristic_cutoffs(overall, p["levels"]))
        if "checkpoint" in p:
            c = p["checkpoint"]
            pol = _tr.checkpointify(pol, _tr.CheckpointConfig(c["delta"], c.get("gamma", 0.0)))
    except _pol.PolicyError as e:
        raise ConfigError(f"bad policy {name}: {e}") from None
    return pol


def sim_config(cfg: dict, seed: int) -> _eng.SimConfig:
    s = dict(cfg.get("sim", {}))
    return _eng.SimConfig(seed=seed, **s)


def arrival_rate(cfg: dict, overall) -> float:
    if "lambda" in cfg and "rho" in cfg:
        raise ConfigError("give either rho or lambda, not both")
    if "lambda" in cfg:
        return float(cfg["lambda"])
    return float(cfg.get("rho", 0.8)) / _dist.mean(overall)


# --- output ------------------------------------------------------------------

def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


class Output:
    """CSV writer with a provenance header."""

    def __init__(self, path, cfg: dict, seed: int, extra: dict | None = None):
        self.path = path
        self.buf = io.StringIO()
        lines = [f"tool: ranksim {__version__}", f"rng: {_eng.RNG_NAME}",
                 f"seed: {seed}", f"config_sha256: {config_hash(cfg)}"]
        for k, v in (extra or {}).items():
            lines.append(f"{k}: {fmt(v)}")
        for ln in lines:
            self.buf.write(f"# {ln}\n")
        self.writer = csv.writer(self.buf, lineterminator="\r\n")

    def row(self, values):
        self.writer.writerow([fmt(v) for v in values])

    def close(self):
        text = self.buf.getvalue()
        if self.path in (None, "-"):
            sys.stdout.write(text)
        else:
            with open(self.path, "w", newline="", encoding="utf-8") as f:
                f.write(text)


# --- commands ----------------------------------------------------------------

def cmd_dist_info(args) -> int:
    cfg = read_config(args.config, "dist_info", args.seed)
    _, d, _, _ = build_workload(cfg["workload"])
    out = Output(args.out, cfg, cfg.get("seed", 0))
    out.row(["quantity", "value"])
    for k, v in [("step", d.step), ("support_points", int(d.support.size)),
                 ("min_size", d.min_size), ("max_size", d.max_size), ("mean", _dist.mean(d)),
                 ("second_moment", _dist.second_moment(d)), ("scv", _dist.scv(d))]:
        out.row([k, v])
    out.close()
    if "pmf_out" in cfg:
        _dist.to_csv(d, cfg["pmf_out"])
    return EXIT_OK


def cmd_rank_dump(args) -> int:
    cfg = read_config(args.config, "rank_dump", args.seed)
    work, overall, _, _ = build_workload(cfg["workload"])
    pol = build_policy(cfg["policy"], work, overall)
    classes = list(_class_dists(work)) or [None]
    if _pol.base_of(pol).size_aware and "size" not in cfg:
        raise ConfigError(f"{pol.name} needs 'size' to dump a rank curve")
    step = cfg.get("step", overall.step)
    max_age = cfg.get("max_age", overall.max_size - step)
    try:
        rows = _pol.dump_rows(pol, classes, step, max_age, cfg.get("size"))
    except (_pol.PolicyError, _dist.DistError) as e:
        raise ConfigError(str(e)) from None
    out = Output(args.out, cfg, cfg.get("seed", 0), {"policy": _pol.describe(pol)})
    out.row(["class", "age", "band", "rank"])
    for r in rows:
        out.row(r)
    out.close()
    return EXIT_OK


def _run(pol, work, lam, simcfg, args, allow_flag=False):
    """Simulate with the stability preflight; returns (result or None, rho_eff)."""
    rho_eff = _eng.effective_load(pol, work, lam)
    if rho_eff >= 1 and not args.override_unstable:
        if allow_flag:
            return None, rho_eff
        raise Unstable(f"effective load {rho_eff:.4f} >= 1 for {_pol.describe(pol)}")
    res = _eng.simulate(pol, work, lam, simcfg, override_unstable=args.override_unstable,
                        workers=args.jobs)
    return res, rho_eff


def _levels_of(pol):
    p = pol.inner if isinstance(pol, _tr.Checkpointed) else pol
    return p.cutoffs.levels if isinstance(p, _tr.Lpl) else None


def cmd_simulate(args) -> int:
    cfg = read_config(args.config, "simulate", args.seed)
    seed = cfg.get("seed", 0)
    work, overall, _, _ = build_workload(cfg["workload"])
    pol = build_policy(cfg["policy"], work, overall)
    lam = arrival_rate(cfg, overall)
    res, rho_eff = _run(pol, work, lam, sim_config(cfg, seed), args)
    ck = pol.config if isinstance(pol, _tr.Checkpointed) else None
    out = Output(args.out, cfg, seed)
    out.row(["policy", "dist", "lambda", "rho_effective", "levels", "delta", "gamma",
             "mean_T", "ci", "mean_N", "utilization", "seed", "truncated"])
    out.row([_pol.describe(pol), _workload_name(cfg["workload"]), lam, rho_eff, _levels_of(pol),
             ck.delta if ck else None, ck.gamma if ck else None, res.mean_T, res.ci_half_width,
             res.mean_N, res.measured_utilization, seed, res.truncated])
    out.close()
    return EXIT_OK


def _workload_name(w: dict) -> str:
    if "table1" in w:
        return w["table1"]
    if "dist" in w:
        return w["dist"]["kind"]
    if "csv" in w:
        return "csv"
    if "point_mass" in w:
        return "point_mass"
    return f"scenario{w['scenario']}-{w.get('setting', _scn.OBLIVIOUS)}"


def cmd_compare(args) -> int:
    cfg = read_config(args.config, "compare", args.seed)
    seed = cfg.get("seed", 0)
    work, overall, _, _ = build_workload(cfg["workload"])
    pols = [build_policy(p, work, overall) for p in cfg["policies"]]
    simcfg = sim_config(cfg, seed)
    out = Output(args.out, cfg, seed, {"reference_policy": _pol.describe(pols[0])})
    out.row(["rho", "policy", "lambda", "stable", "mean_T", "ci", "mean_N", "utilization",
             "ratio_to_reference"])
    for rho in cfg.get("loads", DEFAULT_LOADS):
        lam = rho / _dist.mean(overall)
        ref = None
        for pol in pols:
            res, _ = _run(pol, work, lam, simcfg, args, allow_flag=True)
            if res is None:
                out.row([rho, _pol.describe(pol), lam, False, None, None, None, None, None])
                continue
            if ref is None and pol is pols[0]:
                ref = res.mean_T
            ratio = res.mean_T / ref if ref else None
            out.row([rho, _pol.describe(pol), lam, not res.truncated, res.mean_T, res.ci_half_width,
                     res.mean_N, res.measured_utilization, ratio])
    out.close()
    return EXIT_OK


def cmd_lpl_sweep(args) -> int:
    cfg = read_config(args.config, "lpl_sweep", args.seed)
    seed = cfg.get("seed", 0)
    work, overall, _, _ = build_workload(cfg["workload"])
    if not isinstance(work, _dist.DiscreteDist):
        raise ConfigError("lpl-sweep needs a workload without classes")
    inner = build_policy(cfg["inner"], work, overall)
    if isinstance(inner, (_tr.Lpl, _tr.Checkpointed)):
        raise ConfigError("lpl-sweep needs an untransformed inner policy")
    lam = arrival_rate(cfg, overall)
    if _dist.load(overall, lam) >= 1:
        raise Unstable(f"load {_dist.load(overall, lam):.4f} >= 1")
    simcfg = sim_config(cfg, seed)
    oc = cfg.get("optimizer", {})
    optcfg = _eng.SimConfig(seed=seed, jobs_per_replication=oc.get("jobs_per_replication", 50_000),
                            replications=oc.get("replications", 1),
                            warmup_fraction=simcfg.warmup_fraction, tie_mode=simcfg.tie_mode)
    levels = cfg.get("levels", list(range(1, 8)))
    strategies = cfg.get("strategies", ["heuristic", "optimized"])

    base = _eng.simulate(inner, work, lam, simcfg, workers=args.jobs)
    out = Output(args.out, cfg, seed, {"inner": inner.name, "rho": _dist.load(overall, lam)})
    out.row(["levels", "strategy", "cutoffs", "mean_T", "ci", "mean_N", "ratio_to_baseline"])
    out.row([None, "baseline", None, base.mean_T, base.ci_half_width, base.mean_N, 1.0])
    for strategy in strategies:
        prev = ()
        for n in sorted(levels):
            try:
                if strategy == "heuristic":
                    cv = _tr.heuristic_cutoffs(overall, n)
                else:
                    warm = []
                    if len(prev) == n - 2:
                        top = max(overall.max_size, prev[-1] if prev else 0.0) * 2
                        warm.append(tuple(prev) + (top,))
                    cv = _tr.optimize_cutoffs(overall, lam, inner, n, budget=oc.get("budget", 200),
                                              seed=seed, cfg=optcfg, initial=warm)
                    prev = cv.cutoffs
            except _pol.PolicyError as e:
                raise ConfigError(str(e)) from None
            res = _eng.simulate(_tr.lpl(inner, cv), work, lam, simcfg, workers=args.jobs)
            out.row([n, strategy, cv.to_json(), res.mean_T, res.ci_half_width, res.mean_N,
                     res.mean_T / base.mean_T])
    out.close()
    return EXIT_OK


def checkpoint_grid(d, lam, gamma, points=20):
    """Log-spaced gaps from just above the stability bound to past the right wall."""
    rho = _dist.load(d, lam)
    lo = 1.05 * _orc.delta_safe(gamma, rho) if gamma > 0 else d.step
    hi = 10 * _orc.right_wall(rho, _dist.mean(d))
    return np.geomspace(lo, hi, points)


def cmd_checkpoint_sweep(args) -> int:
    cfg = read_config(args.config, "checkpoint_sweep", args.seed)
    seed = cfg.get("seed", 0)
    work, overall, _, _ = build_workload(cfg["workload"])
    inner = build_policy(cfg["policy"], work, overall)
    if isinstance(inner, _tr.Checkpointed):
        raise ConfigError("checkpoint-sweep takes an uncheckpointed policy")
    lam = arrival_rate(cfg, overall)
    rho = _dist.load(overall, lam)
    if not 0 < rho < 1:
        raise Unstable(f"load {rho:.4f} is outside (0, 1)")
    if "gamma" in cfg and "gamma_fraction" in cfg:
        raise ConfigError("give either gamma or gamma_fraction, not both")
    es = _dist.mean(overall)
    gamma = cfg["gamma"] if "gamma" in cfg else cfg.get("gamma_fraction", 0.01) * es
    deltas = cfg.get("deltas") or list(checkpoint_grid(overall, lam, gamma, cfg.get("points", 20)))
    simcfg = sim_config(cfg, seed)
    extra = {"rho": rho, "gamma": gamma, "mean_size": es,
             "delta_safe": _orc.delta_safe(gamma, rho), "delta_rot": _orc.delta_rot(rho, gamma, es),
             "right_wall": _orc.right_wall(rho, es)}
    out = Output(args.out, cfg, seed, extra)
    out.row(["delta", "rho_prime", "stable", "mean_T", "ci", "mean_N", "utilization", "truncated"])
    for delta in deltas:
        pol = _tr.checkpointify(inner, _tr.CheckpointConfig(float(delta), gamma))
        res, rp = _run(pol, work, lam, simcfg, args, allow_flag=True)
        if res is None:
            out.row([float(delta), rp, False, None, None, None, None, None])
        else:
            out.row([float(delta), rp, rp < 1, res.mean_T, res.ci_half_width, res.mean_N,
                     res.measured_utilization, res.truncated])
    out.close()
    return EXIT_OK


def cmd_scenarios(args) -> int:
    cfg = read_config(args.config, "scenarios", args.seed)
    for key in ("count", "rho"):
        v = getattr(args, key)
        if v is not None:
            cfg[key] = v
    if args.policies:
        cfg["policies"] = args.policies.split(",")
    if args.systems:
        cfg["settings"] = args.systems.split(",")
    try:
        jsonschema.validate(cfg, load_schema("scenarios"))
    except jsonschema.ValidationError as e:
        raise ConfigError(f"invalid options: {e.message}") from None
    seed = cfg.get("seed", 0)
    first = cfg.get("first_scenario", 0)
    scenarios = [_scn.random_scenario(first + i) for i in range(cfg.get("count", 100))]
    rows, summary = _scn.worst_case_table(scenarios, cfg.get("rho", 0.95), cfg.get("policies"),
                                          cfg.get("settings"), sim_config(cfg, seed), workers=args.jobs)
    out = Output(args.out, cfg, seed)
    out.row(["scenario", "setting", "policy", "lambda", "mean_T", "ci", "mean_N", "ratio_to_gittins"])
    for r in rows:
        out.row([r["scenario"], r["setting"], r["policy"], r["lam"], r["mean_T"], r["ci"],
                 r["mean_N"], r["ratio"]])
    out.close()
    spath = _summary_path(args.out)
    sout = Output(spath, cfg, seed)
    sout.row(["setting", "policy", "max_ratio_to_gittins"])
    for (setting, name), v in summary.items():
        sout.row([setting, name, v])
    sout.close()
    return EXIT_OK


def _summary_path(out):
    if out in (None, "-"):
        return None
    stem, dot, ext = out.rpartition(".")
    return f"{stem}.summary.{ext}" if dot else f"{out}.summary"


# --- entry -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output CSV (default stdout)")
    common.add_argument("--override-unstable", action="store_true",
                        help="simulate unstable loads up to a time horizon instead of failing")
    common.add_argument("--jobs", type=int, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="ranksim", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"ranksim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    dist_p = sub.add_parser("dist", help="distribution utilities")
    dsub = dist_p.add_subparsers(dest="action", required=True)
    dsub.add_parser("info", parents=[common], help="moments of a workload").set_defaults(func=cmd_dist_info)

    rank_p = sub.add_parser("rank", help="rank curve utilities")
    rsub = rank_p.add_subparsers(dest="action", required=True)
    rsub.add_parser("dump", parents=[common], help="sample a rank curve").set_defaults(func=cmd_rank_dump)

    sub.add_parser("simulate", parents=[common], help="one simulation").set_defaults(func=cmd_simulate)
    sub.add_parser("compare", parents=[common], help="policies over a load grid").set_defaults(func=cmd_compare)
    sub.add_parser("lpl-sweep", parents=[common], help="LPL levels sweep").set_defaults(func=cmd_lpl_sweep)
    sub.add_parser("checkpoint-sweep", parents=[common],
                   help="checkpoint gap sweep").set_defaults(func=cmd_checkpoint_sweep)

    scn_p = sub.add_parser("scenarios", help="random four-application scenarios")
    ssub = scn_p.add_subparsers(dest="action", required=True)
    run_p = ssub.add_parser("run", parents=[common], help="worst-case ratio study")
    run_p.add_argument("--count", type=int)
    run_p.add_argument("--rho", type=float)
    run_p.add_argument("--policies", help="comma-separated policy names")
    run_p.add_argument("--systems", help="comma-separated settings (oblivious,1122,1212,1221)")
    run_p.set_defaults(func=cmd_scenarios)
    return ap


def run(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (Unstable, _eng.UnstableError) as e:
        print(f"unstable: {e} (use --override-unstable to run anyway)", file=sys.stderr)
        return EXIT_UNSTABLE
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
