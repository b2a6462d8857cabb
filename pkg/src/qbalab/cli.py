"""Command-line harness.

Exit codes: 0 pass, 1 property failure, 2 usage or config error,
3 enumeration budget exceeded.
"""

from __future__ import annotations

import argparse
import configparser
import math
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from pathlib import Path

import numpy as np

from . import adversary, props, report, scenarios, sched
from .normalform import BOTTOM, quantize
from .protocols import bracha, coin, savss, voting

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2, 3

SYNC_PROTOCOLS = ("leader-coin", "early-stop", "relay-coin", "echo-all")
RUN_PROTOCOLS = SYNC_PROTOCOLS + ("q-coin", "c-coin", "get-core", "savss", "bracha", "ba")

DEFAULTS = {
    "seed": 0, "trials": 100, "cutoff": 0.0, "branch_budget": sched.DEFAULT_BUDGET, "out": "qbalab-out",
    "workers": 1, "protocol": None, "n": None, "t": None, "p": 5, "mode": "enumerate",
    "audit": None, "scenario": None, "scenario_file": None, "bias": None, "inputs": None,
    "allow_t_override": False, "adversary": None, "coin": "quantum", "tol": 1e-9,
    "instances": 200, "runs": 50,
}
_TYPES = {"seed": int, "trials": int, "cutoff": float, "branch_budget": int, "workers": int,
          "n": int, "t": int, "p": int, "bias": float, "tol": float, "instances": int, "runs": int,
          "allow_t_override": bool}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration


def _coerce(key: str, value: str):
    kind = _TYPES.get(key)
    if kind is bool:
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(value)
    return kind(value) if kind else value


def load_config(path: str) -> dict:
    """Flat ``key = value`` file; keys mirror the long flags."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string("[qbalab]\n" + text, source=path)
    except configparser.Error as exc:
        raise UsageError(f"config {path}: {exc}".replace("line ", "line ~")) from exc
    where = {}
    for k, ln in enumerate(text.splitlines(), start=1):
        if "=" in ln and not ln.lstrip().startswith(("#", ";")):
            where[ln.split("=", 1)[0].strip().replace("-", "_").lower()] = k
    out = {}
    for key, value in cp["qbalab"].items():
        norm = key.replace("-", "_")
        line = where.get(norm, "?")
        if norm not in DEFAULTS:
            raise UsageError(f"{path}:{line}: unknown key {key!r}")
        try:
            out[norm] = _coerce(norm, value)
        except ValueError:
            raise UsageError(f"{path}:{line}: bad value {value!r} for {key!r}") from None
    return out


def effective_config(args: argparse.Namespace, command: str) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(load_config(args.config))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None and val is not False:
            cfg[key] = val
    if cfg["trials"] < 0 or cfg["workers"] < 1 or cfg["branch_budget"] < 1:
        raise UsageError("trials must be >= 0, workers and branch-budget >= 1")
    cfg["command"] = command
    return cfg


def _inputs(cfg: dict, n: int) -> list[int]:
    raw = cfg.get("inputs")
    if raw in (None, ""):
        return [0] * n
    try:
        vals = [int(x) for x in str(raw).split(",")]
    except ValueError:
        raise UsageError(f"inputs must be comma separated bits, got {raw!r}") from None
    if len(vals) != n or any(v not in (0, 1) for v in vals):
        raise UsageError(f"need {n} input bits, got {raw!r}")
    return vals


def _resilience(protocol: str, n: int) -> int:
    if protocol in ("relay-coin", "bracha", "savss"):
        return (n - 1) // 3
    return (n - 1) // 2


def _check_t(cfg: dict, protocol: str, n: int) -> int:
    t = cfg["t"] if cfg["t"] is not None else _resilience(protocol, n)
    limit = _resilience(protocol, n)
    if t < 0:
        raise UsageError("t must be nonnegative")
    if t > limit and not cfg["allow_t_override"]:
        raise UsageError(f"t={t} exceeds the resilience of {protocol} at n={n} (max {limit}); "
                         "pass --allow-t-override to run anyway")
    return t


# ---------------------------------------------------------------------------
# output helpers


class Artifacts:
    def __init__(self, cfg: dict, command: str):
        self.cfg = cfg
        self.out = Path(cfg["out"])
        clean = {k: v for k, v in cfg.items() if k not in ("out", "workers")}
        self.header = report.provenance(command, clean, cfg["seed"])
        self.written: list[Path] = []

    def traces(self, records, name="traces.jsonl"):
        self.written.append(report.write_jsonl(self.out / name, self.header, records))

    def table(self, columns, rows, name="summary.tsv"):
        rows = list(rows)
        self.written.append(report.write_tsv(self.out / name, self.header, columns, rows))
        print(report.text_table(columns, rows))

    def figure(self, fn, name, *a, **kw):
        self.written.append(fn(self.out / name, self.header, *a, **kw))

    def finish(self, ok: bool) -> int:
        print("effective config: " + report._dumps(self.header["config"]))
        for p in self.written:
            print(f"wrote {p}")
        print("PASS" if ok else "FAIL")
        return EXIT_OK if ok else EXIT_FAIL


def _trial_map(cfg: dict, fn, count: int) -> list:
    seeds = [(cfg["seed"], k) for k in range(count)]
    if cfg["workers"] > 1:
        with ThreadPoolExecutor(max_workers=cfg["workers"]) as pool:
            return list(pool.map(fn, seeds))
    return [fn(s) for s in seeds]


def _final_decisions(trace: sched.ExecutionTrace) -> dict:
    out = {}
    for rec in trace.rounds:
        if trace.kind == "async":
            if rec[4] != BOTTOM:
                out.setdefault(rec[1], rec[4])
            continue
        for i, d in enumerate(rec[-1]):
            if d is not None and d != BOTTOM:
                out.setdefault(i, d)
    return out


# ---------------------------------------------------------------------------
# run


def _run_sync(cfg: dict, art: Artifacts) -> bool:
    protocol = cfg["protocol"]
    n = cfg["n"] or (4 if protocol == "relay-coin" else 3)
    t = _check_t(cfg, protocol, n)
    inputs = _inputs(cfg, n)
    q = quantize(scenarios.PROTOCOLS[protocol](n))
    policy = None
    if cfg["scenario"]:
        sc = _scenario(cfg)
        if sc.protocol != protocol or sc.n != n:
            raise UsageError(f"scenario {sc.name} runs {sc.protocol} at n={sc.n}")
        _, policy, _ = sc.build()
    budget = cfg["branch_budget"]
    if cfg["mode"] == "enumerate":
        dist = sched.run_sync(q, policy, inputs, cutoff=cfg["cutoff"], budget=budget)
        items = dist.items()
        art.traces(tr.to_record(p) for tr, p in items)
    else:
        def one(seed):
            return sched.run_sync(q, policy, inputs, mode="sample", seed=int(np.random.SeedSequence(
                list(seed)).generate_state(1)[0]), budget=budget)
        traces = _trial_map(cfg, one, cfg["trials"])
        items = [(tr, 1.0 / max(len(traces), 1)) for tr in traces]
        art.traces({"trial": k, **tr.to_record()} for k, (tr, _p) in enumerate(items))
    agree = sum(p for tr, p in items if len(set(_final_decisions(tr).values())) <= 1)
    rounds = sum(p * sched.round_count(tr) for tr, p in items)
    msgs = sum(p * sched.message_count(tr) for tr, p in items)
    hist: dict = {}
    for tr, p in items:
        key = sched.message_count(tr)
        hist[key] = hist.get(key, 0.0) + p
    art.table(["protocol", "n", "t", "mode", "traces", "p_agree", "mean_rounds", "mean_messages"],
              [[protocol, n, t, cfg["mode"], len(items), agree, rounds, msgs]])
    art.figure(report.bar_figure, "messages.png", [str(k) for k in sorted(hist)],
               {"probability": [hist[k] for k in sorted(hist)]}, f"{protocol}: message count",
               "probability")
    return True


def _run_coin(cfg: dict, art: Artifacts) -> bool:
    n = cfg["n"] or 4
    t = _check_t(cfg, "coin", n)
    bias = cfg["bias"]
    if cfg["mode"] != "enumerate":
        raise UsageError("coin runs are exact; use --mode enumerate")
    schedule = sched.AsyncSchedule(n, t)
    if cfg["protocol"] == "q-coin":
        process = coin.QuantumCoinProcess(n, t, bias)
    else:
        process = sched.NormalFormProcess(quantize(coin.classical_common_coin(n, t, bias)), "classical")
    dist = sched.run_async(process, [0] * n, schedule, cutoff=cfg["cutoff"], budget=cfg["branch_budget"])
    art.traces(tr.to_record(p) for tr, p in dist.items())
    pr = coin.coin_probabilities(dist, n)
    p0 = 1.0 / n if bias is None else bias
    toss = (1 - p0) ** n
    cols = ["protocol", "n", "t", "P_all1", "P_all0", "P_all_toss1", "bound_all1"]
    row = [cfg["protocol"], n, t, pr["all1"], pr["all0"], toss, 0.25]
    ok = pr["all1"] >= 0.25 - 1e-9 if bias is None else True
    series = {"no adversary": [pr["all1"], pr["all0"]]}
    if cfg["adversary"] == "core-set":
        worst = coin.core_set_adversary_min(n, t, bias)
        cols += ["core_set_min_all0", "bound_all0"]
        row += [worst["min"], coin.lower_bound_all_zero()]
        ok = ok and (bias is not None or worst["min"] >= coin.lower_bound_all_zero())
        series["core-set adversary"] = [float("nan"), worst["min"]]
    elif cfg["adversary"]:
        raise UsageError(f"unknown coin adversary {cfg['adversary']!r} (available: core-set)")
    art.table(cols, [row])
    art.figure(report.bar_figure, "coin.png", ["all 1", "all 0"], series,
               f"common coin, n={n}", "probability", reference=0.25)
    return ok


def _run_get_core(cfg: dict, art: Artifacts) -> bool:
    n = cfg["n"] or 4
    t = _check_t(cfg, "coin", n)
    rep = coin.core_threshold_enumeration(n, t)
    art.traces([{"n": n, "t": t, "runs": rep.runs, "violations": rep.violations,
                 "min_core": rep.min_core}])
    art.table(["n", "t", "run_classes", "violations", "min_core", "required"],
              [[n, t, rep.runs, rep.violations, rep.min_core, n - t]])
    return rep.violations == 0


def _run_savss(cfg: dict, art: Artifacts) -> bool:
    n = cfg["n"] or 4
    t = _check_t(cfg, "savss", n)
    p = cfg["p"]
    try:
        sessions = savss.quantum_savss_share(n, t, p, budget=cfg["branch_budget"])
    except savss.FieldError as exc:
        raise UsageError(str(exc)) from None
    ok = True
    records, rows = [], []
    for s in sessions:
        records.append({"probability": s.probability, "ok_edges": sorted(s.ok_edges),
                        "V": s.V, "nonzero_R": s.nonzero_r(), "notes": s.notes})
    s = sessions[0]
    rec = savss.quantum_savss_reconstruct(s)
    dist = rec.secret_distribution()
    for b in rec.branches:
        records.append({"probability": b.probability, "secret": b.secret,
                        "outputs": {str(k): v for k, v in sorted(b.outputs.items())}})
    uniform = all(abs(dist.get(v, 0.0) - 1.0 / p) <= 1e-9 for v in range(p))
    ok = ok and uniform and rec.all_correct
    art.traces(records)
    if cfg["audit"] == "privacy":
        for size in range(0, t + 2):
            for sub in combinations(range(n), size):
                pr = savss.savss_privacy_audit(s, sub)
                expect = 0.0 if size <= t else 1.0
                good = abs(pr.max_tv - expect) <= (1e-12 if size <= t else 1e-9)
                ok = ok and good
                rows.append(["-".join(map(str, sub)) or "none", size, pr.max_tv, expect,
                             "ok" if good else "MISMATCH"])
        art.table(["subset", "size", "max_tv", "expected", "status"], rows, name="privacy.tsv")
    elif cfg["audit"]:
        raise UsageError(f"unknown audit {cfg['audit']!r} (available: privacy)")
    art.table(["secret", "probability"], [[v, dist.get(v, 0.0)] for v in range(p)])
    art.figure(report.bar_figure, "secret.png", [str(v) for v in range(p)],
               {"P[secret]": [dist.get(v, 0.0) for v in range(p)]},
               f"reconstructed secret over F_{p}", "probability", reference=1.0 / p)
    return ok


def _run_bracha(cfg: dict, art: Artifacts) -> bool:
    n = cfg["n"] or 4
    t = _check_t(cfg, "bracha", n)
    liar = cfg["adversary"] == "equivocate"
    if cfg["adversary"] not in (None, "equivocate"):
        raise UsageError(f"unknown bracha adversary {cfg['adversary']!r} (available: equivocate)")

    def one(seed):
        rng = np.random.default_rng(list(seed))
        value = int(rng.integers(0, 2))
        liars = {}
        if liar and t > 0:
            liars = {0: bracha.Liar({r: int(rng.integers(0, 2)) for r in range(n)})}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return bracha.bracha_broadcast(n, t, 0, value, liars=liars, seed=int(rng.integers(2 ** 31)))

    results = _trial_map(cfg, one, cfg["trials"])
    art.traces({"trial": k, "value": r.value, "deliveries": {str(i): v for i, v in sorted(r.deliveries.items())}}
               for k, r in enumerate(results))
    bad = sum(1 for r in results if not (r.consistent and r.total and r.valid))
    delivered = sum(1 for r in results if r.deliveries)
    art.table(["n", "t", "trials", "equivocating_sender", "delivered_runs", "violations", "guarantee"],
              [[n, t, len(results), liar, delivered, bad, bracha.resilient(n, t)]])
    if not bracha.resilient(n, t):
        print("warning: 3t < n fails; Bracha guarantees are not claimed")
        return True
    return bad == 0


def _run_ba(cfg: dict, art: Artifacts) -> bool:
    n = cfg["n"] or 3
    t = _check_t(cfg, "ba", n)
    if 2 * t >= n:
        raise UsageError(f"phase voting needs t < n/2 even with an override (n={n}, t={t})")
    if cfg["coin"] not in ("quantum", "local"):
        raise UsageError("coin must be quantum or local")

    def one(seed):
        rng = np.random.default_rng(list(seed))
        inputs = _inputs(cfg, n) if cfg["inputs"] else [int(x) for x in rng.integers(0, 2, size=n)]
        crashes = voting.random_crash_plan(n, t, rng) if cfg["adversary"] == "crash" else []
        c = voting.QuantumCoinSampler(n, t, cfg["bias"]) if cfg["coin"] == "quantum" else voting.LocalCoinSampler(n)
        return voting.phase_voting_ba(inputs, t, coin=c, crashes=crashes,
                                      seed=int(rng.integers(2 ** 31)))

    if cfg["adversary"] not in (None, "crash"):
        raise UsageError(f"unknown BA adversary {cfg['adversary']!r} (available: crash)")
    results = _trial_map(cfg, one, cfg["trials"])
    art.traces({"trial": k, "inputs": list(r.inputs), "crashed": sorted(r.crashed),
                "decisions": {str(i): v for i, v in sorted(r.decisions.items())}, "phases": r.phases}
               for k, r in enumerate(results))
    agree = sum(1 for r in results if not r.agreement)
    valid = sum(1 for r in results if not r.validity)
    term = sum(1 for r in results if not r.terminated)
    mean = float(np.mean([r.phases for r in results])) if results else 0.0
    hist: dict = {}
    for r in results:
        hist[r.phases] = hist.get(r.phases, 0) + 1
    art.table(["n", "t", "coin", "trials", "agreement_violations", "validity_violations",
               "non_terminated", "mean_phases", "max_phases"],
              [[n, t, cfg["coin"], len(results), agree, valid, term, mean,
                max((r.phases for r in results), default=0)]])
    art.figure(report.histogram_figure, "phases.png", hist, f"phase-voting BA, n={n}", "phases")
    return agree == valid == term == 0


def cmd_run(cfg: dict) -> int:
    protocol = cfg["protocol"]
    if not protocol:
        raise UsageError("missing protocol name (--protocol); choose from " + ", ".join(RUN_PROTOCOLS))
    if protocol not in RUN_PROTOCOLS:
        raise UsageError(f"unknown protocol {protocol!r}; choose from " + ", ".join(RUN_PROTOCOLS))
    if cfg["mode"] not in ("enumerate", "sample"):
        raise UsageError("mode must be enumerate or sample")
    art = Artifacts(cfg, "run")
    if protocol in SYNC_PROTOCOLS:
        ok = _run_sync(cfg, art)
    elif protocol in ("q-coin", "c-coin"):
        ok = _run_coin(cfg, art)
    elif protocol == "get-core":
        ok = _run_get_core(cfg, art)
    elif protocol == "savss":
        ok = _run_savss(cfg, art)
    elif protocol == "bracha":
        ok = _run_bracha(cfg, art)
    else:
        ok = _run_ba(cfg, art)
    return art.finish(ok)


# ---------------------------------------------------------------------------
# check-reduction / props / list-scenarios


def _scenario(cfg: dict) -> scenarios.Scenario:
    if cfg.get("scenario_file"):
        try:
            return scenarios.load_scenario_file(cfg["scenario_file"])
        except (OSError, scenarios.ScenarioError) as exc:
            raise UsageError(str(exc)) from None
    name = cfg.get("scenario")
    if not name:
        raise UsageError("missing --scenario; available: " + ", ".join(scenarios.names()))
    try:
        return scenarios.get(name)
    except KeyError:
        raise UsageError(f"unknown scenario {name!r}; available: " + ", ".join(scenarios.names())) from None


def cmd_check_reduction(cfg: dict) -> int:
    sc = _scenario(cfg)
    q, policy, inputs = sc.build()
    if cfg["inputs"]:
        inputs = _inputs(cfg, sc.n)
    art = Artifacts(cfg, "check-reduction")
    started = time.perf_counter()
    rep = adversary.check_reduction(q, policy, inputs, cutoff=cfg["cutoff"], budget=cfg["branch_budget"])
    elapsed = time.perf_counter() - started
    tol = cfg["tol"]
    art.traces({"trace": tr, "p_quantum": pq, "p_classical": pc} for tr, pq, pc in rep.rows)
    ok = rep.passed(tol)
    art.table(["scenario", "kind", "n", "t", "traces", "tv", "state_deviation", "tol", "result"],
              [[sc.name, rep.kind, sc.n, sc.t, len(rep.rows), rep.tv, rep.state_deviation, tol,
                "PASS" if ok else "FAIL"]])
    art.figure(report.reduction_figure, "reduction.png", rep.rows, sc.name)
    print(f"TV = {rep.tv:.3e}  state deviation = {rep.state_deviation:.3e}  ({elapsed:.2f} s)")
    return art.finish(ok)


def cmd_props(cfg: dict) -> int:
    art = Artifacts(cfg, "props")
    count = cfg["instances"]
    if count == 0:
        print("warning: 0 instances requested; the suite passes vacuously")
    perm = props.permutation_commutation(count, cfg["seed"])
    proj = props.projector_commutation(count, cfg["seed"])
    tr = props.transcript_suite(cfg["runs"], cfg["seed"])
    tol = cfg["tol"]
    rows = [[perm.name, perm.instances, perm.max_prob_deviation, perm.min_fidelity, perm.failures,
             "PASS" if perm.passed(tol) else "FAIL"],
            [proj.name, proj.instances, proj.max_prob_deviation, proj.min_fidelity, proj.failures,
             "PASS" if proj.passed(tol) else "FAIL"]]
    art.table(["suite", "instances", "max_prob_deviation", "min_fidelity", "failures", "result"], rows)
    art.table(["runs", "max_rank_with_transcript", "control_rank_without_copy", "result"],
              [[tr.runs, tr.max_rank, tr.control_rank, "PASS" if tr.passed() else "FAIL"]],
              name="transcript.tsv")
    art.traces([{"suite": r[0], "instances": r[1], "max_prob_deviation": r[2], "min_fidelity": r[3]}
                for r in rows] + [{"suite": "transcript", "runs": tr.runs, "max_rank": tr.max_rank,
                                   "control_rank": tr.control_rank}])
    art.figure(report.bar_figure, "props.png", ["permutation", "projector"],
               {"max |dp|": [perm.max_prob_deviation, proj.max_prob_deviation],
                "1 - min fidelity": [1 - perm.min_fidelity, 1 - proj.min_fidelity]},
               "measurement commutation", "deviation", reference=tol)
    return art.finish(perm.passed(tol) and proj.passed(tol) and (tr.passed() or cfg["runs"] == 0))


def cmd_list_scenarios(_cfg: dict) -> int:
    for name in scenarios.names():
        sc = scenarios.get(name)
        print(f"{name:28s} {sc.kind:10s} n={sc.n} t={sc.t}  {sc.description}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int, help="sampled trials")
    p.add_argument("--cutoff", type=float, help="drop branches below this probability")
    p.add_argument("--branch-budget", type=int, dest="branch_budget")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="threads for sampled trials")
    p.add_argument("--tol", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qbalab", description="Byzantine agreement simulation lab")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a protocol and write traces, tables and figures")
    _common(run)
    run.add_argument("--protocol", choices=None, help="one of: " + ", ".join(RUN_PROTOCOLS))
    run.add_argument("--n", type=int)
    run.add_argument("--t", type=int)
    run.add_argument("--p", type=int, help="field size for savss")
    run.add_argument("--mode", choices=("enumerate", "sample"))
    run.add_argument("--audit", help="savss: privacy")
    run.add_argument("--scenario", help="adversary scenario for sync protocols")
    run.add_argument("--adversary", help="coin: core-set; bracha: equivocate; ba: crash")
    run.add_argument("--coin", help="ba coin: quantum or local")
    run.add_argument("--bias", type=float, help="override P[coin = 0]")
    run.add_argument("--inputs", help="comma separated input bits")
    run.add_argument("--allow-t-override", action="store_true", dest="allow_t_override")
    chk = sub.add_parser("check-reduction", help="compare quantum and classical trace distributions")
    _common(chk)
    chk.add_argument("--scenario")
    chk.add_argument("--scenario-file", dest="scenario_file")
    chk.add_argument("--inputs")
    pr = sub.add_parser("props", help="measurement-commutation and transcript property suites")
    _common(pr)
    pr.add_argument("--instances", type=int)
    pr.add_argument("--runs", type=int)
    ls = sub.add_parser("list-scenarios", help="list bundled scenarios")
    ls.add_argument("--config", help=argparse.SUPPRESS)
    return ap


COMMANDS = {"run": cmd_run, "check-reduction": cmd_check_reduction, "props": cmd_props,
            "list-scenarios": cmd_list_scenarios}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = effective_config(args, args.command)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (sched.BranchBudgetExceeded, savss.SupportBudgetExceeded) as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
