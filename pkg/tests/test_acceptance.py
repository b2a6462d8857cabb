"""Acceptance gate: one test per criterion, each with its tolerance and time limit."""

import math
import time

import numpy as np

import expected as E
from qbalab import adversary as adv
from qbalab import cli, props, scenarios, sched
from qbalab.normalform import quantize
from qbalab.protocols import coin, savss, voting


class Clock:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def test_criterion_01_measurement_commutation(verdict):
    with Clock() as c:
        perm = props.permutation_commutation(200, seed=0)
        proj = props.projector_commutation(200, seed=0)
    dev = max(perm.max_prob_deviation, proj.max_prob_deviation)
    fid = min(perm.min_fidelity, proj.min_fidelity)
    ok = (perm.instances == proj.instances == 200 and perm.failures == proj.failures == 0
          and dev <= 1e-9 and fid >= 1 - 1e-9 and c.seconds < 10)
    assert verdict(1, ok, f"max |dp| = {dev:.2e}, min fidelity = {fid:.12f}, {c.seconds:.2f} s")


def test_criterion_02_transcript_product(verdict):
    with Clock() as c:
        suite = props.transcript_suite(50, seed=0)
    ok = suite.runs == 50 and suite.all_rank_one and suite.max_rank == 1 \
        and suite.control_rank >= 2 and c.seconds < 10
    assert verdict(2, ok, f"max rank {suite.max_rank} over 50 runs, control rank "
                          f"{suite.control_rank}, {c.seconds:.2f} s")


FAILSTOP = ("failstop-leadercrash-n3", "failstop-crash-partial-n3", "failstop-adaptive-n3")
BYZANTINE = ("byz-flip-n4", "byz-hadamard-n4")


def _reduce(name):
    sc = scenarios.get(name)
    q, policy, inputs = sc.build()
    with Clock() as c:
        rep = adv.check_reduction(q, policy, inputs)
    return sc, rep, c.seconds


def test_criterion_03_failstop_reduction(verdict):
    parts, ok = [], True
    for name in FAILSTOP:
        sc, rep, secs = _reduce(name)
        ok = ok and sc.n == 3 and sc.t == 1 and rep.kind == "failstop" and rep.tv <= 1e-9 and secs < 60
        parts.append(f"{name} TV={rep.tv:.1e} ({secs:.1f} s)")
    assert verdict(3, ok, "; ".join(parts))


def test_criterion_04_byzantine_reduction(verdict):
    parts, ok = [], True
    for name in BYZANTINE:
        sc, rep, secs = _reduce(name)
        ok = (ok and sc.n == 4 and sc.t == 1 and rep.kind == "byzantine" and rep.tv <= 1e-9
              and rep.state_deviation <= 1e-9 and secs < 300)
        parts.append(f"{name} TV={rep.tv:.1e} dev={rep.state_deviation:.1e} ({secs:.1f} s)")
    assert verdict(4, ok, "; ".join(parts))


def test_criterion_05_coin_bounds(verdict):
    with Clock() as c:
        dist = sched.run_async(coin.QuantumCoinProcess(4, 1), [0] * 4, sched.AsyncSchedule(4, 1))
        p1 = coin.coin_probabilities(dist, 4)["all1"]
        family = coin.core_set_adversary_min(4, 1)
    floor = 1 - math.exp(-0.5)
    ok = (p1 >= 0.25 and abs(p1 - 81 / 256) <= 1e-9 and family["min"] >= floor - 1e-12
          and c.seconds < 300)
    assert verdict(5, ok, f"P[all1] = {p1:.12f} (81/256 = {81 / 256:.12f}), core-set min "
                          f"P[all0] = {family['min']:.6f} >= {floor:.6f}, {c.seconds:.2f} s")


def test_criterion_06_core_property(verdict):
    parts, ok = [], True
    for n in (3, 4):
        with Clock() as c:
            rep = coin.core_threshold_enumeration(n)
        ok = ok and rep.runs > 0 and rep.violations == 0 and c.seconds < 60
        parts.append(f"n={n}: {rep.runs} runs, {rep.violations} violations, min core "
                     f"{rep.min_core} ({c.seconds:.2f} s)")
    assert verdict(6, ok, "; ".join(parts))


def test_criterion_07_savss(verdict):
    with Clock() as c:
        (honest,) = savss.quantum_savss_share(4, 1, 5)
        secrets = savss.quantum_savss_reconstruct(honest).secret_distribution()
        uniform = max(abs(secrets.get(v, 0.0) - 0.2) for v in range(5))
        single = max(savss.savss_privacy_audit(honest, (i,)).max_tv for i in range(4))
        control = savss.savss_privacy_audit(honest, (0, 1)).max_tv
        skewed = savss.quantum_savss_share(4, 1, 5, asymmetric={(1, 0): 1})
        caught = all(len(s.nonzero_r()) >= 1 for s in skewed)
    ok = (uniform <= 1e-9 and single <= 1e-12 and abs(control - 1) <= 1e-9 and caught
          and c.seconds < 300)
    assert verdict(7, ok, f"secret deviation {uniform:.1e}, single-player TV {single:.1e}, "
                          f"two-player TV {control:.3f}, asymmetric dealer caught on "
                          f"{sum(bool(s.nonzero_r()) for s in skewed)}/{len(skewed)} branches, "
                          f"{c.seconds:.2f} s")


def test_criterion_08_byzantine_agreement(verdict):
    trials = 10 ** 4
    parts, ok = [], True
    for n in (3, 4, 5):
        t = (n - 1) // 2
        sampler = voting.QuantumCoinSampler(n, t)
        viol = nonterm = 0
        phases = []
        with Clock() as c:
            for seed in range(trials):
                rng = np.random.default_rng([n, seed])
                inputs = [int(x) for x in rng.integers(0, 2, size=n)]
                plan = voting.random_crash_plan(n, t, rng)
                r = voting.phase_voting_ba(inputs, t, coin=sampler, crashes=plan, seed=seed)
                viol += (not r.agreement) + (not r.validity)
                nonterm += not r.terminated
                phases.append(r.phases)
        mean = float(np.mean(phases))
        ok = ok and viol == 0 and nonterm == 0 and mean <= 5 and c.seconds < 300
        parts.append(f"n={n}: {viol} violations, {nonterm} unterminated, mean phases "
                     f"{mean:.3f} ({c.seconds:.1f} s)")
    assert verdict(8, ok, "; ".join(parts))


def test_criterion_09_quantizer_vs_hand_coin(verdict):
    with Clock() as c:
        s = sched.AsyncSchedule(3, 1)
        dq = sched.run_async(sched.NormalFormProcess(quantize(coin.classical_common_coin(3)), "quantum"),
                             [0] * 3, s)
        dh = sched.run_async(coin.QuantumCoinProcess(3), [0] * 3, s)
        tv = sched.tv_distance(dq, dh)
    ok = tv <= 1e-9 and c.seconds < 60
    assert verdict(9, ok, f"TV = {tv:.1e} over {len(dh)} traces, {c.seconds:.2f} s")


def test_criterion_10_trace_determinism(verdict, tmp_path):
    runs = [
        ["run", "--protocol", "early-stop", "--mode", "sample", "--trials", "30"],
        ["run", "--protocol", "ba", "--n", "4", "--adversary", "crash", "--trials", "30"],
        ["run", "--protocol", "q-coin", "--n", "3"],
        ["check-reduction", "--scenario", "failstop-adaptive-n3"],
    ]
    same = 0
    for k, args in enumerate(runs):
        blobs = []
        for rep in range(2):
            out = tmp_path / f"{k}-{rep}"
            cli.main(args + ["--seed", "9", "--out", str(out)])
            blobs.append((out / "traces.jsonl").read_bytes())
        same += blobs[0] == blobs[1] and len(blobs[0]) > 0
    assert verdict(10, same == len(runs), f"{same}/{len(runs)} commands byte-identical on rerun")
