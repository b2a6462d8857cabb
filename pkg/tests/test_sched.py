import math

import numpy as np
import pytest

from expected import ECHO_MESSAGES_N3
from qbalab import adversary as adv
from qbalab import normalform as nf
from qbalab import sched
from qbalab.protocols import coin, demos


def test_echo_message_and_round_count():
    dist = sched.run_sync(nf.quantize(demos.echo_all(3, rounds=2)), None, [1, 1, 0])
    (tr, p), = dist.items()
    assert p == pytest.approx(1.0)
    assert sched.message_count(tr) == ECHO_MESSAGES_N3
    assert sched.round_count(tr) == 2


def test_empty_trace_counts():
    tr = sched.ExecutionTrace(None)
    assert (sched.message_count(tr), sched.round_count(tr)) == (0, 0)


def test_crashed_players_do_not_count_messages():
    q = nf.quantize(demos.echo_all(3, rounds=2))
    dist = sched.run_sync(q, adv.CrashDeliverSubset(3, 1, target=2, at=2, deliver_to=[]), [1, 1, 0])
    (tr, _), = dist.items()
    assert sched.message_count(tr) == ECHO_MESSAGES_N3 - 3
    assert tr.rounds[1][0][2] is None


def test_distribution_sums_to_one_and_prefixes_dominate():
    q = nf.quantize(demos.leader_coin(3))
    dist = sched.run_sync(q, adv.LeaderCrash(3, 1), [0, 1, 0])
    assert dist.total() == pytest.approx(1.0, abs=1e-9)
    for tr, p in dist.items():
        for k in range(len(tr.rounds) + 1):
            assert p <= dist.prefix_probability(tr.prefix(k)) + 1e-12
        # every prefix is itself a well-formed trace
        assert tr.prefix(1).rounds == tr.rounds[:1]


def test_sample_mode_is_seed_deterministic():
    q = nf.quantize(demos.early_stop(3))
    a = [sched.run_sync(q, None, [0, 1, 1], mode="sample", seed=s) for s in range(12)]
    b = [sched.run_sync(q, None, [0, 1, 1], mode="sample", seed=s) for s in range(12)]
    assert a == b
    assert len({tr.to_json() for tr in a}) > 1


def test_enumerate_and_sample_agree():
    # 5000 samples per side keeps the unit suite fast; bounds are 3 sigma
    q = nf.quantize(demos.early_stop(3))
    inputs = [0, 1, 1]
    dist = sched.run_sync(q, None, inputs, side="classical")
    probs = dict(dist.items())
    trials = 5000
    counts = {}
    for s in range(trials):
        tr = sched.run_sync(q, None, inputs, side="classical", mode="sample", seed=s)
        counts[tr] = counts.get(tr, 0) + 1
    assert set(counts) <= set(probs)
    for tr, p in probs.items():
        if p < 0.01:
            continue
        sigma = math.sqrt(p * (1 - p) / trials)
        assert abs(counts.get(tr, 0) / trials - p) <= 3 * sigma + 1e-12


def test_branch_budget_is_explicit():
    q = nf.quantize(demos.leader_coin(3))
    with pytest.raises(sched.BranchBudgetExceeded) as err:
        sched.run_sync(q, None, [0, 0, 0], budget=1)
    assert "1" in str(err.value)


def test_cutoff_reports_pruned_mass():
    q = nf.quantize(demos.leader_coin(3))
    dist = sched.run_sync(q, None, [0, 0, 0], cutoff=0.5)
    assert dist.pruned == pytest.approx(1.0 - dist.total())
    assert dist.pruned > 0


def test_adversary_budget_is_checked():
    class Greedy(adv.FailStopPolicy):
        def decide(self, k, r_A, states):
            return frozenset({0, 1}), frozenset()

    q = nf.quantize(demos.echo_all(3))
    with pytest.raises(sched.AdversaryViolation):
        sched.run_sync(q, Greedy(1), [0, 0, 0])


def test_async_crash_budget_is_checked():
    with pytest.raises(sched.AdversaryViolation):
        sched.AsyncSchedule(3, 1, crashes={0: 0, 1: 0})


def test_ping_is_deterministic():
    q = nf.quantize(demos.ping(2))
    runs = [sched.run_async(sched.NormalFormProcess(q, "quantum"), [0, 0], sched.AsyncSchedule(2))
            for _ in range(2)]
    assert runs[0].probs == runs[1].probs
    (tr, p), = runs[0].items()
    assert p == pytest.approx(1.0)
    assert [(rec[0], rec[1]) for rec in tr.rounds] == [(0, 0), (0, 1), (1, 1), (2, 0)]
    assert runs[0].meta["admissible"]


def test_non_admissible_run_is_flagged():
    class Mute:
        halts = True

        def initial(self, inputs):
            return None

        def step(self, payload, j, k, ev):
            return [(1.0, payload, (0, 0), None, {})]

    dist = sched.run_async(Mute(), [0, 0], sched.AsyncSchedule(2))
    assert dist.meta["admissible"] is False


@pytest.mark.parametrize("n", [3, 4, 5])
def test_async_coin_round_count_is_constant(n):
    t = coin.default_t(n)
    worst = 0.0
    for seed in range(40):
        rng = np.random.default_rng(seed)
        top = int(rng.integers(1, 5))
        delays = rng.integers(1, top + 1, size=4096)
        crashes = {int(rng.integers(0, n)): int(rng.integers(0, 8))} if seed % 2 else {}
        drops = rng.random(4096) < 0.5
        s = sched.AsyncSchedule(n, t, delay=lambda a, b, c, q: int(delays[q % 4096]),
                                crashes=crashes, drop=lambda a, b, c: bool(drops[(a * 31 + b * 7 + c) % 4096]))
        dist = sched.run_async(coin.ProvenanceCoreProcess(n, t), [0] * n, s)
        assert dist.meta["admissible"]
        (tr, _), = dist.items()
        worst = max(worst, sched.round_count(tr, top))
    assert worst <= 4


def test_quantum_coin_round_count_unit_delay():
    dist = sched.run_async(coin.QuantumCoinProcess(3), [0] * 3, sched.AsyncSchedule(3))
    assert all(sched.round_count(tr, dist.meta["max_delay"]) <= 4 for tr, _ in dist.items())


def test_quantum_and_classical_coin_message_counts_match():
    q = nf.quantize(coin.classical_common_coin(3))
    s = sched.AsyncSchedule(3)
    dh = sched.run_async(coin.QuantumCoinProcess(3), [0] * 3, s)
    dc = sched.run_async(sched.NormalFormProcess(q, "classical"), [0] * 3, s)

    def hist(d):
        out = {}
        for tr, p in d.items():
            out[sched.message_count(tr)] = out.get(sched.message_count(tr), 0.0) + p
        return out

    assert hist(dh) == pytest.approx(hist(dc))


def test_trace_json_is_stable():
    q = nf.quantize(demos.leader_coin(3))
    a = sched.run_sync(q, None, [0, 0, 0]).to_lines()
    b = sched.run_sync(q, None, [0, 0, 0]).to_lines()
    assert a == b and all(line.startswith('{"r_A"') for line in a)
