import numpy as np
import pytest

from qbalab import adversary as adv
from qbalab import normalform as nf
from qbalab import props, qstate, scenarios, sched
from qbalab.protocols import demos


@pytest.mark.parametrize("name", scenarios.names())
def test_bundled_scenarios_reduce(name):
    sc = scenarios.get(name)
    q, policy, inputs = sc.build()
    rep = adv.check_reduction(q, policy, inputs)
    assert rep.kind == sc.kind
    assert rep.tv <= 1e-9
    assert rep.state_deviation <= 1e-9
    assert rep.quantum_mass == pytest.approx(1.0) and rep.classical_mass == pytest.approx(1.0)
    assert rep.passed()


def test_reduction_with_split_inputs():
    q = nf.quantize(demos.early_stop(3))
    rep = adv.check_reduction(q, adv.AdaptiveOnDecision(3, 1, 3, 0, 2), [1, 0, 1])
    assert rep.passed()


def test_reduction_at_n4_failstop():
    q = nf.quantize(demos.early_stop(4))
    rep = adv.check_reduction(q, adv.CrashDeliverSubset(4, 1, target=0, at=2, deliver_to=[1]),
                              [0, 1, 1, 0])
    assert rep.passed()


def test_full_information_control_differs():
    """A quantum-state policy fed the classical memory sees the leader's coin and behaves differently."""
    q = nf.quantize(demos.leader_coin(3))
    pol = adv.LeaderCrash(3, 1)
    dq = sched.run_sync(q, pol, [0, 0, 0])
    dc = sched.run_sync(q, adv.FullInfoClassical(pol), [0, 0, 0], side="classical")
    assert sched.tv_distance(dq, dc) > 1e-3


def test_sabotaged_byzantine_simulation_is_detected():
    class SkipsGate(adv.ClassicalByzantine):
        def f(self, k, r_A, history, a):
            S, _ops, meas = self._policy.f(k, r_A, history, a)
            return S, [], meas

    q = nf.quantize(demos.relay_coin(4))
    pol = adv.HadamardForwarder(4, 1, 3)
    dq = sched.run_sync(q, pol, [0] * 4)
    dc = sched.run_sync(q, SkipsGate(q, pol, [0] * 4), [0] * 4, side="classical")
    assert sched.tv_distance(dq, dc) > 1e-3


def test_classical_adversary_sees_only_traces():
    q = nf.quantize(demos.leader_coin(3))
    a_c = adv.build_classical_failstop(q, adv.LeaderCrash(3, 1), [0, 0, 0])
    assert a_c.view == "trace"
    with pytest.raises(TypeError):
        a_c.decide(1, None, [qstate.SparseState.zero(qstate.RegisterLayout([("x", 1, 2)]))])


def test_corruption_must_be_monotone():
    class Fickle(adv.ByzantinePolicy):
        def f(self, k, r_A, history, a):
            return (frozenset({3}) if k == 1 else frozenset()), [], []

    q = nf.quantize(demos.relay_coin(4))
    with pytest.raises(sched.AdversaryViolation, match="monotone"):
        sched.run_sync(q, Fickle(1), [0] * 4)


def test_byzantine_ops_must_stay_on_corrupted_registers():
    class Meddler(adv.ByzantinePolicy):
        def g(self, k, r_A, history):
            return ([((nf.input_name(0),), qstate.PAULI_X)], []) if k == 2 else ([], [])

        def f(self, k, r_A, history, a):
            return frozenset({3}), [], []

    q = nf.quantize(demos.relay_coin(4))
    with pytest.raises(sched.AdversaryViolation):
        sched.run_sync(q, Meddler(1), [0] * 4)


def test_failstop_budget_counts_players():
    q = nf.quantize(demos.leader_coin(3))
    with pytest.raises(sched.AdversaryViolation):
        sched.run_sync(q, adv.CrashDeliverSubset(3, 0, target=1, at=2, deliver_to=[]), [0, 0, 0])


def test_transcript_branches_are_product():
    rng = np.random.default_rng(5)
    for _ in range(20):
        state, good, bad, tr = adv.random_two_party_run(rng, rounds=2)
        rep = adv.transcript_product_check(state, good, bad, tr)
        assert rep.ok and rep.max_rank == 1


def test_without_transcript_entanglement_appears():
    rep = adv.transcript_product_check(*adv.bell_exchange_without_copy())
    assert not rep.ok and rep.max_rank >= 2
    rng = np.random.default_rng(2)
    ranks = [adv.transcript_product_check(*adv.random_two_party_run(rng, keep_transcript=False)).max_rank
             for _ in range(20)]
    assert max(ranks) >= 2


def test_transcript_check_requires_full_partition():
    state, good, bad, tr = adv.random_two_party_run(np.random.default_rng(0))
    with pytest.raises(ValueError):
        adv.transcript_product_check(state, good[:-1], bad, tr)


def test_transcript_suite():
    suite = props.transcript_suite(50, seed=0)
    assert suite.all_rank_one and suite.max_rank == 1 and suite.control_rank >= 2


def test_scenario_file_round_trip(tmp_path):
    path = tmp_path / "s.ini"
    path.write_text("name = mine\nprotocol = leader-coin\npolicy = crash-deliver\n"
                    "n = 3\nt = 1\ntarget = 2\nat = 2\ndeliver_to = 0\n")
    sc = scenarios.load_scenario_file(path)
    assert (sc.name, sc.n, sc.params["deliver_to"]) == ("mine", 3, [0])
    q, pol, inputs = sc.build()
    assert adv.check_reduction(q, pol, inputs).passed()


@pytest.mark.parametrize("body, where", [
    ("name = x\nprotocol = nope\npolicy = empty\n", ":2:"),
    ("name = x\nprotocol = leader-coin\npolicy = empty\nn = three\n", ":4:"),
    ("name = x\nprotocol = leader-coin\npolicy = empty\ncolour = red\n", ":4:"),
])
def test_scenario_file_errors_name_the_line(tmp_path, body, where):
    path = tmp_path / "bad.ini"
    path.write_text(body)
    with pytest.raises(scenarios.ScenarioError, match=where):
        scenarios.load_scenario_file(path)
