import dataclasses

import numpy as np
import pytest

from qbalab import normalform as nf
from qbalab import sched
from qbalab.protocols import coin, demos
from qbalab.protocols.voting import NO_PROPOSAL, voting_protocol


def play_sync(proto, inputs, seed=0):
    """Fault-free classical run; returns per-player view sizes after each round."""
    rng = np.random.default_rng(seed)
    players = [nf.ClassicalPlayer(i, x) for i, x in enumerate(inputs)]
    sizes = {i: [] for i in range(proto.n)}
    inbox = [None] * proto.n
    for _ in range(proto.max_rounds):
        outs = {}
        for p in players:
            if p.terminated:
                continue
            incoming = tuple(inbox[j][p.i] if inbox[j] else None for j in range(proto.n))
            outs[p.i] = nf.run_classical_round(proto, p, incoming, rng)
            sizes[p.i].append(nf.view_size(p.view))
        inbox = [outs[j][0] if j in outs else None for j in range(proto.n)]
        if all(p.terminated for p in players):
            break
    return players, sizes


def test_non_erasing_views_grow_strictly():
    _, sizes = play_sync(demos.echo_all(3, rounds=3), [1, 0, 1])
    for seq in sizes.values():
        assert len(seq) == 3
        assert all(a < b for a, b in zip(seq, seq[1:]))


def test_wrapper_keeps_behavior():
    local = nf.LocalProtocol(
        name="echo", n=3, payload_dim=2, payload_sites=1, rand_dim=2, rand_sites=1,
        randomness=lambda i, k: {(0,): 1.0}, init=lambda i, x, r: (1, x),
        update=lambda s, c, rec, r: (s[0] + 1, s[1]),
        output=lambda s, n: nf.multicast(n, (s[1],), decision=s[1] if s[0] == 2 else None),
        max_rounds=2)
    wrapped = nf.wrap_non_erasing(local)
    assert nf.wrap_non_erasing(wrapped) is wrapped
    players, _ = play_sync(wrapped, [0, 1, 1])
    assert [p.decision for p in players] == [0, 1, 1]
    d1 = sched.run_sync(nf.quantize(wrapped), None, [0, 1, 1], side="classical")
    d2 = sched.run_sync(nf.quantize(demos.echo_all(3)), None, [0, 1, 1], side="classical")
    assert [tr.rounds for tr, _ in d1.items()] == [tr.rounds for tr, _ in d2.items()]


def test_phase_voting_first_round_multicasts_vote():
    proto = voting_protocol(4)
    p = nf.ClassicalPlayer(0, 1)
    msgs, b, d = nf.run_classical_round(proto, p, None, np.random.default_rng(0))
    assert msgs == ((1,),) * 4 and b == (1, 1, 1, 1) and d is None


def test_empty_incoming_round_is_total():
    proto = voting_protocol(3)
    p = nf.ClassicalPlayer(1, 0)
    rng = np.random.default_rng(0)
    nf.run_classical_round(proto, p, None, rng)
    msgs, b, d = nf.run_classical_round(proto, p, (None, None, None), rng)
    assert b == (1, 1, 1) and msgs[0] == (NO_PROPOSAL,)
    msgs, b, d = nf.run_classical_round(proto, p, (None, None, None), rng)
    assert d is None and msgs[0][0] in (0, 1)


def test_terminated_player_raises():
    proto = demos.echo_all(3, rounds=1)
    p = nf.ClassicalPlayer(0, 1)
    nf.run_classical_round(proto, p, None, np.random.default_rng(0))
    assert p.terminated
    with pytest.raises(nf.ProtocolFault):
        nf.run_classical_round(proto, p, (None,) * 3, np.random.default_rng(0))


def test_malformed_incoming_is_a_fault():
    proto = demos.echo_all(3)
    p = nf.ClassicalPlayer(0, 1)
    nf.run_classical_round(proto, p, None, np.random.default_rng(0))
    with pytest.raises(nf.ProtocolFault):
        nf.run_classical_round(proto, p, ((5,), None, None), np.random.default_rng(0))
    with pytest.raises(nf.ProtocolFault):
        nf.run_classical_round(proto, p, ((1,), None), np.random.default_rng(0))


def test_deterministic_protocol_is_branch_free():
    q = nf.quantize(demos.echo_all(3))
    dist = sched.run_sync(q, None, [1, 0, 1])
    assert len(dist) == 1
    (_, p), = dist.items()
    assert p == pytest.approx(1.0)


def test_quantum_round_of_deterministic_step_is_point_mass():
    q = nf.quantize(demos.echo_all(3))
    state = nf.initial_state(q, [1, 0, 1])
    for seed in range(5):
        (d, b), _ = nf.run_quantum_round(q, state, 0, 1, np.random.default_rng(seed))
        assert (d, b) == (None, (1, 1, 1))


def test_quantum_round_forced_outcome_and_zero_probability():
    q = nf.quantize(demos.echo_all(3))
    state = nf.initial_state(q, [1, 0, 1])
    (d, b), _ = nf.run_quantum_round(q, state, 0, 1, forced=(nf.BOTTOM, 1, 1, 1))
    assert d is None
    with pytest.raises(Exception):
        nf.run_quantum_round(q, state, 0, 1, forced=(1, 1, 1, 1))


def test_step_unitary_matches_f_P():
    """U_P writes f_P(view) into the fresh ancilla for each sampled randomness value."""
    proto = demos.leader_coin(3)
    q = nf.quantize(proto)
    state = q.step(nf.initial_state(q, [0, 1, 0]), 1, 1)
    lay = state.layout
    anc = lay.sites(*q.ancilla_names(1, 1))
    rsite = lay.sites(nf.rand_name(1, 1))
    for cfg in list(state.amps)[:10]:
        r = tuple(cfg[s] for s in rsite)
        step = proto.f_P(((1, 1, r),))
        assert tuple(cfg[s] for s in anc) == q.encode_step(step, 1)


def test_only_decision_and_pattern_are_measured():
    q = nf.quantize(demos.relay_coin(4))
    for k in (1, 2):
        for i in range(4):
            names = q.measured_names(k, i)
            assert names[0] == nf.decision_name(k, i)
            assert set(names[1:]) == {nf.pattern_name(k, i, j) for j in range(4)}


def test_quantized_coin_with_purified_randomness_agrees_on_bit():
    # two-player coin: player 0 multicasts its random bit, everyone outputs it
    local = nf.LocalProtocol(
        name="share-bit", n=2, payload_dim=2, payload_sites=1, rand_dim=2, rand_sites=1,
        randomness=lambda i, k: {(0,): 0.5, (1,): 0.5} if k == 1 else {(0,): 1.0},
        init=lambda i, x, r: ("s", i, r[0]),
        update=lambda s, c, rec, r: ("d", s[1], rec[0][0] if rec[0] is not None else 0),
        output=lambda s, n: (nf.multicast(n, (s[2],)) if s[0] == "s" and s[1] == 0
                             else nf.silent(n) if s[0] == "s" else nf.silent(n, s[2])),
        max_rounds=2)
    dist = sched.run_sync(nf.quantize(nf.wrap_non_erasing(local)), None, [0, 0])
    outs = {tr.rounds[-1][1]: p for tr, p in dist.items()}
    assert outs == pytest.approx({(0, 0): 0.5, (1, 1): 0.5})


@pytest.mark.parametrize("make", [demos.leader_coin, demos.early_stop, demos.echo_all])
def test_quantizer_faithful_without_adversary(make):
    q = nf.quantize(make(3))
    inputs = [0, 1, 1]
    dq = sched.run_sync(q, None, inputs)
    dc = sched.run_sync(q, None, inputs, side="classical")
    assert sched.tv_distance(dq, dc) <= 1e-9


def test_quantizer_faithful_relay_coin_n4():
    q = nf.quantize(demos.relay_coin(4))
    dq = sched.run_sync(q, None, [0] * 4)
    dc = sched.run_sync(q, None, [0] * 4, side="classical")
    assert sched.tv_distance(dq, dc) <= 1e-9


def test_quantized_common_coin_equals_classical_at_n3():
    q = nf.quantize(coin.classical_common_coin(3))
    s = sched.AsyncSchedule(3)
    dq = sched.run_async(sched.NormalFormProcess(q, "quantum"), [0] * 3, s)
    dc = sched.run_async(sched.NormalFormProcess(q, "classical"), [0] * 3, s)
    assert sched.tv_distance(dq, dc) <= 1e-9


def test_register_budget_reported():
    q = dataclasses.replace(nf.quantize(demos.echo_all(3)), max_sites=5)
    with pytest.raises(nf.RegisterBudgetExceeded):
        q.step(nf.initial_state(q, [0, 0, 0]), 0, 1)
