"""Phase-voting Byzantine agreement for crash faults (t < n/2) driven by a common coin.

Each phase has a vote exchange, a proposal exchange and one coin toss:

1. multicast the preference; after n - t votes propose v if more than n/2
   of them are v, otherwise propose nothing;
2. multicast the proposal; after n - t proposals decide v on at least t + 1
   proposals for v, adopt v on any proposal for v, otherwise adopt the coin.

A player that decides runs one more phase with its decided value and then
halts.  Message delivery is asynchronous: every receiver counts a uniformly
random (n - t)-subset of the senders whose message reached it.

``voting_protocol`` is the synchronous normal-form variant that runs
through the quantizer and the round engine.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .. import qstate, sched
from ..normalform import LocalProtocol, multicast, wrap_non_erasing
from ..qstate import RegisterLayout, SparseState
from .coin import TRUE, ProvenanceCoreProcess, coin_distribution, default_t

STAGES = ("vote", "propose", "coin")
NO_PROPOSAL = 2


def voting_protocol(n: int, t: int | None = None, max_phases: int = 4):
    """Synchronous normal-form phase voting with a private coin per player.

    Odd rounds carry votes, even rounds carry proposals (``NO_PROPOSAL``
    for none).  A player decides and halts in the vote round after it saw
    t + 1 equal proposals.  The private coin makes this a baseline for the
    quantizer, not a fast protocol.
    """
    t = default_t(n) if t is None else t

    def randomness(_i, k):
        return {(0,): 0.5, (1,): 0.5} if k % 2 == 0 else {(0,): 1.0}

    def init(i, x, r):
        return ("vote", int(x), None)

    def update(state, copies, received, r):
        stage, pref, _ = state
        got = [m[0] for m in received if m is not None]
        if stage == "vote":
            prop = next((v for v in (0, 1) if 2 * got.count(v) > n), NO_PROPOSAL)
            return ("propose", pref, prop)
        seen = [v for v in got if v != NO_PROPOSAL]
        dec = next((v for v in (0, 1) if seen.count(v) >= t + 1), None)
        if dec is not None:
            return ("vote", dec, dec)
        return ("vote", seen[0] if seen else r[0], None)

    def output(state, n_):
        stage, pref, extra = state
        if stage == "vote":
            return multicast(n_, (pref,), decision=extra)
        return multicast(n_, (extra,))

    return wrap_non_erasing(LocalProtocol(
        name="phase-voting", n=n, payload_dim=3, payload_sites=1, rand_dim=2, rand_sites=1,
        randomness=randomness, init=init, update=update, output=output,
        max_rounds=2 * max_phases + 1))


@dataclass(frozen=True)
class Crash:
    player: int
    phase: int
    stage: str  # one of STAGES
    reach: frozenset = frozenset()  # receivers that still get the crashing message


def random_crash_plan(n: int, t: int, rng: np.random.Generator, max_phase: int = 3) -> list[Crash]:
    k = int(rng.integers(0, t + 1))
    players = rng.permutation(n)[:k]
    plan = []
    for p in players:
        reach = frozenset(int(r) for r in range(n) if rng.random() < 0.5)
        plan.append(Crash(int(p), int(rng.integers(1, max_phase + 1)),
                          STAGES[int(rng.integers(0, len(STAGES)))], reach))
    return plan


class QuantumCoinSampler:
    """One toss of the quantum common coin under a random async get-core schedule.

    The get-core exchange runs on provenance slots; each returned player's
    output is then obtained by a C^kX from the coin qubits its slots hold
    into a fresh ancilla, measured in return order.  CX copies are
    basis-correlated with their source, so controlling on the sources is
    equivalent to controlling on the copies.
    """

    def __init__(self, n: int, t: int | None = None, bias: float | None = None, max_delay: int = 4):
        self.n = n
        self.t = default_t(n) if t is None else t
        self.dist = coin_distribution(n, bias)
        self.max_delay = max_delay
        self.process = ProvenanceCoreProcess(n, self.t)

    def toss(self, dead: Sequence[int], crashing: Mapping[int, frozenset],
             rng: np.random.Generator) -> dict:
        n = self.n
        crashes = {int(p): 0 for p in dead}
        for p in crashing:
            crashes[int(p)] = int(rng.integers(1, 4 * self.max_delay))
        delays = rng.integers(1, self.max_delay + 1, size=64 * n * n)
        reach = {p: set(r) for p, r in crashing.items()}

        schedule = sched.AsyncSchedule(
            n, self.t, crashes=crashes,
            delay=lambda s, r, tm, seq: int(delays[seq % len(delays)]),
            drop=lambda s, r, tm: r not in reach.get(s, ()))
        dist = sched.run_async(self.process, [0] * n, schedule, keep_leaves=True)
        (ctx, _p), = dist.meta["leaves"]
        order = [rec[1] for rec in ctx.rounds if rec[4] != sched.BOTTOM]
        controls = ctx.payload
        lay = RegisterLayout([(f"c.{j}", 1, 2) for j in range(n)] + [(f"A.{i}", 1, 2) for i in range(n)])
        state = SparseState.zero(lay)
        for j in range(n):
            state = qstate.prepare_distribution(state, f"c.{j}", self.dist)
        out = {}
        for i in order:
            if i in crashes:
                continue
            held = [f"c.{j}" for j, v in enumerate(controls[i].output) if v == TRUE]
            state = qstate.apply_reversible(state, lay.sites(*held), lay.sites(f"A.{i}"),
                                            lambda v: (int(all(x == 1 for x in v)),))
            (bit,), state = qstate.measure(state, lay.sites(f"A.{i}"), rng)
            out[i] = int(bit)
        return out


class LocalCoinSampler:
    """Independent private coins (a weak baseline, not a common coin)."""

    def __init__(self, n: int):
        self.n = n

    def toss(self, dead, crashing, rng) -> dict:
        return {i: int(rng.integers(0, 2)) for i in range(self.n) if i not in set(dead)}


@dataclass
class BAResult:
    inputs: tuple
    decisions: dict
    decided_phase: dict
    phases: int
    terminated: bool
    crashed: frozenset
    good: tuple = field(default_factory=tuple)

    @property
    def agreement(self) -> bool:
        return len({self.decisions[i] for i in self.good if i in self.decisions}) <= 1

    @property
    def validity(self) -> bool:
        ins = set(self.inputs)
        if len(ins) != 1:
            return True
        v = next(iter(ins))
        return all(self.decisions.get(i, v) == v for i in self.good)


def _exchange(n: int, t: int, senders: dict, crashing: Mapping[int, frozenset],
              receivers: Sequence[int], rng: np.random.Generator) -> dict:
    """receiver -> list of counted values from a random (n - t)-subset of arrivals."""
    out = {}
    for r in receivers:
        arrived = [s for s in sorted(senders) if s not in crashing or r in crashing[s]]
        pick = rng.permutation(len(arrived))[:n - t]
        out[r] = [senders[arrived[k]] for k in sorted(pick)]
    return out


def phase_voting_ba(inputs: Sequence[int], t: int | None = None, *, coin=None,
                    crashes: Sequence[Crash] = (), seed: int = 0,
                    max_phases: int = 64) -> BAResult:
    n = len(inputs)
    t = default_t(n) if t is None else t
    if 2 * t >= n:
        raise ValueError("crash-fault voting needs t < n/2")
    if len(crashes) > t:
        raise ValueError(f"{len(crashes)} crashes exceed t={t}")
    rng = np.random.default_rng(seed)
    coin = coin or QuantumCoinSampler(n, t)
    pref = {i: int(x) for i, x in enumerate(inputs)}
    decided: dict = {}
    decided_phase: dict = {}
    halted: set = set()
    dead: set = set()
    crashed_all = frozenset(c.player for c in crashes)
    good = tuple(i for i in range(n) if i not in crashed_all)
    phase = 0
    while phase < max_phases and any(i not in decided for i in good):
        phase += 1
        live = [i for i in range(n) if i not in dead and i not in halted]
        stage_crash = {s: {c.player: c.reach for c in crashes if c.phase == phase and c.stage == s}
                       for s in STAGES}
        # votes
        votes = _exchange(n, t, {i: pref[i] for i in live}, stage_crash["vote"],
                          [i for i in live if i not in stage_crash["vote"]], rng)
        dead |= set(stage_crash["vote"])
        proposal = {}
        for i, got in votes.items():
            ones = sum(got)
            proposal[i] = 1 if 2 * ones > n else 0 if 2 * (len(got) - ones) > n else None
        live = [i for i in live if i not in dead]
        props = _exchange(n, t, {i: proposal[i] for i in live}, stage_crash["propose"],
                          [i for i in live if i not in stage_crash["propose"]], rng)
        dead |= set(stage_crash["propose"])
        live = [i for i in live if i not in dead]
        coins = coin.toss(sorted(dead | halted), stage_crash["coin"], rng)
        dead |= set(stage_crash["coin"])
        for i in live:
            if i in dead:
                continue
            if i in decided:
                halted.add(i)
                continue
            got = [v for v in props[i] if v is not None]
            for v in (0, 1):
                if got.count(v) >= t + 1:
                    decided[i] = v
                    decided_phase[i] = phase
                    break
            if i in decided:
                pref[i] = decided[i]
            elif got:
                pref[i] = got[0]
            else:
                pref[i] = coins[i]
    term = all(i in decided for i in good)
    return BAResult(tuple(inputs), {i: decided[i] for i in good if i in decided}, decided_phase,
                    phase, term, crashed_all, good)
