"""Full-information adversaries over P_Q, their private-channel classical
counterparts over P_C, and the checker comparing both executions.

Two interfaces are kept apart on purpose.  A quantum Fail-stop policy's
``decide`` receives the literal system states after each round; the
constructed classical adversary's ``decide`` receives an ``ExecutionTrace``
and nothing else.  Byzantine policies are functions of the classical history
only; the classical side additionally gets the transcript T of messages that
crossed between good and corrupted players.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np

from . import qstate, sched
from .normalform import BOTTOM, QuantizedProtocol, quantize
from .qstate import HADAMARD, PAULI_X, SparseState

# ---------------------------------------------------------------------------
# Fail-stop policies (full information: they read quantum states)


class FailStopPolicy:
    """Base Fail-stop policy: ``decide(k, r_A, states) -> (S_k, withheld)``.

    ``withheld`` is a set of (sender, receiver) pairs whose round-(k-1)
    messages are not delivered; only newly corrupted senders qualify.
    """

    kind = "failstop"
    view = "state"

    def __init__(self, t: int, r_dist: dict | None = None):
        self.t = t
        self.r_dist = dict(r_dist or {None: 1.0})

    def decide(self, k: int, r_A, states: Sequence[SparseState]):
        return frozenset(), frozenset()

    def describe(self) -> dict:
        return {"policy": type(self).__name__, "t": self.t}


class EmptyPolicy(FailStopPolicy):
    """Never corrupts anyone."""


class CrashDeliverSubset(FailStopPolicy):
    """Crash ``target`` at the start of round ``at``; its last messages reach ``deliver_to`` only."""

    def __init__(self, n: int, t: int, target: int, at: int, deliver_to: Sequence[int]):
        super().__init__(t)
        self.n, self.target, self.at, self.deliver_to = n, target, at, frozenset(deliver_to)

    def decide(self, k, r_A, states):
        if k < self.at:
            return frozenset(), frozenset()
        S = frozenset({self.target})
        if k == self.at:
            return S, frozenset((self.target, j) for j in range(self.n) if j not in self.deliver_to)
        return S, frozenset()

    def describe(self):
        return {**super().describe(), "target": self.target, "at": self.at,
                "deliver_to": sorted(self.deliver_to)}


def leader_probabilities(state: SparseState, n: int, reg: str = "R1.{}") -> list[float]:
    """P[player j holds the largest (leader, id)] under the state's measurement statistics."""
    lay = state.layout
    regs = [lay[reg.format(j)] for j in range(n)]
    out = [0.0] * n
    for key, a in state.amps.items():
        vals = [key[r.offset + 1] for r in regs]
        best = max(range(n), key=lambda j: (vals[j], j))
        out[best] += abs(a) ** 2
    return out


class LeaderCrash(FailStopPolicy):
    """Crash whoever most likely holds the top leader value before round 2.

    Its round-1 messages reach only the lowest-index other player.  Against
    the quantized coin the leader registers are still unmeasured, so every
    player looks equally likely and the choice falls back to player 0.
    """

    def __init__(self, n: int, t: int = 1):
        super().__init__(t)
        self.n = n

    def decide(self, k, r_A, states):
        if k != 2:
            return frozenset(), frozenset()
        probs = leader_probabilities(states[-1], self.n)
        target = max(range(self.n), key=lambda j: (round(probs[j], 12), -j))
        keep = min(j for j in range(self.n) if j != target)
        return frozenset({target}), frozenset((target, j) for j in range(self.n) if j != keep)


class AdaptiveOnDecision(FailStopPolicy):
    """At round ``at``, crash ``if_decided`` when anyone has already decided, else ``otherwise``.

    Decisions are read from the (measured, hence definite) D registers.
    ``r_A`` picks which of the crashed player's messages are withheld.
    """

    def __init__(self, n: int, t: int, at: int, if_decided: int, otherwise: int):
        super().__init__(t, {0: 0.5, 1: 0.5})
        self.n, self.at, self.if_decided, self.otherwise = n, at, if_decided, otherwise

    def decide(self, k, r_A, states):
        if k < self.at:
            return frozenset(), frozenset()
        decided = False
        for r in range(1, k):
            st = states[r - 1]
            for j in range(self.n):
                name = f"D{r}.{j}"
                if name in st.layout and st.definite_value(name)[0] != BOTTOM:
                    decided = True
        if k > self.at:
            prev = self._target(states[: self.at - 1])
            return frozenset({prev}), frozenset()
        target = self.if_decided if decided else self.otherwise
        withheld = frozenset((target, j) for j in range(self.n) if (j + r_A) % 2 == 0)
        return frozenset({target}), withheld

    def _target(self, states):
        for st in states:
            for j in range(self.n):
                for r in range(1, self.at):
                    name = f"D{r}.{j}"
                    if name in st.layout and st.definite_value(name)[0] != BOTTOM:
                        return self.if_decided
        return self.otherwise


# ---------------------------------------------------------------------------
# pure-state view reconstruction f_V and the constructed classical adversary


def view_reconstruct(q: QuantizedProtocol, policy, inputs: Sequence[int], r_A,
                     rounds: Sequence[tuple], cache: dict | None = None) -> sched.SyncCtx:
    """Replay (P_Q, A_Q) along a recorded Fail-stop prefix.

    Returns the run context whose ``state`` is the live system state after
    the prefix (``states`` holds every intermediate view).  A prefix with a
    zero-probability round raises ``InconsistentTrace``.
    """
    rounds = tuple(rounds)
    if cache is not None and (r_A, rounds) in cache:
        return cache[(r_A, rounds)]
    if not rounds:
        state = sched.initial_state(q, inputs)
        ctx = sched.SyncCtx(r_A, state=state)
    else:
        prev = view_reconstruct(q, policy, inputs, r_A, rounds[:-1], cache)
        if prev.done:
            raise sched.InconsistentTrace("trace continues past termination")
        ctx = sched.q_failstop_round(q, policy, prev, forced=rounds[-1])[0][1]
    if cache is not None:
        cache[(r_A, rounds)] = ctx
    return ctx


class ClassicalFailStop:
    """A_C built from a Fail-stop A_Q: reconstructs each view from the trace, then asks A_Q."""

    kind = "failstop"
    view = "trace"

    def __init__(self, q: QuantizedProtocol, policy: FailStopPolicy, inputs: Sequence[int]):
        self._q, self._policy, self._inputs = q, policy, tuple(inputs)
        self.t = policy.t
        self.r_dist = policy.r_dist
        self._cache: dict = {}
        self._decisions: dict = {}

    def decide(self, k: int, r_A, trace: sched.ExecutionTrace):
        if not isinstance(trace, sched.ExecutionTrace):
            raise TypeError("the classical adversary only accepts execution traces")
        key = (k, r_A, trace.rounds)
        if key not in self._decisions:
            ctx = view_reconstruct(self._q, self._policy, self._inputs, r_A, trace.rounds, self._cache)
            self._decisions[key] = self._policy.decide(k, r_A, ctx.states)
        return self._decisions[key]


def build_classical_failstop(q: QuantizedProtocol, policy: FailStopPolicy, inputs) -> ClassicalFailStop:
    return ClassicalFailStop(q, policy, inputs)


class FullInfoClassical:
    """Negative control: hand a quantum-state policy the literal classical memory."""

    kind = "failstop"
    view = "state"

    def __init__(self, policy: FailStopPolicy):
        self._policy = policy
        self.t, self.r_dist = policy.t, policy.r_dist

    def decide(self, k, r_A, states):
        return self._policy.decide(k, r_A, states)


# ---------------------------------------------------------------------------
# Byzantine policies


class ByzantinePolicy:
    """Base Byzantine policy over the classical history.

    ``g(k, r_A, history) -> (ops, measured register names)`` runs before new
    corruptions, ``f(k, r_A, history, a_k) -> (S_k, ops', measured')`` after.
    ``ops`` is a list of ``(register names, unitary matrix)``.
    """

    kind = "byzantine"
    dense_cap = qstate.DENSE_CAP
    workspace_specs: tuple = ()

    def __init__(self, t: int, r_dist: dict | None = None):
        self.t = t
        self.r_dist = dict(r_dist or {None: 1.0})

    def g(self, k, r_A, history):
        return [], []

    def f(self, k, r_A, history, a):
        return frozenset(), [], []

    def corrupted_at(self, k: int) -> frozenset:
        return frozenset()


def _x_on(names):
    return [((name,), PAULI_X) for name in names]


class FlipForwarder(ByzantinePolicy):
    """Corrupt ``target`` from round ``at``; flip its pending messages when r_A = 1.

    On later rounds it measures the payload it received from player ``watch``
    (the outcome is a_k) and forwards that bit to every good player, flipped
    again when r_A = 1.
    """

    def __init__(self, n: int, t: int, target: int, at: int = 2, watch: int = 0):
        super().__init__(t, {0: 0.5, 1: 0.5})
        self.n, self.target, self.at, self.watch = n, target, at, watch

    def corrupted_at(self, k):
        return frozenset({self.target}) if k >= self.at else frozenset()

    def _good(self):
        return [j for j in range(self.n) if j != self.target]

    def g(self, k, r_A, history):
        if k <= self.at:
            return [], []
        name = f"I{k - 1}.{self.watch}.{self.target}"
        if not _sent(history, k - 1, self.watch, self.target):
            return [], []
        return [], [name]

    def f(self, k, r_A, history, a):
        S = self.corrupted_at(k)
        if k < self.at:
            return S, [], []
        if k == self.at:
            ops = _x_on(f"M{k - 1}.{self.target}.{j}" for j in self._good()) if r_A == 1 else []
            return S, ops, []
        good = [j for j in self._good() if _running(history, j)]
        ops = _x_on(f"M{k - 1}.{self.target}.{j}.p" for j in good)
        bit = (a[0] if a else 0) ^ (1 if r_A == 1 else 0)
        if bit:
            ops += _x_on(f"M{k - 1}.{self.target}.{j}" for j in good)
        return S, ops, []


class HadamardForwarder(ByzantinePolicy):
    """Corrupt ``target`` at round ``at`` and apply H to its pending 1-qubit share for ``victim``.

    ``measure_after`` additionally measures the target's copy register of that
    share after the gate, exercising a nontrivial a'_k outcome.
    """

    def __init__(self, n: int, t: int, target: int, victim: int = 0, at: int = 2,
                 measure_after: bool = True):
        super().__init__(t)
        self.n, self.target, self.victim, self.at = n, target, victim, at
        self.measure_after = measure_after

    def corrupted_at(self, k):
        return frozenset({self.target}) if k >= self.at else frozenset()

    def f(self, k, r_A, history, a):
        S = self.corrupted_at(k)
        if k != self.at:
            return S, [], []
        ops = [((f"M{k - 1}.{self.target}.{self.victim}",), HADAMARD)]
        meas = [f"C{k - 1}.{self.target}.{self.victim}"] if self.measure_after else []
        return S, ops, meas


def _sent(history, r, i, j) -> bool:
    if r < 1 or r > len(history):
        return False
    b = history[r - 1][2]
    return b[i] is not None and bool(b[i][j])


def _running(history, j) -> bool:
    return all(rec[3][j] in (None, BOTTOM) for rec in history) and (
        not history or history[-1][3][j] is not None)


class ClassicalByzantine:
    """A_C built from a Byzantine A_Q.

    It forwards g/f, and whenever a new player is corrupted it rebuilds the
    corrupted side's state |psi_T> from r_A, the trace and the transcript T
    by replaying the quantum execution and conditioning on T.
    """

    kind = "byzantine"

    def __init__(self, q: QuantizedProtocol, policy: ByzantinePolicy, inputs: Sequence[int]):
        self._q, self._policy, self._inputs = q, policy, tuple(inputs)
        self.t, self.r_dist = policy.t, policy.r_dist
        self.dense_cap = policy.dense_cap
        self.workspace_specs = policy.workspace_specs
        self._cache: dict = {}

    def g(self, k, r_A, history):
        return self._policy.g(k, r_A, history)

    def f(self, k, r_A, history, a):
        return self._policy.f(k, r_A, history, a)

    def _replay(self, r_A, history) -> sched.SyncCtx:
        key = (r_A, tuple(history))
        if key in self._cache:
            return self._cache[key]
        if not history:
            roots = sched.sync_roots(self._q, self._policy, self._inputs, "quantum", kind="byzantine",
                                     extra_specs=tuple(self.workspace_specs))
            ctx = next(c for p, c in roots if c.r_A == r_A)
        else:
            prev = self._replay(r_A, history[:-1])
            ctx = sched.q_byzantine_round(self._q, self._policy, prev, forced=history[-1])[0][1]
        self._cache[key] = ctx
        return ctx

    def simulate_corrupt_state(self, r_A, history, a, k, S, T: dict) -> SparseState:
        """|psi_T>: the corrupted registers' state given (r_A, trace, a_k, T)."""
        ctx = self._replay(r_A, tuple(history))
        (p, (state, owner, S_q, _a)), = sched.q_byzantine_round(
            self._q, self._policy, ctx, forced=(a, None, None, None), stop_after_corruption=True)
        if S_q != frozenset(S):
            raise sched.InconsistentTrace("replayed corruption set differs")
        shape = self._q.shape
        names, values = [], ()
        for base in sorted(T):
            for name in shape.names(base):
                if name not in state.layout:
                    raise sched.InconsistentTrace(f"transcript register {name} missing in replay")
                names.append(name)
            values += tuple(T[base])
        if names:
            p, state = qstate.project(state, state.layout.sites(*names), values)
            if p == 0.0:
                raise sched.InconsistentTrace("transcript has probability zero")
        bad = [nm for nm in state.layout.names() if owner.get(nm) in S]
        return qstate.split_product(state, bad)


def build_classical_byzantine(q: QuantizedProtocol, policy: ByzantinePolicy, inputs) -> ClassicalByzantine:
    return ClassicalByzantine(q, policy, inputs)


# ---------------------------------------------------------------------------
# reduction checker


@dataclass
class ReductionReport:
    tv: float
    state_deviation: float
    rows: list = field(default_factory=list)  # (trace json, p_quantum, p_classical)
    quantum_mass: float = 1.0
    classical_mass: float = 1.0
    kind: str = "failstop"
    notes: list = field(default_factory=list)

    def passed(self, tol: float = 1e-9) -> bool:
        return self.tv <= tol and self.state_deviation <= tol


def check_reduction(protocol, policy, inputs: Sequence[int], *, cutoff: float = 0.0,
                    budget: int = sched.DEFAULT_BUDGET, state_check: bool = True) -> ReductionReport:
    """Enumerate (P_Q, A_Q) and (P_C, A_C) and compare trace distributions and states."""
    q = protocol if isinstance(protocol, QuantizedProtocol) else quantize(protocol)
    if policy is None:
        policy = EmptyPolicy(0)
    if policy.kind == "byzantine":
        a_c = build_classical_byzantine(q, policy, inputs)
    else:
        a_c = build_classical_failstop(q, policy, inputs)
    dq = sched.run_sync(q, policy, inputs, side="quantum", cutoff=cutoff, budget=budget,
                        keep_leaves=state_check)
    dc = sched.run_sync(q, a_c, inputs, side="classical", cutoff=cutoff, budget=budget,
                        keep_leaves=state_check)
    tv = sched.tv_distance(dq, dc)
    keys = sorted(set(dq.probs) | set(dc.probs), key=sched._trace_sort_key)
    rows = [(tr.to_json(), dq.probs.get(tr, 0.0), dc.probs.get(tr, 0.0)) for tr in keys]
    dev = 0.0
    if state_check:
        if policy.kind == "byzantine":
            dev = _byzantine_state_deviation(dq.meta["leaves"], dc.meta["leaves"])
        else:
            dev = _failstop_state_deviation(dq.meta["leaves"], dc.meta["leaves"])
    return ReductionReport(tv, dev, rows, dq.total(), dc.total(), policy.kind)


def _failstop_state_deviation(q_leaves, c_leaves) -> float:
    """Per trace: full measurement of the quantum state vs the classical memory distribution."""
    qd: dict = defaultdict(lambda: defaultdict(float))
    for ctx, p in q_leaves:
        for cfg, w in sched.canonical_distribution(ctx.state).items():
            qd[ctx.trace][cfg] += p * w
    cd: dict = defaultdict(lambda: defaultdict(float))
    for ctx, p in c_leaves:
        cfg = tuple(sorted(ctx.memory.items()))
        cd[ctx.trace][cfg] += p
    dev = 0.0
    for tr in set(qd) | set(cd):
        a, b = qd.get(tr, {}), cd.get(tr, {})
        for cfg in set(a) | set(b):
            dev = max(dev, abs(a.get(cfg, 0.0) - b.get(cfg, 0.0)))
    return dev


def _byzantine_state_deviation(q_leaves, c_leaves) -> float:
    """Per trace and good-register outcome g: match probabilities and corrupted-side states.

    The quantum side is measured on every good register, leaving a product
    state whose corrupted factor chi_g is compared with the classical side's
    simulated states phi_e: sum_e p_e |<chi_g|phi_e>|^2 must reach p_g.
    """
    quantum: dict = defaultdict(dict)
    for ctx, p in q_leaves:
        bad = sorted(nm for nm in ctx.state.layout.names() if ctx.owner.get(nm) in ctx.corrupted)
        good = sorted(nm for nm in ctx.state.layout.names() if ctx.owner.get(nm) not in ctx.corrupted)
        lay = ctx.state.layout
        for br in qstate.measurement_branches(ctx.state, lay.sites(*good)):
            g = tuple(zip(good, _chunks(br.outcome, [lay[nm].sites for nm in good])))
            chi = qstate.split_product(br.state, bad).canonical() if bad else None
            prev = quantum[ctx.trace].get(g)
            if prev is not None:
                raise RuntimeError("duplicate quantum leaf for one trace")
            quantum[ctx.trace][g] = (p * br.probability, chi)
    classical: dict = defaultdict(lambda: defaultdict(list))
    for ctx, p in c_leaves:
        g = tuple(sorted(ctx.memory.items()))
        phi = ctx.sim.state.canonical() if ctx.sim.state.layout.names() else None
        classical[ctx.trace][g].append((p, phi))
    dev = 0.0
    for tr in set(quantum) | set(classical):
        qg, cg = quantum.get(tr, {}), classical.get(tr, {})
        for g in set(qg) | set(cg):
            p_g, chi = qg.get(g, (0.0, None))
            entries = cg.get(g, [])
            p_c = sum(pe for pe, _ in entries)
            dev = max(dev, abs(p_g - p_c))
            if chi is not None and entries:
                overlap = sum(pe * _fidelity(chi, phi) for pe, phi in entries)
                dev = max(dev, p_g - overlap)
    return dev


def _fidelity(a: SparseState, b: SparseState | None) -> float:
    if b is None or a.layout != b.layout:
        return 0.0
    return a.fidelity(b)


def _chunks(seq, widths):
    out, pos = [], 0
    for w in widths:
        out.append(tuple(seq[pos:pos + w]))
        pos += w
    return out


# ---------------------------------------------------------------------------
# transcript structure


@dataclass
class ProductReport:
    ok: bool
    ranks: dict  # transcript value -> Schmidt rank

    @property
    def max_rank(self) -> int:
        return max(self.ranks.values(), default=0)


def transcript_product_check(state: SparseState, good: Sequence[str], bad: Sequence[str],
                             transcript: Sequence[str], tol: float = 1e-9) -> ProductReport:
    """Condition on every transcript value and check G\\T | B has Schmidt rank 1."""
    lay = state.layout
    missing = set(lay.names()) - set(good) - set(bad)
    if missing:
        raise ValueError(f"registers {sorted(missing)} assigned to neither side")
    if not set(transcript) <= set(good):
        raise ValueError("transcript copies must live on the good side")
    rest_good = [nm for nm in good if nm not in set(transcript)]
    if transcript:
        branches = [(br.outcome, br.state) for br in
                    qstate.measurement_branches(state, lay.sites(*transcript))]
    else:
        branches = [((), state)]
    ranks = {}
    for m, st in branches:
        ranks[m] = qstate.schmidt_rank(st, lay.sites(*rest_good), tol) if rest_good else 1
    return ProductReport(all(r == 1 for r in ranks.values()), ranks)


def random_two_party_run(rng: np.random.Generator, *, keep_transcript: bool = True,
                         rounds: int = 2, dim: int = 2, width: int = 1):
    """Random 2-party exchange: G applies permutations, B applies dense unitaries.

    G copies each message it sends and keeps what it receives.  Returns
    ``(state, good names, bad names, transcript names)``.
    """
    specs = [("g.r", width, dim), ("b.r", width, dim)]
    layout = qstate.RegisterLayout(specs)
    state = SparseState.zero(layout)
    probs = rng.dirichlet(np.ones(dim ** width))
    keys = list(np.ndindex(*([dim] * width)))
    state = qstate.prepare_distribution(state, "g.r", {tuple(int(v) for v in k): float(p)
                                                       for k, p in zip(keys, probs)})
    u = _random_unitary(rng, dim ** width)
    state = qstate.apply_unitary_to(state, ["b.r"], u)
    good, bad, transcript = ["g.r"], ["b.r"], []
    for r in range(rounds):
        # G -> B: message computed by a random function of G's registers
        src = list(good)
        msg, cp = f"m{r}", f"t{r}"
        state = state.with_registers([(msg, 1, dim), (cp, 1, dim)])
        sites_in = state.layout.sites(*src)
        f = _random_function(rng, dim)
        state = qstate.apply_reversible(state, sites_in, state.layout.sites(msg),
                                        lambda v, f=f: (f(sum(v) % dim),))
        if keep_transcript:
            state = qstate.cx_copy(state, msg, cp)
            good = good + [cp]
            transcript.append(cp)
        else:
            good = good + [cp]
        bad = bad + [msg]
        # B mixes the message into its register, replies with a function of both
        u = _random_unitary(rng, dim * dim)
        state = qstate.apply_unitary_to(state, ["b.r", msg], u)
        reply, rcp = f"n{r}", f"s{r}"
        state = state.with_registers([(reply, 1, dim), (rcp, 1, dim)])
        g2 = _random_function(rng, dim)
        state = qstate.apply_reversible(state, state.layout.sites("b.r", msg),
                                        state.layout.sites(reply),
                                        lambda v, g2=g2: (g2((v[0] + 2 * v[1]) % dim),))
        state = qstate.cx_copy(state, reply, rcp)
        bad = bad + [rcp]
        good = good + [reply]
        if keep_transcript:
            transcript.append(reply)
    return state, good, bad, transcript


def bell_exchange_without_copy():
    """G prepares |+>, CX-copies it into a message and ships it keeping no transcript."""
    layout = qstate.RegisterLayout([("g.r", 1, 2), ("m0", 1, 2)])
    state = SparseState.zero(layout)
    state = qstate.apply_unitary_to(state, ["g.r"], HADAMARD)
    state = qstate.cx_copy(state, "g.r", "m0")
    return state, ["g.r"], ["m0"], []


def _random_unitary(rng: np.random.Generator, d: int) -> np.ndarray:
    z = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(2)
    qm, r = np.linalg.qr(z)
    return qm * (np.diag(r) / np.abs(np.diag(r)))


def _random_function(rng: np.random.Generator, dim: int) -> Callable[[int], int]:
    table = [int(v) for v in rng.integers(0, dim, size=dim)]
    return lambda x: table[x]
