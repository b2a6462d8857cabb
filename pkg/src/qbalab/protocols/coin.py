"""Common coin built on the three-phase get-core exchange.

Three implementations share one message schedule:

* ``classical_common_coin``: an async normal-form protocol with sampled coins
  (the P_C side; ``quantize`` turns it into P_Q).
* ``QuantumCoinProcess``: a hand-written quantum version.  Coins are qubits
  prepared as sqrt(1/n)|0> + sqrt(1-1/n)|1>, multicast by CX copies, and each
  player's output is the measured ancilla of a C^nX over its coin slots.
* ``ProvenanceCoreProcess`` and ``core_threshold_enumeration``: provenance
  versions used to check the core-set property on engine runs and
  exhaustively over threshold-set choices.

A player outputs when its third-phase set reaches n - t but keeps relaying
afterwards, so players that return early never starve the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from itertools import combinations, product
from typing import Optional, Sequence

from .. import qstate, sched
from ..normalform import BOTTOM, LocalProtocol, Step, multicast, silent, wrap_non_erasing
from ..qstate import SparseState

UNSET = 2  # slot digit for "no coin yet"
FIRST, SECOND, THIRD = 0, 1, 2


def default_t(n: int) -> int:
    return (n - 1) // 2


def coin_distribution(n: int, bias: float | None = None) -> dict:
    """Each coin is 0 with probability 1/n unless ``bias`` (P[0]) overrides it."""
    p0 = 1.0 / n if bias is None else float(bias)
    if not 0.0 <= p0 <= 1.0:
        raise ValueError("coin bias must be a probability")
    return {k: v for k, v in (((0,), p0), ((1,), 1.0 - p0)) if v > 0}


# ---------------------------------------------------------------------------
# shared get-core bookkeeping


@dataclass(frozen=True)
class CoreControl:
    """Classical control of one get-core participant.

    ``slots`` is whatever the implementation stores per peer (a coin bit, a
    register name, a provenance tag) with ``None`` meaning unset.  At return
    the unset slots are defaulted into the frozen ``output`` vector; relays
    sent afterwards still carry ``slots`` only.
    """

    i: int
    n: int
    t: int
    slots: tuple
    s1: frozenset = frozenset()
    s2: frozenset = frozenset()
    s3: frozenset = frozenset()
    output: Optional[tuple] = None

    @classmethod
    def start(cls, i: int, n: int, t: int, own):
        slots = [None] * n
        slots[i] = own
        return cls(i, n, t, tuple(slots))

    @property
    def returned(self) -> bool:
        return self.output is not None

    def receive(self, sender: int, tag: int, values: Sequence, default):
        """Process one message; returns (new control, tag to multicast or None, returned now)."""
        slots = list(self.slots)
        send, done = None, False
        need = self.n - self.t
        c = self
        if tag == FIRST:
            slots[sender] = values[sender]
            s1 = self.s1 | {sender}
            c = replace(c, s1=s1)
            if len(s1) == need and len(self.s1) < need:
                send = SECOND
        else:
            for j, v in enumerate(values):
                if slots[j] is None and v is not None:
                    slots[j] = v
            if tag == SECOND:
                s2 = self.s2 | {sender}
                c = replace(c, s2=s2)
                if len(s2) == need and len(self.s2) < need:
                    send = THIRD
            else:
                s3 = self.s3 | {sender}
                c = replace(c, s3=s3)
                if len(s3) == need and len(self.s3) < need:
                    done = True
        c = replace(c, slots=tuple(slots))
        if done:
            c = replace(c, output=tuple(default(j) if v is None else v for j, v in enumerate(slots)))
        return c, send, done


# ---------------------------------------------------------------------------
# classical normal form


def classical_common_coin(n: int, t: int | None = None, bias: float | None = None):
    """Async normal-form common coin (payload: phase tag then n coin slots)."""
    t = default_t(n) if t is None else t
    dist = coin_distribution(n, bias)

    def randomness(_i, k):
        return dist if k == 1 else {(0,): 1.0}

    def init(i, x, r):
        ctl = CoreControl.start(i, n, t, r[0])
        return (ctl, FIRST, None)

    def update(state, copies, received, r):
        ctl = state[0]
        sender, payload = received
        values = [None if v == UNSET else v for v in payload[1:]]
        ctl, send, done = ctl.receive(sender, payload[0], values, lambda j: 1)
        return (ctl, send, int(all(ctl.output)) if done else None)

    def output(state, n_):
        ctl, send, dec = state
        if send is None:
            return silent(n_, dec)
        slots = ctl.slots if send != FIRST else tuple(
            v if j == ctl.i else None for j, v in enumerate(ctl.slots))
        payload = (send,) + tuple(UNSET if v is None else v for v in slots)
        return multicast(n_, payload, dec)

    return wrap_non_erasing(LocalProtocol(
        name="classical-common-coin", n=n, payload_dim=3, payload_sites=1 + n, rand_dim=2,
        rand_sites=1, randomness=randomness, init=init, update=update, output=output,
        mode="async", max_rounds=3 * n + 1, max_faulty=default_t, halt_on_decide=False))


# ---------------------------------------------------------------------------
# hand-written quantum coin


def quantum_multicast(state: SparseState, source: str, targets: Sequence[str]) -> SparseState:
    """CX-copy ``source`` into fresh zero registers ``targets``."""
    dim = state.layout[source].dim
    state = state.with_registers([(nm, state.layout[source].sites, dim) for nm in targets])
    for nm in targets:
        state = qstate.cx_copy(state, source, nm)
    return state


def cnx_and(state: SparseState, controls: Sequence[str], target: str) -> SparseState:
    """C^nX: flip ``target`` when every control qubit is 1."""
    lay = state.layout
    return qstate.apply_reversible(state, lay.sites(*controls), lay.sites(target),
                                   lambda v: (int(all(x == 1 for x in v)),))


class QuantumCoinProcess:
    """Async process for the hand-written quantum coin (run with ``sched.run_async``)."""

    halts = False

    def __init__(self, n: int, t: int | None = None, bias: float | None = None):
        self.n = n
        self.t = default_t(n) if t is None else t
        self.dist = coin_distribution(n, bias)

    def initial(self, inputs):
        state = SparseState(qstate.RegisterLayout(), {(): 1.0})
        controls = tuple(CoreControl.start(i, self.n, self.t, f"c.{i}") for i in range(self.n))
        return (state, controls, 0)

    def _send(self, state, ctl: CoreControl, tag: int, uid: int):
        """Multicast the set slots; returns (state, per-receiver ref)."""
        refs = {}
        for r in range(self.n):
            names = []
            for j, src in enumerate(ctl.slots):
                if tag == FIRST and j != ctl.i:
                    names.append(None)
                    continue
                if src is None:
                    names.append(None)
                    continue
                nm = f"q{uid}.{tag}.{ctl.i}.{r}.{j}"
                state = quantum_multicast(state, src, [nm])
                names.append(nm)
            refs[r] = (tag, tuple(names))
        return state, refs

    def step(self, payload, j, k, ev):
        state, controls, uid = payload
        ctl = controls[j]
        n = self.n
        if k == 1:
            name = f"c.{j}"
            state = state.with_registers([(name, 1, 2)])
            state = qstate.prepare_distribution(state, name, self.dist)
            state, refs = self._send(state, ctl, FIRST, uid)
            controls = controls[:j] + (ctl,) + controls[j + 1:]
            return [(1.0, (state, controls, uid + 1), (1,) * n, None, refs)]
        tag, names = ev.ref
        ones = []

        def default(slot):
            nm = f"one.{j}.{slot}"
            ones.append(nm)
            return nm

        ctl, send, done = ctl.receive(ev.sender, tag, list(names), default)
        for nm in ones:
            state = state.with_registers([(nm, 1, 2)])
            state = qstate.set_register(state, nm, (1,))
        refs, b = {}, (0,) * n
        if send is not None:
            state, refs = self._send(state, ctl, send, uid)
            b = (1,) * n
        controls = controls[:j] + (ctl,) + controls[j + 1:]
        if not done:
            return [(1.0, (state, controls, uid + 1), b, None, refs)]
        anc = f"A.{j}"
        state = state.with_registers([(anc, 1, 2)])
        state = cnx_and(state, list(ctl.output), anc)
        out = []
        for br in qstate.measurement_branches(state, state.layout.sites(anc)):
            out.append((br.probability, (br.state, controls, uid + 1), b, br.outcome[0], refs))
        return out


# ---------------------------------------------------------------------------
# coin statistics from async traces


def coin_outputs(trace: sched.ExecutionTrace, n: int) -> dict:
    """player -> output bit, read from the async step records."""
    out = {}
    for _time, player, _a, _b, d in trace.rounds:
        if d != BOTTOM:
            out[player] = d
    return out


def coin_probabilities(dist: sched.TraceDistribution, n: int, good: Sequence[int] | None = None):
    good = list(range(n)) if good is None else list(good)
    p1 = p0 = 0.0
    for tr, p in dist.probs.items():
        outs = coin_outputs(tr, n)
        vals = [outs.get(i) for i in good]
        if all(v == 1 for v in vals):
            p1 += p
        elif all(v == 0 for v in vals):
            p0 += p
    return {"all1": p1, "all0": p0}


# ---------------------------------------------------------------------------
# core-set property (every coin in the core reaches every good player)


TRUE = "T"


@dataclass
class CoreReport:
    n: int
    t: int
    runs: int = 0
    violations: int = 0
    non_admissible: int = 0
    min_core: Optional[int] = None

    def record(self, size: int, weight: int = 1) -> None:
        self.runs += weight
        self.min_core = size if self.min_core is None else min(self.min_core, size)
        if size < self.n - self.t:
            self.violations += weight


def core_of(outputs: dict) -> set:
    """Players whose true coin sits in every listed player's returned vector."""
    vecs = list(outputs.values())
    n = len(vecs[0]) if vecs else 0
    return {j for j in range(n) if all(v[j] == TRUE for v in vecs)}


def core_threshold_enumeration(n: int, t: int | None = None) -> CoreReport:
    """Exhaustive core-set check over every choice of threshold sets.

    A run is summarized by, for each player, the n - t senders whose first,
    second and third messages it counted before sending its second, sending
    its third and returning.  Slot sets only grow by union, so any other
    message arriving before return can only enlarge the returned vectors:
    the run in which all of them are deferred past return is the worst case
    of its class, and it is always schedulable.  Crashes (up to t players,
    any prefix of their messages, any delivery subset) only remove players
    from the good set or restrict the choices, so they are covered by
    letting each crashed player's messages be chosen freely while its own
    output is ignored.  Every class is counted once per crash set.
    """
    t = default_t(n) if t is None else t
    need = n - t
    subsets = [sum(1 << j for j in c) for c in combinations(range(n), need)]
    crash_sets = [frozenset(c) for r in range(t + 1) for c in combinations(range(n), r)]
    rep = CoreReport(n, t)
    memo: dict = {}
    full = (1 << n) - 1

    def stage3(c3: tuple, good: tuple):
        key = (c3, good)
        if key in memo:
            return memo[key]
        options = []
        for i in good:
            opts = {}
            for s3 in subsets:
                f = c3[i]
                for k in range(n):
                    if s3 >> k & 1:
                        f |= c3[k]
                opts[f] = opts.get(f, 0) + 1
            options.append(list(opts.items()))
        worst, bad = n, 0
        stack = [(0, full, 1)]
        while stack:
            idx, inter, w = stack.pop()
            if idx == len(options):
                size = bin(inter).count("1")
                worst = min(worst, size)
                if size < need:
                    bad += w
                continue
            for f, cnt in options[idx]:
                stack.append((idx + 1, inter & f, w * cnt))
        memo[key] = (worst, bad)
        return worst, bad

    for S1 in product(subsets, repeat=n):
        for S2 in product(subsets, repeat=n):
            c3 = tuple(S1[k] | _or_of(S1, S2[k], n) for k in range(n))
            for K in crash_sets:
                good = tuple(i for i in range(n) if i not in K)
                worst, bad = stage3(c3, good)
                total = len(subsets) ** len(good)
                extra = len(subsets) ** (n - len(good))
                rep.runs += total * extra
                rep.violations += bad * extra
                rep.min_core = worst if rep.min_core is None else min(rep.min_core, worst)
    return rep


def _or_of(values: tuple, mask: int, n: int) -> int:
    out = 0
    for m in range(n):
        if mask >> m & 1:
            out |= values[m]
    return out


def core_from_trace_controls(controls: Sequence[CoreControl], crashed=()) -> set:
    outs = {c.i: c.output for c in controls if c.i not in set(crashed)}
    return core_of(outs)


class ProvenanceCoreProcess:
    """Async get-core process whose slots record provenance only (for engine runs)."""

    halts = False

    def __init__(self, n: int, t: int | None = None):
        self.n = n
        self.t = default_t(n) if t is None else t

    def initial(self, inputs):
        return tuple(CoreControl.start(i, self.n, self.t, TRUE) for i in range(self.n))

    def step(self, controls, j, k, ev):
        ctl = controls[j]
        n = self.n
        if k == 1:
            send, done = FIRST, False
        else:
            tag, values = ev.ref
            ctl, send, done = ctl.receive(ev.sender, tag, values, lambda slot: "default")
        refs, b = {}, (0,) * n
        if send is not None:
            vals = ctl.slots if send != FIRST else tuple(
                v if x == ctl.i else None for x, v in enumerate(ctl.slots))
            refs = {r: (send, vals) for r in range(n)}
            b = (1,) * n
        controls = controls[:j] + (ctl,) + controls[j + 1:]
        return [(1.0, controls, b, 1 if done else None, refs)]


# ---------------------------------------------------------------------------
# strengthened adversary: directly chosen received-sets


def core_set_adversary_min(n: int, t: int | None = None, bias: float | None = None,
                           target: int = 0) -> dict:
    """Exact min over received-set sequences V_1..V_m of P[all m outputs == target].

    Output i is 1 iff every coin in V_i is 1.  The sets must keep
    |V_1 ∩ ... ∩ V_m| >= n/2 and m ranges over n - t .. n.  The adversary
    sees each output before choosing the next set; only the branch where all
    outputs so far equal ``target`` matters for the objective.
    """
    t = default_t(n) if t is None else t
    p0 = 1.0 / n if bias is None else bias
    vectors = []
    for mask in range(2 ** n):
        coins = tuple((mask >> j) & 1 for j in range(n))
        w = math.prod(p0 if c == 0 else 1 - p0 for c in coins)
        if w > 0:
            vectors.append((coins, w))
    need = math.ceil(n / 2)
    subsets = [frozenset(c) for r in range(need, n + 1) for c in combinations(range(n), r)]

    @lru_cache(maxsize=None)
    def F(left: int, inter: frozenset, alive: frozenset) -> float:
        if left == 0:
            return sum(vectors[v][1] for v in alive)
        best = 1.0
        for V in subsets:
            I = inter & V
            if len(I) < need:
                continue
            keep = frozenset(v for v in alive
                             if (min(vectors[v][0][j] for j in V) == target))
            best = min(best, F(left - 1, I, keep))
        return best

    everything = frozenset(range(len(vectors)))
    per_m = {m: F(m, frozenset(range(n)), everything) for m in range(n - t, n + 1)}
    return {"min": min(per_m.values()), "per_m": per_m}


def lower_bound_all_zero() -> float:
    return 1.0 - math.exp(-0.5)
