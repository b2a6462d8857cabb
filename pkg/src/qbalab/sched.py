"""Round/step engines, execution traces and exhaustive branch enumeration.

Every engine is written as an ``expand(ctx) -> [(p, ctx'), ...]`` function
over immutable-ish run contexts.  ``drive`` either follows every branch
(exact enumeration, with optional probability cutoff and a branch budget)
or samples one branch per expansion from a seeded generator.
"""

from __future__ import annotations

import copy
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np

from . import qstate
from .normalform import (BOTTOM, ClassicalPlayer, QuantizedProtocol, decode_outcome, inbox_base,
                         initial_state, input_name, msg_base, recv_base, run_classical_round,
                         swap_message)
from .qstate import SparseState

DEFAULT_BUDGET = 10 ** 6


class BranchBudgetExceeded(RuntimeError):
    def __init__(self, count: int, budget: int):
        super().__init__(f"enumeration needs more than {budget} branches (reached {count})")
        self.count = count
        self.budget = budget


class InconsistentTrace(RuntimeError):
    """A replayed trace prefix has probability zero."""


class AdversaryViolation(RuntimeError):
    """A policy broke the corruption budget, monotonicity or locality."""


@dataclass(frozen=True)
class ExecutionTrace:
    """Classical record of one execution.

    ``rounds`` holds per-round tuples: ``(b, d)`` for sync Fail-stop runs,
    ``(a, a', b, d)`` for sync Byzantine runs and
    ``(time, player, a, b, d)`` for async steps.  In sync records ``b`` and
    ``d`` have one entry per player, ``None`` for players that did not run.
    """

    r_A: Any
    rounds: tuple = ()
    kind: str = "failstop"

    def prefix(self, k: int) -> "ExecutionTrace":
        return ExecutionTrace(self.r_A, self.rounds[:k], self.kind)

    def to_record(self, probability: float | None = None) -> dict:
        rec = {"r_A": _jsonable(self.r_A), "kind": self.kind, "rounds": _jsonable(self.rounds)}
        if probability is not None:
            rec["p"] = float(probability)
        return rec

    def to_json(self, probability: float | None = None) -> str:
        return json.dumps(self.to_record(probability), separators=(",", ":"))


def _jsonable(x):
    if isinstance(x, (tuple, list)):
        return [_jsonable(y) for y in x]
    if isinstance(x, frozenset):
        return sorted(_jsonable(y) for y in x)
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def _trace_sort_key(tr: ExecutionTrace):
    return json.dumps(tr.to_record())


@dataclass
class TraceDistribution:
    probs: dict = field(default_factory=dict)
    pruned: float = 0.0
    branches: int = 0
    meta: dict = field(default_factory=dict)

    def add(self, trace: ExecutionTrace, p: float) -> None:
        self.probs[trace] = self.probs.get(trace, 0.0) + p

    def total(self) -> float:
        return sum(self.probs.values())

    def items(self):
        return sorted(self.probs.items(), key=lambda kv: _trace_sort_key(kv[0]))

    def __len__(self) -> int:
        return len(self.probs)

    def probability(self, pred: Callable[[ExecutionTrace], bool]) -> float:
        return sum(p for tr, p in self.probs.items() if pred(tr))

    def prefix_probability(self, prefix: ExecutionTrace) -> float:
        k = len(prefix.rounds)
        return sum(p for tr, p in self.probs.items()
                   if tr.r_A == prefix.r_A and tr.rounds[:k] == prefix.rounds)

    def to_lines(self) -> list[str]:
        return [tr.to_json(p) for tr, p in self.items()]


def tv_distance(a: TraceDistribution, b: TraceDistribution) -> float:
    keys = set(a.probs) | set(b.probs)
    return 0.5 * sum(abs(a.probs.get(k, 0.0) - b.probs.get(k, 0.0)) for k in keys)


# ---------------------------------------------------------------------------
# generic driver


def drive(roots: Sequence[tuple[float, Any]], expand: Callable[[Any], list],
          is_done: Callable[[Any], bool], *, mode: str = "enumerate",
          rng: np.random.Generator | None = None, cutoff: float = 0.0,
          budget: int = DEFAULT_BUDGET, on_leaf: Callable[[Any, float], None] | None = None):
    """Walk the branch tree from ``roots``.

    Returns ``(leaves, pruned_mass, expanded)`` where leaves is a list of
    ``(ctx, p)``.  Sample mode follows exactly one path.
    """
    if mode == "sample":
        rng = rng if rng is not None else np.random.default_rng(0)
        ps = np.array([p for p, _ in roots])
        ctx = roots[_pick(ps, rng)][1]
        steps = 0
        while not is_done(ctx):
            children = expand(ctx)
            steps += 1
            ctx = children[_pick(np.array([p for p, _ in children]), rng)][1]
        if on_leaf:
            on_leaf(ctx, 1.0)
        return [(ctx, 1.0)], 0.0, steps
    stack = [(p, c) for p, c in reversed(roots)]
    leaves, pruned, count = [], 0.0, 0
    while stack:
        p, ctx = stack.pop()
        if p < cutoff:
            pruned += p
            continue
        if is_done(ctx):
            leaves.append((ctx, p))
            if on_leaf:
                on_leaf(ctx, p)
            continue
        count += 1
        if count > budget:
            raise BranchBudgetExceeded(count, budget)
        for q, child in reversed(expand(ctx)):
            stack.append((p * q, child))
    return leaves, pruned, count


def _pick(ps: np.ndarray, rng: np.random.Generator) -> int:
    cum = np.cumsum(ps / ps.sum())
    return int(min(np.searchsorted(cum, rng.random(), side="right"), len(ps) - 1))


def distribution_from(leaves, pruned: float, count: int, trace_of=lambda c: c.trace) -> TraceDistribution:
    dist = TraceDistribution(pruned=pruned, branches=count)
    for ctx, p in leaves:
        dist.add(trace_of(ctx), p)
    return dist


# ---------------------------------------------------------------------------
# shared helpers


def _validate_corruption(prev: frozenset, new: frozenset, t: int, n: int) -> None:
    if not prev <= new:
        raise AdversaryViolation(f"corruption must be monotone ({sorted(prev)} -> {sorted(new)})")
    if len(new) > t:
        raise AdversaryViolation(f"{len(new)} corruptions exceed budget t={t}")
    if any(not 0 <= i < n for i in new):
        raise AdversaryViolation(f"unknown player in {sorted(new)}")


def _split_digits(shape, digits: Sequence[int]) -> list[tuple]:
    out = [tuple(digits[:1]), tuple(digits[1:1 + shape.payload_sites])]
    if shape.sender_dim:
        out.append(tuple(digits[-1:]))
    return out


def _write_family(memory: dict, shape, base: str, digits: Sequence[int]) -> None:
    for name, part in zip(shape.names(base), _split_digits(shape, digits)):
        memory[name] = part


def _read_family(memory: dict, shape, base: str) -> tuple:
    out: tuple = ()
    for name in shape.names(base):
        out += memory[name]
    return out


def canonical_config(layout, key: tuple) -> tuple:
    return tuple(sorted((r.name, key[r.offset:r.offset + r.sites]) for r in layout.registers))


def canonical_distribution(state: SparseState) -> dict:
    out: dict = defaultdict(float)
    for k, a in state.amps.items():
        out[canonical_config(state.layout, k)] += abs(a) ** 2
    return dict(out)


# ---------------------------------------------------------------------------
# synchronous Fail-stop engines


@dataclass(frozen=True)
class SyncCtx:
    r_A: Any
    k: int = 0
    rounds: tuple = ()
    corrupted: frozenset = frozenset()
    terminated: frozenset = frozenset()
    sent: tuple = ()  # ((player, b-row), ...) of players that ran the last round undecided
    done: bool = False
    kind: str = "failstop"
    state: Optional[SparseState] = None  # quantum side
    states: tuple = ()  # system state after each round (full-information view)
    players: tuple = ()  # classical side: ClassicalPlayer objects
    memory: Optional[dict] = None  # classical register-level mirror
    owner: Optional[dict] = None  # byzantine: register -> owning player
    sim: Any = None  # byzantine classical side: SimulatedCorruptState

    @property
    def trace(self) -> ExecutionTrace:
        return ExecutionTrace(self.r_A, self.rounds, self.kind)


def _finish(q: QuantizedProtocol, ctx: SyncCtx) -> bool:
    n = q.n
    alive = [i for i in range(n) if i not in ctx.corrupted]
    return ctx.k >= q.classical.max_rounds or all(i in ctx.terminated for i in alive)


def _record(n: int, active: Sequence[int], results: dict) -> tuple:
    b = tuple(results[i][1] if i in results else None for i in range(n))
    d = tuple((BOTTOM if results[i][0] is None else results[i][0]) if i in results else None
              for i in range(n))
    return b, d


def _after_round(q: QuantizedProtocol, ctx: SyncCtx, k: int, results: dict, record: tuple, **kw) -> SyncCtx:
    term = set(ctx.terminated)
    sent = []
    for i, (d, b) in sorted(results.items()):
        if d is not None:
            term.add(i)
        else:
            sent.append((i, b))
    new = replace(ctx, k=k, rounds=ctx.rounds + (record,), terminated=frozenset(term),
                  sent=tuple(sent), **kw)
    return replace(new, done=_finish(q, new))


def failstop_action(adv, k: int, ctx: SyncCtx, n: int, *, view: str):
    """Ask a Fail-stop adversary for (S_k, withheld) using only what it may see."""
    if adv is None:
        return frozenset(), frozenset()
    if view == "trace":
        S, withheld = adv.decide(k, ctx.r_A, ctx.trace)
    else:
        S, withheld = adv.decide(k, ctx.r_A, ctx.states)
    S, withheld = frozenset(S), frozenset(withheld)
    _validate_corruption(ctx.corrupted, S, adv.t, n)
    newly = S - ctx.corrupted
    bad = [e for e in withheld if e[0] not in newly]
    if bad:
        raise AdversaryViolation(f"may only withhold messages of newly corrupted players, got {bad}")
    return S, withheld


def _delivered(ctx: SyncCtx, S: frozenset, withheld: frozenset, active: Sequence[int]):
    newly = S - ctx.corrupted
    for i, row in ctx.sent:
        for j in active:
            if row[j] and (i not in S or (i in newly and (i, j) not in withheld)):
                yield i, j


def q_failstop_round(q: QuantizedProtocol, adv, ctx: SyncCtx, forced: tuple | None = None) -> list:
    """One round of (P_Q, A_Q) with a Fail-stop adversary.

    ``forced`` replays a recorded ``(b, d)`` round instead of branching.
    """
    n, shape = q.n, q.shape
    k = ctx.k + 1
    S, withheld = failstop_action(adv, k, ctx, n, view="state")
    active = [i for i in range(n) if i not in S and i not in ctx.terminated]
    state = ctx.state
    if k > 1:
        specs = [s for j in active for i in range(n) for s in shape.specs(recv_base(k - 1, i, j))]
        state = state.with_registers(specs)
        for i, j in _delivered(ctx, S, withheld, active):
            state = swap_message(state, shape, msg_base(k - 1, i, j), recv_base(k - 1, i, j))
    for i in active:
        state = q.step(state, i, k)
    sites, spans = _measure_plan(q, state.layout, k, active)
    children = []
    for outcome, p, post in _branches(state, sites, _forced_digits(q, forced, active)):
        results = _split_outcome(q, outcome, spans)
        record = _record(n, active, results)
        children.append((p, _after_round(q, ctx, k, results, record, state=post,
                                         states=ctx.states + (post,), corrupted=S)))
    return children


def _measure_plan(q, layout, k, active):
    sites, spans, pos = [], [], 0
    for i in active:
        s = q.measured_sites(layout, k, i)
        sites.extend(s)
        spans.append((i, pos, pos + len(s)))
        pos += len(s)
    return tuple(sites), spans


def _split_outcome(q, outcome, spans) -> dict:
    return {i: decode_outcome(q, outcome[lo:hi]) for i, lo, hi in spans}


def _forced_digits(q: QuantizedProtocol, forced, active):
    if forced is None:
        return None
    b, d = forced[-2], forced[-1]
    digits = []
    for i in active:
        if b[i] is None:
            raise InconsistentTrace(f"recorded trace has player {i} inactive")
        digits.append(d[i])
        digits.extend(b[i])
    return tuple(digits)


def _branches(state: SparseState, sites, forced):
    if not sites:
        return [((), 1.0, state)]
    if forced is not None:
        p, post = qstate.project(state, sites, forced)
        if p == 0.0:
            raise InconsistentTrace(f"outcome {forced} has probability zero")
        return [(forced, 1.0, post)]
    return [(br.outcome, br.probability, br.state) for br in qstate.measurement_branches(state, sites)]


def _randomness_branches(q: QuantizedProtocol, players: Sequence[int], k: int):
    c = q.classical
    supports = [sorted((r, p) for r, p in c.randomness(i, k).items() if p > 0) for i in players]
    for combo in product(*supports):
        p = math.prod(x[1] for x in combo)
        yield p, [x[0] for x in combo]


def _classical_step(q: QuantizedProtocol, ctx_players: list, memory: dict, i: int, k: int,
                    incoming, r) -> tuple:
    shape = q.shape
    player = ctx_players[i]
    msgs, b, d = run_classical_round(q.classical, player, incoming, r=r)
    memory[f"R{k}.{i}"] = tuple(r)
    digits = q.encode_step(player.last, i)
    pos = 0
    names = q.ancilla_names(k, i)
    specs = dict((s[0], s[1]) for s in q.ancilla_specs(k, i))
    for name in names:
        w = specs[name]
        memory[name] = tuple(digits[pos:pos + w])
        pos += w
    return d, b


def c_failstop_round(q: QuantizedProtocol, adv, ctx: SyncCtx, *, view: str = "trace") -> list:
    """One round of (P_C, A_C): classical players, private-channel adversary.

    With ``view="state"`` the adversary instead sees the literal classical
    memory as a basis state (full-information classical adversary).
    """
    n, shape = q.n, q.shape
    k = ctx.k + 1
    S, withheld = failstop_action(adv, k, ctx, n, view=view)
    active = [i for i in range(n) if i not in S and i not in ctx.terminated]
    memory = dict(ctx.memory)
    incoming = {j: [None] * n for j in active}
    if k > 1:
        for j in active:
            for i in range(n):
                _write_family(memory, shape, recv_base(k - 1, i, j), (0,) * shape.width)
        for i, j in _delivered(ctx, S, withheld, active):
            src = msg_base(k - 1, i, j)
            digits = _read_family(memory, shape, src)
            _write_family(memory, shape, recv_base(k - 1, i, j), digits)
            _write_family(memory, shape, src, (0,) * shape.width)
            incoming[j][i] = shape.decode(digits)
    children = []
    for p, rs in _randomness_branches(q, active, k):
        players = [copy.copy(pl) for pl in ctx.players]
        mem = dict(memory)
        results = {}
        for i, r in zip(active, rs):
            results[i] = _classical_step(q, players, mem, i, k, tuple(incoming[i]), r)
        record = _record(n, active, results)
        child = _after_round(q, ctx, k, results, record, players=tuple(players), memory=mem,
                             corrupted=S)
        if view == "state":
            child = replace(child, states=ctx.states + (memory_state(mem),))
        children.append((p, child))
    return children


def memory_state(memory: dict) -> SparseState:
    """Classical memory as a basis state over registers sorted by name."""
    names = sorted(memory)
    dims = {}
    for name in names:
        digits = memory[name]
        dims[name] = (len(digits), max(2, max(digits) + 1) if digits else 2)
    layout = qstate.RegisterLayout((n, max(dims[n][0], 1), max(dims[n][1], 2)) for n in names)
    key: tuple = ()
    for n in names:
        key += memory[n]
    return SparseState(layout, {key: 1.0})


def sync_roots(q: QuantizedProtocol, adv, inputs: Sequence[int], side: str, kind: str = "failstop",
               extra_specs: Sequence[tuple] = ()) -> list:
    r_dist = adv.r_dist if adv is not None else {None: 1.0}
    roots = []
    for r_A, p in sorted(r_dist.items(), key=lambda kv: repr(kv[0])):
        if side == "quantum":
            state = initial_state(q, inputs, extra_specs)
            ctx = SyncCtx(r_A, kind=kind, state=state)
            if kind == "byzantine":
                ctx = replace(ctx, owner=initial_owner(q.n, state.layout))
        else:
            memory = {input_name(i): (x,) for i, x in enumerate(inputs)}
            for name, sites, _dim in extra_specs:
                memory[name] = (0,) * sites
            players = tuple(ClassicalPlayer(i, x) for i, x in enumerate(inputs))
            ctx = SyncCtx(r_A, kind=kind, players=players, memory=memory)
        roots.append((p, ctx))
    return roots


def initial_owner(n: int, layout) -> dict:
    owner = {}
    for name in layout.names():
        owner[name] = _default_owner(name)
    return owner


def _default_owner(name: str) -> int:
    """Owner of a freshly allocated register, from its naming convention."""
    head, *rest = name.split(".")
    parts = [p for p in rest if p.isdigit()]
    if head[0] == "I":
        return int(parts[1])  # receive slot belongs to the receiver
    return int(parts[0])


# ---------------------------------------------------------------------------
# synchronous Byzantine engines


def _check_local(names: Iterable[str], owner: dict, allowed: frozenset, what: str) -> None:
    for name in names:
        if owner.get(name) not in allowed:
            raise AdversaryViolation(f"{what} touches register {name!r} not held by corrupted players")


def _apply_ops(state: SparseState, ops, cap: int) -> SparseState:
    for names, matrix in ops:
        state = qstate.apply_unitary_to(state, names, matrix, cap=cap)
    return state


def _fresh_outgoing(q: QuantizedProtocol, k: int, old_bad: frozenset, good: Sequence[int], layout):
    specs = []
    for j in sorted(old_bad):
        for i in good:
            base = msg_base(k - 1, j, i)
            if base not in layout:
                specs.extend(q.shape.specs(base))
    return specs


def q_byzantine_round(q: QuantizedProtocol, adv, ctx: SyncCtx, forced: tuple | None = None,
                      stop_after_corruption: bool = False) -> list:
    """One round of (P_Q, A_Q) against a Byzantine adversary.

    Steps: S_{k-1} receive; (U_k, M_k) -> a_k; corrupt S_k; (U'_k, M'_k) -> a'_k;
    good players receive, apply U_P and measure (B, D).  ``forced`` replays a
    recorded ``(a, a', b, d)``; ``stop_after_corruption`` returns the state right
    after the corruption step (used to rebuild the corrupted side's state).
    """
    n, shape, cap = q.n, q.shape, adv.dense_cap
    k = ctx.k + 1
    prev = ctx.corrupted
    owner = dict(ctx.owner)
    state = ctx.state
    # step 1: corrupted players receive
    if k > 1:
        specs = []
        for i, row in ctx.sent:
            for j in sorted(prev):
                if row[j]:
                    specs.extend(shape.specs(recv_base(k - 1, i, j)))
        state = state.with_registers(specs)
        for name, *_ in specs:
            owner[name] = _default_owner(name)
        for i, row in ctx.sent:
            for j in sorted(prev):
                if row[j]:
                    state = swap_message(state, shape, msg_base(k - 1, i, j), recv_base(k - 1, i, j))
    history = ctx.rounds
    ops, meas = adv.g(k, ctx.r_A, history)
    _check_local([nm for names, _ in ops for nm in names] + list(meas), owner, prev, "U_k/M_k")
    state = _apply_ops(state, ops, cap)
    forced_a = None if forced is None else forced[0]
    children = []
    for a, pa, s1 in _measure_named(state, meas, forced_a):
        S, ops2, meas2 = adv.f(k, ctx.r_A, history, a)
        S = frozenset(S)
        _validate_corruption(prev, S, adv.t, n)
        own = dict(owner)
        good = [i for i in range(n) if i not in S and i not in ctx.terminated]
        if stop_after_corruption:
            children.append((pa, (s1, own, S, a)))
            continue
        specs = _fresh_outgoing(q, k, prev, good, s1.layout) if k > 1 else []
        s1 = s1.with_registers(specs)
        for name, *_ in specs:
            own[name] = _default_owner(name)
        _check_local([nm for names, _ in ops2 for nm in names] + list(meas2), own, S, "U'_k/M'_k")
        s2 = _apply_ops(s1, ops2, cap)
        forced_a2 = None if forced is None else forced[1]
        for a2, pa2, s3 in _measure_named(s2, meas2, forced_a2):
            children.extend(_byz_good_phase(q, ctx, k, S, good, s3, own, a, a2, pa * pa2, forced))
    return children


def _byz_good_phase(q, ctx, k, S, good, state, owner, a, a2, p0, forced):
    n, shape = q.n, q.shape
    owner = dict(owner)
    if k > 1:
        specs = [s for j in good for i in range(n) for s in shape.specs(recv_base(k - 1, i, j))]
        state = state.with_registers(specs)
        for name, *_ in specs:
            owner[name] = _default_owner(name)
        senders = dict(ctx.sent)
        for j in good:
            for i in range(n):
                src = msg_base(k - 1, i, j)
                if i in S:
                    if src in state.layout:
                        state = swap_message(state, shape, src, recv_base(k - 1, i, j))
                elif i in senders and senders[i][j]:
                    state = swap_message(state, shape, src, recv_base(k - 1, i, j))
    for i in good:
        state = q.step(state, i, k)
        for name in [f"R{k}.{i}"] + q.ancilla_names(k, i):
            owner[name] = i
    sites, spans = _measure_plan(q, state.layout, k, good)
    fd = None if forced is None else _forced_digits(q, forced, good)
    out = []
    for outcome, p, post in _branches(state, sites, fd):
        results = _split_outcome(q, outcome, spans)
        b, d = _record(n, good, results)
        record = (a, a2, b, d)
        out.append((p0 * p, _after_round(q, ctx, k, results, record, state=post, owner=owner,
                                          corrupted=S, states=ctx.states + (post,))))
    return out


def _measure_named(state: SparseState, names: Sequence[str], forced):
    if not names:
        return [((), 1.0, state)]
    sites = state.layout.sites(*names)
    return _branches(state, sites, None if forced is None else tuple(forced))


@dataclass
class SimulatedCorruptState:
    """What the private-channel adversary keeps: transcript T and a simulated state."""

    transcript: dict
    state: SparseState


def c_byzantine_round(q: QuantizedProtocol, adv, ctx: SyncCtx) -> list:
    """One round of (P_C, A_C) with the constructed classical Byzantine adversary.

    The adversary object only ever receives r_A, the trace prefix, its own
    measurement outcomes and the transcript T; honest contents reach it only
    through messages addressed to corrupted players.
    """
    n, shape, cap = q.n, q.shape, adv.dense_cap
    k = ctx.k + 1
    prev = ctx.corrupted
    memory = dict(ctx.memory)
    sim: SimulatedCorruptState = ctx.sim
    T = dict(sim.transcript)
    phi = sim.state
    if k > 1:
        for i, row in ctx.sent:
            for j in sorted(prev):
                if row[j]:
                    src, dst = msg_base(k - 1, i, j), recv_base(k - 1, i, j)
                    digits = _read_family(memory, shape, src)
                    phi = _append_basis(phi, shape, dst, digits)
                    _write_family(memory, shape, src, (0,) * shape.width)
                    T[f"C{k - 1}.{i}.{j}"] = digits
    history = ctx.rounds
    ops, meas = adv.g(k, ctx.r_A, history)
    phi = _apply_ops(phi, ops, cap)
    children = []
    for a, pa, phi1 in _measure_named(phi, meas, None):
        S, ops2, meas2 = adv.f(k, ctx.r_A, history, a)
        S = frozenset(S)
        _validate_corruption(prev, S, adv.t, n)
        mem = dict(memory)
        T1 = dict(T)
        players = list(ctx.players)
        newly = S - prev
        good = [i for i in range(n) if i not in S and i not in ctx.terminated]
        if newly:
            _learn_transcript(q, k, mem, T1, newly, S, ctx.rounds)
            phi1 = adv.simulate_corrupt_state(ctx.r_A, history, a, k, S, T1)
            for name in [nm for nm in list(mem) if _default_owner(nm) in newly]:
                del mem[name]
        if k > 1:
            specs = _fresh_outgoing(q, k, prev, good, phi1.layout)
            phi1 = phi1.with_registers(specs)
        phi2 = _apply_ops(phi1, ops2, cap)
        for a2, pa2, phi3 in _measure_named(phi2, meas2, None):
            for outs, pm, phi4, mem2, T2 in _measure_outgoing(q, k, S, good, phi3, mem, T1):
                children.extend(_c_good_phase(q, ctx, k, S, good, mem2, players, phi4, T2, a, a2,
                                              pa * pa2 * pm, outs))
    return children


def _append_basis(phi: SparseState, shape, base: str, digits) -> SparseState:
    specs = shape.specs(base)
    phi = phi.with_registers(specs)
    for (name, _s, _d), part in zip(specs, _split_digits(shape, digits)):
        phi = qstate.set_register(phi, name, part)
    return phi


def _learn_transcript(q, k, mem, T, newly, S, rounds) -> None:
    """On corruption, read the victims' memory: their copies and received messages.

    Which registers exist on the good side follows from the trace alone
    (who ran which round).
    """
    n = q.n
    ran = lambda r, i: 1 <= r <= len(rounds) and rounds[r - 1][2][i] is not None
    for j in sorted(newly):
        for r in range(1, k):
            for i in range(n):
                if i in S:
                    continue
                # i -> j: good side keeps C_r^{(i,j)}, j holds I_r^{(i,j)}
                if ran(r, i) and f"I{r}.{i}.{j}.p" in mem:
                    T[f"C{r}.{i}.{j}"] = _read_family(mem, q.shape, recv_base(r, i, j))
                # j -> i: good side holds I_r^{(j,i)}, j keeps C_r^{(j,i)}
                if ran(r + 1, i) and f"C{r}.{j}.{i}.p" in mem:
                    T[f"I{r}.{j}.{i}"] = _read_family(mem, q.shape, f"C{r}.{j}.{i}")


def _measure_outgoing(q, k, S, good, phi, mem, T):
    """M_msg: measure what corrupted players send to good players this round."""
    shape = q.shape
    bases = [(j, i, msg_base(k - 1, j, i)) for j in sorted(S) for i in good
             if k > 1 and msg_base(k - 1, j, i) + ".p" in phi.layout]
    if not bases:
        return [({}, 1.0, phi, mem, T)]
    names = [nm for _j, _i, b in bases for nm in shape.names(b)]
    out = []
    w = shape.width
    for outcome, p, post in _branches(phi, phi.layout.sites(*names), None):
        m2, T2 = dict(mem), dict(T)
        outs = {}
        for idx, (j, i, base) in enumerate(bases):
            digits = tuple(outcome[idx * w:(idx + 1) * w])
            for name in shape.names(base):
                post = qstate.set_register(post, name, (0,) * post.layout[name].sites)
            outs[(j, i)] = digits
            T2[f"I{k - 1}.{j}.{i}"] = digits
        out.append((outs, p, post, m2, T2))
    return out


def _c_good_phase(q, ctx, k, S, good, mem, players, phi, T, a, a2, p0, outs):
    n, shape = q.n, q.shape
    incoming = {j: [None] * n for j in good}
    if k > 1:
        senders = dict(ctx.sent)
        for j in good:
            for i in range(n):
                _write_family(mem, shape, recv_base(k - 1, i, j), (0,) * shape.width)
            for i in range(n):
                if i in S:
                    if (i, j) in outs:
                        digits = outs[(i, j)]
                        _write_family(mem, shape, recv_base(k - 1, i, j), digits)
                        incoming[j][i] = shape.decode(digits)
                elif i in senders and senders[i][j]:
                    src = msg_base(k - 1, i, j)
                    digits = _read_family(mem, shape, src)
                    _write_family(mem, shape, recv_base(k - 1, i, j), digits)
                    _write_family(mem, shape, src, (0,) * shape.width)
                    incoming[j][i] = shape.decode(digits)
    children = []
    for p, rs in _randomness_branches(q, good, k):
        pl = [copy.copy(x) for x in players]
        m = dict(mem)
        results = {}
        for i, r in zip(good, rs):
            results[i] = _classical_step(q, pl, m, i, k, tuple(incoming[i]), r)
        b, d = _record(n, good, results)
        sim = SimulatedCorruptState(T, phi)
        children.append((p0 * p, _after_round(q, ctx, k, results, (a, a2, b, d), players=tuple(pl),
                                              memory=m, corrupted=S, sim=sim)))
    return children


def byzantine_classical_roots(q, adv, inputs, extra_specs=()) -> list:
    roots = sync_roots(q, adv, inputs, "classical", kind="byzantine", extra_specs=extra_specs)
    empty = SparseState(qstate.RegisterLayout(), {(): 1.0})
    return [(p, replace(c, sim=SimulatedCorruptState({}, empty))) for p, c in roots]


# ---------------------------------------------------------------------------
# public sync entry point


def run_sync(q: QuantizedProtocol, adversary, inputs: Sequence[int], *, side: str = "quantum",
             mode: str = "enumerate", seed: int = 0, cutoff: float = 0.0,
             budget: int = DEFAULT_BUDGET, keep_leaves: bool = False):
    """Run (P_Q, A_Q) (``side="quantum"``) or (P_C, A_C) (``side="classical"``).

    Enumerate mode returns a ``TraceDistribution`` (leaves attached as
    ``meta["leaves"]`` when requested); sample mode returns the single
    ``ExecutionTrace`` drawn with the given seed.
    """
    kind = getattr(adversary, "kind", "failstop") if adversary is not None else "failstop"
    extra = tuple(getattr(adversary, "workspace_specs", ()) or ())
    if kind == "byzantine":
        if side == "quantum":
            roots = sync_roots(q, adversary, inputs, "quantum", kind="byzantine", extra_specs=extra)
            expand = lambda c: q_byzantine_round(q, adversary, c)
        else:
            roots = byzantine_classical_roots(q, adversary, inputs, extra)
            expand = lambda c: c_byzantine_round(q, adversary, c)
    else:
        roots = sync_roots(q, adversary, inputs, side)
        if side == "quantum":
            expand = lambda c: q_failstop_round(q, adversary, c)
        else:
            view = getattr(adversary, "view", "trace") if adversary is not None else "trace"
            expand = lambda c: c_failstop_round(q, adversary, c, view=view)
    rng = np.random.default_rng(seed)
    leaves, pruned, count = drive(roots, expand, lambda c: c.done, mode=mode, rng=rng,
                                  cutoff=cutoff, budget=budget)
    if mode == "sample":
        return leaves[0][0].trace
    dist = distribution_from(leaves, pruned, count)
    dist.meta["side"] = side
    if keep_leaves:
        dist.meta["leaves"] = leaves
    return dist


# ---------------------------------------------------------------------------
# asynchronous step engine


@dataclass(frozen=True, order=True)
class Pending:
    time: int
    seq: int
    sender: int
    receiver: int
    ref: Any = field(compare=False)


@dataclass(frozen=True)
class AsyncCtx:
    r_A: Any
    payload: Any
    pending: tuple = ()
    seq: int = 0
    steps: tuple = ()
    terminated: frozenset = frozenset()  # players that produced an output
    halted: frozenset = frozenset()  # players that stopped processing messages
    rounds: tuple = ()
    done: bool = False
    max_delay: int = 1
    admissible: bool = True

    @property
    def trace(self) -> ExecutionTrace:
        return ExecutionTrace(self.r_A, self.rounds, "async")


class AsyncSchedule:
    """Fail-stop asynchronous adversary: per-message delays, crashes and drops.

    Delays are finite and drops only hit messages of crashed senders, so every
    run drains the honest message pool (admissible by construction).
    """

    kind = "failstop"

    def __init__(self, n: int, t: int = 0, delay=None, crashes: dict | None = None,
                 drop=None, r_dist=None):
        self.n, self.t = n, t
        self._delay = delay or (lambda sender, receiver, time, seq: 1)
        self.crashes = dict(crashes or {})
        if len(self.crashes) > t:
            raise AdversaryViolation(f"{len(self.crashes)} crashes exceed t={t}")
        self._drop = drop or (lambda sender, receiver, time: False)
        self.r_dist = r_dist or {None: 1.0}

    def delay(self, sender, receiver, time, seq) -> int:
        d = int(self._delay(sender, receiver, time, seq))
        if d < 1:
            raise AdversaryViolation("delays must be positive")
        return d

    def crashed(self, player: int, time: int) -> bool:
        c = self.crashes.get(player)
        return c is not None and time >= c

    def drops(self, sender: int, receiver: int, time: int) -> bool:
        return sender in self.crashes and bool(self._drop(sender, receiver, time))


def _async_expand(process, sched: AsyncSchedule, n: int, ctx: AsyncCtx) -> list:
    pending = list(ctx.pending)
    while pending:
        ev = pending.pop(0)
        j = ev.receiver
        if j in ctx.halted or sched.crashed(j, ev.time):
            continue
        k = ctx.steps[j] + 1
        out = []
        for p, payload, b, d, refs in process.step(ctx.payload, j, k, ev):
            new_pending = list(pending)
            seq = ctx.seq
            max_delay = ctx.max_delay
            for r in range(n):
                if b[r] and not sched.drops(j, r, ev.time):
                    delay = sched.delay(j, r, ev.time, seq)
                    max_delay = max(max_delay, delay)
                    new_pending.append(Pending(ev.time + delay, seq, j, r, refs[r]))
                    seq += 1
            new_pending.sort()
            steps = list(ctx.steps)
            steps[j] = k
            term = ctx.terminated | ({j} if d is not None else set())
            halted = ctx.halted | ({j} if d is not None and process.halts else set())
            rec = (ev.time, j, (), tuple(b), BOTTOM if d is None else d)
            child = replace(ctx, payload=payload, pending=tuple(new_pending), seq=seq,
                            steps=tuple(steps), terminated=frozenset(term), halted=frozenset(halted),
                            rounds=ctx.rounds + (rec,), max_delay=max_delay)
            out.append((p, _async_check_done(child, sched, n)))
        return out
    return [(1.0, _async_check_done(replace(ctx, pending=()), sched, n))]


def _async_check_done(ctx: AsyncCtx, sched: AsyncSchedule, n: int) -> AsyncCtx:
    if ctx.pending:
        return ctx
    undecided = [i for i in range(n) if i not in ctx.terminated and i not in sched.crashes]
    return replace(ctx, done=True, admissible=not undecided)


class NormalFormProcess:
    """Async process for a normal-form protocol, quantum or classical side.

    ``step`` returns ``(p, payload', b, d, refs)`` where ``refs`` maps each
    addressed receiver to whatever the process needs to deliver later.
    """

    def __init__(self, q: QuantizedProtocol, side: str):
        self.q, self.side = q, side
        self.halts = q.classical.halt_on_decide

    def initial(self, inputs):
        if self.side == "quantum":
            return initial_state(self.q, inputs)
        return tuple(ClassicalPlayer(i, x) for i, x in enumerate(inputs))

    def step(self, payload, j, k, ev):
        q = self.q
        if self.side == "quantum":
            state = payload
            if k > 1:
                state = state.with_registers(q.shape.specs(inbox_base(k, j)))
                state = swap_message(state, q.shape, ev.ref, inbox_base(k, j))
            state = q.step(state, j, k)
            out = []
            for br in qstate.measurement_branches(state, q.measured_sites(state.layout, k, j)):
                d, b = decode_outcome(q, br.outcome)
                refs = {r: msg_base(k, j, r) for r in range(q.n) if b[r]}
                out.append((br.probability, br.state, b, d, refs))
            return out
        out = []
        for p, (r,) in _randomness_branches(q, [j], k):
            pl = list(payload)
            pl[j] = copy.copy(payload[j])
            msgs, b, d = run_classical_round(q.classical, pl[j], ev.ref if k > 1 else None, r=r)
            refs = {x: (j, msgs[x]) for x in range(q.n) if b[x]}
            out.append((p, tuple(pl), b, d, refs))
        return out


def run_async(process, inputs: Sequence[int], schedule: AsyncSchedule, *, mode: str = "enumerate",
              seed: int = 0, cutoff: float = 0.0, budget: int = DEFAULT_BUDGET,
              keep_leaves: bool = False):
    """Step-semantics execution: one good player receives one message per step.

    Inputs arrive as each player's first message at time 0.
    """
    n = len(inputs)
    roots = []
    for r_A, p in sorted(schedule.r_dist.items(), key=lambda kv: repr(kv[0])):
        pend = tuple(Pending(0, i, -1, i, None) for i in range(n))
        roots.append((p, AsyncCtx(r_A, process.initial(inputs), pend, seq=n, steps=(0,) * n)))
    expand = lambda c: _async_expand(process, schedule, n, c)
    leaves, pruned, count = drive(roots, expand, lambda c: c.done, mode=mode,
                                  rng=np.random.default_rng(seed), cutoff=cutoff, budget=budget)
    if mode == "sample":
        return leaves[0][0].trace
    dist = distribution_from(leaves, pruned, count)
    dist.meta["admissible"] = all(c.admissible for c, _ in leaves)
    dist.meta["max_delay"] = max((c.max_delay for c, _ in leaves), default=1)
    if keep_leaves:
        dist.meta["leaves"] = leaves
    return dist


# ---------------------------------------------------------------------------
# metrics


def message_count(trace: ExecutionTrace) -> int:
    """Messages sent by players that ran (good players), summed over rounds/steps."""
    total = 0
    for rec in trace.rounds:
        b = rec[3] if trace.kind == "async" else rec[-2]
        if trace.kind == "async":
            total += sum(b)
        else:
            total += sum(sum(row) for row in b if row is not None)
    return total


def round_count(trace: ExecutionTrace, max_delay: int = 1) -> float:
    """Sync: number of rounds.  Async: virtual-clock span over the longest delay."""
    if not trace.rounds:
        return 0
    if trace.kind == "async":
        return max(rec[0] for rec in trace.rounds) / max_delay
    return len(trace.rounds)


# ---------------------------------------------------------------------------
# exhaustive interleaving search


def explore(initial, successors: Callable[[Any], list], terminal: Callable[[Any], bool],
            *, budget: int = DEFAULT_BUDGET):
    """Memoized DFS over a finite transition system; yields each distinct terminal state."""
    seen = {initial}
    stack = [initial]
    while stack:
        s = stack.pop()
        if terminal(s):
            yield s
            continue
        for nxt in successors(s):
            if nxt not in seen:
                seen.add(nxt)
                if len(seen) > budget:
                    raise BranchBudgetExceeded(len(seen), budget)
                stack.append(nxt)
