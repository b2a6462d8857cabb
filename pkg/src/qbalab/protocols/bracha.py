"""Bracha reliable broadcast (init / echo / ready) as an async normal-form protocol.

Thresholds: echo on the sender's init, ready after n - t matching echoes or
t + 1 matching readys, deliver after n - t matching readys.  The guarantees
need 3t < n; outside that range runs still execute but carry a flag.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .. import sched
from ..normalform import BOTTOM, LocalProtocol, multicast, quantize, silent, wrap_non_erasing

INIT, ECHO, READY = 0, 1, 2


def resilient(n: int, t: int) -> bool:
    return 3 * t < n


@dataclass(frozen=True)
class _Local:
    i: int
    value: int
    echoed: bool = False
    readied: bool = False
    delivered: Optional[int] = None
    echoes: tuple = ()  # (sender, value)
    readys: tuple = ()
    send: Optional[tuple] = None
    decide: Optional[int] = None


def _count(pairs: tuple, v: int) -> int:
    return len({s for s, x in pairs if x == v})


def bracha_protocol(n: int, t: int, sender: int = 0):
    """Normal-form broadcast; the sender's input bit is the broadcast value."""

    def init(i, x, r):
        send = (INIT, x) if i == sender else None
        return _Local(i, x, send=send)

    def update(st: _Local, copies, received, r):
        src, (tag, v) = received
        echoes, readys = st.echoes, st.readys
        echoed, readied, delivered = st.echoed, st.readied, st.delivered
        send = decide = None
        if tag == INIT and src == sender and not echoed:
            echoed, send = True, (ECHO, v)
        elif tag == ECHO and all(s != src for s, _ in echoes):
            echoes += ((src, v),)
            if not readied and _count(echoes, v) >= n - t:
                readied, send = True, (READY, v)
        elif tag == READY and all(s != src for s, _ in readys):
            readys += ((src, v),)
            if not readied and _count(readys, v) >= t + 1:
                readied, send = True, (READY, v)
            if delivered is None and _count(readys, v) >= n - t:
                delivered = decide = v
        return _Local(st.i, st.value, echoed, readied, delivered, echoes, readys, send, decide)

    def output(st: _Local, n_):
        if st.send is None:
            return silent(n_, st.decide)
        return multicast(n_, st.send, st.decide)

    return wrap_non_erasing(LocalProtocol(
        name="bracha", n=n, payload_dim=3, payload_sites=2, rand_dim=2, rand_sites=1,
        randomness=lambda _i, _k: {(0,): 1.0}, init=init, update=update, output=output,
        mode="async", max_rounds=3 * n + 2, max_faulty=lambda m: (m - 1) // 3,
        halt_on_decide=False))


@dataclass(frozen=True)
class Liar:
    """Scripted Byzantine player: sends init (if it is the sender), echo and
    ready with a per-receiver value on its first three steps, then stays silent."""

    values: Mapping[int, int]
    tags: tuple = (INIT, ECHO, READY)
    silent_after: int = 3


class BrachaProcess:
    """Classical async process with optional scripted Byzantine players."""

    halts = False

    def __init__(self, n: int, t: int, sender: int = 0, liars: Optional[Mapping[int, Liar]] = None):
        self.n, self.t, self.sender = n, t, sender
        self.liars = dict(liars or {})
        self.inner = sched.NormalFormProcess(quantize(bracha_protocol(n, t, sender)), "classical")

    def initial(self, inputs):
        return self.inner.initial(inputs)

    def step(self, payload, j, k, ev):
        liar = self.liars.get(j)
        if liar is None:
            return self.inner.step(payload, j, k, ev)
        tags = [tg for tg in liar.tags if tg != INIT or j == self.sender]
        if k > len(tags):
            return [(1.0, payload, (0,) * self.n, None, {})]
        tag = tags[k - 1]
        refs = {r: (j, (tag, liar.values.get(r, 0))) for r in range(self.n)}
        return [(1.0, payload, (1,) * self.n, None, refs)]


@dataclass
class BrachaResult:
    n: int
    t: int
    sender: int
    value: int
    deliveries: dict
    good: list
    guarantee: bool
    notes: list = field(default_factory=list)

    @property
    def consistent(self) -> bool:
        vals = {self.deliveries[i] for i in self.good if i in self.deliveries}
        return len(vals) <= 1

    @property
    def total(self) -> bool:
        got = [i in self.deliveries for i in self.good]
        return all(got) or not any(got)

    @property
    def valid(self) -> bool:
        """Good sender: every good player delivers its value."""
        if self.sender not in self.good:
            return True
        return all(self.deliveries.get(i) == self.value for i in self.good)


def random_delays(seed: int, max_delay: int = 4):
    """Deterministic pseudo-random per-message delays in 1..max_delay."""
    rng = np.random.default_rng(seed)
    table = {}

    def delay(sender, receiver, time, seq):
        if seq not in table:
            table[seq] = int(rng.integers(1, max_delay + 1))
        return table[seq]
    return delay


def bracha_broadcast(n: int, t: int, sender: int, value: int, *, liars=None, seed: int = 0,
                     max_delay: int = 4) -> BrachaResult:
    """Run one broadcast under a seeded random delay schedule."""
    ok = resilient(n, t)
    liars = dict(liars or {})
    if len(liars) > t:
        raise ValueError(f"{len(liars)} Byzantine players exceed t={t}")
    if not ok:
        warnings.warn(f"Bracha guarantees need 3t < n (n={n}, t={t})", stacklevel=2)
    schedule = sched.AsyncSchedule(n, 0, delay=random_delays(seed, max_delay))
    inputs = [value if i == sender else 0 for i in range(n)]
    trace = sched.run_async(BrachaProcess(n, t, sender, liars), inputs, schedule,
                            mode="sample", seed=seed)
    deliveries = {}
    for _time, player, _a, _b, d in trace.rounds:
        if d != BOTTOM and player not in liars:
            deliveries.setdefault(player, d)
    good = [i for i in range(n) if i not in liars]
    res = BrachaResult(n, t, sender, value, deliveries, good, ok)
    if not ok:
        res.notes.append("resilience bound 3t < n violated; guarantees not claimed")
    return res
