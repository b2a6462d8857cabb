"""Classical normal form, non-erasing wrapper and the quantizer.

A protocol is written as a local state machine (``LocalProtocol``).  The
non-erasing wrapper turns it into a view-based step function ``f_P`` where
the view is an append-only tuple of per-round records::

    sync:  ((i, x, r_1), (copies_1, received_1, r_2), (copies_2, received_2, r_3), ...)
    async: ((i, x, r_1), (copies_1, (sender, payload), r_2), ...)

``copies``/``received`` hold one payload tuple (or ``None``) per peer.  The
quantizer compiles ``f_P`` into the permutation |v>|y> -> |v>|y + f_P(v)>
acting on named registers of a ``SparseState``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from . import qstate
from .qstate import SparseState

BOTTOM = 2  # D-register digit for "not decided"


class ProtocolFault(RuntimeError):
    """A player was driven outside the protocol's declared interface."""


class RegisterBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class Step:
    """Output of ``f_P``: one message slot per recipient plus a decision."""

    messages: tuple
    decision: Optional[int] = None

    @property
    def pattern(self) -> tuple[int, ...]:
        return tuple(0 if m is None else 1 for m in self.messages)

    @property
    def copies(self) -> tuple:
        return self.messages


def silent(n: int, decision: Optional[int] = None) -> Step:
    return Step((None,) * n, decision)


def multicast(n: int, payload: tuple, decision: Optional[int] = None) -> Step:
    return Step((tuple(payload),) * n, decision)


@dataclass(frozen=True)
class LocalProtocol:
    """An erasing-style protocol description.

    ``init(i, x, r)`` builds the local state, ``update(state, copies, received, r)``
    folds one round (sync: ``received`` is an n-tuple; async: a
    ``(sender, payload)`` pair), and ``output(state, n)`` produces the step.
    """

    name: str
    n: int
    payload_dim: int
    payload_sites: int
    rand_dim: int
    rand_sites: int
    randomness: Callable[[int, int], Mapping[tuple, float]]
    init: Callable[[int, int, tuple], Any]
    update: Callable[[Any, tuple, Any, tuple], Any]
    output: Callable[[Any, int], Step]
    input_dim: int = 2
    max_rounds: int = 6
    mode: str = "sync"
    max_faulty: Callable[[int], int] = lambda n: (n - 1) // 2
    halt_on_decide: bool = True


@dataclass(frozen=True)
class ClassicalProtocol:
    """Normal-form protocol: per-step randomness plus a view-based ``f_P``."""

    name: str
    n: int
    payload_dim: int
    payload_sites: int
    rand_dim: int
    rand_sites: int
    randomness: Callable[[int, int], Mapping[tuple, float]]
    f_P: Callable[[tuple], Step]
    input_dim: int = 2
    max_rounds: int = 6
    mode: str = "sync"
    max_faulty: Callable[[int], int] = lambda n: (n - 1) // 2
    halt_on_decide: bool = True  # async subroutines may keep relaying after output

    def with_n(self, n: int) -> "ClassicalProtocol":
        return replace(self, n=n)


def fold_view(proto: LocalProtocol, view: tuple):
    i, x, r1 = view[0]
    state = proto.init(i, x, r1)
    for copies, received, r in view[1:]:
        state = proto.update(state, copies, received, r)
    return state


def wrap_non_erasing(protocol) -> ClassicalProtocol:
    """Make every player keep its whole history.

    The returned ``f_P`` reads the full append-only view and replays the
    local state machine over it, so behavior is unchanged while no state is
    ever discarded.  Already view-based protocols are returned as is.
    """
    if isinstance(protocol, ClassicalProtocol):
        return protocol
    proto = protocol

    def f_P(view: tuple) -> Step:
        step = proto.output(fold_view(proto, view), proto.n)
        if len(step.messages) != proto.n:
            raise ProtocolFault(f"{proto.name}: step has {len(step.messages)} message slots")
        return step

    return ClassicalProtocol(
        name=proto.name, n=proto.n, payload_dim=proto.payload_dim,
        payload_sites=proto.payload_sites, rand_dim=proto.rand_dim,
        rand_sites=proto.rand_sites, randomness=proto.randomness, f_P=f_P,
        input_dim=proto.input_dim, max_rounds=proto.max_rounds, mode=proto.mode,
        max_faulty=proto.max_faulty, halt_on_decide=proto.halt_on_decide)


def view_size(view: tuple) -> int:
    """Serialized length of a view (number of scalar entries)."""
    def count(x) -> int:
        if isinstance(x, tuple):
            return 1 + sum(count(y) for y in x)
        return 1
    return count(view)


def check_payload(proto: ClassicalProtocol, payload) -> None:
    if payload is None:
        return
    if (not isinstance(payload, tuple) or len(payload) != proto.payload_sites
            or any(not (isinstance(v, (int, np.integer)) and 0 <= v < proto.payload_dim)
                   for v in payload)):
        raise ProtocolFault(f"{proto.name}: malformed payload {payload!r}")


# ---------------------------------------------------------------------------
# classical execution


@dataclass
class ClassicalPlayer:
    """Per-run context of one classical player."""

    i: int
    x: int
    view: tuple = ()
    steps: int = 0
    decision: Optional[int] = None
    last: Optional[Step] = None

    @property
    def terminated(self) -> bool:
        return self.decision is not None


def sample(dist: Mapping[tuple, float], rng: np.random.Generator) -> tuple:
    keys = sorted(dist)
    probs = np.array([dist[k] for k in keys], dtype=float)
    idx = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
    return keys[min(idx, len(keys) - 1)]


def run_classical_round(proto: ClassicalProtocol, player: ClassicalPlayer, incoming,
                        rng: np.random.Generator | None = None, r: tuple | None = None):
    """One normal-form step of a classical player.

    ``incoming`` is an n-tuple of payloads (sync; ignored on the first round)
    or a ``(sender, payload)`` pair (async).  Randomness is either drawn from
    ``rng`` or supplied as ``r`` (enumeration).  Returns
    ``(outgoing messages, pattern b, decision d)``.
    """
    if player.terminated and proto.halt_on_decide:
        raise ProtocolFault(f"player {player.i} already terminated")
    k = player.steps + 1
    dist = proto.randomness(player.i, k)
    if r is None:
        if rng is None:
            raise ValueError("need rng or explicit randomness")
        r = sample(dist, rng)
    elif dist.get(r, 0.0) <= 0.0:
        raise ProtocolFault(f"randomness {r} has zero probability")
    if k == 1:
        view = ((player.i, player.x, r),)
    else:
        if proto.mode == "sync":
            if len(incoming) != proto.n:
                raise ProtocolFault("sync round needs one incoming slot per player")
            for m in incoming:
                check_payload(proto, m)
        else:
            sender, payload = incoming
            if not 0 <= sender < proto.n:
                raise ProtocolFault(f"bad sender id {sender}")
            check_payload(proto, payload)
        view = player.view + ((player.last.copies, incoming, r),)
    step = proto.f_P(view)
    for m in step.messages:
        check_payload(proto, m)
    if step.decision not in (None, 0, 1):
        raise ProtocolFault(f"decision {step.decision!r} outside {{0, 1, None}}")
    if step.decision is not None and player.decision is not None:
        raise ProtocolFault(f"player {player.i} decided twice")
    player.view = view
    player.steps = k
    player.last = step
    if step.decision is not None:
        player.decision = step.decision
    return step.messages, step.pattern, step.decision


# ---------------------------------------------------------------------------
# register naming shared by the quantum engine and the classical mirror


def input_name(i: int) -> str:
    return f"X.{i}"


def rand_name(k: int, i: int) -> str:
    return f"R{k}.{i}"


def msg_base(k: int, i: int, j: int) -> str:
    return f"M{k}.{i}.{j}"


def copy_base(k: int, i: int, j: int) -> str:
    return f"C{k}.{i}.{j}"


def pattern_name(k: int, i: int, j: int) -> str:
    return f"B{k}.{i}.{j}"


def decision_name(k: int, i: int) -> str:
    return f"D{k}.{i}"


def recv_base(k: int, sender: int, receiver: int) -> str:
    """Sync receive slot for the round-k message sender -> receiver."""
    return f"I{k}.{sender}.{receiver}"


def inbox_base(k: int, i: int) -> str:
    """Async: the k-th message received by player i."""
    return f"P{k}.{i}"


@dataclass(frozen=True)
class MessageShape:
    payload_dim: int
    payload_sites: int
    sender_dim: int = 0  # > 0 in async mode, where the sender id travels with the message

    def specs(self, base: str) -> list[tuple[str, int, int]]:
        out = [(base + ".p", 1, 2), (base, self.payload_sites, self.payload_dim)]
        if self.sender_dim:
            out.append((base + ".s", 1, max(self.sender_dim, 2)))
        return out

    def names(self, base: str) -> list[str]:
        return [s[0] for s in self.specs(base)]

    @property
    def width(self) -> int:
        return 1 + self.payload_sites + (1 if self.sender_dim else 0)

    def encode(self, payload, sender: int = 0) -> tuple[int, ...]:
        if payload is None:
            return (0,) * self.width
        out = (1,) + tuple(int(v) for v in payload)
        return out + ((sender,) if self.sender_dim else ())

    def decode(self, digits: Sequence[int]):
        """Digits -> payload (or None).  Async shapes return (sender, payload)."""
        if digits[0] == 0:
            return None
        payload = tuple(digits[1:1 + self.payload_sites])
        if self.sender_dim:
            return (digits[-1], payload)
        return payload


def message_shape(proto: ClassicalProtocol) -> MessageShape:
    return MessageShape(proto.payload_dim, proto.payload_sites,
                        proto.n if proto.mode == "async" else 0)


def swap_message(state: SparseState, shape: MessageShape, src: str, dst: str) -> SparseState:
    for a, b in zip(shape.names(src), shape.names(dst)):
        state = qstate.swap_registers(state, a, b)
    return state


@dataclass(frozen=True)
class ViewRegisters:
    """Register names making up player ``i``'s quantum view at step ``k``."""

    i: int
    k: int
    n: int
    mode: str = "sync"

    @property
    def rounds(self) -> list:
        out = []
        for r in range(2, self.k + 1):
            copies = [copy_base(r - 1, self.i, j) for j in range(self.n)]
            if self.mode == "sync":
                received = [recv_base(r - 1, j, self.i) for j in range(self.n)]
            else:
                received = inbox_base(r, self.i)
            out.append((copies, received, rand_name(r, self.i)))
        return out

    def names(self, shape: MessageShape) -> list[str]:
        out = [input_name(self.i), rand_name(1, self.i)]
        for copies, received, r in self.rounds:
            for b in copies:
                out.extend(shape.names(b))
            for b in (received if isinstance(received, list) else [received]):
                out.extend(shape.names(b))
            out.append(r)
        return out


@dataclass(frozen=True)
class QuantizedProtocol:
    """Quantum compilation of a normal-form protocol.

    ``step(state, view_regs, k)`` purifies R_k, allocates the ancilla
    A_k = (M, M', B, D) and applies U_P.  Honest players then measure
    exactly the D and B registers (see ``measured_sites``).
    """

    classical: ClassicalProtocol
    shape: MessageShape
    max_sites: int = 20000

    @property
    def n(self) -> int:
        return self.classical.n

    def ancilla_specs(self, k: int, i: int) -> list[tuple[str, int, int]]:
        n = self.n
        specs = []
        for j in range(n):
            specs += self.shape.specs(msg_base(k, i, j))
        for j in range(n):
            specs += self.shape.specs(copy_base(k, i, j))
        specs += [(pattern_name(k, i, j), 1, 2) for j in range(n)]
        specs.append((decision_name(k, i), 1, 3))
        return specs

    def ancilla_names(self, k: int, i: int) -> list[str]:
        return [s[0] for s in self.ancilla_specs(k, i)]

    def measured_names(self, k: int, i: int) -> list[str]:
        """D first, then each B, per the quantized step."""
        return [decision_name(k, i)] + [pattern_name(k, i, j) for j in range(self.n)]

    def rand_spec(self, k: int, i: int):
        c = self.classical
        return (rand_name(k, i), c.rand_sites, c.rand_dim)

    def _decoder(self, layout, view: ViewRegisters):
        """Build v-digits -> classical view tuple for the player's registers."""
        shape = self.shape
        async_mode = self.classical.mode == "async"
        w = shape.width
        rs = self.classical.rand_sites
        plan = []
        for copies, received, _r in view.rounds:
            plan.append((len(copies), 1 if async_mode else len(received)))

        def decode(v: tuple) -> tuple:
            pos = 0
            x = v[pos]; pos += 1
            r1 = tuple(v[pos:pos + rs]); pos += rs
            out = [(view.i, x, r1)]
            for n_copies, n_recv in plan:
                copies = []
                for _ in range(n_copies):
                    copies.append(shape.decode(v[pos:pos + w])); pos += w
                recv = []
                for _ in range(n_recv):
                    recv.append(shape.decode(v[pos:pos + w])); pos += w
                r = tuple(v[pos:pos + rs]); pos += rs
                if async_mode:
                    out.append((tuple(copies), recv[0], r))
                else:
                    out.append((tuple(copies), tuple(recv), r))
            return tuple(out)

        return decode

    def encode_step(self, step: Step, i: int) -> tuple[int, ...]:
        digits: list[int] = []
        for m in step.messages:
            digits.extend(self.shape.encode(m, i))
        for m in step.copies:
            digits.extend(self.shape.encode(m, i))
        digits.extend(step.pattern)
        digits.append(BOTTOM if step.decision is None else step.decision)
        return tuple(digits)

    def view(self, i: int, k: int) -> ViewRegisters:
        return ViewRegisters(i, k, self.n, self.classical.mode)

    def step(self, state: SparseState, i: int, k: int) -> SparseState:
        """Purify R_k, allocate A_k and apply U_P for player ``i`` at step ``k``."""
        view = self.view(i, k)
        spec = self.rand_spec(k, i)
        specs = [spec] + self.ancilla_specs(k, i)
        if state.layout.total_sites + sum(s[1] for s in specs) > self.max_sites:
            raise RegisterBudgetExceeded(
                f"{self.classical.name}: register budget of {self.max_sites} sites exceeded")
        state = state.with_registers(specs)
        state = qstate.prepare_distribution(state, spec[0], self.classical.randomness(i, k))
        lay = state.layout
        in_sites = lay.sites(*view.names(self.shape))
        out_sites = lay.sites(*self.ancilla_names(k, i))
        decode = self._decoder(lay, view)
        f_P = self.classical.f_P
        return qstate.apply_reversible(
            state, in_sites, out_sites, lambda v: self.encode_step(f_P(decode(v)), i))

    def measured_sites(self, layout, k: int, i: int) -> tuple[int, ...]:
        return layout.sites(*self.measured_names(k, i))


def quantize(protocol) -> QuantizedProtocol:
    """Compile a (non-erasing) classical protocol into its quantum form."""
    proto = wrap_non_erasing(protocol)
    shape = message_shape(proto)
    if proto.mode == "async" and proto.n > 2 ** 16:
        raise RegisterBudgetExceeded("sender id does not fit a register")
    return QuantizedProtocol(proto, shape)


def decode_outcome(q: QuantizedProtocol, outcome: Sequence[int]):
    """Measured (D, B...) digits -> (d or None, b tuple)."""
    d = outcome[0]
    return (None if d == BOTTOM else int(d)), tuple(int(b) for b in outcome[1:])


def run_quantum_round(q: QuantizedProtocol, state: SparseState, i: int, k: int,
                      rng: np.random.Generator | None = None, forced: Sequence[int] | None = None):
    """Single-player quantized step: U_P, then measure D and each B.

    Returns ``((d, b), state)``; with ``forced`` the outcome is projected
    instead of sampled (used to replay recorded traces).
    """
    state = q.step(state, i, k)
    sites = q.measured_sites(state.layout, k, i)
    if forced is not None:
        p, state = qstate.project(state, sites, forced)
        if p == 0.0:
            raise qstate.StateError("forced outcome has zero probability")
        outcome = tuple(forced)
    else:
        outcome, state = qstate.measure(state, sites, rng or np.random.default_rng(0))
    return decode_outcome(q, outcome), state


def initial_state(q: QuantizedProtocol, inputs: Sequence[int], extra: Sequence[tuple] = ()) -> SparseState:
    c = q.classical
    specs = [(input_name(i), 1, max(c.input_dim, 2)) for i in range(c.n)] + list(extra)
    layout = qstate.RegisterLayout(specs)
    return SparseState.basis(layout, {input_name(i): (x,) for i, x in enumerate(inputs)})


REGISTRY: dict[str, Callable[..., Any]] = {}


def register(name: str):
    def deco(fn):
        REGISTRY[name] = fn
        return fn
    return deco
