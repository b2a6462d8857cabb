"""Small protocols used by the reduction scenarios and engine tests."""

from __future__ import annotations

from itertools import product

from ..normalform import LocalProtocol, Step, multicast, silent, wrap_non_erasing


def _uniform(values) -> dict:
    values = list(values)
    return {v: 1.0 / len(values) for v in values}


def _no_randomness(_i: int, _k: int) -> dict:
    return {(0,): 1.0}


def leader_coin(n: int = 3, leader_range: int | None = None):
    """Random coin plus random leader value; everyone adopts the coin of the largest leader.

    Ties between equal leader values go to the larger player id.
    """
    L = leader_range or n * n

    def randomness(_i, k):
        if k == 1:
            return _uniform(product(range(2), range(L)))
        return {(0, 0): 1.0}

    def init(i, x, r):
        return ("fresh", i, r)

    def update(state, copies, received, r):
        best = max(((m[1], j, m[0]) for j, m in enumerate(received) if m is not None), default=None)
        return ("done", state[1], 0 if best is None else best[2])

    def output(state, n_):
        if state[0] == "fresh":
            return multicast(n_, state[2])
        return silent(n_, state[2])

    return wrap_non_erasing(LocalProtocol(
        name="leader-coin", n=n, payload_dim=max(L, 2), payload_sites=2, rand_dim=max(L, 2),
        rand_sites=2, randomness=randomness, init=init, update=update, output=output,
        max_rounds=2))


def early_stop(n: int = 3):
    """Three-round bit exchange in which unanimous players stop after round 2."""

    def randomness(_i, k):
        return _uniform([(0,), (1,)]) if k == 1 else {(0,): 1.0}

    def init(i, x, r):
        return (1, r[0], None)

    def update(state, copies, received, r):
        rnd, mine, _ = state
        bits = [m[0] for m in received if m is not None]
        if rnd == 1:
            if bits and all(b == bits[0] for b in bits):
                return (2, bits[0], bits[0])
            maj = 1 if 2 * sum(bits) > len(bits) else 0
            return (2, maj, None)
        if bits:
            ones = sum(bits)
            dec = 1 if 2 * ones > len(bits) else 0 if 2 * ones < len(bits) else mine
        else:
            dec = mine
        return (3, mine, dec)

    def output(state, n_):
        rnd, mine, dec = state
        if rnd == 1:
            return multicast(n_, (mine,))
        if dec is not None:
            return silent(n_, dec)
        return multicast(n_, (mine,))

    return wrap_non_erasing(LocalProtocol(
        name="early-stop", n=n, payload_dim=2, payload_sites=1, rand_dim=2, rand_sites=1,
        randomness=randomness, init=init, update=update, output=output, max_rounds=3))


def relay_coin(n: int = 4):
    """Coin bits, then relayed parities; a player outputs its parity, flipped on any disagreement."""

    def randomness(_i, k):
        return _uniform([(0,), (1,)]) if k == 1 else {(0,): 1.0}

    def init(i, x, r):
        return (1, r[0])

    def update(state, copies, received, r):
        rnd, _ = state
        bits = [m[0] for m in received if m is not None]
        if rnd == 1:
            return (2, sum(bits) % 2)
        mine = state[1]
        return (3, mine ^ (1 if any(b != mine for b in bits) else 0))

    def output(state, n_):
        rnd, v = state
        if rnd < 3:
            return multicast(n_, (v,))
        return silent(n_, v)

    return wrap_non_erasing(LocalProtocol(
        name="relay-coin", n=n, payload_dim=2, payload_sites=1, rand_dim=2, rand_sites=1,
        randomness=randomness, init=init, update=update, output=output, max_rounds=3,
        max_faulty=lambda m: (m - 1) // 3))


def echo_all(n: int = 3, rounds: int = 2):
    """Deterministic all-to-all multicast of the input for a fixed number of rounds."""

    def init(i, x, r):
        return (1, x)

    def update(state, copies, received, r):
        return (state[0] + 1, state[1])

    def output(state, n_):
        rnd, x = state
        return multicast(n_, (x,), decision=x if rnd == rounds else None)

    return wrap_non_erasing(LocalProtocol(
        name="echo-all", n=n, payload_dim=2, payload_sites=1, rand_dim=2, rand_sites=1,
        randomness=_no_randomness, init=init, update=update, output=output,
        max_rounds=rounds))


def ping(n: int = 2):
    """Async: player 0 pings player 1, which answers; both then decide 1."""

    def init(i, x, r):
        return (i, "start")

    def update(state, copies, received, r):
        i, _ = state
        return (i, "got")

    def output(state, n_):
        i, phase = state
        if phase == "start":
            if i == 0:
                return Step(tuple((1,) if j == 1 else None for j in range(n_)))
            return silent(n_)
        if i == 1:
            return Step(tuple((1,) if j == 0 else None for j in range(n_)), decision=1)
        return silent(n_, decision=1)

    return wrap_non_erasing(LocalProtocol(
        name="ping", n=n, payload_dim=2, payload_sites=1, rand_dim=2, rand_sites=1,
        randomness=_no_randomness, init=init, update=update, output=output,
        mode="async", max_rounds=4))
