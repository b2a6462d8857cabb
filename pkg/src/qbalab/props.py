"""Randomized property suites for the state engine and the transcript structure."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import adversary, qstate
from .qstate import RegisterLayout, SparseState


@dataclass
class SuiteReport:
    name: str
    instances: int
    max_prob_deviation: float = 0.0
    min_fidelity: float = 1.0
    failures: int = 0
    notes: list = field(default_factory=list)

    def passed(self, tol: float = 1e-9) -> bool:
        return self.failures == 0 and self.max_prob_deviation <= tol and self.min_fidelity >= 1 - tol

    @property
    def vacuous(self) -> bool:
        return self.instances == 0


def random_sparse_state(rng: np.random.Generator, max_sites: int = 6, max_dim: int = 5,
                        max_support: int = 24) -> SparseState:
    sites = int(rng.integers(1, max_sites + 1))
    dims = [int(rng.integers(2, max_dim + 1)) for _ in range(sites)]
    layout = RegisterLayout([(f"s{k}", 1, d) for k, d in enumerate(dims)])
    space = math.prod(dims)
    size = int(rng.integers(1, min(space, max_support) + 1))
    picks = rng.choice(space, size=size, replace=False)
    amps = {}
    for idx in picks:
        digits, rest = [], int(idx)
        for d in reversed(dims):
            digits.append(rest % d)
            rest //= d
        amps[tuple(reversed(digits))] = complex(rng.normal(), rng.normal())
    return SparseState(layout, amps)


def random_permutation(rng: np.random.Generator, dims):
    space = list(np.ndindex(*dims))
    image = [space[k] for k in rng.permutation(len(space))]
    table = {a: tuple(int(x) for x in b) for a, b in zip(space, image)}
    return lambda v: table[tuple(v)]


def _full_branches(state: SparseState) -> dict:
    sites = tuple(range(state.layout.total_sites))
    return {br.outcome: (br.probability, br.state) for br in qstate.measurement_branches(state, sites)}


def _compare(report: SuiteReport, left: dict, right: dict) -> None:
    if set(left) != set(right):
        report.failures += 1
        return
    for k in left:
        pa, sa = left[k]
        pb, sb = right[k]
        report.max_prob_deviation = max(report.max_prob_deviation, abs(pa - pb))
        if pa > 0 and pb > 0:
            report.min_fidelity = min(report.min_fidelity, sa.fidelity(sb))


def permutation_commutation(instances: int = 200, seed: int = 0) -> SuiteReport:
    """Full basis measurement after a random permutation vs permuting each measured branch."""
    rng = np.random.default_rng(seed)
    rep = SuiteReport("measure/permutation", instances)
    for _ in range(instances):
        state = random_sparse_state(rng)
        sites = tuple(range(state.layout.total_sites))
        perm = random_permutation(rng, state.layout.dims)
        after = _full_branches(qstate.apply_permutation(state, sites, perm))
        before = {}
        for outcome, (p, st) in _full_branches(state).items():
            moved = qstate.apply_permutation(st, sites, perm)
            before[perm(outcome)] = (p, moved)
        _compare(rep, after, before)
    if instances == 0:
        rep.notes.append("no instances: vacuous pass")
    return rep


def projector_commutation(instances: int = 200, seed: int = 0) -> SuiteReport:
    """Unnormalized branch weights of M(Pi rho Pi) vs Pi M(rho) Pi for basis projectors."""
    rng = np.random.default_rng(seed)
    rep = SuiteReport("measure/projector", instances)
    for _ in range(instances):
        state = random_sparse_state(rng)
        sites = tuple(range(state.layout.total_sites))
        keep = {k for k in state.amps if rng.random() < 0.5}
        if rng.random() < 0.5:
            # also allow a projector on a random subset of sites
            sub = tuple(s for s in sites if rng.random() < 0.5) or sites[:1]
            target = next(iter(state.amps))
            keep = {k for k in state.amps if all(k[s] == target[s] for s in sub)}
        projected = {k: a for k, a in state.amps.items() if k in keep}
        weight = sum(abs(a) ** 2 for a in projected.values())
        left = {}
        if weight > 0:
            for outcome, (p, st) in _full_branches(SparseState(state.layout, projected)).items():
                left[outcome] = (p * weight, st)
        right = {}
        for outcome, (p, st) in _full_branches(state).items():
            if outcome in keep:
                right[outcome] = (p, st)
        _compare(rep, left, right)
    if instances == 0:
        rep.notes.append("no instances: vacuous pass")
    return rep


@dataclass
class TranscriptSuite:
    runs: int
    max_rank: int
    control_rank: int
    all_rank_one: bool

    def passed(self) -> bool:
        return self.all_rank_one and self.control_rank >= 2


def transcript_suite(runs: int = 50, seed: int = 0) -> TranscriptSuite:
    rng = np.random.default_rng(seed)
    worst, ok = 0, True
    for _ in range(runs):
        state, good, bad, tr = adversary.random_two_party_run(rng, rounds=int(rng.integers(1, 3)))
        rep = adversary.transcript_product_check(state, good, bad, tr)
        worst = max(worst, rep.max_rank)
        ok = ok and rep.ok
    control = adversary.transcript_product_check(*adversary.bell_exchange_without_copy())
    return TranscriptSuite(runs, worst, control.max_rank, ok)
