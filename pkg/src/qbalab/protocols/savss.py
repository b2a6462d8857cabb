"""Quantum shunning verifiable secret sharing over a prime field.

Sharing: the dealer holds a uniform superposition over symmetric bivariate
polynomials f of degree <= t in each variable (register ``D``) and writes
player i's share polynomial s_i(x) = f(x, i + 1) into ``S.i``.  Each player
evaluates its share at every other point (``Q.i.j``), sends a CX copy to
player j (``R.j.i``), which subtracts its own evaluation and measures.  An
outcome of 0 is broadcast as "i is ok".

Verification is simplified: the dealer's set V is the first (n - t)-clique of
mutual ok edges, and a player trusts a broadcast share during reconstruction
when it matches its own evaluation.  Reports carry a note whenever this rule
is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations, product
from typing import Mapping, Optional, Sequence

from .. import qstate
from ..qstate import RegisterLayout, SparseState

SIMPLIFIED_NOTE = "simplified verification: V is the first (n-t)-clique of mutual ok edges"
DEFAULT_SUPPORT_BUDGET = 20000


def is_prime(p: int) -> bool:
    return p >= 2 and all(p % d for d in range(2, math.isqrt(p) + 1))


def coefficient_index(t: int) -> list[tuple[int, int]]:
    """Independent coefficients (u, v) with u <= v; (0, 0) comes first."""
    return [(u, v) for u in range(t + 1) for v in range(u, t + 1)]


def poly_eval(coeffs: Sequence[int], x: int, p: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % p
    return acc


def interpolate(points: Sequence[tuple[int, int]], p: int) -> tuple[int, ...]:
    """Lagrange interpolation: coefficients of the unique polynomial of degree < len(points)."""
    m = len(points)
    xs = [x % p for x, _ in points]
    if len(set(xs)) != m:
        raise ValueError("interpolation points must be distinct")
    out = [0] * m
    for i, (xi, yi) in enumerate(points):
        basis = [1]
        denom = 1
        for j, (xj, _) in enumerate(points):
            if j == i:
                continue
            # multiply basis by (x - xj)
            basis = [(a - xj * b) % p for a, b in zip([0] + basis, basis + [0])]
            denom = denom * (xi - xj) % p
        scale = yi * pow(denom, -1, p) % p
        for k, c in enumerate(basis):
            out[k] = (out[k] + scale * c) % p
    return tuple(out)


@dataclass(frozen=True)
class SymmetricBivariate:
    p: int
    t: int
    coeffs: tuple  # ordered as coefficient_index(t)

    def matrix(self) -> list[list[int]]:
        a = [[0] * (self.t + 1) for _ in range(self.t + 1)]
        for (u, v), c in zip(coefficient_index(self.t), self.coeffs):
            a[u][v] = a[v][u] = c % self.p
        return a

    def __call__(self, x: int, y: int) -> int:
        a = self.matrix()
        return sum(a[u][v] * pow(x, u, self.p) * pow(y, v, self.p)
                   for u in range(self.t + 1) for v in range(self.t + 1)) % self.p

    @property
    def secret(self) -> int:
        return self.coeffs[0] % self.p

    def share(self, point: int) -> tuple[int, ...]:
        """Coefficients (in x) of f(x, point)."""
        return share_from_matrix(self.matrix(), point, self.p)

    def symmetric_on_grid(self) -> bool:
        return all(self(x, y) == self(y, x) for x in range(self.p) for y in range(self.p))


def share_from_matrix(a: Sequence[Sequence[int]], point: int, p: int) -> tuple[int, ...]:
    return tuple(sum(row[v] * pow(point, v, p) for v in range(len(row))) % p for row in a)


class FieldError(ValueError):
    pass


class SupportBudgetExceeded(RuntimeError):
    pass


def _point(i: int) -> int:
    return i + 1


@dataclass
class SavssSession:
    n: int
    t: int
    p: int
    dealer: int
    state: SparseState
    probability: float = 1.0
    r_outcomes: dict = field(default_factory=dict)  # (holder, peer) -> measured value
    ok_edges: frozenset = frozenset()  # (i, j): player i broadcast "j is ok"
    V: Optional[tuple] = None
    shun_log: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def share_complete(self) -> bool:
        return self.V is not None

    def player_registers(self, i: int) -> list[str]:
        names = [f"S.{i}"]
        names += [f"Q.{i}.{j}" for j in range(self.n) if j != i]
        names += [f"R.{i}.{j}" for j in range(self.n) if j != i]
        return names

    def nonzero_r(self) -> list:
        return sorted(k for k, v in self.r_outcomes.items() if v != 0)


def _mutual_clique(n: int, size: int, edges: frozenset) -> Optional[tuple]:
    for cand in combinations(range(n), size):
        if all((a, b) in edges and (b, a) in edges for a, b in combinations(cand, 2)):
            return cand
    return None


def quantum_savss_share(n: int, t: int, p: int, dealer: int = 0, *,
                        asymmetric: Optional[Mapping[tuple, int]] = None,
                        budget: int = DEFAULT_SUPPORT_BUDGET) -> list[SavssSession]:
    """Run the sharing phase; one session per joint R outcome.

    ``asymmetric`` injects a corrupt dealer: its entries (u, v) -> c are added
    to the coefficient matrix of every shared polynomial, so the dealer
    effectively shares f + g with g not symmetric.
    """
    if not is_prime(p):
        raise FieldError(f"{p} is not prime")
    if p <= n:
        raise FieldError(f"field size {p} must exceed n={n}")
    idx = coefficient_index(t)
    support = p ** len(idx)
    if support > budget:
        raise SupportBudgetExceeded(f"dealer support {support} exceeds budget {budget}")
    specs = [("D", len(idx), p)]
    specs += [(f"S.{i}", t + 1, p) for i in range(n)]
    specs += [(f"Q.{i}.{j}", 1, p) for i in range(n) for j in range(n) if j != i]
    specs += [(f"R.{i}.{j}", 1, p) for i in range(n) for j in range(n) if j != i]
    state = SparseState.zero(RegisterLayout(specs))
    uniform = {c: 1.0 / support for c in product(range(p), repeat=len(idx))}
    state = qstate.prepare_distribution(state, "D", uniform)
    offset = [[0] * (t + 1) for _ in range(t + 1)]
    for (u, v), c in (asymmetric or {}).items():
        offset[u][v] = (offset[u][v] + c) % p
    lay = state.layout

    def share_fn(point):
        def fn(digits):
            a = SymmetricBivariate(p, t, tuple(digits)).matrix()
            a = [[(a[u][v] + offset[u][v]) % p for v in range(t + 1)] for u in range(t + 1)]
            return share_from_matrix(a, point, p)
        return fn

    for i in range(n):
        state = qstate.apply_reversible(state, lay.sites("D"), lay.sites(f"S.{i}"), share_fn(_point(i)))
    for i in range(n):
        for j in range(n):
            if j != i:
                xj = _point(j)
                state = qstate.apply_reversible(state, lay.sites(f"S.{i}"), lay.sites(f"Q.{i}.{j}"),
                                                lambda c, xj=xj: (poly_eval(c, xj, p),))
    for i in range(n):
        for j in range(n):
            if j != i:
                # i sends its evaluation at j's point; j subtracts its own evaluation at i's point
                state = qstate.cx_copy(state, f"Q.{i}.{j}", f"R.{j}.{i}")
                state = qstate.cx_uncopy(state, f"Q.{j}.{i}", f"R.{j}.{i}")
    r_names = [f"R.{i}.{j}" for i in range(n) for j in range(n) if j != i]
    sessions = []
    for br in qstate.measurement_branches(state, lay.sites(*r_names)):
        outcomes = {}
        for nm, v in zip(r_names, br.outcome):
            _, a, b = nm.split(".")
            outcomes[(int(a), int(b))] = v
        edges = frozenset(k for k, v in outcomes.items() if v == 0)
        V = _mutual_clique(n, n - t, edges)
        sessions.append(SavssSession(n, t, p, dealer, br.state, br.probability, outcomes, edges, V,
                                     notes=[SIMPLIFIED_NOTE]))
    return sessions


# ---------------------------------------------------------------------------
# reconstruction


@dataclass
class BranchOutcome:
    probability: float
    secret: int  # f(0, 0) of the collapsed dealer register
    outputs: dict  # good player -> field element or None
    shuns: frozenset  # (i, j): i shuns j


@dataclass
class ReconstructionReport:
    branches: list
    notes: list = field(default_factory=list)

    def secret_distribution(self) -> dict:
        out: dict = {}
        for b in self.branches:
            out[b.secret] = out.get(b.secret, 0.0) + b.probability
        return out

    @property
    def all_correct(self) -> bool:
        return all(v == b.secret for b in self.branches for v in b.outputs.values())

    @property
    def agreement(self) -> bool:
        return all(len(set(b.outputs.values())) == 1 for b in self.branches)

    def shun_pairs(self) -> frozenset:
        out = set()
        for b in self.branches:
            out |= b.shuns
        return frozenset(out)

    def failures(self) -> int:
        return sum(1 for b in self.branches for v in b.outputs.values() if v is None)


def robust_secret(points: Sequence[tuple[int, int]], t: int, p: int):
    """Degree-<=t fit agreeing with all but at most t points.

    Returns (value at 0 or None, outlier x-coordinates).
    """
    if len(points) < t + 1:
        return None, ()
    fits = {}
    for sub in combinations(points, t + 1):
        poly = interpolate(sub, p)
        agree = sum(1 for x, y in points if poly_eval(poly, x, p) == y)
        if agree >= len(points) - t:
            fits[poly] = agree
    if len(fits) != 1:
        return None, ()
    poly = next(iter(fits))
    outliers = tuple(x for x, y in points if poly_eval(poly, x, p) != y)
    return poly_eval(poly, 0, p), outliers


def quantum_savss_reconstruct(session: SavssSession, liars: Optional[Mapping[int, Sequence[int]]] = None
                              ) -> ReconstructionReport:
    """Measure every S_i, broadcast, cross-check and interpolate f(0, 0).

    ``liars`` maps a Byzantine player to an additive error polynomial applied
    to the share it broadcasts.
    """
    n, t, p = session.n, session.t, session.p
    liars = dict(liars or {})
    if not session.share_complete:
        raise RuntimeError("sharing did not complete (no verification set)")
    lay = session.state.layout
    s_names = [f"S.{i}" for i in range(n)]
    d_lo = lay["D"].offset
    branches = []
    for br in qstate.measurement_branches(session.state, lay.sites(*s_names)):
        key = next(iter(br.state.amps))
        secret = key[d_lo]
        shares = [tuple(br.outcome[i * (t + 1):(i + 1) * (t + 1)]) for i in range(n)]
        sent = []
        for j, s in enumerate(shares):
            e = liars.get(j)
            if e is not None:
                s = tuple((a + (e[u] if u < len(e) else 0)) % p for u, a in enumerate(s))
            sent.append(s)
        outputs, shuns = {}, set()
        for i in range(n):
            if i in liars:
                continue
            own = shares[i]
            trusted = []
            for j in range(n):
                if j == i:
                    trusted.append(j)
                elif poly_eval(sent[j], _point(i), p) == poly_eval(own, _point(j), p):
                    trusted.append(j)
                else:
                    shuns.add((i, j))
            pts = [(_point(j), poly_eval(sent[j], 0, p)) for j in trusted]
            value, outliers = robust_secret(pts, t, p)
            for x in outliers:
                shuns.add((i, x - 1))
            outputs[i] = value
        branches.append(BranchOutcome(br.probability * session.probability, secret, outputs,
                                      frozenset(shuns)))
    return ReconstructionReport(branches, list(session.notes))


# ---------------------------------------------------------------------------
# privacy


@dataclass
class PrivacyReport:
    subset: tuple
    max_tv: float
    per_secret: dict  # secret -> conditional distribution of the subset's view
    pairs: dict = field(default_factory=dict)  # (s, s') -> TV


def _tv(a: Mapping, b: Mapping) -> float:
    return 0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in set(a) | set(b))


def savss_privacy_audit(session: SavssSession, subset: Sequence[int]) -> PrivacyReport:
    """Max pairwise TV between the subset's views conditioned on each secret.

    The view is the basis content of the subset's registers plus the public
    R outcomes and ok edges (identical across the branch).
    """
    subset = tuple(sorted(subset))
    lay = session.state.layout
    names = [nm for i in subset for nm in session.player_registers(i)]
    sites = lay.sites(*names) if names else ()
    d_lo = lay["D"].offset
    public = (tuple(sorted(session.r_outcomes.items())), tuple(sorted(session.ok_edges)))
    per: dict = {}
    for k, a in session.state.amps.items():
        s = k[d_lo]
        view = (public, tuple(k[x] for x in sites))
        bucket = per.setdefault(s, {})
        bucket[view] = bucket.get(view, 0.0) + abs(a) ** 2
    for s, dist in per.items():
        z = sum(dist.values())
        per[s] = {v: w / z for v, w in dist.items()}
    pairs = {(a, b): _tv(per[a], per[b]) for a, b in combinations(sorted(per), 2)}
    return PrivacyReport(subset, max(pairs.values(), default=0.0), per, pairs)
