"""Sparse computational-basis state engine.

States are dictionaries from basis configurations (tuples of ints, one per
site) to complex amplitudes.  Honest dynamics only ever purify, permute and
measure, so the support stays bounded by the product of randomness supports.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from itertools import product
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

PRUNE = 1e-12
NORM_TOL = 1e-9
DENSE_CAP = 256
VERIFY_LIMIT = 2 ** 16


class StateError(ValueError):
    """Raised when an engine operation's precondition does not hold."""


class NotAPermutation(StateError):
    pass


@dataclass(frozen=True)
class Register:
    name: str
    sites: int
    dim: int
    offset: int

    @property
    def site_range(self) -> range:
        return range(self.offset, self.offset + self.sites)

    @property
    def capacity(self) -> int:
        return self.dim ** self.sites


class RegisterLayout:
    """Ordered, named registers of equal-dimension sites.

    Layouts are immutable; ``extend`` returns a new layout with the extra
    registers appended after the existing sites.
    """

    __slots__ = ("_registers", "_index", "dims")

    def __init__(self, registers: Iterable[tuple] = ()):
        regs: list[Register] = []
        index: dict[str, Register] = {}
        dims: list[int] = []
        for spec in registers:
            name, sites, dim = spec[0], int(spec[1]), int(spec[2])
            if name in index:
                raise StateError(f"duplicate register {name!r}")
            if sites < 1 or dim < 2:
                raise StateError(f"register {name!r}: need sites >= 1 and dim >= 2")
            reg = Register(name, sites, dim, len(dims))
            regs.append(reg)
            index[name] = reg
            dims.extend([dim] * sites)
        self._registers = tuple(regs)
        self._index = index
        self.dims = tuple(dims)

    @property
    def registers(self) -> tuple[Register, ...]:
        return self._registers

    @property
    def total_sites(self) -> int:
        return len(self.dims)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __getitem__(self, name: str) -> Register:
        try:
            return self._index[name]
        except KeyError:
            raise StateError(f"no register named {name!r}") from None

    def __len__(self) -> int:
        return len(self._registers)

    def __eq__(self, other) -> bool:
        return isinstance(other, RegisterLayout) and self.specs() == other.specs()

    def __hash__(self) -> int:
        return hash(self.specs())

    def specs(self) -> tuple[tuple[str, int, int], ...]:
        return tuple((r.name, r.sites, r.dim) for r in self._registers)

    def names(self) -> list[str]:
        return [r.name for r in self._registers]

    def extend(self, registers: Iterable[tuple]) -> "RegisterLayout":
        return RegisterLayout(self.specs() + tuple(registers))

    def sites(self, *names: str) -> tuple[int, ...]:
        out: list[int] = []
        for name in names:
            out.extend(self[name].site_range)
        return tuple(out)

    def encode(self, name: str, value) -> tuple[int, ...]:
        """Integer or tuple value -> per-site digits (first site most significant)."""
        reg = self[name]
        if isinstance(value, tuple):
            if len(value) != reg.sites or any(not 0 <= v < reg.dim for v in value):
                raise StateError(f"value {value} does not fit register {name!r}")
            return value
        value = int(value)
        if not 0 <= value < reg.capacity:
            raise StateError(f"value {value} exceeds capacity of register {name!r}")
        digits = []
        for _ in range(reg.sites):
            value, d = divmod(value, reg.dim)
            digits.append(d)
        return tuple(reversed(digits))

    def value(self, config: Sequence[int], name: str) -> tuple[int, ...]:
        reg = self[name]
        return tuple(config[reg.offset:reg.offset + reg.sites])


def _as_int(digits: Sequence[int], dim: int) -> int:
    out = 0
    for d in digits:
        out = out * dim + d
    return out


class SparseState:
    """Pure state over a register layout, stored sparsely.

    Every operation returns a new state; instances are never mutated after
    construction.  Equality is up to global phase (see ``equals``).
    """

    __slots__ = ("layout", "amps")

    def __init__(self, layout: RegisterLayout, amps: Mapping[tuple, complex], *,
                 renormalize: bool = True, check: bool = True):
        kept = {k: complex(a) for k, a in amps.items() if abs(a) >= PRUNE}
        if renormalize and kept:
            norm = math.sqrt(sum(abs(a) ** 2 for a in kept.values()))
            if abs(norm - 1.0) > 0:
                kept = {k: a / norm for k, a in kept.items()}
        if check and kept:
            total = sum(abs(a) ** 2 for a in kept.values())
            if abs(total - 1.0) > NORM_TOL:
                raise StateError(f"state not normalized (norm^2={total})")
        self.layout = layout
        self.amps = kept

    # construction -------------------------------------------------------

    @classmethod
    def zero(cls, layout: RegisterLayout) -> "SparseState":
        return cls(layout, {(0,) * layout.total_sites: 1.0})

    @classmethod
    def basis(cls, layout: RegisterLayout, values: Mapping[str, object]) -> "SparseState":
        config = [0] * layout.total_sites
        for name, value in values.items():
            reg = layout[name]
            config[reg.offset:reg.offset + reg.sites] = layout.encode(name, value)
        return cls(layout, {tuple(config): 1.0})

    @classmethod
    def empty(cls, layout: RegisterLayout) -> "SparseState":
        return cls(layout, {}, renormalize=False, check=False)

    @property
    def is_empty(self) -> bool:
        return not self.amps

    def __len__(self) -> int:
        return len(self.amps)

    def __repr__(self) -> str:
        return f"SparseState({len(self.layout)} registers, support={len(self.amps)})"

    def norm_squared(self) -> float:
        return sum(abs(a) ** 2 for a in self.amps.values())

    def with_registers(self, registers: Iterable[tuple]) -> "SparseState":
        """Append fresh all-zero registers."""
        registers = tuple(registers)
        layout = self.layout.extend(registers)
        pad = (0,) * (layout.total_sites - self.layout.total_sites)
        return SparseState(layout, {k + pad: a for k, a in self.amps.items()},
                           renormalize=False, check=False)

    def register_values(self, name: str) -> dict[tuple, float]:
        """Marginal distribution of one register."""
        reg = self.layout[name]
        lo, hi = reg.offset, reg.offset + reg.sites
        out: dict[tuple, float] = defaultdict(float)
        for k, a in self.amps.items():
            out[k[lo:hi]] += abs(a) ** 2
        return dict(out)

    def definite_value(self, name: str) -> tuple:
        """Value of a register that is in a basis state; raises otherwise."""
        values = self.register_values(name)
        if len(values) != 1:
            raise StateError(f"register {name!r} is in superposition")
        return next(iter(values))

    def marginal(self, sites: Sequence[int]) -> dict[tuple, float]:
        out: dict[tuple, float] = defaultdict(float)
        for k, a in self.amps.items():
            out[tuple(k[s] for s in sites)] += abs(a) ** 2
        return dict(out)

    def inner(self, other: "SparseState") -> complex:
        if self.layout != other.layout:
            raise StateError("layouts differ")
        small, big = (self, other) if len(self) <= len(other) else (other, self)
        total = sum(a.conjugate() * big.amps.get(k, 0.0) for k, a in small.amps.items())
        return total if small is self else total.conjugate()

    def fidelity(self, other: "SparseState") -> float:
        return abs(self.inner(other)) ** 2

    def equals(self, other: "SparseState", tol: float = 1e-9) -> bool:
        """Amplitude-wise equality up to a global phase."""
        if self.layout != other.layout:
            return False
        keys = set(self.amps) | set(other.amps)
        if not keys:
            return True
        anchor = max(self.amps, key=lambda k: abs(self.amps[k]), default=None)
        if anchor is None or abs(other.amps.get(anchor, 0.0)) < PRUNE:
            return False
        phase = other.amps[anchor] / self.amps[anchor]
        phase /= abs(phase)
        return all(abs(self.amps.get(k, 0.0) * phase - other.amps.get(k, 0.0)) <= tol
                   for k in keys)

    def reordered(self, names: Sequence[str]) -> "SparseState":
        """Same state with registers listed in ``names`` order (all must be present)."""
        if sorted(names) != sorted(self.layout.names()):
            raise StateError("reordering must list every register exactly once")
        layout = RegisterLayout((n, self.layout[n].sites, self.layout[n].dim) for n in names)
        perm = self.layout.sites(*names)
        return SparseState(layout, {tuple(k[s] for s in perm): a for k, a in self.amps.items()},
                           renormalize=False, check=False)

    def canonical(self) -> "SparseState":
        return self.reordered(sorted(self.layout.names()))

    def to_dense(self) -> np.ndarray:
        size = int(np.prod(self.layout.dims)) if self.layout.dims else 1
        vec = np.zeros(size, dtype=complex)
        for k, a in self.amps.items():
            vec[np.ravel_multi_index(k, self.layout.dims) if k else 0] = a
        return vec


# ---------------------------------------------------------------------------
# operations


def prepare_distribution(state: SparseState, register: str,
                         dist: Mapping[object, float]) -> SparseState:
    """Load sum_r sqrt(p(r)) |r> into an all-zero register."""
    reg = state.layout[register]
    lo, hi = reg.offset, reg.offset + reg.sites
    if any(any(k[lo:hi]) for k in state.amps):
        raise StateError(f"register {register!r} is not in the all-zero state")
    total = sum(dist.values())
    if any(p < 0 for p in dist.values()) or abs(total - 1.0) > 1e-12:
        raise StateError("distribution must be nonnegative and sum to 1")
    weights = [(state.layout.encode(register, v), math.sqrt(p)) for v, p in dist.items() if p > 0]
    amps = {}
    for k, a in state.amps.items():
        for digits, w in weights:
            amps[k[:lo] + digits + k[hi:]] = a * w
    return SparseState(state.layout, amps)


def _space(dims: Sequence[int]):
    return product(*(range(d) for d in dims))


def verify_permutation(dims: Sequence[int], fn: Callable[[tuple], tuple]) -> None:
    """Exhaustively check that ``fn`` is a bijection of the sub-space."""
    size = math.prod(dims)
    if size > VERIFY_LIMIT:
        return
    seen = set()
    for cfg in _space(dims):
        img = tuple(fn(cfg))
        if len(img) != len(dims) or any(not 0 <= v < d for v, d in zip(img, dims)):
            raise NotAPermutation(f"image {img} of {cfg} leaves the sub-space")
        if img in seen:
            raise NotAPermutation(f"two configurations map to {img}")
        seen.add(img)


def apply_permutation(state: SparseState, sites: Sequence[int],
                      fn: Callable[[tuple], tuple], *, verify: bool | None = None) -> SparseState:
    """Relabel basis terms: the sub-configuration on ``sites`` is mapped through ``fn``.

    With ``verify`` unset, bijectivity is checked exhaustively when the
    sub-space has at most 2**16 points; collisions on the support are always
    detected.
    """
    sites = tuple(sites)
    dims = [state.layout.dims[s] for s in sites]
    if verify or (verify is None and math.prod(dims) <= VERIFY_LIMIT):
        verify_permutation(dims, fn)
    amps = {}
    for k, a in state.amps.items():
        img = fn(tuple(k[s] for s in sites))
        new = list(k)
        for s, v in zip(sites, img):
            new[s] = v
        new = tuple(new)
        if new in amps:
            raise NotAPermutation("mapping is not injective on the state's support")
        amps[new] = a
    return SparseState(state.layout, amps, renormalize=False, check=False)


def apply_reversible(state: SparseState, in_sites: Sequence[int], out_sites: Sequence[int],
                     fn: Callable[[tuple], Sequence[int]]) -> SparseState:
    """|v>|y> -> |v>|y + f(v)> with per-site modular addition.

    A bijection for any ``fn``, so no verification pass is needed.
    """
    in_sites, out_sites = tuple(in_sites), tuple(out_sites)
    if set(in_sites) & set(out_sites):
        raise StateError("input and output sites overlap")
    dims = state.layout.dims
    out_dims = [dims[s] for s in out_sites]
    amps = {}
    cache: dict[tuple, Sequence[int]] = {}
    for k, a in state.amps.items():
        v = tuple(k[s] for s in in_sites)
        f = cache.get(v)
        if f is None:
            f = cache[v] = tuple(fn(v))
            if len(f) != len(out_sites):
                raise StateError(f"function produced {len(f)} digits for {len(out_sites)} sites")
        new = list(k)
        for s, y, d in zip(out_sites, f, out_dims):
            new[s] = (new[s] + y) % d
        amps[tuple(new)] = a
    return SparseState(state.layout, amps, renormalize=False, check=False)


def cx_copy(state: SparseState, source: str, target: str) -> SparseState:
    """Generalized CX: |a>|b> -> |a>|a+b> register-wise."""
    lay = state.layout
    src, dst = lay[source], lay[target]
    if (src.sites, src.dim) != (dst.sites, dst.dim):
        raise StateError("CX needs registers of identical shape")
    return apply_reversible(state, src.site_range, dst.site_range, lambda v: v)


def cx_uncopy(state: SparseState, source: str, target: str) -> SparseState:
    """Inverse CX: |a>|b> -> |a>|b-a>."""
    dim = state.layout[target].dim
    return apply_reversible(state, state.layout[source].site_range, state.layout[target].site_range,
                            lambda v: tuple((-x) % dim for x in v))


def swap_registers(state: SparseState, a: str, b: str) -> SparseState:
    ra, rb = state.layout[a], state.layout[b]
    if (ra.sites, ra.dim) != (rb.sites, rb.dim):
        raise StateError("swap needs registers of identical shape")
    n = ra.sites
    sites = tuple(ra.site_range) + tuple(rb.site_range)
    return apply_permutation(state, sites, lambda v: v[n:] + v[:n], verify=False)


def is_unitary(matrix: np.ndarray, tol: float = 1e-9) -> bool:
    m = np.asarray(matrix)
    return m.ndim == 2 and m.shape[0] == m.shape[1] and np.allclose(
        m @ m.conj().T, np.eye(m.shape[0]), atol=tol)


@dataclass(frozen=True)
class DenseUnitary:
    sites: tuple[int, ...]
    matrix: np.ndarray

    def __post_init__(self):
        if not is_unitary(self.matrix):
            raise StateError("matrix is not unitary")


def apply_dense_unitary(state: SparseState, sites: Sequence[int], matrix,
                        *, cap: int = DENSE_CAP) -> SparseState:
    """Apply a small dense unitary on ``sites`` (first site most significant)."""
    sites = tuple(sites)
    dims = [state.layout.dims[s] for s in sites]
    size = math.prod(dims)
    if size > cap:
        raise StateError(f"dense unitary on a {size}-dimensional subspace exceeds cap {cap}")
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.shape != (size, size):
        raise StateError(f"matrix shape {matrix.shape} does not match subspace dimension {size}")
    if not is_unitary(matrix):
        raise StateError("matrix is not unitary")
    site_set = set(sites)
    rest_sites = [s for s in range(state.layout.total_sites) if s not in site_set]
    groups: dict[tuple, np.ndarray] = {}
    for k, a in state.amps.items():
        rest = tuple(k[s] for s in rest_sites)
        vec = groups.get(rest)
        if vec is None:
            vec = groups[rest] = np.zeros(size, dtype=complex)
        vec[np.ravel_multi_index(tuple(k[s] for s in sites), dims)] += a
    amps = {}
    n = state.layout.total_sites
    for rest, vec in groups.items():
        out = matrix @ vec
        for idx in np.flatnonzero(np.abs(out) >= PRUNE):
            sub = np.unravel_index(idx, dims)
            key = [0] * n
            for s, v in zip(rest_sites, rest):
                key[s] = v
            for s, v in zip(sites, sub):
                key[s] = int(v)
            amps[tuple(key)] = complex(out[idx])
    return SparseState(state.layout, amps)


def apply_unitary_to(state: SparseState, registers: Sequence[str], matrix, **kw) -> SparseState:
    return apply_dense_unitary(state, state.layout.sites(*registers), matrix, **kw)


@dataclass(frozen=True)
class Branch:
    outcome: tuple
    probability: float
    state: SparseState


def measurement_branches(state: SparseState, sites: Sequence[int]) -> list[Branch]:
    """All outcomes of a computational-basis measurement on ``sites``, sorted by outcome."""
    sites = tuple(sites)
    if not sites:
        raise StateError("measurement needs at least one site")
    parts: dict[tuple, dict] = defaultdict(dict)
    for k, a in state.amps.items():
        parts[tuple(k[s] for s in sites)][k] = a
    out = []
    for outcome in sorted(parts):
        amps = parts[outcome]
        p = sum(abs(a) ** 2 for a in amps.values())
        out.append(Branch(outcome, p, SparseState(state.layout, amps)))
    return out


def measure(state: SparseState, sites: Sequence[int], rng: np.random.Generator):
    """Sample one measurement branch; deterministic for a seeded generator."""
    branches = measurement_branches(state, sites)
    u = rng.random()
    acc = 0.0
    for br in branches:
        acc += br.probability
        if u < acc:
            return br.outcome, br.state
    return branches[-1].outcome, branches[-1].state


def project(state: SparseState, sites: Sequence[int], value: Sequence[int]):
    """Project onto ``sites == value``; returns (probability, renormalized state).

    A zero-probability projection returns the empty state.
    """
    sites, value = tuple(sites), tuple(value)
    dims = state.layout.dims
    if len(value) != len(sites) or any(not 0 <= v < dims[s] for s, v in zip(sites, value)):
        raise StateError(f"value {value} outside the measured sites' dimensions")
    amps = {k: a for k, a in state.amps.items() if tuple(k[s] for s in sites) == value}
    p = sum(abs(a) ** 2 for a in amps.values())
    if p < PRUNE ** 2 or not amps:
        return 0.0, SparseState.empty(state.layout)
    return p, SparseState(state.layout, amps)


def coefficient_matrix(state: SparseState, left_sites: Sequence[int]) -> np.ndarray:
    left = tuple(left_sites)
    left_set = set(left)
    right = [s for s in range(state.layout.total_sites) if s not in left_set]
    rows: dict[tuple, int] = {}
    cols: dict[tuple, int] = {}
    entries = []
    for k, a in state.amps.items():
        r = rows.setdefault(tuple(k[s] for s in left), len(rows))
        c = cols.setdefault(tuple(k[s] for s in right), len(cols))
        entries.append((r, c, a))
    mat = np.zeros((max(len(rows), 1), max(len(cols), 1)), dtype=complex)
    for r, c, a in entries:
        mat[r, c] += a
    return mat


def schmidt_rank(state: SparseState, left_sites: Sequence[int], tol: float = 1e-9) -> int:
    """Numerical Schmidt rank across the cut ``left_sites | rest``."""
    if state.is_empty:
        return 0
    sv = np.linalg.svd(coefficient_matrix(state, left_sites), compute_uv=False)
    return int(np.sum(sv > tol))


def split_product(state: SparseState, names: Sequence[str], tol: float = 1e-9) -> SparseState:
    """Factor a product state and return the factor on registers ``names``.

    Raises if the state is entangled across the cut.
    """
    lay = state.layout
    keep = lay.sites(*names)
    if schmidt_rank(state, keep, tol) != 1:
        raise StateError("state is entangled across the requested cut")
    keep_set = set(keep)
    rest = [s for s in range(lay.total_sites) if s not in keep_set]
    anchor = max(state.amps, key=lambda k: abs(state.amps[k]))
    anchor_rest = tuple(anchor[s] for s in rest)
    sub_layout = RegisterLayout((n, lay[n].sites, lay[n].dim) for n in names)
    amps = {}
    for k, a in state.amps.items():
        if tuple(k[s] for s in rest) == anchor_rest:
            amps[tuple(k[s] for s in keep)] = a
    return SparseState(sub_layout, amps)


def tensor(a: SparseState, b: SparseState) -> SparseState:
    layout = a.layout.extend(b.layout.specs())
    return SparseState(layout, {ka + kb: x * y for ka, x in a.amps.items() for kb, y in b.amps.items()})


def drop_registers(state: SparseState, names: Sequence[str]) -> SparseState:
    """Discard registers that are in a definite basis state (product factor)."""
    for n in names:
        state.definite_value(n)
    keep = [n for n in state.layout.names() if n not in set(names)]
    lay = state.layout
    sites = lay.sites(*keep)
    layout = RegisterLayout((n, lay[n].sites, lay[n].dim) for n in keep)
    return SparseState(layout, {tuple(k[s] for s in sites): a for k, a in state.amps.items()},
                       renormalize=False, check=False)


def set_register(state: SparseState, name: str, value) -> SparseState:
    """Overwrite a register that is in a definite basis state."""
    state.definite_value(name)
    reg = state.layout[name]
    digits = state.layout.encode(name, value)
    lo, hi = reg.offset, reg.offset + reg.sites
    return SparseState(state.layout, {k[:lo] + digits + k[hi:]: a for k, a in state.amps.items()},
                       renormalize=False, check=False)


HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
