import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expected import dense_apply, dense_permutation_matrix, equal_up_to_phase, random_unitary
from qbalab import props, qstate
from qbalab.qstate import RegisterLayout, SparseState

SQ = 1 / math.sqrt(2)


def qubits(*names):
    return RegisterLayout([(n, 1, 2) for n in names])


def bell():
    s = qstate.prepare_distribution(SparseState.zero(qubits("a", "b")), "a", {0: 0.5, 1: 0.5})
    return qstate.cx_copy(s, "a", "b")


# prepare_distribution ------------------------------------------------------

def test_prepare_uniform_bit():
    s = qstate.prepare_distribution(SparseState.zero(qubits("r")), "r", {0: 0.5, 1: 0.5})
    assert s.amps == pytest.approx({(0,): SQ, (1,): SQ})


def test_prepare_biased_coin_amplitudes():
    s = qstate.prepare_distribution(SparseState.zero(qubits("c")), "c", {0: 0.25, 1: 0.75})
    assert s.amps[(0,)] == pytest.approx(0.5)
    assert s.amps[(1,)] == pytest.approx(math.sqrt(3) / 2)


def test_prepare_point_mass_on_qudit():
    s = qstate.prepare_distribution(SparseState.zero(RegisterLayout([("r", 1, 8)])), "r", {5: 1.0})
    assert s.amps == {(5,): 1.0}


def test_prepare_requires_zero_register():
    s = SparseState.basis(qubits("r"), {"r": (1,)})
    with pytest.raises(qstate.StateError):
        qstate.prepare_distribution(s, "r", {0: 1.0})


def test_prepare_rejects_oversized_support():
    with pytest.raises((qstate.StateError, ValueError)):
        qstate.prepare_distribution(SparseState.zero(qubits("r")), "r", {0: 0.5, 2: 0.5})


def test_prepare_rejects_bad_distribution():
    with pytest.raises(qstate.StateError):
        qstate.prepare_distribution(SparseState.zero(qubits("r")), "r", {0: 0.5, 1: 0.6})


# permutations ----------------------------------------------------------------

def test_identity_permutation_keeps_state():
    s = bell()
    assert qstate.apply_permutation(s, (0, 1), lambda v: v).equals(s)


def test_cx_copy_makes_bell_pair():
    s = bell()
    assert s.amps == pytest.approx({(0, 0): SQ, (1, 1): SQ})


def test_reversible_parity_matches_dense_oracle():
    lay = qubits("v0", "v1", "y")
    rng = np.random.default_rng(3)
    amps = {cfg: complex(*rng.normal(size=2)) for cfg in np.ndindex(2, 2, 2)}
    s = SparseState(lay, amps)
    out = qstate.apply_reversible(s, (0, 1), (2,), lambda v: ((v[0] + v[1]) % 2,))
    mat = dense_permutation_matrix((2, 2, 2), lambda c: (c[0], c[1], c[2] ^ c[0] ^ c[1]))
    assert equal_up_to_phase(out.to_dense(), mat @ s.to_dense())
    # |11>|0> is a fixed point of the parity map
    b = SparseState.basis(lay, {"v0": (1,), "v1": (1,)})
    assert qstate.apply_reversible(b, (0, 1), (2,), lambda v: ((v[0] + v[1]) % 2,)).equals(b)


def test_non_injective_map_is_rejected():
    with pytest.raises(qstate.NotAPermutation):
        qstate.apply_permutation(bell(), (0, 1), lambda v: (0, 0))


def test_out_of_range_image_is_rejected():
    with pytest.raises(qstate.NotAPermutation):
        qstate.apply_permutation(bell(), (0,), lambda v: (v[0] + 1,))


def test_cx_uncopy_inverts_copy():
    s = qstate.prepare_distribution(SparseState.zero(RegisterLayout([("a", 1, 5), ("b", 1, 5)])),
                                    "a", {k: 0.2 for k in range(5)})
    assert qstate.cx_uncopy(qstate.cx_copy(s, "a", "b"), "a", "b").equals(s)


# dense unitaries -----------------------------------------------------------

def test_identity_unitary():
    s = bell()
    assert qstate.apply_dense_unitary(s, (0, 1), np.eye(4)).equals(s)


def test_hadamard_on_zero():
    s = qstate.apply_dense_unitary(SparseState.zero(qubits("q")), (0,), qstate.HADAMARD)
    assert s.amps == pytest.approx({(0,): SQ, (1,): SQ})


def test_random_two_qubit_unitary_matches_dense_oracle():
    rng = np.random.default_rng(11)
    for _ in range(20):
        lay = qubits("a", "b", "c", "d")
        vec = rng.normal(size=16) + 1j * rng.normal(size=16)
        s = SparseState(lay, {tuple(int(x) for x in np.unravel_index(i, (2,) * 4)): a
                              for i, a in enumerate(vec)})
        sites = tuple(int(x) for x in rng.choice(4, size=2, replace=False))
        u = random_unitary(rng, 4)
        got = qstate.apply_dense_unitary(s, sites, u).to_dense()
        assert equal_up_to_phase(got, dense_apply(s.to_dense(), (2,) * 4, list(sites), u))


def test_dense_cap_is_enforced():
    lay = qubits(*[f"q{k}" for k in range(9)])
    with pytest.raises(qstate.StateError, match="cap"):
        qstate.apply_dense_unitary(SparseState.zero(lay), tuple(range(9)), np.eye(512))


def test_non_unitary_is_rejected():
    with pytest.raises(qstate.StateError):
        qstate.apply_dense_unitary(SparseState.zero(qubits("q")), (0,), np.array([[1, 1], [0, 1]]))


# measurement ---------------------------------------------------------------

def test_bell_measurement_branches():
    br = qstate.measurement_branches(bell(), (0,))
    assert [(b.outcome, round(b.probability, 12)) for b in br] == [((0,), 0.5), ((1,), 0.5)]
    assert br[0].state.amps == pytest.approx({(0, 0): 1.0})
    assert br[1].state.amps == pytest.approx({(1, 1): 1.0})


def test_biased_coin_measurement():
    s = qstate.prepare_distribution(SparseState.zero(qubits("c")), "c", {0: 0.25, 1: 0.75})
    br = qstate.measurement_branches(s, (0,))
    assert [b.probability for b in br] == pytest.approx([0.25, 0.75])


def test_two_independent_coins_give_product_probabilities():
    s = SparseState.zero(qubits("a", "b"))
    s = qstate.prepare_distribution(s, "a", {0: 0.25, 1: 0.75})
    s = qstate.prepare_distribution(s, "b", {0: 0.5, 1: 0.5})
    br = {b.outcome: b.probability for b in qstate.measurement_branches(s, (0, 1))}
    assert br == pytest.approx({(0, 0): 0.125, (0, 1): 0.125, (1, 0): 0.375, (1, 1): 0.375})


def test_measure_is_seeded():
    s = SparseState.zero(RegisterLayout([("r", 1, 7)]))
    s = qstate.prepare_distribution(s, "r", {k: 1 / 7 for k in range(7)})
    a = [qstate.measure(s, (0,), np.random.default_rng(k))[0] for k in range(20)]
    b = [qstate.measure(s, (0,), np.random.default_rng(k))[0] for k in range(20)]
    assert a == b and len(set(a)) > 1


def test_project_bell():
    p, s = qstate.project(bell(), (0,), (0,))
    assert p == pytest.approx(0.5)
    assert s.amps == pytest.approx({(0, 0): 1.0})


def test_project_outside_support():
    p, s = qstate.project(SparseState.zero(qubits("a", "b")), (0,), (1,))
    assert p == 0.0 and s.is_empty


def test_project_value_outside_dimension():
    with pytest.raises(qstate.StateError):
        qstate.project(bell(), (0,), (2,))


# Schmidt rank --------------------------------------------------------------

def test_schmidt_rank_product_and_bell():
    prod = qstate.prepare_distribution(SparseState.zero(qubits("a", "b")), "a", {0: 0.5, 1: 0.5})
    assert qstate.schmidt_rank(prod, (0,)) == 1
    assert qstate.schmidt_rank(bell(), (0,)) == 2


def test_split_product_rejects_entangled():
    with pytest.raises(qstate.StateError):
        qstate.split_product(bell(), ["a"])


# engine-wide properties ------------------------------------------------------

def _check_branches(state):
    sites = tuple(range(state.layout.total_sites))
    k = max(1, len(sites) // 2)
    br = qstate.measurement_branches(state, sites[:k])
    assert sum(b.probability for b in br) == pytest.approx(1.0, abs=1e-9)
    supports = [set(tuple(c[s] for s in sites[:k]) for c in b.state.amps) for b in br]
    for a in range(len(supports)):
        assert len(supports[a]) == 1
        for b in range(a + 1, len(supports)):
            assert supports[a].isdisjoint(supports[b])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_sparse_matches_dense_oracle(seed):
    # at most 12 qubit-equivalents: 6 sites of dim <= 4
    rng = np.random.default_rng(seed)
    s = props.random_sparse_state(rng, max_sites=6, max_dim=4)
    dims = s.layout.dims
    vec = s.to_dense()
    assert abs(np.linalg.norm(vec) - 1) <= 1e-9
    # a random permutation
    perm = props.random_permutation(rng, dims)
    sites = tuple(range(len(dims)))
    s2 = qstate.apply_permutation(s, sites, perm)
    vec2 = dense_permutation_matrix(dims, perm) @ vec
    assert equal_up_to_phase(s2.to_dense(), vec2)
    # a random dense unitary on one or two sites
    k = int(rng.integers(1, min(2, len(dims)) + 1))
    on = [int(x) for x in rng.choice(len(dims), size=k, replace=False)]
    u = random_unitary(rng, int(np.prod([dims[x] for x in on])))
    s3 = qstate.apply_dense_unitary(s2, on, u)
    vec3 = dense_apply(vec2, dims, on, u)
    assert equal_up_to_phase(s3.to_dense(), vec3)
    assert abs(s3.norm_squared() - 1) <= 1e-9
    _check_branches(s3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_projection_after_measure_is_normalized(seed):
    rng = np.random.default_rng(seed)
    s = props.random_sparse_state(rng)
    outcome, post = qstate.measure(s, (0,), rng)
    assert abs(post.norm_squared() - 1) <= 1e-9
    p, proj = qstate.project(s, (0,), outcome)
    assert p > 0 and proj.equals(post)


def test_measurement_commutes_with_permutations():
    rep = props.permutation_commutation(200, seed=0)
    assert rep.passed(1e-9) and rep.failures == 0


def test_measurement_commutes_with_projectors():
    rep = props.projector_commutation(200, seed=1)
    assert rep.passed(1e-9)


def test_zero_instances_is_vacuous():
    rep = props.permutation_commutation(0)
    assert rep.vacuous and rep.passed() and rep.notes
