"""
Tests for orbital reordering

- spectral seriation of mutual-information matrices
- permutations realised by fermionic swap gates

`uv run pytest tests/test_ordering.py` to run these tests
"""

from itertools import permutations
from unittest.mock import MagicMock

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_sector_state
from dmrg import energy_expectation
from mps import TruncationPolicy, from_dense, overlap, to_dense
from operators import build_hubbard, rotate_coefficients
from ordering import (
    OrbitalPermutation,
    apply_permutation,
    fiedler_order,
    ordering_cost,
    reorder_by_mutual_information,
)


# -------------------------------------------------------------------------
# TEST SUITE 1: OrbitalPermutation
# -------------------------------------------------------------------------


def test_transpositions_rebuild_the_order():
    """
    Test 1: adjacent swaps applied to the identity arrangement give the order
    """
    perm = OrbitalPermutation((3, 0, 2, 1))
    current = list(range(4))
    for k in perm.transpositions():
        current[k], current[k + 1] = current[k + 1], current[k]
    assert tuple(current) == perm.order
    assert perm.inverse().positions().tolist() == list(perm.order)
    assert OrbitalPermutation.identity(3).transpositions() == []


def test_invalid_permutation_rejected():
    """
    Test 2: repeated labels are not a permutation
    """
    with pytest.raises(ValueError):
        OrbitalPermutation((0, 0, 1))


# -------------------------------------------------------------------------
# TEST SUITE 2: fiedler_order
# -------------------------------------------------------------------------


def test_zero_information_keeps_identity():
    """
    Test 3: I = 0 -> identity
    """
    assert fiedler_order(np.zeros((5, 5))).is_identity


def test_decaying_chain_keeps_identity():
    """
    Test 4: I(q, r) = exp(-|q - r|) -> identity, reversal resolved by the tie-break
    """
    # --- ARRANGE ---
    pos = np.arange(6)
    info = np.exp(-np.abs(pos[:, None] - pos[None, :]).astype(float))
    np.fill_diagonal(info, 0.0)

    # --- ACT ---
    perm = fiedler_order(info)

    # --- ASSERT ---
    assert perm.is_identity


def test_interleaved_clusters_become_contiguous():
    """
    Test 5: two strongly coupled clusters {0, 2, 4} and {1, 3, 5}
    - each cluster ends up contiguous.
    - cost is the brute-force optimum over all 720 orders.
    """
    # --- ARRANGE ---
    info = np.full((6, 6), 1e-3)
    for cluster in ((0, 2, 4), (1, 3, 5)):
        for a in cluster:
            for b in cluster:
                info[a, b] = 1.0
    np.fill_diagonal(info, 0.0)

    # --- ACT ---
    perm = fiedler_order(info)
    best = min(ordering_cost(info, OrbitalPermutation(order)) for order in permutations(range(6)))

    # --- ASSERT ---
    assert set(perm.order[:3]) in ({0, 2, 4}, {1, 3, 5})
    assert abs(ordering_cost(info, perm) - best) < 1e-12


def test_disconnected_groups_concatenated_by_first_site():
    """
    Test 6: components are ordered by their smallest site
    """
    info = np.zeros((4, 4))
    info[0, 3] = info[3, 0] = 1.0
    info[1, 2] = info[2, 1] = 0.5
    assert fiedler_order(info).order == (0, 3, 1, 2)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_relabelled_information_gives_relabelled_order(seed):
    """
    Test 7: I' = P^T I P for a random relabelling P of a connected chain
    - the order found for I' maps back to the order for I (up to reversal) at the same cost.
    """
    # --- ARRANGE ---
    rng = np.random.default_rng(seed)
    coords = np.cumsum(rng.uniform(0.5, 1.5, size=7))
    info = np.exp(-np.abs(coords[:, None] - coords[None, :]))
    np.fill_diagonal(info, 0.0)
    relabel = rng.permutation(7)
    relabelled = info[np.ix_(relabel, relabel)]

    # --- ACT ---
    original = fiedler_order(info)
    moved = fiedler_order(relabelled)

    # --- ASSERT ---
    mapped = tuple(int(relabel[k]) for k in moved.order)
    assert mapped in (original.order, original.order[::-1])
    assert abs(ordering_cost(relabelled, moved) - ordering_cost(info, original)) < 1e-12


def test_asymmetric_information_rejected():
    """
    Test 8: input must be symmetric
    """
    info = np.zeros((3, 3))
    info[0, 1] = 1.0
    with pytest.raises(ValueError):
        fiedler_order(info)


# -------------------------------------------------------------------------
# TEST SUITE 3: apply_permutation
# -------------------------------------------------------------------------


def test_identity_permutation_is_noop(spinless_op, rng):
    """
    Test 9: nothing changes, the cache is still cleared
    """
    psi, vec = random_sector_state(4, 1, 2, rng)
    cache = MagicMock()
    out, op, eps = apply_permutation(psi, spinless_op, OrbitalPermutation.identity(4), TruncationPolicy.exact(), cache)
    cache.clear.assert_called_once()
    assert eps == 0.0
    assert op is spinless_op
    assert_allclose(to_dense(out), vec)


def test_transposition_keeps_energy(spinless_op, rng):
    """
    Test 10: swapping sites (1, 2) with eps_trc = 0 leaves the energy invariant
    """
    # --- ARRANGE ---
    psi, _ = random_sector_state(4, 1, 2, rng)
    before = energy_expectation(psi, spinless_op)

    # --- ACT ---
    psi, op, eps = apply_permutation(psi, spinless_op, OrbitalPermutation((0, 2, 1, 3)), TruncationPolicy.exact())

    # --- ASSERT ---
    assert eps < 1e-14
    assert abs(energy_expectation(psi, op) - before) < 1e-10
    assert op.mode_space.mode_order.tolist() == [0, 2, 1, 3]


def test_spinful_permutation_matches_mode_matrix(rng):
    """
    Test 11: coefficients after the swap chain equal a single rotation by the permutation matrix
    """
    # --- ARRANGE ---
    op = build_hubbard(3, p=2, onsite=3.0, decay=0.8)
    psi, _ = random_sector_state(3, 2, (1, 2), rng)
    perm = OrbitalPermutation((2, 0, 1))
    before = energy_expectation(psi, op)

    # --- ACT ---
    psi, permuted, _ = apply_permutation(psi, op, perm, TruncationPolicy.exact())
    direct = rotate_coefficients(op, perm.mode_matrix(2))

    # --- ASSERT ---
    assert_allclose(permuted.one_body, direct.one_body, atol=1e-12)
    assert_allclose(permuted.two_body, direct.two_body, atol=1e-12)
    assert abs(energy_expectation(psi, permuted) - before) < 1e-10


def test_permutation_and_inverse_restore_state(rng, spinless_op):
    """
    Test 12: applying pi then pi^-1 returns the original state
    """
    psi, _ = random_sector_state(4, 1, 2, rng)
    original = psi.copy()
    perm = OrbitalPermutation((3, 1, 0, 2))
    psi, op, _ = apply_permutation(psi, spinless_op, perm, TruncationPolicy.exact())
    psi, op, _ = apply_permutation(psi, op, perm.inverse(), TruncationPolicy.exact())
    assert abs(abs(overlap(original, psi)) - 1.0) < 1e-10
    assert op.mode_space.mode_order.tolist() == [0, 1, 2, 3]


def test_reorder_moves_entangled_pair_together(spinless_op):
    """
    Test 13: (|100> + |001>)/sqrt(2) -> orbitals 0 and 2 become neighbours
    """
    # --- ARRANGE ---
    vec = np.zeros(8)
    vec[0b100] = vec[0b001] = 1 / np.sqrt(2)
    psi = from_dense(vec, 3, 1)
    op = build_hubbard(3, p=1)

    # --- ACT ---
    psi, op, perm = reorder_by_mutual_information(psi, op, TruncationPolicy.exact())

    # --- ASSERT ---
    assert perm.order == (0, 2, 1)
    assert psi.bond_dimensions() == [2, 1]
