"""
Tests for second-quantised coefficient sets

- rotation of t and v, local embedding
- FCIDUMP ingestion and error reporting
- Hubbard generator against exact diagonalisation

`uv run pytest tests/test_operators.py` to run these tests
"""

import io

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_operator, random_unitary
from fock import ModeSpace, PreconditionError, basis_occupations
from operators import (
    FcidumpError,
    SecondQuantizedOperator,
    build_hubbard,
    dump_operator,
    embed_local,
    load_operator,
    one_body_basis,
    parse_fcidump,
    rotate_coefficients,
)
from oracle import build_full_hamiltonian, exact_ground_state

DIMER_FCIDUMP = """ &FCI NORB=2,NELEC=2,MS2=0,
  ORBSYM=1,1,
  ISYM=1,
 &END
  4.0000000000000000D+00  1  1  1  1
  4.0000000000000000D+00  2  2  2  2
 -1.0000000000000000D+00  1  2  0  0
  0.0000000000000000D+00  0  0  0  0
"""


# -------------------------------------------------------------------------
# TEST SUITE 1: rotate_coefficients
# -------------------------------------------------------------------------


def test_identity_rotation_is_exact(spinless_op):
    """
    Test 1: U = 1 leaves the coefficients bit-for-bit unchanged
    """
    rotated = rotate_coefficients(spinless_op, np.eye(4))
    assert np.array_equal(rotated.one_body, spinless_op.one_body)
    assert np.array_equal(rotated.two_body, spinless_op.two_body)


def test_eigenbasis_diagonalises_one_body(rng):
    """
    Test 2: v = 0, U = eigenvectors of t -> t(U) diagonal with the eigenvalues
    """
    # --- ARRANGE ---
    op = random_operator(3, 1, rng, two_body=False)
    energies, vectors = np.linalg.eigh(op.one_body)

    # --- ACT ---
    rotated = rotate_coefficients(op, vectors)

    # --- ASSERT ---
    assert_allclose(rotated.one_body, np.diag(energies), atol=1e-10)


def test_rotation_round_trip_and_composition(rng):
    """
    Test 3: group properties
    - rotating by U then U^dag restores the coefficients.
    - rotating by U W equals rotating by U then by W.
    """
    # --- ARRANGE ---
    op = random_operator(2, 2, rng)
    u, w = random_unitary(4, rng), random_unitary(4, rng)

    # --- ACT ---
    back = rotate_coefficients(rotate_coefficients(op, u), u.conj().T)
    once = rotate_coefficients(op, u @ w)
    twice = rotate_coefficients(rotate_coefficients(op, u), w)

    # --- ASSERT ---
    assert_allclose(back.one_body, op.one_body, atol=1e-12)
    assert_allclose(back.two_body, op.two_body, atol=1e-12)
    assert_allclose(once.two_body, twice.two_body, atol=1e-12)
    assert_allclose(once.mode_space.accumulated_unitary, u @ w, atol=1e-12)
    assert back.hermitian_error() < 1e-12


def test_local_rotation_matches_dense_formula(rng):
    """
    Test 4: the support-restricted path equals the full tensor contraction
    """
    # --- ARRANGE ---
    op = random_operator(3, 1, rng)
    u = embed_local(random_unitary(2, rng), 1, op.mode_space)
    expected_t = u.conj().T @ op.one_body @ u
    expected_v = np.einsum("ia,jb,ijkl,kc,ld->abcd", u.conj(), u.conj(), op.two_body, u, u)

    # --- ACT ---
    rotated = rotate_coefficients(op, u)

    # --- ASSERT ---
    assert_allclose(rotated.one_body, expected_t, atol=1e-12)
    assert_allclose(rotated.two_body, expected_v, atol=1e-12)


def test_rotation_preserves_exact_energy(rng):
    """
    Test 5: ground-state energy in the two-particle sector is basis independent
    """
    # --- ARRANGE ---
    op = random_operator(2, 2, rng)
    u = random_unitary(4, rng)

    # --- ACT ---
    e_before, _ = exact_ground_state(op, 2)
    e_after, _ = exact_ground_state(rotate_coefficients(op, u), 2)

    # --- ASSERT ---
    assert abs(e_before - e_after) < 1e-10


def test_rotation_rejects_bad_input(spinless_op):
    """
    Test 6: wrong shape and non-unitary matrices are refused
    """
    with pytest.raises(PreconditionError):
        rotate_coefficients(spinless_op, np.eye(3))
    with pytest.raises(PreconditionError):
        rotate_coefficients(spinless_op, 2.0 * np.eye(4))


def test_non_hermitian_coefficients_refused(spinless_op):
    """
    Test 7: t or v without their Hermitian partner are refused at construction
    - round-off sized asymmetry is accepted.
    """
    # --- ARRANGE ---
    t = spinless_op.one_body.copy()
    t[0, 1] += 0.1
    v = spinless_op.two_body.copy()
    v[0, 1, 2, 3] += 0.1j
    nearly = spinless_op.one_body.copy()
    nearly[0, 1] += 1e-13

    # --- ACT / ASSERT ---
    with pytest.raises(PreconditionError, match="Hermitian"):
        SecondQuantizedOperator(t, spinless_op.two_body, 0.0, ModeSpace.identity(4, 1))
    with pytest.raises(PreconditionError, match="Hermitian"):
        spinless_op.replace(two_body=v)
    assert spinless_op.replace(one_body=nearly).hermitian_error() < 1e-12


# -------------------------------------------------------------------------
# TEST SUITE 2: embed_local
# -------------------------------------------------------------------------


def test_embed_local_structure(rng, hubbard_dimer):
    """
    Test 8: padding and block multiplication
    - identity embeds to identity.
    - on two sites the embedding is the local unitary itself.
    - embed(A) embed(B) = embed(A B).
    """
    # --- ARRANGE ---
    a, b = random_unitary(4, rng), random_unitary(4, rng)
    space = hubbard_dimer.mode_space
    chain = build_hubbard(4, p=2).mode_space

    # --- ASSERT ---
    assert_allclose(embed_local(np.eye(4), 2, chain), np.eye(8))
    assert_allclose(embed_local(a, 0, space), a)
    assert_allclose(embed_local(a, 1, chain) @ embed_local(b, 1, chain), embed_local(a @ b, 1, chain), atol=1e-12)
    with pytest.raises(PreconditionError):
        embed_local(a, 3, chain)


# -------------------------------------------------------------------------
# TEST SUITE 3: parse_fcidump
# -------------------------------------------------------------------------


def test_core_energy_only():
    """
    Test 9: single orbital, single core line
    """
    text = " &FCI NORB=1,NELEC=0,MS2=0,\n &END\n  1.25  0  0  0  0\n"
    op = parse_fcidump(io.StringIO(text))
    assert op.e_core == 1.25
    assert not op.one_body.any()
    assert not op.two_body.any()


def test_one_electron_line_fills_both_species():
    """
    Test 10: `h 1 1 0 0` sets t for every species of orbital 1
    """
    text = " &FCI NORB=2,NELEC=2,MS2=0,\n /\n  -0.5  1  1  0  0\n"
    op = parse_fcidump(io.StringIO(text))
    expected = np.zeros((4, 4))
    expected[0, 0] = expected[1, 1] = -0.5
    assert_allclose(op.one_body, expected)
    assert op.n_particles == (1, 1)


def test_parsed_dimer_matches_generator(hubbard_dimer):
    """
    Test 11: Hubbard dimer written as integrals
    - exact energy equals that of the generated model, 2 - 2 sqrt(2).
    """
    # --- ACT ---
    parsed = parse_fcidump(io.StringIO(DIMER_FCIDUMP))
    e_parsed, _ = exact_ground_state(parsed, (1, 1))
    e_model, _ = exact_ground_state(hubbard_dimer, (1, 1))

    # --- ASSERT ---
    assert abs(e_parsed - e_model) < 1e-12
    assert abs(e_model - (2.0 - 2.0 * np.sqrt(2.0))) < 1e-10
    assert parsed.hermitian_error() < 1e-12


@pytest.mark.parametrize(
    "text, line",
    [
        (" &FCI NORB=1,\n &END\n 1.0 1 1 0\n", 3),
        (" &FCI NORB=1,\n &END\n 1.0 0 0 0 0\n x 1 1 1 1\n", 4),
        (" &FCI NORB=1,\n &END\n 1.0 2 1 0 0\n", 3),
    ],
)
def test_malformed_lines_report_position(text, line):
    """
    Test 12: parse errors carry the offending line number
    """
    with pytest.raises(FcidumpError) as info:
        parse_fcidump(io.StringIO(text))
    assert info.value.line == line


def test_norb_mismatch():
    """
    Test 13: requested orbital count must agree with the header
    """
    with pytest.raises(FcidumpError):
        parse_fcidump(io.StringIO(DIMER_FCIDUMP), n_orbitals=3)


@pytest.mark.parametrize(
    "header, line",
    [
        (" &FCI NORB=2,NELEC=3,MS2=0,\n &END\n", 1),
        (" &FCI NORB=2,NELEC=2,MS2=4,\n &END\n", 1),
        (" &FCI NORB=2,\n NELEC=5,MS2=1,\n &END\n", 2),
    ],
)
def test_inconsistent_electron_counts(header, line):
    """
    Test 14: NELEC and MS2 must give whole species counts that fit the orbitals
    - the error points at the header line holding NELEC.
    """
    with pytest.raises(FcidumpError) as info:
        parse_fcidump(io.StringIO(header + "  1.0  1  1  0  0\n"))
    assert info.value.line == line


# -------------------------------------------------------------------------
# TEST SUITE 4: build_hubbard
# -------------------------------------------------------------------------


def test_free_dimer_levels():
    """
    Test 15: U0 = 0 on two sites -> single-particle energies -t0, +t0
    """
    op = build_hubbard(2, p=2, hopping=1.0, onsite=0.0)
    _, energies = one_body_basis(op)
    assert_allclose(energies, [-1.0, 1.0], atol=1e-12)
    e0, _ = exact_ground_state(op, (1, 0))
    assert abs(e0 + 1.0) < 1e-12


def test_disabled_tail_equals_vanishing_tail():
    """
    Test 16: decay = inf gives the same operator as a tail that underflows to zero
    """
    a = build_hubbard(4, decay=np.inf)
    b = build_hubbard(4, decay=1e6)
    assert np.array_equal(a.two_body, b.two_body)
    assert build_hubbard(4, decay=1.0, boundary="periodic").hermitian_error() < 1e-14


def test_diagonal_elements_match_full_build(rng):
    """
    Test 17: <x|H|x> from coefficients equals the Fock-space matrix diagonal
    """
    # --- ARRANGE ---
    op = random_operator(2, 2, rng)
    full = build_full_hamiltonian(op).matrix.diagonal()
    t, v = op.one_body, op.two_body
    direct = np.einsum("iijj->ij", v.transpose(0, 2, 1, 3)) - np.einsum("ijji->ij", v)
    np.fill_diagonal(direct, 0.0)

    # --- ACT ---
    occ = basis_occupations(4).astype(float)
    expected = occ @ np.diag(t) + np.einsum("xi,ij,xj->x", occ, direct, occ) + op.e_core

    # --- ASSERT ---
    assert_allclose(full, expected, atol=1e-12)


def test_container_round_trip(tmp_path, rng):
    """
    Test 18: .npz container keeps coefficients and basis provenance
    """
    op = rotate_coefficients(build_hubbard(3, decay=1.0), np.kron(random_unitary(3, rng), np.eye(2)))
    path = tmp_path / "op.npz"
    dump_operator(path, op)
    loaded = load_operator(path)
    assert_allclose(loaded.two_body, op.two_body)
    assert_allclose(loaded.mode_space.accumulated_unitary, op.mode_space.accumulated_unitary)
    assert loaded.n_particles is None
