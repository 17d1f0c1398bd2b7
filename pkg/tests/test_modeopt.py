"""
Tests for local basis optimisation

- Grassmann points and the generalised Householder reflection
- spectral costs and the analytic f4 gradient
- acceptance rule of the local optimiser and the sweep hook

`uv run pytest tests/test_modeopt.py` to run these tests
"""

from unittest.mock import MagicMock, patch

import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from conftest import random_unitary
from dmrg import EnvironmentCache, sweep
from fock import ModeSpace
from modeopt import (
    GrassmannPoint,
    LocalBasisOptimizer,
    LocalOptConfig,
    ParametrisationError,
    block_spectrum,
    cost_f1,
    cost_f4,
    f4_value_and_gradient,
    grad_f4,
    householder_unitary,
    optimize_local_basis,
    rotate_block,
    selector,
    stable_representative,
)
from mps import TruncationPolicy, product_state
from operators import build_hubbard, rotate_coefficients


def _pair_block(angle: float) -> np.ndarray:
    """cos(a)|10> + sin(a)|01> on two spinless sites"""
    theta = np.zeros((1, 2, 2, 1), dtype=complex)
    theta[0, 1, 0, 0] = np.cos(angle)
    theta[0, 0, 1, 0] = np.sin(angle)
    return theta


def _random_block(rng, d, bond=2):
    theta = rng.normal(size=(bond, d, d, bond)) + 1j * rng.normal(size=(bond, d, d, bond))
    return theta / np.linalg.norm(theta)


# -------------------------------------------------------------------------
# TEST SUITE 1: Householder parametrisation
# -------------------------------------------------------------------------


@pytest.mark.parametrize("b", [1, 2])
def test_reflection_columns_and_unitarity(rng, b):
    """
    Test 1: random X
    - U(X) is unitary and its first b columns equal X.
    """
    # --- ARRANGE ---
    point = GrassmannPoint.random(b, rng)

    # --- ACT ---
    u = householder_unitary(point, rng)

    # --- ASSERT ---
    assert_allclose(u[:, :b], point.x, atol=1e-12)
    assert_allclose(u.conj().T @ u, np.eye(2 * b), atol=1e-12)


def test_selector_maps_to_identity():
    """
    Test 2: X = P gives exactly the identity
    """
    assert np.array_equal(householder_unitary(GrassmannPoint.identity(2)), np.eye(4))


def test_singular_representation_is_remixed(rng):
    """
    Test 3: 1 - X^dag P singular with X != P
    - columns are re-mixed, the reflection spans the same subspace.
    - a zero retry budget raises ParametrisationError.
    """
    # --- ARRANGE ---
    x = np.zeros((4, 2), dtype=complex)
    x[0, 0] = x[3, 1] = 1.0

    # --- ACT ---
    u = householder_unitary(x, rng)

    # --- ASSERT ---
    assert_allclose(u[:, :2] @ u[:, :2].conj().T, x @ x.conj().T, atol=1e-10)
    assert_allclose(u.conj().T @ u, np.eye(4), atol=1e-10)
    with pytest.raises(ParametrisationError):
        householder_unitary(x, rng, retry_budget=0)


def test_stable_representative(rng):
    """
    Test 4: 1 - (X W)^dag P = 1 + i H with H Hermitian positive semidefinite
    """
    point = GrassmannPoint.random(2, rng)
    xs, w = stable_representative(point.x)
    h = -1j * (np.eye(2) - xs.conj().T @ selector(2) - np.eye(2))
    assert_allclose(w.conj().T @ w, np.eye(2), atol=1e-12)
    assert_allclose(h, h.conj().T, atol=1e-12)
    assert np.linalg.eigvalsh(0.5 * (h + h.conj().T)).min() > -1e-12


def test_point_validation():
    """
    Test 5: non-isometries and wrong shapes are refused
    """
    with pytest.raises(ValueError):
        GrassmannPoint(np.ones((4, 2)))
    with pytest.raises(ValueError):
        GrassmannPoint(np.eye(3, 1))


# -------------------------------------------------------------------------
# TEST SUITE 2: costs and gradient
# -------------------------------------------------------------------------


def test_costs_match_direct_sums(rng):
    """
    Test 6: f1 = sum sigma, f4 = -sum sigma^4 = -tr(rho^2)
    """
    # --- ARRANGE ---
    theta = _random_block(rng, 4)
    sigma = np.linalg.svd(theta.reshape(8, 8), compute_uv=False)
    rho = theta.reshape(8, 8) @ theta.reshape(8, 8).conj().T

    # --- ASSERT ---
    assert abs(cost_f1(block_spectrum(theta)) - sum(sigma)) < 1e-12
    assert abs(cost_f4(block_spectrum(theta)) + np.real(np.trace(rho @ rho))) < 1e-12


def test_identity_rotation_keeps_block(rng):
    """
    Test 7: g(1) leaves theta unchanged
    """
    theta = _random_block(rng, 4)
    assert_allclose(rotate_block(theta, np.eye(4)), theta, atol=1e-14)


def _finite_difference(theta, x, p, symmetry, h=1e-6):
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        bump = np.zeros_like(x)
        bump[idx] = h
        re = (f4_value_and_gradient(theta, x + bump, p, symmetry)[0] - f4_value_and_gradient(theta, x - bump, p, symmetry)[0]) / (2 * h)
        im = (
            f4_value_and_gradient(theta, x + 1j * bump, p, symmetry)[0]
            - f4_value_and_gradient(theta, x - 1j * bump, p, symmetry)[0]
        ) / (2 * h)
        grad[idx] = re + 1j * im
    return grad


@pytest.mark.parametrize(
    "p, symmetry, d",
    [(1, "none", 2), (2, "spin_summed", 4)],
)
def test_f4_gradient_matches_finite_differences(rng, p, symmetry, d):
    """
    Test 8: analytic gradient at the identity representative i P and at a random point
    """
    # --- ARRANGE ---
    theta = _random_block(rng, d)
    b = 1
    points = [1j * selector(b), stable_representative(GrassmannPoint.random(b, rng).x)[0]]

    for x in points:
        # --- ACT ---
        _, grad = f4_value_and_gradient(theta, x, p, symmetry)
        expected = _finite_difference(theta, x, p, symmetry)

        # --- ASSERT ---
        assert_allclose(grad, expected, atol=1e-6 * max(1.0, np.abs(expected).max()))
    assert_allclose(grad_f4(theta, GrassmannPoint(points[1]), p, symmetry), grad)


def test_f4_gradient_vanishes_on_rank_one_blocks(rng):
    """
    Test 9: rank-1 blocks
    - tangent part of the gradient <= 1e-8 for a product block at i P
    and for a rotated product block at the subspace that undoes the rotation.
    """
    # --- ARRANGE ---
    u = random_unitary(2, rng)
    rotated = rotate_block(_pair_block(0.0), u)
    undo = stable_representative(u.conj().T[:, :1])[0]
    cases = [(_pair_block(0.0), 1j * selector(1)), (rotated, undo)]

    for block, x in cases:
        # --- ACT ---
        grad = grad_f4(block, x, p=1)
        tangent = grad - x @ (x.conj().T @ grad)

        # --- ASSERT ---
        assert abs(cost_f4(block_spectrum(rotate_block(block, householder_unitary(x)))) + 1.0) < 1e-12
        assert np.linalg.norm(tangent) <= 1e-8


# -------------------------------------------------------------------------
# TEST SUITE 3: optimize_local_basis
# -------------------------------------------------------------------------


def test_product_block_is_rejected():
    """
    Test 10: nothing to gain on a product block
    - identity returned, costs unchanged.
    """
    # --- ACT ---
    result = optimize_local_basis(_pair_block(0.0), LocalOptConfig(symmetry="none"), p=1)

    # --- ASSERT ---
    assert not result.accepted
    assert np.array_equal(result.unitary, np.eye(2))
    assert result.f_after == result.f_before


@pytest.mark.parametrize(
    "config",
    [
        LocalOptConfig(symmetry="none", cost="f1"),
        LocalOptConfig(symmetry="none", cost="f4", method="conjugate_gradient"),
    ],
)
def test_rotated_product_is_disentangled(config):
    """
    Test 11: cos(a)|10> + sin(a)|01> is a product state in a rotated basis
    - the accepted unitary brings the cut back to a single Schmidt value.
    """
    # --- ARRANGE ---
    theta = _pair_block(0.3)

    # --- ACT ---
    result = optimize_local_basis(theta, config, p=1, rng=np.random.default_rng(7))

    # --- ASSERT ---
    assert result.accepted
    assert result.f_before - result.f_after > config.delta_accept
    sigma = block_spectrum(rotate_block(theta, result.unitary))
    assert sigma[1] <= 1e-6
    assert_allclose(result.unitary.conj().T @ result.unitary, np.eye(2), atol=1e-10)


def test_spin_summed_unitary_is_species_restricted(rng):
    """
    Test 12: spin-summed rotations act identically on both species
    """
    theta = _random_block(rng, 4)
    result = optimize_local_basis(theta, LocalOptConfig(max_evals=120), p=2, rng=rng)
    u = result.unitary
    assert_allclose(u[0::2, 1::2], 0.0, atol=1e-14)
    assert_allclose(u[0::2, 0::2], u[1::2, 1::2], atol=1e-14)


def test_cg_requires_f4():
    """
    Test 13: conjugate gradients need the analytic gradient
    """
    with pytest.raises(ValidationError):
        LocalOptConfig(method="conjugate_gradient", cost="f1")


@pytest.mark.parametrize(
    "after, accepted",
    [
        (np.array([0.95, 0.2, 0.2, 0.14]), False),
        (np.array([0.8, 0.6, 0.1, 0.0]), True),
    ],
)
def test_rotation_raising_truncation_error_is_rejected(rng, after, accepted):
    """
    Test 14: both candidate spectra lower f1 against (0.7, 0.7, 0.14, 0) at D_max = 2
    - only the one that does not raise the discarded weight at the kept rank is accepted.
    """
    # --- ARRANGE ---
    before = np.array([0.7, 0.7, 0.14, 0.0])
    x = stable_representative(GrassmannPoint.random(1, rng).x)[0]
    policy = TruncationPolicy(eps_trc=0.0, d_min=1, d_max=2)

    # --- ACT ---
    with (
        patch("modeopt._nelder_mead", return_value=(x, cost_f1(after))),
        patch("modeopt.block_spectrum", side_effect=[before, after]),
    ):
        result = optimize_local_basis(_random_block(rng, 2), LocalOptConfig(symmetry="none"), p=1, policy=policy)

    # --- ASSERT ---
    assert cost_f1(after) < cost_f1(before)
    assert result.rank == 2
    assert abs(result.eps_before - 0.14**2) < 1e-15
    assert abs(result.eps_after - np.sum(after[2:] ** 2)) < 1e-15
    assert result.accepted is accepted
    assert np.array_equal(result.unitary, np.eye(2)) is not accepted


# -------------------------------------------------------------------------
# TEST SUITE 4: LocalBasisOptimizer hook
# -------------------------------------------------------------------------


def test_hook_records_every_call():
    """
    Test 15: accepted steps return the unitary, rejected ones None
    """
    # --- ARRANGE ---
    hook = LocalBasisOptimizer(LocalOptConfig(symmetry="none"))
    op = MagicMock(mode_space=ModeSpace.identity(2, 1))
    rng = np.random.default_rng(0)

    # --- ACT ---
    rejected = hook(_pair_block(0.0), 0, op, rng)
    accepted = hook(_pair_block(0.3), 0, op, rng)

    # --- ASSERT ---
    assert rejected is None
    assert accepted.shape == (2, 2)
    assert [entry["accepted"] for entry in hook.trace] == [False, True]
    assert hook.trace[1]["f_after"] < hook.trace[1]["f_before"]


# -------------------------------------------------------------------------
# TEST SUITE 5: cost identities and sweep behaviour
# -------------------------------------------------------------------------


def test_cost_identities():
    """
    Test 16: closed-form values of both costs
    """
    half = np.array([1.0, 1.0]) / np.sqrt(2.0)
    assert cost_f1(np.array([1.0])) == 1.0
    assert abs(cost_f1(half) - np.sqrt(2.0)) < 1e-15
    assert abs(cost_f4(half) + 0.5) < 1e-15


def test_costs_invariant_under_on_site_rotations(rng):
    """
    Test 17: U = u_m (+) u_m+1 does not change the Schmidt values
    """
    # --- ARRANGE ---
    theta = _random_block(rng, 4)
    u = np.zeros((4, 4), dtype=complex)
    u[:2, :2] = random_unitary(2, rng)
    u[2:, 2:] = random_unitary(2, rng)

    # --- ACT ---
    rotated = block_spectrum(rotate_block(theta, u))

    # --- ASSERT ---
    for cost in (cost_f1, cost_f4):
        assert abs(cost(rotated) - cost(block_spectrum(theta))) < 1e-10


def test_accepted_steps_in_a_sweep_decrease_the_cost(rng):
    """
    Test 18: every accepted rotation of an optimising sweep lowers the cost by delta_accept
    """
    # --- ARRANGE ---
    op = build_hubbard(4, p=1, onsite=2.0, decay=1.0)
    op = rotate_coefficients(op, random_unitary(4, rng))
    psi = product_state(np.array([[1], [0], [1], [0]]))
    cache = EnvironmentCache()
    cache.build(psi, op)
    policy = TruncationPolicy(eps_trc=1e-8, d_min=1, d_max=16)
    config = LocalOptConfig(symmetry="none", max_evals=80)
    hook = LocalBasisOptimizer(config)

    # --- ACT ---
    for direction in ("right", "left", "right"):
        psi, op, report = sweep(psi, op, cache, policy, direction, hook=hook)

    # --- ASSERT ---
    accepted = [entry for entry in hook.trace if entry["accepted"]]
    assert len(hook.trace) == 9
    assert all(e["f_before"] - e["f_after"] >= config.delta_accept for e in accepted)
    assert all(e["f_after"] == e["f_before"] for e in hook.trace if not e["accepted"])
    assert op.mode_space.unitarity_error() < 1e-10


def test_accepted_rotations_never_raise_the_truncation_error(rng):
    """
    Test 19: scrambled n = 6 spinless chain at D_max = 3, three optimising sweeps with f1
    - at every accepted step the split of the rotated block discards no more weight
    than the unrotated block would at the same kept rank.
    """
    # --- ARRANGE ---
    op = build_hubbard(6, p=1, hopping=1.0, onsite=2.0, decay=1.0)
    op = rotate_coefficients(op, random_unitary(6, rng))
    psi = product_state(np.array([[1], [0], [1], [0], [1], [0]]))
    cache = EnvironmentCache()
    cache.build(psi, op)
    policy = TruncationPolicy(eps_trc=0.0, d_min=1, d_max=3)
    hook = LocalBasisOptimizer(LocalOptConfig(symmetry="none", cost="f1", max_evals=120), policy)
    for direction in ("right", "left"):
        psi, op, _ = sweep(psi, op, cache, policy, direction)

    # --- ACT ---
    steps = []
    for index in range(3):
        direction = "right" if index % 2 == 0 else "left"
        psi, op, report = sweep(psi, op, cache, policy, direction, hook=hook, sweep_index=index + 1)
        steps.extend(report.steps)

    # --- ASSERT ---
    assert len(steps) == len(hook.trace) == 15
    assert any(entry["accepted"] for entry in hook.trace)
    for step, entry in zip(steps, hook.trace):
        slack = 1e-12 * max(1.0, entry["eps_before"])
        assert step.accepted_rotation == entry["accepted"]
        if entry["accepted"]:
            assert entry["eps_after"] <= entry["eps_before"] + slack
            assert step.truncation_error <= entry["eps_before"] + slack


# -------------------------------------------------------------------------
# TEST SUITE 6: randomised checks
# -------------------------------------------------------------------------


@pytest.mark.slow
def test_reflection_on_many_random_points(rng):
    """
    Test 20: 1000 random isometries in their stable representation
    - unitarity and the first-columns property hold to 1e-12.
    """
    for trial in range(1000):
        b = 1 + trial % 2
        xs, _ = stable_representative(GrassmannPoint.random(b, rng).x)
        u = householder_unitary(xs, rng)
        assert np.abs(u.conj().T @ u - np.eye(2 * b)).max() <= 1e-12
        assert np.abs(u[:, :b] - xs).max() <= 1e-12


@pytest.mark.slow
@pytest.mark.parametrize("bond", [2, 8, 16])
@pytest.mark.parametrize("p, symmetry", [(1, "none"), (2, "spin_summed"), (2, "none")])
def test_gradient_on_many_random_blocks(rng, bond, p, symmetry):
    """
    Test 21: twelve random (block, X) pairs per case, relative error <= 1e-6
    """
    b = p if symmetry == "none" else 1
    for _ in range(12):
        # --- ARRANGE ---
        theta = _random_block(rng, 2**p, bond)
        x = stable_representative(GrassmannPoint.random(b, rng).x)[0]

        # --- ACT ---
        _, grad = f4_value_and_gradient(theta, x, p, symmetry)
        expected = _finite_difference(theta, x, p, symmetry)

        # --- ASSERT ---
        assert np.linalg.norm(grad - expected) <= 1e-6 * np.linalg.norm(expected)
