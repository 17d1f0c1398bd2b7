"""
Shared fixtures: random coefficient sets and random fixed-particle-number states

`uv run pytest -m "not slow"` skips the ED-scale sweeps
"""

import numpy as np
import pytest

from fock import ModeSpace
from mps import basis_charges, from_dense
from operators import SecondQuantizedOperator, build_hubbard


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))[None, :]


def random_operator(n: int, p: int, rng: np.random.Generator, two_body: bool = True) -> SecondQuantizedOperator:
    """Hermitian coefficients on n sites with p species, complex entries"""
    n_modes = n * p
    t = rng.normal(size=(n_modes, n_modes)) + 1j * rng.normal(size=(n_modes, n_modes))
    t = 0.5 * (t + t.conj().T)
    v = np.zeros((n_modes,) * 4, dtype=complex)
    if two_body:
        v = rng.normal(size=v.shape) + 1j * rng.normal(size=v.shape)
        v = 0.25 * (v + v.transpose(2, 3, 0, 1).conj())
    return SecondQuantizedOperator(t, v, 0.3, ModeSpace.identity(n, p))


def random_sector_state(
    n: int, p: int, sector, rng: np.random.Generator, charge_mode: str = "species"
):
    """Exact MPS of a random normalised vector with the given charge"""
    charges = basis_charges(n, p, charge_mode)
    mask = np.all(charges == np.atleast_1d(sector)[None, :], axis=1)
    vec = np.zeros(charges.shape[0], dtype=complex)
    vec[mask] = rng.normal(size=mask.sum()) + 1j * rng.normal(size=mask.sum())
    vec /= np.linalg.norm(vec)
    return from_dense(vec, n, p, charge_mode), vec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def hubbard_dimer():
    return build_hubbard(2, p=2, hopping=1.0, onsite=4.0)


@pytest.fixture
def spinless_op(rng):
    return random_operator(4, 1, rng)
