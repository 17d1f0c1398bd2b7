"""
Reference solutions at desk scale

- full Fock-space Hamiltonian from Jordan-Wigner strings (sparse)
- exact ground states per particle-number sector
- restricted Hartree-Fock reference basis
- dense embedding of an MPS for cross-checks
"""

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import structlog
from scipy.sparse.linalg import eigsh

from fock import PreconditionError, basis_occupations
from mps import SymmetricMPS, to_dense
from operators import SecondQuantizedOperator, one_body_basis, species_restricted

# Logging setup
structlog.configure(
    processors=[
        structlog.processors.add_log_level,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.dev.ConsoleRenderer(),
    ]
)
logger = structlog.get_logger()

MAX_MODES = 16
MAX_SECTOR_DIM = 1_000_000
MAX_EMBEDDING_DIM = 1_000_000
DENSE_SECTOR_DIM = 2000
COEFF_CUTOFF = 1e-14


class OracleSizeError(ValueError):
    """Problem too large for the exact reference"""


class ExactSolveError(RuntimeError):
    pass


def jw_annihilators(n_modes: int) -> list:
    """Sparse c_i on the 2^n Fock space, mode 0 most significant"""
    a = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
    z = sp.csr_matrix(np.diag([1.0, -1.0]))
    ops = []
    for i in range(n_modes):
        left = sp.identity(1, format="csr")
        for _ in range(i):
            left = sp.kron(left, z, format="csr")
        right = sp.identity(2 ** (n_modes - i - 1), format="csr")
        ops.append(sp.kron(sp.kron(left, a, format="csr"), right, format="csr").astype(complex))
    return ops


@dataclass
class FockSpaceOperator:
    matrix: sp.csr_matrix
    n_modes: int
    species_per_orbital: int

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def hermitian_error(self) -> float:
        diff = self.matrix - self.matrix.conj().T
        return float(np.abs(diff.data).max()) if diff.nnz else 0.0

    def block(self, sector) -> sp.csr_matrix:
        idx = sector_basis(self.n_modes, self.species_per_orbital, sector)
        return self.matrix[idx][:, idx]


def sector_basis(n_modes: int, p: int, sector: Union[int, tuple, None]) -> np.ndarray:
    """
    Basis indices with the requested particle numbers

    sector: tuple with one count per species, a single total count, or None for all states
    """
    occ = basis_occupations(n_modes)
    if sector is None:
        return np.arange(2**n_modes)
    if np.isscalar(sector):
        return np.flatnonzero(occ.sum(axis=1) == int(sector))
    counts = occ.reshape(-1, n_modes // p, p).sum(axis=1)
    target = np.asarray(sector, dtype=int)
    if target.shape != (p,):
        raise PreconditionError(f"sector needs {p} species counts, got {sector}")
    return np.flatnonzero(np.all(counts == target[None, :], axis=1))


def number_operator(n_modes: int, modes=None) -> sp.csr_matrix:
    """Sum of n_i over the given modes (all modes by default), diagonal"""
    occ = basis_occupations(n_modes)
    modes = np.arange(n_modes) if modes is None else np.asarray(modes, dtype=int)
    return sp.diags(occ[:, modes].sum(axis=1).astype(float), format="csr")


def build_full_hamiltonian(op: SecondQuantizedOperator, max_modes: int = MAX_MODES) -> FockSpaceOperator:
    """
    H = sum t_ij c_i^dag c_j + sum v_ijkl c_i^dag c_j^dag c_l c_k + e_core on the full Fock space

    Raises OracleSizeError above max_modes modes.
    """
    n = op.n_modes
    if n > max_modes:
        raise OracleSizeError(f"{n} modes exceed the exact-diagonalisation cap of {max_modes}")
    c = jw_annihilators(n)
    cd = [x.conj().T.tocsr() for x in c]
    dim = 2**n
    h = sp.csr_matrix((dim, dim), dtype=complex)

    t = op.one_body
    for i, j in zip(*np.nonzero(np.abs(t) > COEFF_CUTOFF)):
        h = h + t[i, j] * (cd[i] @ c[j])

    v = op.two_body
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            block = v[i, j]
            nz = np.nonzero(np.abs(block) > COEFF_CUTOFF)
            if not len(nz[0]):
                continue
            pair = sp.csr_matrix((dim, dim), dtype=complex)
            for k, l in zip(*nz):
                if k != l:
                    pair = pair + block[k, l] * (c[l] @ c[k])
            h = h + (cd[i] @ cd[j]) @ pair

    h = h + op.e_core * sp.identity(dim, format="csr")
    h.eliminate_zeros()
    return FockSpaceOperator(h.tocsr(), n, op.mode_space.species_per_orbital)


def exact_spectrum(op: SecondQuantizedOperator, sector, k: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """k lowest eigenpairs in a sector; vectors are embedded into the full space"""
    log = logger.bind(task="exact_spectrum")
    full = build_full_hamiltonian(op)
    idx = sector_basis(full.n_modes, full.species_per_orbital, sector)
    if idx.size == 0:
        raise PreconditionError(f"empty sector {sector}")
    if idx.size > MAX_SECTOR_DIM:
        raise OracleSizeError(f"sector dimension {idx.size} too large")
    block = full.matrix[idx][:, idx]
    k = min(k, idx.size)

    if idx.size <= DENSE_SECTOR_DIM or k >= idx.size - 1:
        vals, vecs = scipy.linalg.eigh(block.toarray(), subset_by_index=[0, k - 1])
    else:
        try:
            vals, vecs = eigsh(block, k=k, which="SA", tol=1e-12)
        except Exception as e:
            raise ExactSolveError(f"sector eigensolver failed: {e}") from e
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]

    residual = max(np.linalg.norm(block @ vecs[:, i] - vals[i] * vecs[:, i]) for i in range(k))
    if residual > 1e-8:
        raise ExactSolveError(f"residual {residual:.2e} too large")
    embedded = np.zeros((full.dimension, k), dtype=complex)
    embedded[idx] = vecs
    log.debug("sector_solved", sector=str(sector), dimension=int(idx.size), e0=float(vals[0]))
    return vals, embedded


def exact_ground_state(op: SecondQuantizedOperator, sector) -> tuple[float, np.ndarray]:
    vals, vecs = exact_spectrum(op, sector, k=1)
    return float(vals[0]), vecs[:, 0]


def dense_expectation(full: FockSpaceOperator, vector: np.ndarray) -> float:
    vector = np.asarray(vector, dtype=complex)
    return float(np.real(np.vdot(vector, full.matrix @ vector)) / np.real(np.vdot(vector, vector)))


def dense_embedding(psi: SymmetricMPS, max_dim: int = MAX_EMBEDDING_DIM) -> np.ndarray:
    dim = psi.site_dimension**psi.n_sites
    if dim > max_dim:
        raise OracleSizeError(f"dense embedding of dimension {dim} refused")
    return to_dense(psi)


@dataclass
class HartreeFockResult:
    unitary: np.ndarray
    energy: float
    density: np.ndarray
    orbital_energies: np.ndarray
    converged: bool
    iterations: int


def slater_energy(op: SecondQuantizedOperator, density: np.ndarray) -> float:
    """E = sum t_ij D_ij + 2 sum w_ijkl D_ik D_jl + e_core with D_ij = <c_i^dag c_j>"""
    w = op.antisymmetrized
    e1 = np.einsum("ij,ij->", op.one_body, density)
    e2 = 2.0 * np.einsum("ijkl,ik,jl->", w, density, density, optimize=True)
    return float(np.real(e1 + e2)) + op.e_core


def _density(unitary: np.ndarray, occupied: np.ndarray) -> np.ndarray:
    phi = unitary[:, occupied]
    return phi.conj() @ phi.T


def hartree_fock_basis(
    op: SecondQuantizedOperator,
    n_particles: Optional[tuple] = None,
    damping: float = 0.3,
    tol: float = 1e-10,
    max_iter: int = 500,
) -> HartreeFockResult:
    """
    Restricted (species-summed) self-consistent field

    Every species occupies the same lowest spatial orbitals. On
    non-convergence the eigenbasis of t is returned with a warning.
    """
    log = logger.bind(task="hartree_fock")
    p = op.mode_space.species_per_orbital
    n_particles = n_particles or op.n_particles
    if n_particles is None:
        raise PreconditionError("particle numbers are required")
    counts = np.atleast_1d(np.asarray(n_particles, dtype=int))
    if counts.size != p or len(set(counts.tolist())) != 1:
        raise PreconditionError(f"closed-shell occupation needs equal counts for {p} species, got {n_particles}")
    n_occ = int(counts[0])
    occupied = np.arange(n_occ * p)

    w = op.antisymmetrized
    unitary, energies = one_body_basis(op)
    density = _density(unitary, occupied)
    fock_old = None
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        fock = op.one_body + 4.0 * np.einsum("ijkl,jl->ik", w, density, optimize=True)
        if fock_old is not None:
            fock = (1.0 - damping) * fock + damping * fock_old
        fock_old = fock
        spatial = np.mean([fock[s::p, s::p] for s in range(p)], axis=0)
        energies, vectors = np.linalg.eigh(0.5 * (spatial + spatial.conj().T))
        unitary = species_restricted(vectors, p)
        new_density = _density(unitary, occupied)
        change = float(np.abs(new_density - density).max())
        density = new_density
        if change <= tol:
            converged = True
            break

    if not converged:
        log.warning("scf_not_converged", iterations=iteration, fallback="one_body_basis")
        unitary, energies = one_body_basis(op)
        density = _density(unitary, occupied)

    energy = slater_energy(op, density)
    log.info("scf_done", converged=converged, iterations=iteration, energy=energy)
    return HartreeFockResult(unitary, energy, density, energies, converged, iteration)
