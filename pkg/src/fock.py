"""
Fermionic mode algebra on small Fock spaces

- occupation basis and Jordan-Wigner site operators
- Gaussian unitaries g(U) built from exterior powers of U^dagger
- signed minors (derivatives of g(U) entries) used by the f4 gradient

Basis convention: a window of k modes has 2^k occupation states; the state
index reads the occupation bitstring with the first mode as the most
significant bit. All exterior-power signs derive from this ordering.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np
from scipy.linalg import expm, logm

UNITARY_TOL = 1e-10


class PreconditionError(ValueError):
    """Raised when an input violates a documented precondition"""


@dataclass(frozen=True)
class ModeSpace:
    """
    Single-particle bookkeeping of a run

    mode_order[position] is the initial mode label currently sitting at that
    lattice position. accumulated_unitary maps the current working modes to
    the initial physical modes (c_initial = U_acc @ d_working).
    """

    n_orbitals: int
    species_per_orbital: int
    mode_order: np.ndarray = field(repr=False)
    accumulated_unitary: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.n_orbitals < 1 or self.species_per_orbital < 1:
            raise PreconditionError("n_orbitals and species_per_orbital must be positive")
        n_modes = self.n_orbitals * self.species_per_orbital
        order = np.asarray(self.mode_order, dtype=int)
        if sorted(order.tolist()) != list(range(n_modes)):
            raise PreconditionError("mode_order must be a permutation of the modes")
        unitary = np.asarray(self.accumulated_unitary, dtype=complex)
        if unitary.shape != (n_modes, n_modes):
            raise PreconditionError(f"accumulated_unitary must be {n_modes}x{n_modes}")
        object.__setattr__(self, "mode_order", order)
        object.__setattr__(self, "accumulated_unitary", unitary)

    @classmethod
    def identity(cls, n_orbitals: int, species_per_orbital: int = 2) -> "ModeSpace":
        n_modes = n_orbitals * species_per_orbital
        return cls(n_orbitals, species_per_orbital, np.arange(n_modes), np.eye(n_modes, dtype=complex))

    @property
    def n_modes(self) -> int:
        return self.n_orbitals * self.species_per_orbital

    @property
    def site_dimension(self) -> int:
        return 2**self.species_per_orbital

    def site_modes(self, site: int) -> np.ndarray:
        p = self.species_per_orbital
        return np.arange(site * p, (site + 1) * p)

    def unitarity_error(self) -> float:
        u = self.accumulated_unitary
        return float(np.max(np.abs(u.conj().T @ u - np.eye(self.n_modes))))

    def with_rotation(self, unitary: np.ndarray) -> "ModeSpace":
        """Compose a further working-basis rotation onto the ledger"""
        return ModeSpace(
            self.n_orbitals,
            self.species_per_orbital,
            self.mode_order,
            self.accumulated_unitary @ unitary,
        )

    def with_site_order(self, site_order: np.ndarray) -> "ModeSpace":
        """
        Record a site permutation: new site k holds old site site_order[k]
        (the unitary part is composed separately through with_rotation)
        """
        p = self.species_per_orbital
        positions = np.concatenate([np.arange(s * p, (s + 1) * p) for s in site_order])
        return ModeSpace(
            self.n_orbitals,
            self.species_per_orbital,
            self.mode_order[positions],
            self.accumulated_unitary,
        )


@dataclass(frozen=True)
class SiteOperators:
    """Jordan-Wigner operators on a window of modes (dimension 2^k)"""

    annihilators: np.ndarray  # (k, 2^k, 2^k)
    parity: np.ndarray  # (2^k, 2^k)
    occupations: np.ndarray  # (2^k, k) bits, first mode most significant

    @property
    def creators(self) -> np.ndarray:
        return np.conj(np.transpose(self.annihilators, (0, 2, 1)))

    @property
    def numbers(self) -> np.ndarray:
        return self.creators @ self.annihilators

    @property
    def dimension(self) -> int:
        return self.parity.shape[0]


def basis_occupations(n_modes: int) -> np.ndarray:
    """Occupation bitstrings of all 2^k basis states, lexicographic order"""
    states = np.arange(2**n_modes)
    shifts = np.arange(n_modes - 1, -1, -1)
    return (states[:, None] >> shifts[None, :]) & 1


def occupation_index(occupied, n_modes: int) -> int:
    """Index of the basis state with the given occupied modes"""
    return int(sum(1 << (n_modes - 1 - i) for i in occupied))


@lru_cache(maxsize=None)
def _site_operators_cached(p: int) -> SiteOperators:
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    z = np.diag([1.0, -1.0])
    one = np.eye(2)

    annihilators = []
    for s in range(p):
        op = np.ones((1, 1))
        for r in range(p):
            factor = z if r < s else (a if r == s else one)
            op = np.kron(op, factor)
        annihilators.append(op)

    occupations = basis_occupations(p)
    parity = np.diag((-1.0) ** occupations.sum(axis=1))
    stack = np.array(annihilators, dtype=complex).reshape(p, 2**p, 2**p)
    for arr in (stack, parity, occupations):
        arr.setflags(write=False)
    return SiteOperators(annihilators=stack, parity=parity, occupations=occupations)


def site_operators(p: int) -> SiteOperators:
    """
    c_i, c_i^dagger, n_i and the parity operator on a site with p modes

    Mode s carries a Jordan-Wigner string Z over the modes r < s of the site.
    """
    if p < 1:
        raise PreconditionError("p must be >= 1")
    return _site_operators_cached(p)


def check_unitary(u: np.ndarray, tol: float = UNITARY_TOL, name: str = "U") -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise PreconditionError(f"{name} must be a square matrix, got shape {u.shape}")
    err = np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) if u.size else 0.0
    if err > tol:
        raise PreconditionError(f"{name} is not unitary (max deviation {err:.2e})")
    return u


@lru_cache(maxsize=None)
def _subsets_by_size(n_modes: int) -> tuple:
    """For each k: (subsets as tuples, their basis indices)"""
    out = []
    for k in range(n_modes + 1):
        subsets = list(combinations(range(n_modes), k))
        indices = np.array([occupation_index(s, n_modes) for s in subsets], dtype=int)
        out.append((subsets, indices))
    return tuple(out)


def exterior_power(m: np.ndarray) -> np.ndarray:
    """
    Direct sum of all exterior powers of m in the occupation basis:
    entry (I, J) is det(m[I, J]) for equally sized sorted subsets I, J.
    No unitarity check; also used on perturbed matrices by the gradient tests.
    """
    m = np.asarray(m, dtype=complex)
    a = m.shape[0]
    g = np.zeros((2**a, 2**a), dtype=complex)
    for subsets, indices in _subsets_by_size(a):
        if not subsets[0]:
            g[indices[0], indices[0]] = 1.0
            continue
        rows = np.array(subsets)
        block = m[rows[:, None, :, None], rows[None, :, None, :]]
        g[np.ix_(indices, indices)] = np.linalg.det(block)
    return g


def gaussian_unitary(u: np.ndarray) -> np.ndarray:
    """
    g(U) = sum over k of the k-th exterior power of U^dagger

    Block-diagonal in particle number; for 2p modes this is the d^2 x d^2
    gate acting on the two-site block index alpha*d + beta.
    """
    u = check_unitary(u)
    return exterior_power(u.conj().T)


def gaussian_unitary_exp(u: np.ndarray) -> np.ndarray:
    """
    Reference form exp[sum_ij (ln U^dagger)_ij c_i^dagger c_j] on the Fock
    space of the modes of U. Only valid where the principal log exists.
    """
    u = check_unitary(u)
    ops = site_operators(u.shape[0])
    generator = logm(u.conj().T)
    quadratic = np.einsum("ij,iab,jbc->ac", generator, ops.creators, ops.annihilators)
    return expm(quadratic)


def gaussian_minor(u: np.ndarray, rows, cols, i: int, j: int) -> complex:
    """
    d g(U)_{I,J} / d (U^dagger)_{i,j}

    Equals (-1)^(p_I(i) + p_J(j)) det(U^dagger restricted to I\\{i}, J\\{j}),
    p_X(x) being the number of elements of X smaller than x; zero when the
    subsets differ in size or i, j are not in them.
    """
    u = np.asarray(u, dtype=complex)
    a = u.shape[0]
    rows = sorted(int(r) for r in rows)
    cols = sorted(int(c) for c in cols)
    for idx in [*rows, *cols, i, j]:
        if not 0 <= idx < a:
            raise IndexError(f"mode index {idx} out of range for {a} modes")
    if len(rows) != len(cols) or i not in rows or j not in cols:
        return 0.0 + 0.0j

    sign = (-1) ** (rows.index(i) + cols.index(j))
    sub_rows = [r for r in rows if r != i]
    sub_cols = [c for c in cols if c != j]
    if not sub_rows:
        return complex(sign)
    m = u.conj().T
    return complex(sign * np.linalg.det(m[np.ix_(sub_rows, sub_cols)]))


def gaussian_minor_tensor(m: np.ndarray) -> np.ndarray:
    """
    All derivatives C[I, J, i, j] = d ext(m)_{I,J} / d m_{i,j} as a dense
    (2^a, 2^a, a, a) tensor, with m standing for U^dagger.
    """
    m = np.asarray(m, dtype=complex)
    a = m.shape[0]
    out = np.zeros((2**a, 2**a, a, a), dtype=complex)
    for subsets, indices in _subsets_by_size(a)[1:]:
        for row_set, row_idx in zip(subsets, indices):
            for col_set, col_idx in zip(subsets, indices):
                for pi, i in enumerate(row_set):
                    sub_rows = row_set[:pi] + row_set[pi + 1 :]
                    for pj, j in enumerate(col_set):
                        sub_cols = col_set[:pj] + col_set[pj + 1 :]
                        minor = np.linalg.det(m[np.ix_(sub_rows, sub_cols)]) if sub_rows else 1.0
                        out[row_idx, col_idx, i, j] = (-1) ** (pi + pj) * minor
    return out
