"""
Orbital reordering

Spectral seriation of the mutual-information matrix, realised on the MPS as
a chain of adjacent fermionic swap gates g(SWAP). Each swap also
counter-rotates the coefficients, so the permutation lands in the
accumulated unitary like any other mode transformation.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import structlog
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from fock import gaussian_unitary
from mps import SymmetricMPS, TruncationPolicy, apply_gate_to_state, mutual_information
from operators import SecondQuantizedOperator, embed_local, rotate_coefficients

# Logging setup
structlog.configure(
    processors=[
        structlog.processors.add_log_level,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.dev.ConsoleRenderer(),
    ]
)
logger = structlog.get_logger()

COUPLING_TOL = 1e-12


@dataclass(frozen=True)
class OrbitalPermutation:
    """New site k holds the orbital previously on site order[k]"""

    order: tuple

    def __post_init__(self):
        order = tuple(int(x) for x in self.order)
        if sorted(order) != list(range(len(order))):
            raise ValueError(f"{order} is not a permutation")
        object.__setattr__(self, "order", order)

    @classmethod
    def identity(cls, n: int) -> "OrbitalPermutation":
        return cls(tuple(range(n)))

    @property
    def n(self) -> int:
        return len(self.order)

    @property
    def is_identity(self) -> bool:
        return self.order == tuple(range(self.n))

    def inverse(self) -> "OrbitalPermutation":
        inv = np.empty(self.n, dtype=int)
        inv[list(self.order)] = np.arange(self.n)
        return OrbitalPermutation(tuple(inv))

    def positions(self) -> np.ndarray:
        """positions()[s] is the new site of old site s"""
        return np.asarray(self.inverse().order)

    def transpositions(self) -> list:
        """Adjacent swaps (k means sites k, k+1) turning the identity arrangement into this one"""
        current = list(range(self.n))
        swaps = []
        for i, target in enumerate(self.order):
            j = current.index(target)
            for k in range(j - 1, i - 1, -1):
                current[k], current[k + 1] = current[k + 1], current[k]
                swaps.append(k)
        return swaps

    def mode_matrix(self, p: int) -> np.ndarray:
        """U[old mode, new mode] = 1 for the permuted lattice positions"""
        cols = np.concatenate([np.arange(s * p, (s + 1) * p) for s in self.order]) if self.n else np.zeros(0, int)
        return np.eye(self.n * p, dtype=complex)[:, cols]


def swap_unitary(p: int) -> np.ndarray:
    """Window unitary exchanging the modes of two neighbouring sites"""
    zero, one = np.zeros((p, p)), np.eye(p)
    return np.block([[zero, one], [one, zero]]).astype(complex)


def ordering_cost(info: np.ndarray, perm: OrbitalPermutation) -> float:
    """sum_{q<r} I(q, r) (pos(q) - pos(r))^2"""
    pos = perm.positions()
    dist = (pos[:, None] - pos[None, :]) ** 2
    return float(np.sum(np.triu(info * dist, k=1)))


def _component_order(info: np.ndarray, sites: np.ndarray) -> list:
    if len(sites) <= 2:
        return sorted(sites.tolist())
    sub = info[np.ix_(sites, sites)]
    laplacian = np.diag(sub.sum(axis=1)) - sub
    _, vectors = np.linalg.eigh(laplacian)
    local = np.argsort(vectors[:, 1], kind="stable")
    forward = sites[local].tolist()
    backward = forward[::-1]

    def cost(seq):
        pos = {s: k for k, s in enumerate(seq)}
        return sum(info[a, b] * (pos[a] - pos[b]) ** 2 for i, a in enumerate(seq) for b in seq[i + 1 :])

    c_fwd, c_bwd = cost(forward), cost(backward)
    if np.isclose(c_fwd, c_bwd, rtol=1e-12, atol=1e-14):
        return min(forward, backward)
    return forward if c_fwd < c_bwd else backward


def fiedler_order(info: np.ndarray) -> OrbitalPermutation:
    """
    Order sites along the Fiedler vector of L = diag(I 1) - I

    Disconnected groups are ordered independently and concatenated by their
    smallest site index. The direction with the lower ordering cost wins,
    equal costs resolve to the lexicographically smaller sequence.
    """
    info = np.asarray(info, dtype=float)
    n = info.shape[0]
    if info.shape != (n, n) or np.abs(info - info.T).max(initial=0.0) > 1e-10:
        raise ValueError("mutual information matrix must be square and symmetric")
    weights = np.clip(info, 0.0, None)
    np.fill_diagonal(weights, 0.0)

    n_comp, labels = connected_components(csr_matrix(weights > COUPLING_TOL), directed=False)
    groups = [np.flatnonzero(labels == c) for c in range(n_comp)]
    groups.sort(key=lambda g: g.min())

    order = []
    for group in groups:
        order.extend(_component_order(weights, group))
    return OrbitalPermutation(tuple(order))


def apply_permutation(
    psi: SymmetricMPS,
    op: SecondQuantizedOperator,
    perm: OrbitalPermutation,
    policy: TruncationPolicy,
    cache=None,
) -> tuple[SymmetricMPS, SecondQuantizedOperator, float]:
    """
    Reorder sites in place by adjacent g(SWAP) gates

    Returns the state, the operator in the permuted basis and the summed
    truncation error. Cached environments are cleared.
    """
    log = logger.bind(task="apply_permutation")
    if perm.n != psi.n_sites:
        raise ValueError("permutation size does not match the state")
    if cache is not None:
        cache.clear()
    if perm.is_identity:
        return psi, op, 0.0

    p = psi.species_per_orbital
    swap = swap_unitary(p)
    gate = gaussian_unitary(swap)
    discarded = 0.0
    for k in perm.transpositions():
        discarded += apply_gate_to_state(psi, k, gate, policy)
        op = rotate_coefficients(op, embed_local(swap, k, op.mode_space))

    op = op.replace(mode_space=op.mode_space.with_site_order(np.asarray(perm.order)))
    log.info("sites_reordered", order=list(perm.order), swaps=len(perm.transpositions()), eps_t=discarded)
    return psi, op, discarded


def reorder_by_mutual_information(
    psi: SymmetricMPS, op: SecondQuantizedOperator, policy: TruncationPolicy, info: Optional[np.ndarray] = None, cache=None
) -> tuple[SymmetricMPS, SecondQuantizedOperator, OrbitalPermutation]:
    info = mutual_information(psi) if info is None else info
    perm = fiedler_order(info)
    psi, op, _ = apply_permutation(psi, op, perm, policy, cache)
    return psi, op, perm
