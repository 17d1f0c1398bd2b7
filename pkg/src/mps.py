"""
Particle-number symmetric matrix product states

Tensors are stored dense as (D_left, d, D_right) with integer charge labels on
every bond (cumulative particle number to the left of the bond, one column per
conserved species, or a single total-number column). Decompositions act per
charge sector, so blocks forbidden by the symmetry stay exactly zero.
"""

from copy import deepcopy
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg
import structlog
from pydantic import BaseModel, Field, model_validator

from fock import ModeSpace, basis_occupations, check_unitary, site_operators

# Logging setup
structlog.configure(
    processors=[
        structlog.processors.add_log_level,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.dev.ConsoleRenderer(),
    ]
)
logger = structlog.get_logger()

ZERO_SINGULAR_VALUE = 1e-14
DEGENERACY_TOL = 1e-10
CHARGE_LEAK_TOL = 1e-10
MPS_FORMAT_VERSION = 1

CHARGE_MODES = ("species", "total")


class ChargeError(ValueError):
    """A tensor or gate connects charge sectors the symmetry forbids"""


class TruncationPolicy(BaseModel):
    """Dynamic bond dimension selection: discarded weight bounded by eps_trc within [d_min, d_max]"""

    eps_trc: float = Field(default=0.0, ge=0.0)
    d_min: int = Field(default=1, ge=1)
    d_max: int = Field(default=256, ge=1)

    @model_validator(mode="after")
    def check_bounds(self) -> "TruncationPolicy":
        if self.d_min > self.d_max:
            raise ValueError(f"d_min ({self.d_min}) must not exceed d_max ({self.d_max})")
        return self

    @classmethod
    def exact(cls) -> "TruncationPolicy":
        return cls(eps_trc=0.0, d_min=1, d_max=2**62)


@dataclass(frozen=True)
class SchmidtSpectrum:
    values: np.ndarray  # descending
    charges: np.ndarray  # (K, q) sector label of each value

    @property
    def weights(self) -> np.ndarray:
        return self.values**2

    @property
    def entropy(self) -> float:
        w = self.weights[self.weights > 0]
        return float(-np.sum(w * np.log(w)))

    def __len__(self) -> int:
        return len(self.values)


def site_charges(p: int, charge_mode: str = "species") -> np.ndarray:
    """Charge carried by each local basis state, shape (2^p, q)"""
    if charge_mode not in CHARGE_MODES:
        raise ValueError(f"unknown charge mode {charge_mode!r}")
    occ = np.asarray(site_operators(p).occupations, dtype=int)
    if charge_mode == "total":
        return occ.sum(axis=1, keepdims=True)
    return occ


def basis_charges(n: int, p: int, charge_mode: str = "species") -> np.ndarray:
    """Charge of every basis state of n sites, shape (2^(np), q)"""
    occ = basis_occupations(n * p).reshape(-1, n, p).sum(axis=1)
    if charge_mode == "total":
        return occ.sum(axis=1, keepdims=True)
    return occ


@dataclass
class BlockedTensor:
    """Two-site tensor theta[l, alpha, beta, r] of sites (site, site + 1)"""

    data: np.ndarray
    left_charges: np.ndarray
    right_charges: np.ndarray
    site_charges: np.ndarray
    site: int

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dimension(self) -> int:
        return self.site_charges.shape[0]

    def matrix(self) -> np.ndarray:
        d_l, d, _, d_r = self.data.shape
        return self.data.reshape(d_l * d, d * d_r)

    def row_charges(self) -> np.ndarray:
        return (self.left_charges[:, None, :] + self.site_charges[None, :, :]).reshape(-1, self.left_charges.shape[1])

    def col_charges(self) -> np.ndarray:
        return (self.right_charges[None, :, :] - self.site_charges[:, None, :]).reshape(-1, self.right_charges.shape[1])

    def allowed(self) -> np.ndarray:
        """Boolean mask of entries compatible with charge conservation"""
        lhs = (
            self.left_charges[:, None, None, None, :]
            + self.site_charges[None, :, None, None, :]
            + self.site_charges[None, None, :, None, :]
        )
        return np.all(lhs == self.right_charges[None, None, None, :, :], axis=-1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def with_data(self, data: np.ndarray) -> "BlockedTensor":
        return BlockedTensor(data, self.left_charges, self.right_charges, self.site_charges, self.site)


class TwoSiteDecomposition(NamedTuple):
    left: np.ndarray
    right: np.ndarray
    spectrum: SchmidtSpectrum
    truncation_error: float
    bond_charges: np.ndarray


@dataclass
class _Sector:
    key: np.ndarray
    rows: np.ndarray
    cols: np.ndarray


def _sectors(row_q: np.ndarray, col_q: np.ndarray, matrix: Optional[np.ndarray] = None) -> list:
    """Group row and column indices by equal charge label (sorted keys)"""
    keys, inverse = np.unique(np.vstack([row_q, col_q]), axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    row_lab, col_lab = inverse[: len(row_q)], inverse[len(row_q) :]

    if matrix is not None:
        leak = np.linalg.norm(matrix[row_lab[:, None] != col_lab[None, :]])
        if leak > CHARGE_LEAK_TOL * max(1.0, np.linalg.norm(matrix)):
            raise ChargeError(f"tensor has weight {leak:.2e} outside its charge sectors")

    out = []
    for s, key in enumerate(keys):
        rows = np.flatnonzero(row_lab == s)
        cols = np.flatnonzero(col_lab == s)
        if rows.size and cols.size:
            out.append(_Sector(key, rows, cols))
    return out


def _svd(block: np.ndarray):
    try:
        return scipy.linalg.svd(block, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(block, full_matrices=False, lapack_driver="gesvd")


def kept_rank(sigma: np.ndarray, policy: TruncationPolicy) -> tuple[int, float]:
    """Kept count for a descending spectrum and the discarded weight"""
    nonzero = int(np.count_nonzero(sigma >= ZERO_SINGULAR_VALUE))
    if nonzero == 0:
        raise ChargeError("blocked tensor vanishes")
    weights = sigma**2
    tail = np.append(np.cumsum(weights[::-1])[::-1], 0.0)
    keep = int(np.argmax(tail <= policy.eps_trc))
    keep = min(max(keep, policy.d_min), policy.d_max, nonzero)
    keep = max(keep, 1)

    # whole degenerate multiplets at the cut, if they fit
    extended = keep
    while extended < nonzero and sigma[extended] >= sigma[extended - 1] * (1.0 - DEGENERACY_TOL):
        extended += 1
    if extended <= policy.d_max:
        keep = extended
    return keep, float(tail[keep])


def truncated_split(
    matrix: np.ndarray,
    row_q: np.ndarray,
    col_q: np.ndarray,
    policy: TruncationPolicy,
    renormalize: bool = True,
) -> tuple:
    """
    Per-sector SVD of a charge-block matrix with global rank selection

    Returns (U, sigma, Vh, bond_charges, discarded_weight) with the kept values
    in descending order; equal values keep sector-then-index order.
    """
    sectors = _sectors(row_q, col_q, matrix)
    if not sectors:
        raise ChargeError("no charge sector connects the two sides")
    pieces = []
    for sector in sectors:
        u, s, vh = _svd(matrix[np.ix_(sector.rows, sector.cols)])
        pieces.append((u, s, vh))

    sigma = np.concatenate([s for _, s, _ in pieces])
    owner = np.concatenate([np.full(len(s), k) for k, (_, s, _) in enumerate(pieces)])
    local = np.concatenate([np.arange(len(s)) for _, s, _ in pieces])
    order = np.argsort(-sigma, kind="stable")

    keep, discarded = kept_rank(sigma[order], policy)
    kept = order[:keep]

    n_q = row_q.shape[1]
    u_out = np.zeros((matrix.shape[0], keep), dtype=complex)
    vh_out = np.zeros((keep, matrix.shape[1]), dtype=complex)
    bond = np.zeros((keep, n_q), dtype=int)
    for k, g in enumerate(kept):
        sector = sectors[owner[g]]
        u, _, vh = pieces[owner[g]]
        u_out[sector.rows, k] = u[:, local[g]]
        vh_out[k, sector.cols] = vh[local[g], :]
        bond[k] = sector.key

    values = sigma[kept]
    if renormalize:
        values = values / np.linalg.norm(values)
    return u_out, values, vh_out, bond, discarded


def _sector_qr(matrix: np.ndarray, row_q: np.ndarray, col_q: np.ndarray) -> tuple:
    """Per-sector thin QR: matrix = Q @ R with new bond charges"""
    sectors = _sectors(row_q, col_q)
    qs, rs, keys = [], [], []
    for sector in sectors:
        q, r = scipy.linalg.qr(matrix[np.ix_(sector.rows, sector.cols)], mode="economic")
        qs.append(q)
        rs.append(r)
        keys.append(np.repeat(sector.key[None, :], q.shape[1], axis=0))
    new_dim = sum(q.shape[1] for q in qs)
    if new_dim == 0:
        raise ChargeError("tensor has no allowed charge sector")

    q_out = np.zeros((matrix.shape[0], new_dim), dtype=complex)
    r_out = np.zeros((new_dim, matrix.shape[1]), dtype=complex)
    offset = 0
    for sector, q, r in zip(sectors, qs, rs):
        k = q.shape[1]
        q_out[sector.rows, offset : offset + k] = q
        r_out[offset : offset + k, sector.cols] = r
        offset += k
    return q_out, r_out, np.concatenate(keys, axis=0)


@dataclass
class SymmetricMPS:
    """
    Open-boundary MPS with U(1) charges on every bond

    charges[k] labels bond k (between sites k-1 and k); charges[0] is zero and
    charges[n] holds the total particle number. spectra[m] and
    truncation_errors[m] belong to cut m (between sites m and m+1).
    """

    tensors: list
    charges: list
    species_per_orbital: int
    charge_mode: str = "species"
    center: Optional[int] = None
    spectra: list = field(default_factory=list)
    truncation_errors: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.tensors)
        if n < 1:
            raise ValueError("an MPS needs at least one site")
        if len(self.charges) != n + 1:
            raise ValueError("charges must label all n + 1 bonds")
        if not self.spectra:
            self.spectra = [None] * (n - 1)
        if not self.truncation_errors:
            self.truncation_errors = [0.0] * (n - 1)

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    @property
    def site_dimension(self) -> int:
        return 2**self.species_per_orbital

    @property
    def site_charges(self) -> np.ndarray:
        return site_charges(self.species_per_orbital, self.charge_mode)

    @property
    def particle_numbers(self) -> np.ndarray:
        return self.charges[-1][0]

    def bond_dimensions(self) -> list:
        return [t.shape[2] for t in self.tensors[:-1]]

    def copy(self) -> "SymmetricMPS":
        return deepcopy(self)

    # --- gauge moves ---

    def _shift_right(self, k: int) -> None:
        a = self.tensors[k]
        d_l, d, d_r = a.shape
        row_q = (self.charges[k][:, None, :] + self.site_charges[None, :, :]).reshape(d_l * d, -1)
        q, r, bond = _sector_qr(a.reshape(d_l * d, d_r), row_q, self.charges[k + 1])
        self.tensors[k] = q.reshape(d_l, d, -1)
        self.tensors[k + 1] = np.einsum("ab,bsc->asc", r, self.tensors[k + 1])
        self.charges[k + 1] = bond

    def _shift_left(self, k: int) -> None:
        a = self.tensors[k]
        d_l, d, d_r = a.shape
        col_q = (self.charges[k + 1][None, :, :] - self.site_charges[:, None, :]).reshape(d * d_r, -1)
        mat = a.reshape(d_l, d * d_r)
        q, r, bond = _sector_qr(mat.conj().T, col_q, self.charges[k])
        self.tensors[k] = q.conj().T.reshape(-1, d, d_r)
        self.tensors[k - 1] = np.einsum("asb,bc->asc", self.tensors[k - 1], r.conj().T)
        self.charges[k] = bond

    def move_center(self, m: int) -> None:
        """Bring the orthogonality centre to site m in place"""
        n = self.n_sites
        if not 0 <= m < n:
            raise IndexError(f"site {m} out of range for {n} sites")
        if self.center is None:
            for k in range(m):
                self._shift_right(k)
            for k in range(n - 1, m, -1):
                self._shift_left(k)
        else:
            for k in range(self.center, m):
                self._shift_right(k)
            for k in range(self.center, m, -1):
                self._shift_left(k)
        self.center = m

    def set_two_site(self, m: int, split: TwoSiteDecomposition, direction: str) -> None:
        self.tensors[m] = split.left
        self.tensors[m + 1] = split.right
        self.charges[m + 1] = split.bond_charges
        self.spectra[m] = split.spectrum
        self.truncation_errors[m] = split.truncation_error
        self.center = m + 1 if direction == "right" else m

    def with_total_charges(self) -> "SymmetricMPS":
        """Same state with per-species charges merged into total particle number"""
        if self.charge_mode == "total":
            return self.copy()
        out = self.copy()
        out.charges = [c.sum(axis=1, keepdims=True) for c in out.charges]
        out.charge_mode = "total"
        out.spectra = [
            None if s is None else SchmidtSpectrum(s.values, s.charges.sum(axis=1, keepdims=True))
            for s in out.spectra
        ]
        return out


def product_state(occupations, charge_mode: str = "species") -> SymmetricMPS:
    """
    Bond-dimension-1 MPS of an occupation pattern

    Args:
        occupations: (n, p) array of 0/1, occupations[q, s] for species s on site q

    Returns:
        normalised SymmetricMPS with centre 0 and trivial spectra
    """
    occ = np.asarray(occupations, dtype=int)
    if occ.ndim != 2 or not np.isin(occ, (0, 1)).all():
        raise ValueError("occupations must be an (n, p) array of 0/1")
    n, p = occ.shape
    d = 2**p
    sq = site_charges(p, charge_mode)
    n_q = sq.shape[1]

    tensors, charges = [], [np.zeros((1, n_q), dtype=int)]
    for q in range(n):
        alpha = int(sum(int(b) << (p - 1 - s) for s, b in enumerate(occ[q])))
        a = np.zeros((1, d, 1), dtype=complex)
        a[0, alpha, 0] = 1.0
        tensors.append(a)
        charges.append(charges[-1] + sq[alpha])

    spectra = [SchmidtSpectrum(np.ones(1), charges[m + 1].copy()) for m in range(n - 1)]
    return SymmetricMPS(tensors, charges, p, charge_mode, center=0, spectra=spectra)


def from_dense(
    vector: np.ndarray, n: int, p: int, charge_mode: str = "species", policy: Optional[TruncationPolicy] = None
) -> SymmetricMPS:
    """Exact MPS of a dense state vector with a definite particle number"""
    vector = np.asarray(vector, dtype=complex).ravel()
    d = 2**p
    if vector.size != d**n:
        raise ValueError(f"vector of length {vector.size} does not describe {n} sites")
    all_q = basis_charges(n, p, charge_mode)
    support = np.abs(vector) > 1e-12
    totals = np.unique(all_q[support], axis=0)
    if len(totals) != 1:
        raise ChargeError("vector does not have a definite particle number")
    total = totals[0]
    policy = policy or TruncationPolicy.exact()
    sq = site_charges(p, charge_mode)

    tensors, charges = [], [np.zeros((1, sq.shape[1]), dtype=int)]
    rest = vector.reshape(1, -1)
    spectra, errors = [], []
    for k in range(n - 1):
        d_l = rest.shape[0]
        mat = rest.reshape(d_l * d, -1)
        row_q = (charges[-1][:, None, :] + sq[None, :, :]).reshape(d_l * d, -1)
        col_q = total[None, :] - basis_charges(n - k - 1, p, charge_mode)
        u, s, vh, bond, eps = truncated_split(mat, row_q, col_q, policy, renormalize=False)
        tensors.append(u.reshape(d_l, d, -1))
        charges.append(bond)
        spectra.append(SchmidtSpectrum(s / np.linalg.norm(s), bond.copy()))
        errors.append(eps)
        rest = s[:, None] * vh
    tensors.append(rest.reshape(rest.shape[0], d, 1))
    charges.append(total[None, :].copy())
    return SymmetricMPS(tensors, charges, p, charge_mode, center=n - 1, spectra=spectra, truncation_errors=errors)


def to_dense(psi: SymmetricMPS) -> np.ndarray:
    """State vector in the occupation basis (small systems only)"""
    vec = psi.tensors[0].reshape(-1, psi.tensors[0].shape[2])
    for a in psi.tensors[1:]:
        vec = np.einsum("xa,asb->xsb", vec, a).reshape(-1, a.shape[2])
    return vec.ravel()


def overlap(bra: SymmetricMPS, ket: SymmetricMPS) -> complex:
    env = np.ones((1, 1), dtype=complex)
    for a, b in zip(bra.tensors, ket.tensors):
        env = np.einsum("ab,asc,bsd->cd", env, a.conj(), b)
    return complex(env[0, 0])


def norm(psi: SymmetricMPS) -> float:
    return float(np.sqrt(abs(overlap(psi, psi))))


def check_charges(psi: SymmetricMPS, tol: float = 1e-12) -> float:
    """Largest entry that violates charge conservation (raises above tol)"""
    sq = psi.site_charges
    worst = 0.0
    for k, a in enumerate(psi.tensors):
        lhs = psi.charges[k][:, None, None, :] + sq[None, :, None, :]
        allowed = np.all(lhs == psi.charges[k + 1][None, None, :, :], axis=-1)
        if (~allowed).any():
            worst = max(worst, float(np.abs(a[~allowed]).max()))
    if worst > tol:
        raise ChargeError(f"charge-violating entry of size {worst:.2e}")
    return worst


def canonicalize(psi: SymmetricMPS, m: int) -> SymmetricMPS:
    """Mixed canonical copy with the orthogonality centre at site m"""
    out = psi.copy()
    out.move_center(m)
    return out


def block_two_site(psi: SymmetricMPS, m: int) -> BlockedTensor:
    """Contract sites m and m + 1 over their shared bond"""
    if not 0 <= m < psi.n_sites - 1:
        raise IndexError(f"cut {m} out of range for {psi.n_sites} sites")
    if psi.center not in (m, m + 1):
        raise ValueError(f"orthogonality centre {psi.center} is not on sites {m}, {m + 1}")
    theta = np.einsum("asb,btc->astc", psi.tensors[m], psi.tensors[m + 1])
    return BlockedTensor(theta, psi.charges[m], psi.charges[m + 2], psi.site_charges, m)


def decompose_two_site(
    block: BlockedTensor,
    policy: TruncationPolicy,
    direction: str = "right",
    renormalize: bool = True,
) -> TwoSiteDecomposition:
    """
    Split a blocked tensor with dynamic rank selection

    direction "right" returns a left-normalised left tensor and puts the
    weights into the right tensor (centre moves to m + 1); "left" mirrors it.
    """
    if direction not in ("right", "left"):
        raise ValueError(f"unknown direction {direction!r}")
    d_l, d, _, d_r = block.shape
    u, s, vh, bond, eps = truncated_split(
        block.matrix(), block.row_charges(), block.col_charges(), policy, renormalize=renormalize
    )
    if direction == "right":
        left, right = u, s[:, None] * vh
    else:
        left, right = u * s[None, :], vh
    return TwoSiteDecomposition(
        left=left.reshape(d_l, d, -1),
        right=right.reshape(-1, d, d_r),
        spectrum=SchmidtSpectrum(s, bond.copy()),
        truncation_error=eps,
        bond_charges=bond,
    )


def schmidt_spectrum(psi: SymmetricMPS, m: int) -> SchmidtSpectrum:
    """Singular values across cut m (canonicalises a copy)"""
    if not 0 <= m < psi.n_sites - 1:
        raise IndexError(f"cut {m} out of range for {psi.n_sites} sites")
    work = canonicalize(psi, m)
    a = work.tensors[m]
    d_l, d, d_r = a.shape
    row_q = (work.charges[m][:, None, :] + work.site_charges[None, :, :]).reshape(d_l * d, -1)
    _, s, _, bond, _ = truncated_split(
        a.reshape(d_l * d, d_r), row_q, work.charges[m + 1], TruncationPolicy.exact(), renormalize=False
    )
    return SchmidtSpectrum(s, bond)


def apply_two_site_gate(block: BlockedTensor, gate: np.ndarray) -> BlockedTensor:
    """theta[(alpha beta)] <- sum G[(alpha beta), (alpha' beta')] theta[(alpha' beta')]"""
    gate = check_unitary(gate, name="gate")
    d = block.dimension
    if gate.shape != (d * d, d * d):
        raise ValueError(f"gate must be {d * d}x{d * d}, got {gate.shape}")
    pair_q = (block.site_charges[:, None, :] + block.site_charges[None, :, :]).reshape(d * d, -1)
    forbidden = np.any(pair_q[:, None, :] != pair_q[None, :, :], axis=-1)
    if forbidden.any() and np.abs(gate[forbidden]).max() > 1e-12:
        raise ChargeError("gate mixes charge sectors")

    d_l, _, _, d_r = block.shape
    data = np.einsum("xy,lyr->lxr", gate, block.data.reshape(d_l, d * d, d_r))
    return block.with_data(data.reshape(d_l, d, d, d_r))


def apply_gate_to_state(
    psi: SymmetricMPS, m: int, gate: np.ndarray, policy: TruncationPolicy, direction: str = "right"
) -> float:
    """Gate sites m, m + 1 in place and re-split; returns the truncation error"""
    psi.move_center(m)
    block = apply_two_site_gate(block_two_site(psi, m), gate)
    split = decompose_two_site(block, policy, direction)
    psi.set_two_site(m, split, direction)
    return split.truncation_error


# -----------------------------------------------------------------------------
# Reduced density matrices and entropies
# -----------------------------------------------------------------------------


def von_neumann_entropy(rho: np.ndarray) -> float:
    """-tr(rho ln rho) with 0 ln 0 = 0"""
    rho = 0.5 * (rho + rho.conj().T)
    lam = np.linalg.eigvalsh(rho)
    lam = lam[lam > 1e-15]
    return float(-np.sum(lam * np.log(lam)))


def single_site_rdm(psi: SymmetricMPS, q: int) -> np.ndarray:
    work = canonicalize(psi, q)
    a = work.tensors[q]
    return np.einsum("asb,atb->st", a, a.conj())


def _pair_rdms(work: SymmetricMPS, q: int, stop: int):
    """
    Yield (r, rho_qr) for r = q + 1 .. stop with the centre at q

    Components odd on site q carry a parity string over the sites between q and r.
    """
    d = work.site_dimension
    parity = np.real(np.diag(site_operators(work.species_per_orbital).parity))
    odd = parity[:, None] != parity[None, :]

    a = work.tensors[q]
    env = np.einsum("asb,atc->stbc", a, a.conj())
    env_z = env.copy()
    for r in range(q + 1, stop + 1):
        b = work.tensors[r]
        plain = np.einsum("stbc,bud,cwd->sutw", env, b, b.conj())
        string = np.einsum("stbc,bud,cwd->sutw", env_z, b, b.conj())
        rho = np.where(odd[:, None, :, None], string, plain)
        yield r, rho.reshape(d * d, d * d)
        env = np.einsum("stbc,bud,cue->stde", env, b, b.conj())
        env_z = np.einsum("stbc,bud,cue,u->stde", env_z, b, b.conj(), parity)


def two_site_rdm(psi: SymmetricMPS, q: int, r: int) -> np.ndarray:
    """Fermionic two-orbital density matrix, index (s_q * d + s_r)"""
    if q == r:
        raise ValueError("sites must differ")
    q, r = min(q, r), max(q, r)
    work = canonicalize(psi, q)
    for site, rho in _pair_rdms(work, q, r):
        if site == r:
            return rho
    raise IndexError(f"site {r} out of range")


def single_orbital_entropies(psi: SymmetricMPS) -> np.ndarray:
    return np.array([von_neumann_entropy(single_site_rdm(psi, q)) for q in range(psi.n_sites)])


def mutual_information(psi: SymmetricMPS) -> np.ndarray:
    """I(q, r) = S(q) + S(r) - S(q, r), natural log, zero diagonal"""
    log = logger.bind(task="mutual_information")
    n = psi.n_sites
    single = np.zeros(n)
    info = np.zeros((n, n))
    work = psi.copy()
    for q in range(n):
        work.move_center(q)
        a = work.tensors[q]
        single[q] = von_neumann_entropy(np.einsum("asb,atb->st", a, a.conj()))
        for r, rho in _pair_rdms(work, q, n - 1):
            info[q, r] = -von_neumann_entropy(rho)
    info = info + single[:, None] + single[None, :]
    info = np.triu(info, k=1)
    info = info + info.T
    log.debug("mutual_information_done", n=n, max_value=float(info.max()) if n > 1 else 0.0)
    return info


# -----------------------------------------------------------------------------
# Checkpoint container
# -----------------------------------------------------------------------------


def save_mps(path: Path, psi: SymmetricMPS, mode_space: Optional[ModeSpace] = None) -> None:
    """Tensors, charges, centre, spectra and (optionally) the basis ledger in one .npz"""
    arrays = {
        "format_version": MPS_FORMAT_VERSION,
        "n_sites": psi.n_sites,
        "species_per_orbital": psi.species_per_orbital,
        "charge_mode": psi.charge_mode,
        "center": -1 if psi.center is None else psi.center,
        "truncation_errors": np.asarray(psi.truncation_errors, dtype=float),
    }
    for k, a in enumerate(psi.tensors):
        arrays[f"tensor_{k}"] = a
    for k, c in enumerate(psi.charges):
        arrays[f"charges_{k}"] = c
    for m, spectrum in enumerate(psi.spectra):
        if spectrum is not None:
            arrays[f"spectrum_values_{m}"] = spectrum.values
            arrays[f"spectrum_charges_{m}"] = spectrum.charges
    if mode_space is not None:
        arrays["n_orbitals"] = mode_space.n_orbitals
        arrays["mode_order"] = mode_space.mode_order
        arrays["accumulated_unitary"] = mode_space.accumulated_unitary
    np.savez(path, **arrays)


def load_mps(path: Path) -> tuple[SymmetricMPS, Optional[ModeSpace]]:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != MPS_FORMAT_VERSION:
            raise ValueError(f"unsupported MPS container version {version}")
        n = int(data["n_sites"])
        p = int(data["species_per_orbital"])
        center = int(data["center"])
        spectra = []
        for m in range(n - 1):
            if f"spectrum_values_{m}" in data:
                spectra.append(SchmidtSpectrum(data[f"spectrum_values_{m}"], data[f"spectrum_charges_{m}"]))
            else:
                spectra.append(None)
        psi = SymmetricMPS(
            tensors=[data[f"tensor_{k}"] for k in range(n)],
            charges=[data[f"charges_{k}"] for k in range(n + 1)],
            species_per_orbital=p,
            charge_mode=str(data["charge_mode"]),
            center=None if center < 0 else center,
            spectra=spectra,
            truncation_errors=list(data["truncation_errors"]) if n > 1 else [],
        )
        mode_space = None
        if "accumulated_unitary" in data:
            mode_space = ModeSpace(int(data["n_orbitals"]), p, data["mode_order"], data["accumulated_unitary"])
    return psi, mode_space
