"""
Two-site DMRG with complementary operators

A block X (a contiguous run of sites with D renormalised states) carries
  c[i]      annihilators of the block modes
  cc[k, l]  x_k x_l           cdc[i, k]  x_i^dag x_k
  S[o]      sum_j t_oj x_j
  R[o]      sum_jkl w_ojkl x_j^dag x_l x_k
  P[o, o']  sum_kl w_oo'kl x_l x_k
  Q[o, o']  sum_jl w_ojo'l x_j^dag x_l
with o, o' running over all modes and w the antisymmetrised two-body tensor.
Two blocks A | B (A holding the earlier modes) combine with the Jordan-Wigner
string P_A on every odd operator of B.
"""

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import pandas as pd
import scipy.linalg
import structlog
from pydantic import BaseModel, Field
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from fock import PreconditionError, gaussian_unitary, site_operators
from mps import (
    BlockedTensor,
    SymmetricMPS,
    TruncationPolicy,
    apply_two_site_gate,
    block_two_site,
    canonicalize,
    decompose_two_site,
)
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

LEDGER_TOL = 1e-14
GUESS_KICK = 1e-3


class LocalSolveError(RuntimeError):
    """Eigensolver did not reach the residual tolerance; carries the best Ritz pair"""

    def __init__(self, message: str, energy: float, block: BlockedTensor):
        super().__init__(message)
        self.energy = energy
        self.block = block


class SolverSettings(BaseModel):
    tol: float = Field(default=1e-9, gt=0.0)
    max_iter: int = Field(default=300, ge=1)
    dense_threshold: int = Field(default=256, ge=1)


@dataclass
class ComplementaryOperatorSet:
    """
    Renormalised operators of a left block (sites 0..boundary-1) or a right
    block (sites boundary..n-1)
    """

    side: str
    boundary: int
    modes: np.ndarray
    parity: np.ndarray
    c: np.ndarray
    cc: np.ndarray
    cdc: np.ndarray
    h: np.ndarray
    s: np.ndarray
    r: np.ndarray
    p: np.ndarray
    q: np.ndarray

    @property
    def dimension(self) -> int:
        return self.h.shape[0]

    @property
    def n_block_modes(self) -> int:
        return len(self.modes)

    @property
    def creators(self) -> np.ndarray:
        return self.c.conj().transpose(0, 2, 1)


def _kron(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Batched Kronecker product over matching (broadcast) leading axes"""
    out = np.einsum("...ab,...cd->...acbd", x, y)
    shape = out.shape
    return out.reshape(*shape[:-4], shape[-4] * shape[-3], shape[-2] * shape[-1])


def _dagger(x: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(x, -1, -2))


def direct_block(
    modes: np.ndarray,
    annihilators: np.ndarray,
    parity: np.ndarray,
    op: SecondQuantizedOperator,
    side: str = "left",
    boundary: int = 0,
) -> ComplementaryOperatorSet:
    """
    All operator families of a block from its mode annihilators in a full basis

    Used for single sites and, in tests, for whole blocks in the Fock space.
    """
    modes = np.asarray(modes, dtype=int)
    w = op.antisymmetrized
    t = op.one_body
    c = np.asarray(annihilators, dtype=complex)
    cd = _dagger(c)
    cc = np.einsum("kab,lbc->klac", c, c)
    cdc = np.einsum("iab,kbc->ikac", cd, c)

    w_open = w[:, :, modes][:, :, :, modes]
    p = np.einsum("xykl,lkab->xyab", w_open, cc)
    q = np.einsum("xjyl,jlab->xyab", w[:, modes][:, :, :, modes], cdc)
    r = np.einsum("xjkl,jab,lkbc->xac", w[:, modes][:, :, modes][:, :, :, modes], cd, cc, optimize=True)
    s = np.einsum("xj,jab->xab", t[:, modes], c)
    h = np.einsum("ij,ijab->ab", t[np.ix_(modes, modes)], cdc)
    h = h + np.einsum("iab,jbc,ijcd->ad", cd, cd, p[np.ix_(modes, modes)], optimize=True)

    return ComplementaryOperatorSet(
        side=side,
        boundary=boundary,
        modes=modes,
        parity=np.real(np.diag(parity)).copy() if np.ndim(parity) == 2 else np.asarray(parity, dtype=float),
        c=c,
        cc=cc,
        cdc=cdc,
        h=h,
        s=s,
        r=r,
        p=p,
        q=q,
    )


def site_block(op: SecondQuantizedOperator, site: int) -> ComplementaryOperatorSet:
    ms = op.mode_space
    if not 0 <= site < ms.n_orbitals:
        raise IndexError(f"site {site} out of range")
    local = site_operators(ms.species_per_orbital)
    return direct_block(ms.site_modes(site), local.annihilators, local.parity, op, side="site", boundary=site)


def boundary_environment(side: str, op: SecondQuantizedOperator) -> ComplementaryOperatorSet:
    """Empty block: every family is a zero operator of dimension 1"""
    if side not in ("left", "right"):
        raise ValueError(f"unknown side {side!r}")
    n = op.n_modes
    return ComplementaryOperatorSet(
        side=side,
        boundary=0 if side == "left" else op.mode_space.n_orbitals,
        modes=np.zeros(0, dtype=int),
        parity=np.ones(1),
        c=np.zeros((0, 1, 1), dtype=complex),
        cc=np.zeros((0, 0, 1, 1), dtype=complex),
        cdc=np.zeros((0, 0, 1, 1), dtype=complex),
        h=np.zeros((1, 1), dtype=complex),
        s=np.zeros((n, 1, 1), dtype=complex),
        r=np.zeros((n, 1, 1), dtype=complex),
        p=np.zeros((n, n, 1, 1), dtype=complex),
        q=np.zeros((n, n, 1, 1), dtype=complex),
    )


def join_terms(left: ComplementaryOperatorSet, right: ComplementaryOperatorSet, op: SecondQuantizedOperator) -> tuple:
    """
    Cross terms of H between two adjacent blocks as stacks (A_t, B_t), H_cross = sum_t A_t (x) B_t

    Pair terms are contracted over the block with fewer modes.
    """
    a_modes, b_modes = left.modes, right.modes
    n_a, n_b = len(a_modes), len(b_modes)
    da, db = left.dimension, right.dimension
    if n_a == 0 or n_b == 0:
        return np.zeros((0, da, da), dtype=complex), np.zeros((0, db, db), dtype=complex)

    pa = left.parity
    a_ops, b_ops = [], []

    def add(x, y, hermitian_pair=True):
        a_ops.append(x)
        b_ops.append(y)
        if hermitian_pair:
            a_ops.append(_dagger(x))
            b_ops.append(_dagger(y))

    # one creator in A, rest in B (and t_ij a_i^dag b_j)
    add(left.creators * pa[None, None, :], right.s[a_modes] + 2.0 * right.r[a_modes])
    # three operators in A, one annihilator in B
    add(-2.0 * left.r[b_modes] * pa[None, None, :], right.creators)

    if n_a <= n_b:
        pair_a = np.conj(left.cc.transpose(1, 0, 3, 2)).reshape(n_a * n_a, da, da)
        add(pair_a, right.p[np.ix_(a_modes, a_modes)].reshape(n_a * n_a, db, db))
        add(4.0 * left.cdc.reshape(n_a * n_a, da, da), right.q[np.ix_(a_modes, a_modes)].reshape(n_a * n_a, db, db), False)
    else:
        pair_b = np.conj(right.cc.transpose(1, 0, 3, 2)).reshape(n_b * n_b, db, db)
        add(left.p[np.ix_(b_modes, b_modes)].reshape(n_b * n_b, da, da), pair_b)
        add(4.0 * left.q[np.ix_(b_modes, b_modes)].reshape(n_b * n_b, da, da), right.cdc.reshape(n_b * n_b, db, db), False)

    return np.concatenate(a_ops, axis=0), np.concatenate(b_ops, axis=0)


def merge(
    left: ComplementaryOperatorSet,
    right: ComplementaryOperatorSet,
    op: SecondQuantizedOperator,
    side: str = "left",
    boundary: int = 0,
) -> ComplementaryOperatorSet:
    """Operator families of the product block left (x) right, basis index a * D_B + b"""
    w = op.antisymmetrized
    a_modes, b_modes = left.modes, right.modes
    da, db = left.dimension, right.dimension
    n_u = len(a_modes) + len(b_modes)
    dim = da * db
    ia, ib = np.eye(da), np.eye(db)
    pa = left.parity
    pa_mat = np.diag(pa)

    a = left.c
    ad = left.creators
    a_p = a * pa[None, None, :]  # a_k P_A
    p_a = pa[None, :, None] * a  # P_A a_k
    ad_p = ad * pa[None, None, :]  # a_k^dag P_A
    b = right.c
    bd = right.creators

    c = np.concatenate([_kron(a, ib), _kron(pa_mat, b)], axis=0)

    def mixed(x, y):
        return np.einsum("kab,lcd->klacbd", x, y).reshape(x.shape[0], y.shape[0], dim, dim)

    n_a = len(a_modes)
    cc = np.zeros((n_u, n_u, dim, dim), dtype=complex)
    cdc = np.zeros((n_u, n_u, dim, dim), dtype=complex)
    cc[:n_a, :n_a] = _kron(left.cc, ib)
    cc[n_a:, n_a:] = _kron(ia, right.cc)
    cc[:n_a, n_a:] = mixed(a_p, b)
    cc[n_a:, :n_a] = np.einsum("lab,kcd->klacbd", p_a, b).reshape(len(b_modes), n_a, dim, dim)
    cdc[:n_a, :n_a] = _kron(left.cdc, ib)
    cdc[n_a:, n_a:] = _kron(ia, right.cdc)
    cdc[:n_a, n_a:] = mixed(ad_p, b)
    cdc[n_a:, :n_a] = np.einsum("kab,icd->ikacbd", p_a, bd).reshape(len(b_modes), n_a, dim, dim)

    s = _kron(left.s, ib) + _kron(pa_mat, right.s)

    w_ab = w[:, :, a_modes][:, :, :, b_modes]
    p = _kron(left.p, ib) + _kron(ia, right.p)
    p += 2.0 * np.einsum("xykl,kab,lcd->xyacbd", w_ab, p_a, b, optimize=True).reshape(p.shape)

    q = _kron(left.q, ib) + _kron(ia, right.q)
    q += np.einsum("xjyl,jab,lcd->xyacbd", w[:, a_modes][:, :, :, b_modes], ad_p, b, optimize=True).reshape(q.shape)
    q += np.einsum("xjyl,lab,jcd->xyacbd", w[:, b_modes][:, :, :, a_modes], p_a, bd, optimize=True).reshape(q.shape)

    r = _kron(left.r, ib) + _kron(pa_mat, right.r)
    r += np.einsum("jab,xjcd->xacbd", ad, right.p[:, a_modes], optimize=True).reshape(r.shape)
    r += np.einsum("xjab,jcd->xacbd", pa[None, None, :, None] * left.p[:, b_modes], bd, optimize=True).reshape(r.shape)
    r += 2.0 * np.einsum("xlab,lcd->xacbd", left.q[:, b_modes] * pa[None, None, None, :], b, optimize=True).reshape(r.shape)
    r += 2.0 * np.einsum("kab,xkcd->xacbd", a, right.q[:, a_modes], optimize=True).reshape(r.shape)

    h = _kron(left.h, ib) + _kron(ia, right.h)
    a_t, b_t = join_terms(left, right, op)
    if len(a_t):
        h = h + np.einsum("tab,tcd->acbd", a_t, b_t).reshape(dim, dim)

    return ComplementaryOperatorSet(
        side=side,
        boundary=boundary,
        modes=np.concatenate([a_modes, b_modes]),
        parity=np.outer(pa, right.parity).ravel(),
        c=c,
        cc=cc,
        cdc=cdc,
        h=h,
        s=s,
        r=r,
        p=p,
        q=q,
    )


def project(block: ComplementaryOperatorSet, bra: np.ndarray, ket: np.ndarray, side: str, boundary: int) -> ComplementaryOperatorSet:
    """X -> bra @ X @ ket for every family"""

    def f(x):
        return bra @ x @ ket

    parity = np.sign(np.real(np.diag(bra @ np.diag(block.parity) @ ket)))
    return ComplementaryOperatorSet(
        side=side,
        boundary=boundary,
        modes=block.modes,
        parity=parity,
        c=f(block.c),
        cc=f(block.cc),
        cdc=f(block.cdc),
        h=f(block.h),
        s=f(block.s),
        r=f(block.r),
        p=f(block.p),
        q=f(block.q),
    )


def extend_environment(
    env: ComplementaryOperatorSet, tensor: np.ndarray, op: SecondQuantizedOperator, merged: Optional[ComplementaryOperatorSet] = None
) -> ComplementaryOperatorSet:
    """
    Absorb the next site into an environment

    A left environment covering sites 0..k-1 absorbs site k with the
    left-normalised tensor A (D_l, d, D'); a right environment covering
    sites k..n-1 absorbs site k-1 with the right-normalised tensor B (D', d, D_r).
    """
    if env.side == "left":
        site = env.boundary
        if tensor.shape[0] != env.dimension:
            raise ValueError(f"tensor bond {tensor.shape[0]} does not match environment dimension {env.dimension}")
        if merged is None:
            merged = merge(env, site_block(op, site), op)
        ket = tensor.reshape(-1, tensor.shape[2])
        return project(merged, _dagger(ket), ket, "left", site + 1)

    site = env.boundary - 1
    if tensor.shape[2] != env.dimension:
        raise ValueError(f"tensor bond {tensor.shape[2]} does not match environment dimension {env.dimension}")
    if merged is None:
        merged = merge(site_block(op, site), env, op, side="right")
    mat = tensor.reshape(tensor.shape[0], -1)
    return project(merged, mat.conj(), mat.T, "right", site)


def rotate_environment(env: ComplementaryOperatorSet, unitary: np.ndarray) -> ComplementaryOperatorSet:
    """
    Transform the open-mode indices: S -> V^dag S, R -> V^dag R,
    P -> (V^dag (x) V^dag) P, Q -> V^dag Q V. V must act trivially on the block modes.
    """
    v = np.asarray(unitary, dtype=complex)
    n = env.s.shape[0]
    if v.shape != (n, n):
        raise ValueError(f"unitary must be {n}x{n}, got {v.shape}")
    eye = np.eye(n)
    if env.n_block_modes and (
        np.abs(v[env.modes] - eye[env.modes]).max() > 1e-10 or np.abs(v[:, env.modes] - eye[:, env.modes]).max() > 1e-10
    ):
        raise PreconditionError("rotation acts on modes inside the block")

    vc = v.conj()
    return ComplementaryOperatorSet(
        side=env.side,
        boundary=env.boundary,
        modes=env.modes,
        parity=env.parity,
        c=env.c,
        cc=env.cc,
        cdc=env.cdc,
        h=env.h,
        s=np.einsum("xo,xab->oab", vc, env.s),
        r=np.einsum("xo,xab->oab", vc, env.r),
        p=np.einsum("xo,yz,xyab->ozab", vc, vc, env.p, optimize=True),
        q=np.einsum("xo,yz,xyab->ozab", vc, v, env.q, optimize=True),
    )


class EffectiveHamiltonian:
    """
    H restricted to the two-site space of sites m, m+1

    Acts on X with shape (D_l d, d D_r) as H_L X + X H_R^T + sum_t A_t X B_t^T + e_core X.
    """

    def __init__(
        self,
        left_env: ComplementaryOperatorSet,
        right_env: ComplementaryOperatorSet,
        op: SecondQuantizedOperator,
        m: int,
    ):
        self.site = m
        self.e_core = op.e_core
        self.left_block = merge(left_env, site_block(op, m), op, side="left", boundary=m + 1)
        self.right_block = merge(site_block(op, m + 1), right_env, op, side="right", boundary=m + 1)
        self.a_terms, self.b_terms = join_terms(self.left_block, self.right_block, op)
        self.shape2 = (self.left_block.dimension, self.right_block.dimension)

    @property
    def dimension(self) -> int:
        return self.shape2[0] * self.shape2[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        mat = np.asarray(x).reshape(self.shape2)
        out = self.left_block.h @ mat + mat @ self.right_block.h.T + self.e_core * mat
        if len(self.a_terms):
            out = out + np.einsum("tab,bc,tdc->ad", self.a_terms, mat, self.b_terms, optimize=True)
        return out.reshape(np.shape(x))

    def diagonal(self) -> np.ndarray:
        diag = np.real(np.diag(self.left_block.h))[:, None] + np.real(np.diag(self.right_block.h))[None, :] + self.e_core
        if len(self.a_terms):
            da = np.diagonal(self.a_terms, axis1=1, axis2=2)
            db = np.diagonal(self.b_terms, axis1=1, axis2=2)
            diag = diag + np.real(np.einsum("ta,tb->ab", da, db))
        return diag.ravel()

    def dense(self) -> np.ndarray:
        da, db = self.shape2
        out = np.kron(self.left_block.h, np.eye(db)) + np.kron(np.eye(da), self.right_block.h)
        if len(self.a_terms):
            out = out + np.einsum("tab,tcd->acbd", self.a_terms, self.b_terms).reshape(da * db, da * db)
        return out + self.e_core * np.eye(da * db)

    def expectation(self, block: BlockedTensor) -> float:
        x = block.data.ravel()
        return float(np.real(np.vdot(x, self.apply(x))) / np.real(np.vdot(x, x)))


def apply_effective_hamiltonian(
    left_env: ComplementaryOperatorSet,
    right_env: ComplementaryOperatorSet,
    op: SecondQuantizedOperator,
    block: BlockedTensor,
) -> BlockedTensor:
    heff = EffectiveHamiltonian(left_env, right_env, op, block.site)
    if block.data.size != heff.dimension:
        raise ValueError("blocked tensor does not match the environments")
    return block.with_data(heff.apply(block.data.ravel()).reshape(block.shape))


def solve_local_ground_state(
    heff: EffectiveHamiltonian, guess: BlockedTensor, settings: Optional[SolverSettings] = None
) -> tuple[float, BlockedTensor]:
    """
    Lowest eigenpair of H_eff inside the charge sector of the guess

    Small sectors are diagonalised densely; larger ones use implicitly
    restarted Lanczos started from the guess.
    """
    settings = settings or SolverSettings()
    mask = guess.allowed().ravel()
    index = np.flatnonzero(mask)
    dim = index.size
    full = np.zeros(heff.dimension, dtype=complex)

    def matvec(y):
        full[:] = 0.0
        full[index] = np.ravel(y)
        return heff.apply(full)[index]

    def pack(vec):
        data = np.zeros(heff.dimension, dtype=complex)
        data[index] = vec
        return guess.with_data(data.reshape(guess.shape))

    x0 = guess.data.ravel()[index]
    nrm = np.linalg.norm(x0)
    if nrm > 0:
        x0 = x0 / nrm
        if dim == 1:
            return float(np.real(np.vdot(x0, matvec(x0)))), pack(x0)
        # an exact eigenvector spans an invariant Krylov space, possibly an excited one
        hx = matvec(x0)
        theta = float(np.real(np.vdot(x0, hx)))
        if np.linalg.norm(hx - theta * x0) <= settings.tol * max(1.0, abs(theta)):
            kick = np.random.default_rng(dim).normal(size=(dim, 2)) @ np.array([1.0, 1j])
            x0 = x0 + GUESS_KICK * kick / np.linalg.norm(kick)
            x0 = x0 / np.linalg.norm(x0)

    if dim <= settings.dense_threshold:
        h = np.column_stack([matvec(col) for col in np.eye(dim, dtype=complex)])
        vals, vecs = scipy.linalg.eigh(0.5 * (h + _dagger(h)), subset_by_index=[0, 0])
        return float(vals[0]), pack(vecs[:, 0])

    operator = LinearOperator((dim, dim), matvec=matvec, dtype=complex)
    v0 = x0 if nrm > 0 else None
    try:
        vals, vecs = eigsh(operator, k=1, which="SA", v0=v0, tol=settings.tol * 0.1, maxiter=settings.max_iter)
    except ArpackNoConvergence as e:
        if len(e.eigenvalues):
            raise LocalSolveError("local eigensolver did not converge", float(e.eigenvalues[0]), pack(e.eigenvectors[:, 0])) from e
        raise LocalSolveError("local eigensolver did not converge", float(np.real(np.vdot(x0, matvec(x0)))), pack(x0)) from e

    theta, vec = float(vals[0]), vecs[:, 0]
    residual = np.linalg.norm(matvec(vec) - theta * vec)
    if residual > settings.tol * max(1.0, abs(theta)):
        raise LocalSolveError(f"residual {residual:.2e} above tolerance", theta, pack(vec))
    return theta, pack(vec)


# -----------------------------------------------------------------------------
# Environment cache and sweeps
# -----------------------------------------------------------------------------


class EnvironmentCache:
    """
    Environments of every cut with the basis each was built in

    Loading an environment built under accumulated unitary U_built while the
    operator now carries U_acc rotates it by V = U_built^dag U_acc first.
    """

    def __init__(self):
        self._left: dict = {}
        self._right: dict = {}

    def clear(self) -> None:
        self._left.clear()
        self._right.clear()

    def store(self, env: ComplementaryOperatorSet, op: SecondQuantizedOperator) -> None:
        table = self._left if env.side == "left" else self._right
        table[env.boundary] = (env, op.mode_space.accumulated_unitary.copy())

    def _load(self, table: dict, boundary: int, op: SecondQuantizedOperator) -> ComplementaryOperatorSet:
        if boundary not in table:
            raise KeyError(f"no environment cached at boundary {boundary}")
        env, built = table[boundary]
        current = op.mode_space.accumulated_unitary
        v = built.conj().T @ current
        if np.abs(v - np.eye(v.shape[0])).max() > LEDGER_TOL:
            env = rotate_environment(env, v)
            table[boundary] = (env, current.copy())
        return env

    def left(self, boundary: int, op: SecondQuantizedOperator) -> ComplementaryOperatorSet:
        return self._load(self._left, boundary, op)

    def right(self, boundary: int, op: SecondQuantizedOperator) -> ComplementaryOperatorSet:
        return self._load(self._right, boundary, op)

    def build(self, psi: SymmetricMPS, op: SecondQuantizedOperator) -> None:
        """Right environments for a sweep starting at site 0 (moves the centre there)"""
        self.clear()
        psi.move_center(0)
        n = psi.n_sites
        self.store(boundary_environment("left", op), op)
        env = boundary_environment("right", op)
        self.store(env, op)
        for k in range(n - 1, 1, -1):
            env = extend_environment(env, psi.tensors[k], op)
            self.store(env, op)


@dataclass
class StepRecord:
    iteration: int
    sweep: int
    site: int
    direction: str
    energy: float
    bond_dimension: int
    truncation_error: float
    accepted_rotation: bool
    wall_time: float = field(default=0.0, repr=False)

    def to_record(self) -> dict:
        return {
            "iteration": self.iteration,
            "sweep": self.sweep,
            "site": self.site,
            "energy": self.energy,
            "D": self.bond_dimension,
            "eps_t": self.truncation_error,
            "accepted_rotation": self.accepted_rotation,
        }


@dataclass
class SweepReport:
    steps: list = field(default_factory=list)

    @property
    def energies(self) -> np.ndarray:
        return np.array([s.energy for s in self.steps])

    @property
    def final_energy(self) -> float:
        return self.steps[-1].energy

    @property
    def max_truncation_error(self) -> float:
        return max((s.truncation_error for s in self.steps), default=0.0)

    @property
    def accepted_rotations(self) -> int:
        return sum(s.accepted_rotation for s in self.steps)

    def extend(self, other: "SweepReport") -> None:
        self.steps.extend(other.steps)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([s.to_record() for s in self.steps])


# (blocked tensor, cut, operator, rng) -> accepted local unitary or None
RotationHook = Callable[[BlockedTensor, int, SecondQuantizedOperator, np.random.Generator], Optional[np.ndarray]]


def sweep(
    psi: SymmetricMPS,
    op: SecondQuantizedOperator,
    cache: EnvironmentCache,
    policy: TruncationPolicy,
    direction: str,
    hook: Optional[RotationHook] = None,
    solver: Optional[SolverSettings] = None,
    iteration: int = 0,
    sweep_index: int = 0,
    seed: int = 0,
) -> tuple[SymmetricMPS, SecondQuantizedOperator, SweepReport]:
    """
    One directional pass of two-site updates

    Each step solves the local problem, optionally rotates the two-site modes
    through the hook (state by g(U), coefficients by U), truncates and moves the
    centre. Returns the updated state, the operator in the new working basis
    and the per-step report.
    """
    if direction not in ("right", "left"):
        raise ValueError(f"unknown direction {direction!r}")
    log = logger.bind(task="sweep", direction=direction, iteration=iteration, sweep=sweep_index)
    solver = solver or SolverSettings()
    n = psi.n_sites
    report = SweepReport()
    cuts = range(n - 1) if direction == "right" else range(n - 2, -1, -1)
    psi.move_center(0 if direction == "right" else n - 1)

    for m in cuts:
        started = time.perf_counter()
        left_env = cache.left(m, op)
        right_env = cache.right(m + 2, op)
        heff = EffectiveHamiltonian(left_env, right_env, op, m)
        guess = block_two_site(psi, m)
        try:
            energy, block = solve_local_ground_state(heff, guess, solver)
        except LocalSolveError as e:
            log.warning("local_solve_not_converged", site=m, error=str(e))
            energy, block = e.energy, e.block

        accepted = False
        if hook is not None:
            rng = np.random.default_rng([seed, iteration, sweep_index, m])
            u_loc = hook(block, m, op, rng)
            if u_loc is not None:
                block = apply_two_site_gate(block, gaussian_unitary(u_loc))
                op = rotate_coefficients(op, embed_local(u_loc, m, op.mode_space))
                accepted = True

        split = decompose_two_site(block, policy, direction)
        psi.set_two_site(m, split, direction)

        if direction == "right" and m < n - 2:
            merged = heff.left_block if not accepted else None
            env = extend_environment(cache.left(m, op), psi.tensors[m], op, merged=merged)
            cache.store(env, op)
        elif direction == "left" and m > 0:
            merged = heff.right_block if not accepted else None
            env = extend_environment(cache.right(m + 2, op), psi.tensors[m + 1], op, merged=merged)
            cache.store(env, op)

        record = StepRecord(
            iteration=iteration,
            sweep=sweep_index,
            site=m,
            direction=direction,
            energy=energy,
            bond_dimension=split.left.shape[2],
            truncation_error=split.truncation_error,
            accepted_rotation=accepted,
            wall_time=time.perf_counter() - started,
        )
        report.steps.append(record)
        log.debug("step_done", site=m, energy=energy, bond=record.bond_dimension, eps_t=record.truncation_error)

    log.info(
        "sweep_finished",
        energy=report.final_energy,
        rotations=report.accepted_rotations,
        max_eps_t=report.max_truncation_error,
    )
    return psi, op, report


def energy_expectation(psi: SymmetricMPS, op: SecondQuantizedOperator) -> float:
    """<psi|H|psi> / <psi|psi> by a full left-to-right contraction"""
    work = canonicalize(psi, psi.n_sites - 1)
    env = boundary_environment("left", op)
    for k in range(psi.n_sites - 1):
        env = extend_environment(env, work.tensors[k], op)
    last = merge(env, site_block(op, psi.n_sites - 1), op)
    a = work.tensors[-1].reshape(-1)
    return float(np.real(np.vdot(a, last.h @ a)) / np.real(np.vdot(a, a))) + op.e_core
