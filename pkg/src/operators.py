"""
Second-quantised operators

H = sum_ij t_ij c_i^dag c_j + sum_ijkl v_ijkl c_i^dag c_j^dag c_l c_k + e_core

- coefficient rotation under mode transformations (with a local fast path)
- FCIDUMP ingestion (chemists' notation converted at the boundary)
- Hubbard-type model generators with a tunable density-density tail
- .npz dump/restore including the basis provenance
"""

import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, TextIO

import numpy as np
import structlog

from fock import ModeSpace, PreconditionError, check_unitary

# Logging setup
structlog.configure(
    processors=[
        structlog.processors.add_log_level,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.dev.ConsoleRenderer(),
    ]
)
logger = structlog.get_logger()

OPERATOR_FORMAT_VERSION = 1
HERMITIAN_TOL = 1e-10


class FcidumpError(ValueError):
    """Malformed FCIDUMP input"""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class SecondQuantizedOperator:
    """
    Coefficients of a particle-number conserving Hamiltonian in the working basis

    Index convention follows the operator ordering c_i^dag c_j^dag c_l c_k for
    v[i, j, k, l]. n_particles optionally records the target particle number
    per species (read from FCIDUMP headers).
    """

    one_body: np.ndarray = field(repr=False)
    two_body: np.ndarray = field(repr=False)
    e_core: float
    mode_space: ModeSpace
    n_particles: Optional[tuple] = None

    def __post_init__(self):
        n_modes = self.mode_space.n_modes
        t = np.asarray(self.one_body, dtype=complex)
        v = np.asarray(self.two_body, dtype=complex)
        if t.shape != (n_modes, n_modes):
            raise PreconditionError(f"one-body tensor must be {n_modes}x{n_modes}, got {t.shape}")
        if v.shape != (n_modes,) * 4:
            raise PreconditionError(f"two-body tensor must have shape {(n_modes,) * 4}, got {v.shape}")
        object.__setattr__(self, "one_body", t)
        object.__setattr__(self, "two_body", v)
        object.__setattr__(self, "e_core", float(self.e_core))
        scale = max(1.0, float(np.abs(t).max(initial=0.0)), float(np.abs(v).max(initial=0.0)))
        error = self.hermitian_error()
        if error > HERMITIAN_TOL * scale:
            raise PreconditionError(f"coefficients are not Hermitian (error {error:.2e})")

    @property
    def n_modes(self) -> int:
        return self.mode_space.n_modes

    @property
    def t(self) -> np.ndarray:
        return self.one_body

    @property
    def v(self) -> np.ndarray:
        return self.two_body

    @cached_property
    def antisymmetrized(self) -> np.ndarray:
        """w with w_ijkl = -w_jikl = -w_ijlk, same Hamiltonian as v"""
        v = self.two_body
        return 0.25 * (v - v.transpose(1, 0, 2, 3) - v.transpose(0, 1, 3, 2) + v.transpose(1, 0, 3, 2))

    def hermitian_error(self) -> float:
        t_err = np.max(np.abs(self.one_body - self.one_body.conj().T))
        v_err = np.max(np.abs(self.two_body - self.two_body.transpose(2, 3, 0, 1).conj()))
        return float(max(t_err, v_err))

    def replace(self, **changes) -> "SecondQuantizedOperator":
        values = {
            "one_body": self.one_body,
            "two_body": self.two_body,
            "e_core": self.e_core,
            "mode_space": self.mode_space,
            "n_particles": self.n_particles,
        }
        values.update(changes)
        return SecondQuantizedOperator(**values)


def _support(u: np.ndarray) -> np.ndarray:
    """Modes on which u differs from the identity"""
    dev = np.abs(u - np.eye(u.shape[0]))
    return np.flatnonzero((dev.max(axis=0) > 0) | (dev.max(axis=1) > 0))


def _rotate_axis(tensor: np.ndarray, block: np.ndarray, modes: np.ndarray, axis: int) -> np.ndarray:
    """Contract one tensor axis with a unitary that is the identity outside `modes`"""
    moved = np.moveaxis(tensor, axis, 0)
    out = moved.copy()
    out[modes] = np.tensordot(block, moved[modes], axes=([0], [0]))
    return np.moveaxis(out, 0, axis)


def rotate_coefficients(op: SecondQuantizedOperator, u: np.ndarray) -> SecondQuantizedOperator:
    """
    Counter-rotate coefficients for a state transformed by g(U)

    t -> U^dag t U and v_abcd -> sum conj(U_ia) conj(U_jb) v_ijkl U_kc U_ld.
    Only slices touching the support of U are recomputed, so a local 2p-mode
    rotation costs O((np)^3) per two-body axis.
    """
    u = check_unitary(u)
    if u.shape != (op.n_modes, op.n_modes):
        raise PreconditionError(f"unitary must be {op.n_modes}x{op.n_modes}, got {u.shape}")

    modes = _support(u)
    if modes.size == 0:
        return op.replace(mode_space=op.mode_space.with_rotation(u))

    block = u[np.ix_(modes, modes)]
    t = op.one_body[:, :]
    t = _rotate_axis(t, block.conj(), modes, 0)
    t = _rotate_axis(t, block, modes, 1)

    v = op.two_body
    v = _rotate_axis(v, block.conj(), modes, 0)
    v = _rotate_axis(v, block.conj(), modes, 1)
    v = _rotate_axis(v, block, modes, 2)
    v = _rotate_axis(v, block, modes, 3)

    return op.replace(one_body=t, two_body=v, mode_space=op.mode_space.with_rotation(u))


def embed_local(u_loc: np.ndarray, m: int, mode_space: ModeSpace) -> np.ndarray:
    """1_{pm} + U_loc + 1 acting on the 2p modes of sites m, m+1"""
    p = mode_space.species_per_orbital
    n = mode_space.n_orbitals
    if not 0 <= m <= n - 2:
        raise PreconditionError(f"cut {m} out of range for {n} sites")
    u_loc = np.asarray(u_loc, dtype=complex)
    if u_loc.shape != (2 * p, 2 * p):
        raise PreconditionError(f"local unitary must be {2 * p}x{2 * p}")
    full = np.eye(mode_space.n_modes, dtype=complex)
    window = slice(m * p, (m + 2) * p)
    full[window, window] = u_loc
    return full


def species_restricted(u: np.ndarray, p: int) -> np.ndarray:
    """u acting identically on every species: entry (q p + s, k p + s) = u[q, k]"""
    return np.kron(np.asarray(u, dtype=complex), np.eye(p))


def one_body_basis(op: SecondQuantizedOperator) -> tuple[np.ndarray, np.ndarray]:
    """
    Species-restricted eigenbasis of t (orbital energies ascending)

    Returns the np x np unitary and the spatial orbital energies.
    """
    p = op.mode_space.species_per_orbital
    spatial = np.mean([op.one_body[s::p, s::p] for s in range(p)], axis=0)
    energies, vectors = np.linalg.eigh(0.5 * (spatial + spatial.conj().T))
    return species_restricted(vectors, p), energies


# -----------------------------------------------------------------------------
# FCIDUMP
# -----------------------------------------------------------------------------


def _header_int(header: str, key: str, default: Optional[int] = None) -> Optional[int]:
    match = re.search(rf"\b{key}\s*=\s*(-?\d+)", header, flags=re.IGNORECASE)
    if match:
        return int(match.group(1))
    return default


def parse_fcidump(
    stream: TextIO, n_orbitals: Optional[int] = None, species_per_orbital: int = 2
) -> SecondQuantizedOperator:
    """
    Read a Molpro-style FCIDUMP (chemists' notation, real integrals)

    Lines `value i j k l`: i j k l > 0 two-electron (ij|kl), `h i j 0 0`
    one-electron, `E 0 0 0 0` core energy, `e i 0 0 0` orbital energies
    (ignored). Spatial orbitals are duplicated over the species; the mapping
    into the c^dag c^dag c c convention is
    v[(i,s), (k,r), (j,s), (l,r)] = (ij|kl) / 2.

    Args:
        stream: text stream positioned at the header
        n_orbitals: expected NORB, checked against the header when given
        species_per_orbital: number of species the orbitals are expanded over

    Returns:
        SecondQuantizedOperator in the identity basis
    """
    log = logger.bind(task="parse_fcidump")

    header_lines = []
    line_no = 0
    for raw in stream:
        line_no += 1
        header_lines.append(raw)
        stripped = raw.strip().upper()
        if stripped.endswith("&END") or stripped == "/" or stripped.endswith("/"):
            break
    else:
        raise FcidumpError("header terminator (&END or /) not found", line_no)

    header = " ".join(header_lines)
    if "&FCI" not in header.upper():
        raise FcidumpError("missing &FCI namelist", 1)
    norb = _header_int(header, "NORB")
    if norb is None or norb < 1:
        raise FcidumpError("NORB missing or invalid", 1)
    nelec = _header_int(header, "NELEC")
    ms2 = _header_int(header, "MS2", 0)
    if n_orbitals is not None and n_orbitals != norb:
        raise FcidumpError(f"NORB={norb} does not match requested {n_orbitals} orbitals", 1)
    if nelec is not None:
        nelec_line = next((k + 1 for k, text in enumerate(header_lines) if "NELEC" in text.upper()), 1)
        if not 0 <= nelec <= norb * species_per_orbital:
            raise FcidumpError(f"NELEC={nelec} outside 0..{norb * species_per_orbital}", nelec_line)
        if species_per_orbital == 2 and ((nelec + ms2) % 2 or abs(ms2) > nelec or (nelec + abs(ms2)) // 2 > norb):
            raise FcidumpError(f"MS2={ms2} inconsistent with NELEC={nelec} on {norb} orbitals", nelec_line)

    h = np.zeros((norb, norb))
    eri = np.zeros((norb, norb, norb, norb))
    e_core = 0.0

    for raw in stream:
        line_no += 1
        tokens = raw.split()
        if not tokens:
            continue
        if len(tokens) != 5:
            raise FcidumpError(f"expected 5 fields, got {len(tokens)}", line_no)
        try:
            value = float(tokens[0].replace("D", "E").replace("d", "e"))
            i, j, k, l = (int(x) for x in tokens[1:])
        except ValueError as e:
            raise FcidumpError(f"cannot parse entry: {e}", line_no) from e
        if not all(0 <= x <= norb for x in (i, j, k, l)):
            raise FcidumpError(f"orbital index out of range 0..{norb}", line_no)

        if i == j == k == l == 0:
            e_core = value
        elif k == 0 and l == 0 and j == 0:
            continue  # orbital energy
        elif k == 0 and l == 0:
            h[i - 1, j - 1] = h[j - 1, i - 1] = value
        elif 0 in (i, j, k, l):
            raise FcidumpError("mixed zero and non-zero indices", line_no)
        else:
            i, j, k, l = i - 1, j - 1, k - 1, l - 1
            for a, b, c, d in (
                (i, j, k, l), (j, i, k, l), (i, j, l, k), (j, i, l, k),
                (k, l, i, j), (l, k, i, j), (k, l, j, i), (l, k, j, i),
            ):
                eri[a, b, c, d] = value

    p = species_per_orbital
    n_modes = norb * p
    t = np.zeros((norb, p, norb, p))
    v = np.zeros((norb, p, norb, p, norb, p, norb, p))
    pair = 0.5 * eri.transpose(0, 2, 1, 3)
    for s in range(p):
        t[:, s, :, s] = h
        for r in range(p):
            v[:, s, :, r, :, s, :, r] = pair

    n_particles = None
    if nelec is not None and p == 2:
        n_particles = ((nelec + ms2) // 2, (nelec - ms2) // 2)
    elif nelec is not None and p == 1:
        n_particles = (nelec,)

    log.info("fcidump_parsed", norb=norb, nelec=nelec, ms2=ms2, lines=line_no)
    return SecondQuantizedOperator(
        one_body=t.reshape(n_modes, n_modes),
        two_body=v.reshape((n_modes,) * 4),
        e_core=e_core,
        mode_space=ModeSpace.identity(norb, p),
        n_particles=n_particles,
    )


def read_fcidump(path: Path, n_orbitals: Optional[int] = None) -> SecondQuantizedOperator:
    with open(path) as f:
        return parse_fcidump(f, n_orbitals=n_orbitals)


# -----------------------------------------------------------------------------
# Model generators
# -----------------------------------------------------------------------------


def _add_density_density(v: np.ndarray, a: int, b: int, coefficient: float) -> None:
    """coefficient * n_a n_b (a != b) written as c_a^dag c_b^dag c_b c_a"""
    v[a, b, a, b] += 0.5 * coefficient
    v[b, a, b, a] += 0.5 * coefficient


def build_hubbard(
    n: int,
    p: int = 2,
    hopping: float = 1.0,
    onsite: float = 4.0,
    decay: float = np.inf,
    boundary: str = "open",
) -> SecondQuantizedOperator:
    """
    Hubbard chain with an optional density-density tail

    H = -t0 sum_<qr>,s (c_qs^dag c_rs + h.c.) + U0 sum_q sum_{s<s'} n_qs n_qs'
        + U0 sum_{q<r} exp(-gamma |q - r|) n_q n_r

    decay = inf disables the tail.
    """
    if n < 2:
        raise PreconditionError("n must be >= 2")
    if p < 1:
        raise PreconditionError("p must be >= 1")
    if boundary not in ("open", "periodic"):
        raise PreconditionError(f"unknown boundary {boundary!r}")

    n_modes = n * p
    t = np.zeros((n_modes, n_modes))
    v = np.zeros((n_modes,) * 4)

    bonds = [(q, q + 1) for q in range(n - 1)]
    if boundary == "periodic" and n > 2:
        bonds.append((n - 1, 0))
    for q, r in bonds:
        for s in range(p):
            a, b = q * p + s, r * p + s
            t[a, b] -= hopping
            t[b, a] -= hopping

    for q in range(n):
        for s in range(p):
            for s2 in range(s + 1, p):
                _add_density_density(v, q * p + s, q * p + s2, onsite)

    if np.isfinite(decay):
        for q in range(n):
            for r in range(q + 1, n):
                distance = r - q
                if boundary == "periodic":
                    distance = min(distance, n - distance)
                coefficient = onsite * np.exp(-decay * distance)
                for s in range(p):
                    for s2 in range(p):
                        _add_density_density(v, q * p + s, r * p + s2, coefficient)

    return SecondQuantizedOperator(
        one_body=t, two_body=v, e_core=0.0, mode_space=ModeSpace.identity(n, p)
    )


# -----------------------------------------------------------------------------
# Container
# -----------------------------------------------------------------------------


def dump_operator(path: Path, op: SecondQuantizedOperator) -> None:
    """Write e_core, t, v and the basis provenance to an .npz container"""
    n_particles = np.array(op.n_particles if op.n_particles is not None else [], dtype=int)
    np.savez(
        path,
        format_version=OPERATOR_FORMAT_VERSION,
        n_orbitals=op.mode_space.n_orbitals,
        species_per_orbital=op.mode_space.species_per_orbital,
        one_body=op.one_body,
        two_body=op.two_body,
        e_core=op.e_core,
        mode_order=op.mode_space.mode_order,
        accumulated_unitary=op.mode_space.accumulated_unitary,
        n_particles=n_particles,
    )


def load_operator(path: Path) -> SecondQuantizedOperator:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != OPERATOR_FORMAT_VERSION:
            raise ValueError(f"unsupported operator container version {version}")
        mode_space = ModeSpace(
            int(data["n_orbitals"]),
            int(data["species_per_orbital"]),
            data["mode_order"],
            data["accumulated_unitary"],
        )
        n_particles = tuple(int(x) for x in data["n_particles"]) or None
        return SecondQuantizedOperator(
            one_body=data["one_body"],
            two_body=data["two_body"],
            e_core=float(data["e_core"]),
            mode_space=mode_space,
            n_particles=n_particles,
        )
