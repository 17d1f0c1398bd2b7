"""
Local basis optimisation on two-site windows

The non-redundant rotations of the 2p modes of sites m, m+1 form the
Grassmannian G(2p, p) (or G(2, 1) when every species shares the same spatial
rotation). Points are a x b isometries X; the full unitary is the generalised
Householder reflection U(X) whose first b columns are X.

Costs act on the Schmidt spectrum of g(U) theta across the middle cut:
f1 = sum sigma, f4 = -sum sigma^4.
"""

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
import scipy.linalg
import scipy.optimize
import structlog
from pydantic import BaseModel, Field, model_validator

from fock import exterior_power, gaussian_minor_tensor
from mps import BlockedTensor, SchmidtSpectrum, TruncationPolicy, kept_rank
from operators import SecondQuantizedOperator, species_restricted

# Logging setup
structlog.configure(
    processors=[
        structlog.processors.add_log_level,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.dev.ConsoleRenderer(),
    ]
)
logger = structlog.get_logger()

ISOMETRY_TOL = 1e-12
SINGULAR_COND = 1e12
EPS_T_SLACK = 1e-12


class ParametrisationError(RuntimeError):
    """Householder map stayed singular after every re-representation"""


class LocalOptConfig(BaseModel):
    cost: Literal["f1", "f4"] = "f1"
    method: Literal["nelder_mead", "conjugate_gradient"] = "nelder_mead"
    symmetry: Literal["none", "spin_summed"] = "spin_summed"
    max_evals: int = Field(default=400, ge=1)
    delta_accept: float = Field(default=1e-10, gt=0.0)
    retry_budget: int = Field(default=8, ge=0)
    restarts: int = Field(default=3, ge=0)
    simplex_radius: float = Field(default=0.1, gt=0.0)
    gtol: float = Field(default=1e-10, gt=0.0)

    @model_validator(mode="after")
    def check_method(self) -> "LocalOptConfig":
        if self.method == "conjugate_gradient" and self.cost != "f4":
            raise ValueError("conjugate_gradient needs the analytic f4 gradient (cost = 'f4')")
        return self


@dataclass(frozen=True)
class GrassmannPoint:
    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=complex)
        if x.ndim != 2 or x.shape[0] != 2 * x.shape[1]:
            raise ValueError(f"expected a 2b x b matrix, got shape {x.shape}")
        err = np.abs(x.conj().T @ x - np.eye(x.shape[1])).max()
        if err > ISOMETRY_TOL:
            raise ValueError(f"X is not an isometry (deviation {err:.2e})")
        object.__setattr__(self, "x", x)

    @property
    def a(self) -> int:
        return self.x.shape[0]

    @property
    def b(self) -> int:
        return self.x.shape[1]

    @classmethod
    def identity(cls, b: int) -> "GrassmannPoint":
        return cls(selector(b))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "GrassmannPoint":
        """Nearest isometry (polar factor)"""
        u, _ = scipy.linalg.polar(np.asarray(m, dtype=complex))
        return cls(u)

    @classmethod
    def random(cls, b: int, rng: np.random.Generator) -> "GrassmannPoint":
        z = rng.normal(size=(2 * b, b)) + 1j * rng.normal(size=(2 * b, b))
        return cls.from_matrix(z)


def selector(b: int) -> np.ndarray:
    """P: the first b columns of the 2b x 2b identity"""
    return np.eye(2 * b, b, dtype=complex)


def _random_unitary(b: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.normal(size=(b, b)) + 1j * rng.normal(size=(b, b))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))[None, :]


def _householder(x: np.ndarray) -> np.ndarray:
    """Formula only: 1 - (X - P) (1 - X^dag P)^-1 (X - P)^dag"""
    a, b = x.shape
    p = selector(b)
    diff = x - p
    y = np.eye(b) - x.conj().T @ p
    return np.eye(a) - diff @ np.linalg.solve(y, diff.conj().T)


def _is_singular(x: np.ndarray) -> bool:
    y = np.eye(x.shape[1]) - x.conj().T @ selector(x.shape[1])
    s = np.linalg.svd(y, compute_uv=False)
    return s[-1] == 0.0 or s[0] / s[-1] > SINGULAR_COND


def householder_unitary(
    point, rng: Optional[np.random.Generator] = None, retry_budget: int = 8
) -> np.ndarray:
    """
    Generalised Householder reflection with first b columns equal to X

    When 1 - X^dag P is singular the columns of X are mixed by a random b x b
    unitary (same subspace) and the map is retried.
    """
    x = point.x if isinstance(point, GrassmannPoint) else np.asarray(point, dtype=complex)
    b = x.shape[1]
    if np.array_equal(x, selector(b)):
        return np.eye(2 * b, dtype=complex)
    rng = rng or np.random.default_rng(0)
    for _ in range(retry_budget + 1):
        if not _is_singular(x):
            return _householder(x)
        x = x @ _random_unitary(b, rng)
    raise ParametrisationError(f"householder map singular after {retry_budget} retries")


def stable_representative(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    X W spanning the same subspace with 1 - (XW)^dag P = 1 + i H, H >= 0,
    so the reflection is always well conditioned. Returns (X W, W).
    """
    b = x.shape[1]
    w0, _ = scipy.linalg.polar(x.conj().T @ selector(b))
    w = 1j * w0
    return x @ w, w


def cost_f1(spectrum) -> float:
    values = spectrum.values if isinstance(spectrum, SchmidtSpectrum) else np.asarray(spectrum)
    return float(np.sum(values))


def cost_f4(spectrum) -> float:
    values = spectrum.values if isinstance(spectrum, SchmidtSpectrum) else np.asarray(spectrum)
    return float(-np.sum(values**4))


COSTS = {"f1": cost_f1, "f4": cost_f4}


def expand_local(u: np.ndarray, p: int, symmetry: str) -> np.ndarray:
    """2p x 2p window unitary from the optimised block (u (+) u per species when spin summed)"""
    if symmetry == "spin_summed":
        return species_restricted(u, p)
    return np.asarray(u, dtype=complex)


def rotate_block(theta: np.ndarray, u_loc: np.ndarray) -> np.ndarray:
    """g(U) applied to the pair index of theta (D_l, d, d, D_r)"""
    d_l, d, _, d_r = theta.shape
    gate = exterior_power(np.asarray(u_loc).conj().T)
    out = np.einsum("xy,lyr->lxr", gate, theta.reshape(d_l, d * d, d_r))
    return out.reshape(theta.shape)


def block_spectrum(theta: np.ndarray) -> np.ndarray:
    d_l, d, _, d_r = theta.shape
    return scipy.linalg.svdvals(theta.reshape(d_l * d, d * d_r))


def f4_value_and_gradient(theta: np.ndarray, x: np.ndarray, p: int = 1, symmetry: str = "none") -> tuple[float, np.ndarray]:
    """
    f4 of g(U(X)) theta and its gradient dF/dRe X + i dF/dIm X

    X is used as given (no re-representation); the reflection is
    differentiated with d(Y^-1) = -Y^-1 dY Y^-1.
    """
    x = np.asarray(x, dtype=complex)
    b = x.shape[1]
    sel = selector(b)
    y_inv = np.linalg.inv(np.eye(b) - x.conj().T @ sel)
    diff = x - sel
    z1 = diff @ y_inv
    z2 = y_inv @ diff.conj().T
    u = np.eye(2 * b) - z1 @ diff.conj().T
    u_loc = expand_local(u, p, symmetry)

    d_l, d, _, d_r = theta.shape
    rotated = rotate_block(theta, u_loc)
    m = rotated.reshape(d_l * d, d * d_r)
    rho = m @ m.conj().T
    value = float(-np.real(np.vdot(rho, rho)))

    big_b = (rho @ m).reshape(d_l, d * d, d_r)
    e = np.einsum("lxr,lyr->xy", big_b, theta.reshape(d_l, d * d, d_r).conj())
    grad_g = -4.0 * e
    minors = gaussian_minor_tensor(u_loc.conj().T)
    grad_m = np.einsum("xy,xyij->ij", grad_g, minors.conj())
    gamma = grad_m.conj().T
    if symmetry == "spin_summed":
        gamma = np.einsum("qsks->qk", gamma.reshape(2, p, 2, p))

    grad = -(gamma @ z2.conj().T + gamma.conj().T @ z1 + sel @ z2 @ gamma.conj().T @ z1)
    return value, grad


def grad_f4(theta: np.ndarray, x, p: int = 1, symmetry: str = "none") -> np.ndarray:
    x = x.x if isinstance(x, GrassmannPoint) else x
    return f4_value_and_gradient(theta, x, p, symmetry)[1]


@dataclass
class LocalOptResult:
    unitary: np.ndarray
    f_before: float
    f_after: float
    accepted: bool
    evaluations: int
    failed: bool = False
    trace: list = field(default_factory=list, repr=False)
    rank: int = 0
    eps_before: float = 0.0
    eps_after: float = 0.0


class _Objective:
    """Cost of theta rotated by the reflection of a subspace, with an evaluation trace"""

    def __init__(self, theta: np.ndarray, config: LocalOptConfig, p: int):
        self.theta = theta
        self.config = config
        self.p = p
        self.cost = COSTS[config.cost]
        self.trace: list = []

    def unitary(self, x: np.ndarray) -> np.ndarray:
        xs, _ = stable_representative(x)
        return expand_local(householder_unitary(xs), self.p, self.config.symmetry)

    def __call__(self, x: np.ndarray) -> float:
        value = self.cost(block_spectrum(rotate_block(self.theta, self.unitary(x))))
        self.trace.append(value)
        return value

    def value_and_gradient(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        xs, w = stable_representative(x)
        value, grad = f4_value_and_gradient(self.theta, xs, self.p, self.config.symmetry)
        self.trace.append(value)
        return value, grad @ w.conj().T


def chart(base: np.ndarray, z: np.ndarray) -> np.ndarray:
    """X = (X0 + X0_perp Z)(1 + Z^dag Z)^(-1/2), Z given as stacked real and imaginary parts"""
    a, b = base.shape
    perp = scipy.linalg.null_space(base.conj().T)
    half = (a - b) * b
    zc = (z[:half] + 1j * z[half:]).reshape(a - b, b)
    evals, evecs = np.linalg.eigh(np.eye(b) + zc.conj().T @ zc)
    inv_sqrt = evecs @ np.diag(evals**-0.5) @ evecs.conj().T
    return (base + perp @ zc) @ inv_sqrt


def _nelder_mead(objective: _Objective, b: int, config: LocalOptConfig, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    base = selector(b)
    n_params = 2 * b * b
    best_x, best_f = base, objective(base)
    budget = config.max_evals
    for attempt in range(config.restarts + 1):
        if budget <= n_params + 1:
            break
        if attempt == 0:
            directions = np.eye(n_params)
        else:
            directions, _ = np.linalg.qr(rng.normal(size=(n_params, n_params)))
        simplex = np.vstack([np.zeros(n_params), config.simplex_radius * directions])
        center = best_x
        result = scipy.optimize.minimize(
            lambda z: objective(chart(center, z)),
            np.zeros(n_params),
            method="Nelder-Mead",
            options={"initial_simplex": simplex, "maxfev": budget, "xatol": 1e-10, "fatol": 1e-14},
        )
        budget -= result.nfev
        if result.fun < best_f - config.delta_accept:
            best_x, best_f = chart(center, result.x), float(result.fun)
        elif attempt > 0:
            break
    return best_x, best_f


def _generator(z: np.ndarray, b: int) -> np.ndarray:
    """Anti-Hermitian K = [[0, -Z^dag], [Z, 0]] from stacked real and imaginary parts of Z"""
    half = b * b
    zc = (z[:half] + 1j * z[half:]).reshape(b, b)
    zero = np.zeros((b, b), dtype=complex)
    return np.block([[zero, -zc.conj().T], [zc, zero]])


def _conjugate_gradient(objective: _Objective, b: int, config: LocalOptConfig) -> tuple[np.ndarray, float]:
    """
    Polak-Ribiere CG in the exponential chart X(z) = Q exp(K(z)) P

    Every iterate is an exact isometry. The chart is re-centred on the last
    iterate while the budget lasts. The chart gradient is the f4 gradient
    pulled back through the Frechet derivative of expm.
    """
    n_params = 2 * b * b
    sel = selector(b)
    directions = [_generator(e, b) for e in np.eye(n_params)]
    base = np.eye(2 * b, dtype=complex)

    def value_and_jac(z: np.ndarray) -> tuple[float, np.ndarray]:
        k = _generator(z, b)
        value, grad = objective.value_and_gradient(base @ scipy.linalg.expm(k) @ sel)
        jac = np.empty(n_params)
        for j, dk in enumerate(directions):
            de = scipy.linalg.expm_frechet(k, dk, compute_expm=False)
            jac[j] = np.real(np.vdot(grad, base @ de @ sel))
        return value, jac

    def stop_on_budget(_z: np.ndarray) -> None:
        if len(objective.trace) >= config.max_evals:
            raise StopIteration

    f = objective.value_and_gradient(base @ sel)[0]
    while len(objective.trace) < config.max_evals:
        result = scipy.optimize.minimize(
            value_and_jac,
            np.zeros(n_params),
            jac=True,
            method="CG",
            callback=stop_on_budget,
            options={"gtol": config.gtol, "maxiter": config.max_evals},
        )
        if result.fun > f:
            break
        base = base @ scipy.linalg.expm(_generator(result.x, b))
        improvement, f = f - float(result.fun), float(result.fun)
        if result.success or improvement < 1e-15 or result.nit == 0:
            break
    return base @ sel, f


def discarded_weight(sigma: np.ndarray, rank: int) -> float:
    return float(np.sum(sigma[rank:] ** 2))


def optimize_local_basis(
    block,
    config: Optional[LocalOptConfig] = None,
    p: int = 1,
    rng: Optional[np.random.Generator] = None,
    policy: Optional[TruncationPolicy] = None,
) -> LocalOptResult:
    """
    Minimise the cut cost over window rotations

    Returns the identity (and f_after = f_before) unless the best rotation
    improves the cost by more than delta_accept without raising the weight
    discarded at the rank `policy` keeps for the unrotated block. Optimiser
    failures are logged and treated as rejection.
    """
    log = logger.bind(task="optimize_local_basis")
    config = config or LocalOptConfig()
    policy = policy or TruncationPolicy()
    rng = rng or np.random.default_rng(0)
    theta = block.data if isinstance(block, BlockedTensor) else np.asarray(block)
    b = 1 if config.symmetry == "spin_summed" else p
    identity = np.eye(2 * p, dtype=complex)

    objective = _Objective(theta, config, p)
    sigma_before = block_spectrum(theta)
    f_before = objective.cost(sigma_before)
    rank, eps_before = kept_rank(sigma_before, policy)

    def rejected(failed: bool = False, eps_after: Optional[float] = None) -> LocalOptResult:
        return LocalOptResult(
            identity, f_before, f_before, False, len(objective.trace), failed, objective.trace,
            rank, eps_before, eps_before if eps_after is None else eps_after,
        )

    try:
        if config.method == "nelder_mead":
            x, f_after = _nelder_mead(objective, b, config, rng)
        else:
            x, f_after = _conjugate_gradient(objective, b, config)
        unitary = objective.unitary(x)
    except (ParametrisationError, np.linalg.LinAlgError, ValueError) as e:
        log.warning("local_optimisation_failed", error=str(e))
        return rejected(failed=True)

    # evaluate the returned unitary itself
    sigma_after = block_spectrum(rotate_block(theta, unitary))
    f_after = objective.cost(sigma_after)
    eps_after = discarded_weight(sigma_after, rank)
    if f_before - f_after <= config.delta_accept:
        return rejected(eps_after=eps_after)
    if eps_after > eps_before + EPS_T_SLACK * max(1.0, eps_before):
        log.debug("rotation_raises_truncation", rank=rank, eps_before=eps_before, eps_after=eps_after)
        return rejected(eps_after=eps_after)
    return LocalOptResult(
        unitary, f_before, f_after, True, len(objective.trace), False, objective.trace, rank, eps_before, eps_after
    )


class LocalBasisOptimizer:
    """
    Sweep hook: optimise the window of each step and report accepted rotations

    Keeps one record per call in `trace` for the run report.
    """

    def __init__(self, config: Optional[LocalOptConfig] = None, policy: Optional[TruncationPolicy] = None):
        self.config = config or LocalOptConfig()
        self.policy = policy or TruncationPolicy()
        self.trace: list = []

    def __call__(
        self, block: BlockedTensor, m: int, op: SecondQuantizedOperator, rng: np.random.Generator
    ) -> Optional[np.ndarray]:
        p = op.mode_space.species_per_orbital
        result = optimize_local_basis(block, self.config, p=p, rng=rng, policy=self.policy)
        self.trace.append(
            {
                "site": m,
                "f_before": result.f_before,
                "f_after": result.f_after,
                "accepted": result.accepted,
                "evaluations": result.evaluations,
                "failed": result.failed,
                "rank": result.rank,
                "eps_before": result.eps_before,
                "eps_after": result.eps_after,
            }
        )
        if result.accepted:
            logger.debug("rotation_accepted", site=m, f_before=result.f_before, f_after=result.f_after)
            return result.unitary
        return None
