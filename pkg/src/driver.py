"""
Run orchestration and command line

Macro-iterations of plain two-site sweeps, basis-optimising sweeps and an
optional mutual-information reordering. Every finished sweep writes a
checkpoint (state, operator in the working basis, provenance) so a run can be
resumed; step records go to JSON lines, bond profiles to CSV.

    python src/driver.py run --config run.toml
    python src/driver.py ed --n-sites 2 --onsite 4
    python src/driver.py mi runs/latest
    python src/driver.py rotate op.npz unitary.npz out.npz
    python src/driver.py hf --config run.toml --output hf.npz
"""

import argparse
import json
import logging
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
import psutil
import scipy
import structlog

from config import ModelSpec, RunConfig, settings
from dmrg import EnvironmentCache, StepRecord, SweepReport, sweep
from fock import ModeSpace, PreconditionError, check_unitary
from modeopt import LocalBasisOptimizer
from mps import SymmetricMPS, load_mps, mutual_information, product_state, save_mps
from operators import (
    SecondQuantizedOperator,
    build_hubbard,
    dump_operator,
    load_operator,
    one_body_basis,
    read_fcidump,
    rotate_coefficients,
    species_restricted,
)
from oracle import exact_ground_state, hartree_fock_basis
from ordering import apply_permutation, fiedler_order

# Logging setup
structlog.configure(
    processors=[
        structlog.processors.add_log_level,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.dev.ConsoleRenderer(),
    ]
)
logger = structlog.get_logger()

PROVENANCE_VERSION = 1
INITIAL_OPERATOR_NAME = "initial_operator.npz"
OPERATOR_NAME = "operator.npz"


class RunAbortedError(RuntimeError):
    """A run stopped on an error after writing its checkpoint"""


@dataclass
class RunProvenance:
    accumulated_unitary: np.ndarray = field(repr=False)
    mode_order: list
    permutations: list = field(default_factory=list)
    sweeps: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    versions: dict = field(default_factory=dict)
    macro_iteration: int = 0
    sweep_in_macro: int = 0
    global_sweep: int = 0
    completed: bool = False

    def to_json(self) -> dict:
        out = asdict(self)
        u = self.accumulated_unitary
        out["accumulated_unitary"] = {"real": u.real.tolist(), "imag": u.imag.tolist()}
        out["format_version"] = PROVENANCE_VERSION
        return out

    @classmethod
    def from_json(cls, data: dict) -> "RunProvenance":
        data = dict(data)
        version = data.pop("format_version", PROVENANCE_VERSION)
        if version != PROVENANCE_VERSION:
            raise ValueError(f"unsupported provenance version {version}")
        u = data.pop("accumulated_unitary")
        return cls(accumulated_unitary=np.array(u["real"]) + 1j * np.array(u["imag"]), **data)


@dataclass
class RunResult:
    psi: SymmetricMPS
    operator: SecondQuantizedOperator
    initial_operator: SecondQuantizedOperator
    provenance: RunProvenance
    report: SweepReport

    @property
    def energy(self) -> float:
        return self.report.final_energy


def _versions() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def _random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))[None, :]


def build_model(spec: ModelSpec) -> SecondQuantizedOperator:
    op = build_hubbard(spec.n_sites, spec.species, spec.hopping, spec.onsite, spec.decay, spec.boundary)
    if spec.scramble_seed is not None:
        u = species_restricted(_random_unitary(spec.n_sites, np.random.default_rng(spec.scramble_seed)), spec.species)
        op = rotate_coefficients(op, u).replace(mode_space=ModeSpace.identity(spec.n_sites, spec.species))
    return op


def load_source(config: RunConfig) -> SecondQuantizedOperator:
    """Operator in the initial physical basis"""
    if config.input == "fcidump":
        return read_fcidump(config.fcidump)
    return build_model(config.model)


def save_unitary(path: Path, unitary: np.ndarray) -> None:
    np.savez(path, unitary=np.asarray(unitary, dtype=complex))


def load_unitary(path: Path) -> np.ndarray:
    with np.load(path) as data:
        return check_unitary(data["unitary"], name=str(path))


def resolve_particles(config: RunConfig, op: SecondQuantizedOperator) -> tuple:
    ms = op.mode_space
    if config.n_particles is not None:
        counts = tuple(config.n_particles)
    elif op.n_particles is not None:
        counts = tuple(op.n_particles)
    else:
        counts = (ms.n_orbitals // 2,) * ms.species_per_orbital
    if len(counts) != ms.species_per_orbital or any(not 0 <= c <= ms.n_orbitals for c in counts):
        raise PreconditionError(f"invalid particle numbers {counts}")
    return counts


def initial_basis(config: RunConfig, op: SecondQuantizedOperator, counts: tuple) -> np.ndarray:
    if config.initial_basis == "one_body":
        return one_body_basis(op)[0]
    if config.initial_basis == "hartree_fock":
        return hartree_fock_basis(op, counts).unitary
    if config.initial_basis == "unitary_file":
        return load_unitary(config.unitary_file)
    return np.eye(op.n_modes, dtype=complex)


def initial_occupations(op: SecondQuantizedOperator, counts: tuple, aufbau: bool) -> np.ndarray:
    """
    Product-state occupations per species: the first sites for an energy-ordered
    basis, otherwise the lowest diagonal one-body energies (evenly spread when all equal)
    """
    n, p = op.mode_space.n_orbitals, op.mode_space.species_per_orbital
    occ = np.zeros((n, p), dtype=int)
    for s, count in enumerate(counts):
        if aufbau:
            sites = np.arange(count)
        else:
            diag = np.real(np.diagonal(op.one_body[s::p, s::p]))
            if np.ptp(diag) < 1e-12:
                sites = (np.arange(count) * n) // max(count, 1)
            else:
                sites = np.argsort(diag, kind="stable")[:count]
        occ[sites, s] = 1
    return occ


def replay_operator(initial: SecondQuantizedOperator, provenance: RunProvenance) -> SecondQuantizedOperator:
    """Initial coefficients transformed by the recorded accumulated unitary"""
    return rotate_coefficients(initial, provenance.accumulated_unitary)


def _charge_mode(config: RunConfig, p: int) -> str:
    unrestricted = config.schedule.opt_sweeps > 0 and config.local_opt.symmetry == "none"
    return "total" if unrestricted and p > 1 else "species"


def _write_checkpoint(out: Path, psi: SymmetricMPS, op: SecondQuantizedOperator, provenance: RunProvenance) -> None:
    save_mps(out / settings.CHECKPOINT_NAME, psi, op.mode_space)
    dump_operator(out / OPERATOR_NAME, op)
    provenance.accumulated_unitary = op.mode_space.accumulated_unitary
    provenance.mode_order = op.mode_space.mode_order.tolist()
    with open(out / settings.PROVENANCE_NAME, "w") as f:
        json.dump(provenance.to_json(), f, indent=2)


def _write_reports(out: Path, report: SweepReport, profiles: list) -> None:
    frame = report.to_frame()
    if not frame.empty:
        frame.to_json(out / settings.REPORT_NAME, orient="records", lines=True, double_precision=15)
    if profiles:
        pd.DataFrame(profiles).to_csv(out / settings.PROFILE_NAME, index=False)


def _bond_profile(psi: SymmetricMPS, macro: int, global_sweep: int) -> dict:
    row = {"iteration": macro, "sweep": global_sweep}
    for m, (dim, eps) in enumerate(zip(psi.bond_dimensions(), psi.truncation_errors)):
        row[f"D_{m}"] = dim
        row[f"eps_{m}"] = eps
    return row


def run_ground_state(config: RunConfig, restart: Optional[Path] = None) -> RunResult:
    """
    Execute the schedule: per macro-iteration plain sweeps, then sweeps with
    the local basis hook, then (between macro-iterations) a reordering by
    mutual information. A scheduled sweep is a right pass followed by a left pass.
    """
    log = logger.bind(task="run_ground_state", seed=config.seed)
    out = Path(restart) if restart is not None else Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    schedule = config.schedule
    policy = config.truncation

    if restart is not None:
        initial = load_operator(out / INITIAL_OPERATOR_NAME)
        op = load_operator(out / OPERATOR_NAME)
        psi, _ = load_mps(out / settings.CHECKPOINT_NAME)
        with open(out / settings.PROVENANCE_NAME) as f:
            provenance = RunProvenance.from_json(json.load(f))
        previous = pd.read_json(out / settings.REPORT_NAME, lines=True) if (out / settings.REPORT_NAME).exists() else None
        log.info("run_resumed", sweep=provenance.global_sweep, macro=provenance.macro_iteration)
    else:
        initial = load_source(config)
        counts = resolve_particles(config, initial)
        u0 = initial_basis(config, initial, counts)
        op = rotate_coefficients(initial, u0)
        occ = initial_occupations(op, counts, aufbau=config.initial_basis in ("one_body", "hartree_fock"))
        psi = product_state(occ, _charge_mode(config, op.mode_space.species_per_orbital))
        provenance = RunProvenance(
            accumulated_unitary=op.mode_space.accumulated_unitary,
            mode_order=op.mode_space.mode_order.tolist(),
            config=config.model_dump(mode="json"),
            versions=_versions(),
        )
        dump_operator(out / INITIAL_OPERATOR_NAME, initial)
        previous = None
        log.info("run_started", n_sites=psi.n_sites, particles=list(counts), basis=config.initial_basis)

    report = SweepReport()
    if previous is not None and not previous.empty:
        for row in previous.to_dict(orient="records"):
            report.steps.append(
                StepRecord(
                    iteration=int(row["iteration"]),
                    sweep=int(row["sweep"]),
                    site=int(row["site"]),
                    direction="",
                    energy=float(row["energy"]),
                    bond_dimension=int(row["D"]),
                    truncation_error=float(row["eps_t"]),
                    accepted_rotation=bool(row["accepted_rotation"]),
                )
            )
    profile_path = out / settings.PROFILE_NAME
    profiles: list = pd.read_csv(profile_path).to_dict(orient="records") if restart is not None and profile_path.exists() else []
    cache = EnvironmentCache()
    optimizer = LocalBasisOptimizer(config.local_opt, config.truncation)
    sweeps_per_macro = schedule.plain_sweeps + schedule.opt_sweeps
    process = psutil.Process()

    if restart is None:
        _write_checkpoint(out, psi, op, provenance)
    checkpointed = len(report.steps)

    try:
        cache.build(psi, op)
        for macro in range(provenance.macro_iteration, schedule.macro_iterations):
            first = provenance.sweep_in_macro if macro == provenance.macro_iteration else 0
            for s in range(first, sweeps_per_macro):
                started = time.perf_counter()
                hook = optimizer if s >= schedule.plain_sweeps else None
                for direction in ("right", "left"):
                    psi, op, part = sweep(
                        psi,
                        op,
                        cache,
                        policy,
                        direction,
                        hook=hook,
                        solver=config.solver,
                        iteration=macro,
                        sweep_index=provenance.global_sweep,
                        seed=config.seed,
                    )
                    report.extend(part)

                energies = part.energies
                provenance.sweeps.append(
                    {
                        "iteration": macro,
                        "sweep": provenance.global_sweep,
                        "energy": float(energies[-1]),
                        "max_D": int(max(psi.bond_dimensions(), default=1)),
                        "max_eps_t": float(max(psi.truncation_errors, default=0.0)),
                        "optimising": hook is not None,
                    }
                )
                profiles.append(_bond_profile(psi, macro, provenance.global_sweep))
                provenance.global_sweep += 1
                provenance.macro_iteration = macro
                provenance.sweep_in_macro = s + 1
                _write_checkpoint(out, psi, op, provenance)
                _write_reports(out, report, profiles)
                checkpointed = len(report.steps)
                log.info(
                    "sweep_done",
                    iteration=macro,
                    sweep=provenance.global_sweep - 1,
                    energy=float(energies[-1]),
                    max_bond=provenance.sweeps[-1]["max_D"],
                    wall_time=round(time.perf_counter() - started, 3),
                    rss_mb=round(process.memory_info().rss / 2**20, 1),
                )

            if schedule.reorder and macro < schedule.macro_iterations - 1:
                perm = fiedler_order(mutual_information(psi))
                psi, op, eps = apply_permutation(psi, op, perm, policy, cache)
                provenance.permutations.append({"iteration": macro, "order": list(perm.order), "eps_t": float(eps)})
                cache.build(psi, op)
            provenance.macro_iteration = macro + 1
            provenance.sweep_in_macro = 0
            _write_checkpoint(out, psi, op, provenance)
    except Exception as e:
        # psi is updated in place, only the last written checkpoint is consistent
        log.error("run_failed", error=str(e), sweep=provenance.global_sweep)
        del report.steps[checkpointed:]
        _write_reports(out, report, profiles)
        raise RunAbortedError(f"run aborted: {e}") from e

    provenance.completed = True
    _write_checkpoint(out, psi, op, provenance)
    _write_reports(out, report, profiles)
    if report.steps:
        log.info("run_finished", energy=report.final_energy, sweeps=provenance.global_sweep)
    return RunResult(psi, op, initial, provenance, report)


# -----------------------------------------------------------------------------
# Command line
# -----------------------------------------------------------------------------


def _model_overrides(args) -> dict:
    model = {}
    for key in ("n_sites", "species", "hopping", "onsite", "decay", "boundary", "scramble_seed"):
        value = getattr(args, key, None)
        if value is not None:
            model[key] = value
    return model


def _config_from_args(args) -> RunConfig:
    overrides: dict = {}
    model = _model_overrides(args)
    if model:
        overrides["model"] = model
    if getattr(args, "fcidump", None) is not None:
        overrides["input"] = "fcidump"
        overrides["fcidump"] = args.fcidump
    if getattr(args, "n_particles", None) is not None:
        overrides["n_particles"] = tuple(args.n_particles)
    truncation = {k: getattr(args, k) for k in ("eps_trc", "d_min", "d_max") if getattr(args, k, None) is not None}
    if truncation:
        overrides["truncation"] = truncation
    schedule = {
        k: getattr(args, k) for k in ("plain_sweeps", "opt_sweeps", "macro_iterations") if getattr(args, k, None) is not None
    }
    if getattr(args, "no_reorder", False):
        schedule["reorder"] = False
    if schedule:
        overrides["schedule"] = schedule
    for key in ("seed", "output_dir", "initial_basis", "unitary_file"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return RunConfig.load(args.config or settings.DEFAULT_CONFIG, **overrides)


def _add_source_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="TOML run file")
    parser.add_argument("--fcidump", type=Path)
    parser.add_argument("--n-sites", type=int)
    parser.add_argument("--species", type=int)
    parser.add_argument("--hopping", type=float)
    parser.add_argument("--onsite", type=float)
    parser.add_argument("--decay", type=float)
    parser.add_argument("--boundary", choices=["open", "periodic"])
    parser.add_argument("--scramble-seed", type=int)
    parser.add_argument("--n-particles", type=int, nargs="+")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orbopt", description="Two-site DMRG with adaptive local mode transformations")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="full schedule")
    _add_source_arguments(run)
    run.add_argument("--output-dir", type=Path)
    run.add_argument("--seed", type=int)
    run.add_argument("--eps-trc", type=float)
    run.add_argument("--d-min", type=int)
    run.add_argument("--d-max", type=int)
    run.add_argument("--plain-sweeps", type=int)
    run.add_argument("--opt-sweeps", type=int)
    run.add_argument("--macro-iterations", type=int)
    run.add_argument("--no-reorder", action="store_true")
    run.add_argument("--initial-basis", choices=["identity", "one_body", "hartree_fock", "unitary_file"])
    run.add_argument("--unitary-file", type=Path)
    run.add_argument("--restart", type=Path, help="run directory to resume")

    ed = sub.add_parser("ed", help="exact ground state energy")
    _add_source_arguments(ed)
    ed.add_argument("--operator", type=Path, help="operator container instead of a model")

    mi = sub.add_parser("mi", help="mutual information of a checkpoint")
    mi.add_argument("checkpoint", type=Path, help="checkpoint file or run directory")
    mi.add_argument("--output", type=Path)

    rotate = sub.add_parser("rotate", help="apply a unitary file to an operator file")
    rotate.add_argument("operator", type=Path)
    rotate.add_argument("unitary", type=Path)
    rotate.add_argument("output", type=Path)

    hf = sub.add_parser("hf", help="restricted Hartree-Fock reference basis")
    _add_source_arguments(hf)
    hf.add_argument("--output", type=Path, default=Path("hf_unitary.npz"))

    return parser


def _restart_config(run_dir: Path) -> RunConfig:
    """Configuration recorded by the run being resumed"""
    with open(Path(run_dir) / settings.PROVENANCE_NAME) as f:
        recorded = json.load(f)["config"]
    return RunConfig.load(**recorded)


def _cmd_run(args) -> int:
    if args.restart is not None and args.config is None:
        config = _restart_config(args.restart)
    else:
        config = _config_from_args(args)
    result = run_ground_state(config, restart=args.restart)
    print(f"E = {result.energy:.12f}")
    return 0


def _cmd_ed(args) -> int:
    config = _config_from_args(args)
    op = load_operator(args.operator) if args.operator else load_source(config)
    counts = resolve_particles(config, op)
    e0, _ = exact_ground_state(op, counts)
    print(f"E0 = {e0:.12f}")
    return 0


def _cmd_mi(args) -> int:
    path = args.checkpoint / settings.CHECKPOINT_NAME if args.checkpoint.is_dir() else args.checkpoint
    psi, _ = load_mps(path)
    info = mutual_information(psi)
    output = args.output or path.with_name("mutual_information.txt")
    np.savetxt(output, info)
    print(np.array2string(info, precision=6))
    return 0


def _cmd_rotate(args) -> int:
    op = load_operator(args.operator)
    dump_operator(args.output, rotate_coefficients(op, load_unitary(args.unitary)))
    return 0


def _cmd_hf(args) -> int:
    config = _config_from_args(args)
    op = load_source(config)
    result = hartree_fock_basis(op, resolve_particles(config, op))
    save_unitary(args.output, result.unitary)
    print(f"E_HF = {result.energy:.12f}")
    return 0


COMMANDS = {"run": _cmd_run, "ed": _cmd_ed, "mi": _cmd_mi, "rotate": _cmd_rotate, "hf": _cmd_hf}


def cli(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    structlog.configure(
        wrapper_class=structlog.make_filtering_bound_logger(logging.getLevelNamesMapping()[settings.LOG_LEVEL])
    )
    log = logger.bind(task="cli", command=args.command)
    try:
        return COMMANDS[args.command](args)
    except (RunAbortedError, PreconditionError, FileNotFoundError, ValueError) as e:
        log.error("command_failed", error=str(e))
        return 1


if __name__ == "__main__":
    sys.exit(cli())
