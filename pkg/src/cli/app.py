"""
Command-line surface.

Every command builds a RunConfig (config file first, flags on top) and hands
it to a RunService whose solver and validator come from the provider
functions below.
"""

import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import replace
from pathlib import Path
from typing import Annotated, Any, Dict, List, Optional

import typer
from pydantic import ValidationError

from src.cli.reproduce import ReproduceSettings, quick_settings, render, run_suite
from src.cli.run_service import RunService
from src.core.constants import EXIT_BAD_CONFIG, LOG_FORMAT
from src.core.exceptions import ConfigError
from src.interfaces.solver_interface import ISolver, IValidationService
from src.models.models import DensitySource, EquationForm, RunConfig, RunMode
from src.services.continuation_service import ContinuationSolver
from src.services.validation_service import ValidationService

logger = logging.getLogger(__name__)

app = typer.Typer(
    name="capsolve",
    help="Capillary L_p Hessian quotient solver on the spherical cap.",
    no_args_is_help=True,
    add_completion=False,
)


def get_solver(config: RunConfig) -> ISolver:
    """Provides the continuation solver configured for a run."""
    return ContinuationSolver(newton_tol=config.newton_tol, checkpoint_dir=config.out)


def get_validation_service(solver: ISolver) -> IValidationService:
    """Provides the verification suite sharing the run's solver."""
    return ValidationService(solver)


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, force=True)


def read_config_file(path: Path) -> Dict[str, Any]:
    """TOML (.toml) or JSON config file as a dict."""
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix.lower() == ".toml":
            with path.open("rb") as handle:
                data = tomllib.load(handle)
        else:
            data = json.loads(path.read_text())
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if "f" in data and isinstance(data["f"], str):
        data["f"] = DensitySource.parse(data["f"]).model_dump(exclude_none=True)
    return data


def build_config(mode: RunMode, config_path: Optional[Path], overrides: Dict[str, Any]) -> RunConfig:
    """File values first, then every flag that was actually given."""
    data: Dict[str, Any] = read_config_file(config_path) if config_path else {}
    data["mode"] = mode
    for key, value in overrides.items():
        if value is None:
            continue
        data[key] = DensitySource.parse(value) if key == "f" else value
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def execute(mode: RunMode, config_path: Optional[Path], verbose: bool, **overrides: Any) -> None:
    configure_logging(verbose)
    try:
        config = build_config(mode, config_path, overrides)
    except ConfigError as exc:
        logger.critical("Invalid configuration: %s", exc)
        raise typer.Exit(code=EXIT_BAD_CONFIG)
    solver = get_solver(config)
    outcome = RunService(solver, get_validation_service(solver)).run(config)
    if outcome.report is not None and outcome.report.tau is not None:
        typer.echo(f"tau = {outcome.report.tau:.12g}")
    raise typer.Exit(code=outcome.exit_code)


ConfigOpt = Annotated[Optional[Path], typer.Option("--config", help="TOML or JSON config file (schema 1).")]
KOpt = Annotated[Optional[int], typer.Option("--k", help="Index k of sigma_k.")]
LOpt = Annotated[Optional[int], typer.Option("--l", help="Index l of sigma_l.")]
POpt = Annotated[Optional[float], typer.Option("--p", help="L_p exponent.")]
ThetaOpt = Annotated[Optional[float], typer.Option("--theta", help="Contact angle in (0, pi/2).")]
NsOpt = Annotated[Optional[int], typer.Option("--ns", help="Radial nodes.")]
NphiOpt = Annotated[Optional[int], typer.Option("--nphi", help="Angular nodes (even).")]
FOpt = Annotated[Optional[str], typer.Option("--f", help="Builtin name, CSV path or expression in s, phi, ell.")]
OutOpt = Annotated[Optional[Path], typer.Option("--out", help="Output directory.")]
TolOpt = Annotated[Optional[float], typer.Option("--tol", help="Newton residual tolerance.")]
FormOpt = Annotated[Optional[EquationForm], typer.Option("--form", help="Residual form driven to zero.")]
EvenOpt = Annotated[Optional[bool], typer.Option("--even/--no-even", help="Capillary-even solution space.")]
ExpOpt = Annotated[
    Optional[bool], typer.Option("--experimental-angle/--proved-angle", help="Allow theta outside the proved range.")
]
ResumeOpt = Annotated[Optional[Path], typer.Option("--resume", help="Checkpoint file or directory.")]
UniqOpt = Annotated[Optional[bool], typer.Option("--uniqueness/--no-uniqueness", help="Run the multi-start check.")]
VerboseOpt = Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging.")]


@app.command()
def run(
    mode: Annotated[RunMode, typer.Option("--mode", help="What to run.")] = RunMode.SOLVE,
    config: ConfigOpt = None, k: KOpt = None, l: LOpt = None, p: POpt = None, theta: ThetaOpt = None,
    ns: NsOpt = None, nphi: NphiOpt = None, f: FOpt = None, out: OutOpt = None, tol: TolOpt = None,
    form: FormOpt = None, even: EvenOpt = None, experimental_angle: ExpOpt = None,
    resume: ResumeOpt = None, uniqueness: UniqOpt = None, verbose: VerboseOpt = False,
):
    """Run any mode; the dedicated commands below are shortcuts."""
    if mode == RunMode.REPRODUCE:
        reproduce(ns=ns, nphi=nphi, out=out, verbose=verbose)
    execute(
        mode, config, verbose, k=k, l=l, p=p, theta=theta, ns=ns, nphi=nphi, f=f, out=out,
        newton_tol=tol, form=form, even=even, experimental_angle=experimental_angle,
        resume=resume, uniqueness=uniqueness,
    )


@app.command()
def solve(
    config: ConfigOpt = None, k: KOpt = None, l: LOpt = None, p: POpt = None, theta: ThetaOpt = None,
    ns: NsOpt = None, nphi: NphiOpt = None, f: FOpt = None, out: OutOpt = None, tol: TolOpt = None,
    form: FormOpt = None, even: EvenOpt = None, experimental_angle: ExpOpt = None,
    resume: ResumeOpt = None, uniqueness: UniqOpt = None, verbose: VerboseOpt = False,
):
    """Solve sigma_k/sigma_l(W) = f h^(p-1) by continuation from h = l."""
    execute(
        RunMode.SOLVE, config, verbose, k=k, l=l, p=p, theta=theta, ns=ns, nphi=nphi, f=f, out=out,
        newton_tol=tol, form=form, even=even, experimental_angle=experimental_angle,
        resume=resume, uniqueness=uniqueness,
    )


@app.command()
def eigenvalue(
    config: ConfigOpt = None, k: KOpt = None, l: LOpt = None, theta: ThetaOpt = None,
    ns: NsOpt = None, nphi: NphiOpt = None, f: FOpt = None, out: OutOpt = None,
    form: FormOpt = None, verbose: VerboseOpt = False,
):
    """Solve for (tau, h) with p = k - l + 1."""
    execute(
        RunMode.EIGENVALUE, config, verbose, k=k, l=l, theta=theta, ns=ns, nphi=nphi, f=f, out=out,
        form=form,
    )


@app.command("christoffel-minkowski")
def christoffel_minkowski(
    config: ConfigOpt = None, k: KOpt = None, p: POpt = None, theta: ThetaOpt = None,
    ns: NsOpt = None, nphi: NphiOpt = None, f: FOpt = None, out: OutOpt = None, tol: TolOpt = None,
    even: EvenOpt = None, experimental_angle: ExpOpt = None, verbose: VerboseOpt = False,
):
    """Prescribe the capillary k-th p-area measure: H_{n-k}(W) = f h^(p-1)."""
    execute(
        RunMode.CHRISTOFFEL_MINKOWSKI, config, verbose, k=k, p=p, theta=theta, ns=ns, nphi=nphi, f=f,
        out=out, newton_tol=tol, even=even, experimental_angle=experimental_angle,
    )


@app.command()
def validate(
    config: ConfigOpt = None, k: KOpt = None, l: LOpt = None, p: POpt = None, theta: ThetaOpt = None,
    ns: NsOpt = None, nphi: NphiOpt = None, f: FOpt = None, out: OutOpt = None,
    even: EvenOpt = None, experimental_angle: ExpOpt = None, verbose: VerboseOpt = False,
):
    """Check the hypotheses on the density without solving."""
    execute(
        RunMode.VALIDATE_ONLY, config, verbose, k=k, l=l, p=p, theta=theta, ns=ns, nphi=nphi, f=f,
        out=out, even=even, experimental_angle=experimental_angle,
    )


@app.command()
def reproduce(
    ns: NsOpt = None,
    nphi: NphiOpt = None,
    out: OutOpt = None,
    seed: Annotated[int, typer.Option("--seed")] = 0,
    quick: Annotated[bool, typer.Option("--quick", help="Coarse grid and fewer samples.")] = False,
    criterion: Annotated[Optional[List[str]], typer.Option("--criterion", help="Run only these.")] = None,
    verbose: VerboseOpt = False,
):
    """Run the acceptance suite and print a pass/fail table."""
    configure_logging(verbose)
    settings = ReproduceSettings(seed=seed)
    if quick:
        settings = quick_settings(settings)
    overrides = {"ns": ns, "nphi": nphi, "out": out}
    settings = replace(settings, **{key: v for key, v in overrides.items() if v is not None})
    raise typer.Exit(code=render(run_suite(settings, criterion)))
