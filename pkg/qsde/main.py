import json
import logging
import sys
from pathlib import Path

import click
import numpy as np
from pydantic import ValidationError

from . import __version__, settings
from .dilation import dilation_identity_residuals, kolmogorov_dilation, verify_dilation
from .errors import CCPFailure, DilationError, ModelError, NumericalAbort
from .germ import check_ccp
from .ito_algebra import ItoAlgebraBasis, check_closure, multiplication_table, quantum_basis
from .schemas import RunConfig
from .semigroup import evolve_heisenberg, evolve_schrodinger, picard_gaps, picard_minimal
from .unraveling import ensemble as run_ensemble
from .unraveling import flow_value, simulate
from .utils import output_utils
from .utils.rng_utils import TrajectoryStream, channel_generator

EXIT_OK, EXIT_MALFORMED, EXIT_NOT_CCP, EXIT_NUMERICAL = 0, 2, 3, 4


def load_config(path: str) -> RunConfig:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, list):
        data = {"elements": data}
    return RunConfig.model_validate(data)


def _require_model(cfg: RunConfig, kind: str | None = None):
    if cfg.model is None:
        raise ModelError("config has no model section")
    if kind is not None and cfg.model.type != kind:
        raise ModelError(f"this command needs a {kind} model, got {cfg.model.type}")
    return cfg.model


def _with_simulation(cfg: RunConfig, **updates) -> RunConfig:
    updates = {k: v for k, v in updates.items() if v is not None}
    if not updates:
        return cfg
    sim = cfg.simulation.model_validate({**cfg.simulation.model_dump(), **updates})
    return cfg.model_copy(update={"simulation": sim})


def _emit(cfg: RunConfig, header, rows, data: dict, out: str | None, fmt: str | None, **extra) -> None:
    meta = output_utils.metadata(cfg.model_dump(mode="json"), cfg.simulation.seed, __version__, **extra)
    fmt = fmt or cfg.output.format
    if fmt == "json":
        text = output_utils.render_json({"columns": list(header), "rows": rows, **data}, meta)
    else:
        text = output_utils.render_csv(header, rows, meta)
    target = out or cfg.output.path
    if target:
        output_utils.atomic_write(target, text)
    else:
        click.echo(text, nl=False)


def _observable_columns(names) -> list[str]:
    cols = []
    for name in names:
        cols += [f"{name}_re", f"{name}_im"]
    return cols


config_option = click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False),
                             help="JSON run configuration.")
out_option = click.option("--out", default=None, type=click.Path(dir_okay=False), help="Output file (default: stdout).")
format_option = click.option("--format", "fmt", default=None, type=click.Choice(["csv", "json"]))


@click.group()
@click.option("--log-level", default=None, help="Logging level (default: QSDE_LOG_LEVEL or INFO).")
@click.version_option(__version__, prog_name="qsde")
def cli(log_level):
    """Quantum stochastic calculus lab."""
    settings.configure_logging(log_level)


@cli.command("ito-check")
@config_option
@click.option("--json", "as_json", is_flag=True, help="Print the report as JSON.")
def ito_check(config_path, as_json):
    """Closure of an Ito algebra basis under the HP product and the involution."""
    cfg = load_config(config_path)
    if cfg.elements:
        basis = ItoAlgebraBasis([e.to_element() for e in cfg.elements],
                                [e.label or f"e{i}" for i, e in enumerate(cfg.elements)])
    else:
        basis = quantum_basis(1)
    report = check_closure(basis, cfg.tol)
    table = multiplication_table(basis, cfg.tol)
    logging.info(f"ito-check: {len(basis)} elements, closed={report.is_closed}, worst residual {report.worst_residual:.3e}")
    if as_json:
        payload = report.as_dict()
        payload["table"] = {f"{a} * {b}": v for (a, b), v in table.items()}
        click.echo(json.dumps(payload, indent=2))
        return
    click.echo(f"closed: {report.is_closed}  (worst residual {report.worst_residual:.3e}, tol {report.tol:g})")
    click.echo(f"death element in span: {report.contains_death}")
    width = max(len(f"{a} * {b}") for a, b in table)
    for (a, b), value in table.items():
        click.echo(f"{f'{a} * {b}':<{width}}  =  {value}")


@cli.command("germ-check")
@config_option
@click.option("--dilate", is_flag=True, help="Also build and verify the dilation.")
@click.option("--json", "as_json", is_flag=True, help="Print the verdict as JSON.")
def germ_check(config_path, dilate, as_json):
    """Conditional complete positivity of a generator germ."""
    cfg = load_config(config_path)
    model = _require_model(cfg)
    germ = model.to_germ()
    verdict = check_ccp(germ)
    payload = verdict.as_dict()
    if dilate and verdict.is_ccp:
        dd = kolmogorov_dilation(germ)
        payload["dilation"] = {**dd.summary(), "identity_residual": max(
            verify_dilation(dd, germ, B) for B in np.eye(germ.n * germ.n).reshape(-1, germ.n, germ.n))}
    if as_json:
        click.echo(json.dumps(payload, indent=2))
    else:
        for key, value in payload.items():
            click.echo(f"{key}: {value}")
    if not verdict.is_ccp:
        raise CCPFailure(f"germ is not conditionally completely positive (min_eig={verdict.min_eig:.3e})")


@cli.command("dilate")
@config_option
@click.option("--samples", default=50, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", default=None, type=click.IntRange(min=0))
def dilate(config_path, samples, seed):
    """Kolmogorov dilation of a CCP germ, verified on random operators."""
    cfg = load_config(config_path)
    model = _require_model(cfg)
    germ = model.to_germ()
    verdict = check_ccp(germ)
    if not verdict.is_ccp:
        raise CCPFailure(f"germ is not conditionally completely positive (min_eig={verdict.min_eig:.3e})")
    dd = kolmogorov_dilation(germ)
    rng = channel_generator(cfg.simulation.seed if seed is None else seed, 0, 0)
    n = germ.n

    def sample():
        return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))

    worst = 0.0
    identities = {}
    for _ in range(samples):
        B = sample()
        worst = max(worst, verify_dilation(dd, germ, B))
        for key, value in dilation_identity_residuals(dd, sample(), B).items():
            identities[key] = max(identities.get(key, 0.0), value)
    payload = {**dd.summary(), "samples": samples, "identity_residual": worst, "dilation_identities": identities}
    click.echo(json.dumps(payload, indent=2))


@cli.command("trajectory")
@config_option
@click.option("--seed", default=None, type=click.IntRange(min=0))
@out_option
@format_option
def trajectory(config_path, seed, out, fmt):
    """One sampled propagator path: observables <ψ|V†BV|ψ> and the weight ||Vψ||²."""
    cfg = _with_simulation(load_config(config_path), seed=seed)
    model = _require_model(cfg, "trajectory").to_model()
    psi0 = cfg.initial_state()
    observables = cfg.observable_arrays()
    traj = simulate(model, cfg.simulation.grid(), TrajectoryStream(cfg.simulation.seed, 0))
    values = [flow_value(traj, B, psi0) for B in observables.values()]
    weights = traj.weights(psi0)
    rows = []
    for j, t in enumerate(traj.grid):
        row = [float(t)]
        for v in values:
            row += [float(v[j].real), float(v[j].imag)]
        rows.append(row + [float(weights[j])])
    header = ["t"] + _observable_columns(observables) + ["weight"]
    _emit(cfg, header, rows, {"jump_counts": [len(r) for r in traj.noise_record] if model.kind == "jump" else None},
          out, fmt, trajectory=0)


@cli.command("ensemble")
@config_option
@click.option("--seed", default=None, type=click.IntRange(min=0))
@click.option("--ntraj", default=None, type=click.IntRange(min=1))
@click.option("--progress", is_flag=True, help="Show a progress bar on stderr.")
@out_option
@format_option
def ensemble(config_path, seed, ntraj, progress, out, fmt):
    """Seeded Monte Carlo means and standard errors."""
    cfg = _with_simulation(load_config(config_path), seed=seed, ntraj=ntraj)
    model = _require_model(cfg, "trajectory").to_model()
    sim = cfg.simulation
    result = run_ensemble(model, cfg.observable_arrays(), cfg.initial_state(), sim.ntraj, sim.grid(), sim.seed,
                          progress=progress)
    _emit(cfg, result.header(), result.to_rows(), {}, out, fmt, ntraj=result.n_traj)


@cli.command("master")
@config_option
@out_option
@format_option
def master(config_path, out, fmt):
    """Averaged evolution: Heisenberg expectations at psi0, or tr(ρ(t)B) when rho0 is given."""
    cfg = load_config(config_path)
    model = _require_model(cfg)
    germ = model.to_germ()
    sim = cfg.simulation
    observables = cfg.observable_arrays()
    if not observables:
        raise ModelError("master needs at least one observable")
    if cfg.rho0 is not None:
        state = evolve_schrodinger(germ, cfg.initial_density(), sim.tmax, sim.step_count)
        curves = [state.trace_against(B) for B in observables.values()]
        grid = state.grid
    else:
        psi0 = cfg.initial_state()
        results = [evolve_heisenberg(germ, B, sim.tmax, sim.step_count) for B in observables.values()]
        curves = [r.expectation(psi0) for r in results]
        grid = results[0].grid
    rows = []
    for j, t in enumerate(grid):
        row = [float(t)]
        for c in curves:
            row += [float(c[j].real), float(c[j].imag)]
        rows.append(row)
    _emit(cfg, ["t"] + _observable_columns(observables), rows, {}, out, fmt)


@cli.command("picard")
@config_option
@click.option("--iters", default=None, type=click.IntRange(min=0))
@out_option
@format_option
def picard(config_path, iters, out, fmt):
    """Picard iterates of the minimal completely positive solution."""
    cfg = _with_simulation(load_config(config_path), picard_iters=iters)
    model = _require_model(cfg)
    germ = model.to_germ()
    sim = cfg.simulation
    observables = cfg.observable_arrays()
    if not observables:
        raise ModelError("picard needs at least one observable")
    psi0 = cfg.initial_state()
    curves, gaps = [], {}
    for name, B in observables.items():
        iterates = picard_minimal(germ, B, sim.tmax, sim.step_count, sim.picard_iters)
        reference = evolve_heisenberg(germ, B, sim.tmax, sim.step_count)
        gaps[name] = picard_gaps(iterates, reference).tolist()
        logging.info(f"picard: {name} final gap to the semigroup {gaps[name][-1]:.3e}")
        curves.append(iterates[-1].expectation(psi0))
        grid = reference.grid
    rows = []
    for j, t in enumerate(grid):
        row = [float(t)]
        for c in curves:
            row += [float(c[j].real), float(c[j].imag)]
        rows.append(row)
    _emit(cfg, ["t"] + _observable_columns(observables), rows, {"gaps": gaps}, out, fmt,
          picard_iters=sim.picard_iters)


def _fail(code: int, error: BaseException) -> int:
    message = str(error).replace("\n", " ")
    click.echo(f"qsde-error[{code}] {type(error).__name__}: {message}", err=True)
    return code


def run(argv=None) -> int:
    """Dispatch one subcommand; returns the process exit code."""
    try:
        rv = cli.main(args=list(sys.argv[1:] if argv is None else argv), prog_name="qsde", standalone_mode=False)
    except CCPFailure as e:
        return _fail(EXIT_NOT_CCP, e)
    except (NumericalAbort, DilationError, np.linalg.LinAlgError) as e:
        logging.error(f"numerical failure: {e}", exc_info=True)
        return _fail(EXIT_NUMERICAL, e)
    except (click.ClickException, ValidationError, ValueError) as e:
        return _fail(EXIT_MALFORMED, e)
    except click.Abort as e:
        return _fail(1, e)
    return rv if isinstance(rv, int) else EXIT_OK
