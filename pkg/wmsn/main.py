# wmsn/main.py
"""
Command-line entrypoint: run, sweep, verify, derive-constants, runs.

Exit codes: 0 clean, 1 violations found, 2 config or usage error.
"""

import functools
import json
import logging
from pathlib import Path
from typing import List, Literal, Optional, Sequence

import click
from pydantic import BaseModel, Field, ValidationError, model_validator

from . import db
from .config import load_config
from .controller import LyapunovParams, compute_perturbations
from .errors import ConfigError, ViolationError, WmsnError
from .network import Network
from .settings import settings
from .sim import constants_payload, run, summarize_trace, sweep
from .traces import read_json, read_trace, write_json
from .verify import check_dual_bounds, check_trace_bounds

logger = logging.getLogger("wmsn.main")

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_USAGE = 2


# -----------------------------------------------------------
# 🧩 Logging configuration
# -----------------------------------------------------------
def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=(level or settings.LOG_LEVEL or "INFO").upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


# -----------------------------------------------------------
# 📦 Options model
# -----------------------------------------------------------
class CliOptions(BaseModel):
    subcommand: Literal["run", "sweep", "verify", "derive-constants"]
    config: Optional[str] = None
    v: Optional[float] = None
    v_list: Optional[List[float]] = None
    slots: int = Field(1000, ge=1)
    seeds: List[int] = Field(default_factory=lambda: [1])
    output_dir: Optional[str] = None
    trace: Optional[str] = None
    tolerate: bool = False
    defensive_clamp: Optional[bool] = None
    theta_override: Optional[bool] = None
    warmup_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _consistent(self):
        if self.subcommand in ("run", "derive-constants"):
            if self.config is None or self.v is None:
                raise ValueError(f"{self.subcommand} requires --config and --v")
        if self.subcommand == "sweep" and (self.config is None or not self.v_list):
            raise ValueError("sweep requires --config and a --v list")
        if self.subcommand == "verify" and self.trace is None:
            raise ValueError("verify requires --trace")
        for v in ([self.v] if self.v is not None else []) + list(self.v_list or []):
            if v < 0:
                raise ValueError("V must be nonnegative")
        return self


def _float_list(ctx, param, value: Optional[str]) -> Optional[List[float]]:
    if value is None:
        return None
    try:
        return [float(v) for v in value.replace(" ", "").split(",") if v]
    except ValueError:
        raise click.BadParameter(f"expected a comma-separated list of numbers, got {value!r}")


def _int_list(ctx, param, value: Optional[str]) -> Optional[List[int]]:
    if value is None:
        return None
    try:
        return [int(v) for v in value.replace(" ", "").split(",") if v]
    except ValueError:
        raise click.BadParameter(f"expected a comma-separated list of integers, got {value!r}")


def _exit(code: int) -> None:
    if code:
        raise click.exceptions.Exit(code)


def _handle_errors(func):
    """Map package errors to exit codes with a one-line message on stderr."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ViolationError as exc:
            logger.exception("Run stopped on a violation")
            click.echo(f"error: {exc}", err=True)
            _exit(EXIT_VIOLATIONS)
        except (WmsnError, ValidationError, ValueError) as exc:
            logger.exception("Command failed")
            click.echo(f"error: {exc}", err=True)
            _exit(EXIT_USAGE)

    return wrapper


def _options(**kwargs) -> CliOptions:
    try:
        return CliOptions(**kwargs)
    except ValidationError as exc:
        msg = "; ".join(str(e.get("msg", "")).removeprefix("Value error, ") for e in exc.errors())
        raise click.UsageError(msg)


def _record(summary, output_dir: Path, enabled: bool, db_path: Optional[str]) -> None:
    if not enabled:
        return
    try:
        db.record_run(summary, str(output_dir), db_path=db_path)
    except Exception as exc:
        logger.warning("Could not record run in the registry: %s", exc)


run_flags = [
    click.option("--config", "config_path", default="six_node.cfg", show_default=True, help="Network config (YAML) or a bundled name."),
    click.option("--slots", type=int, default=1000, show_default=True),
    click.option("--output-dir", type=click.Path(file_okay=False), default=None, help="Defaults under WMSN_OUTPUT_DIR."),
    click.option("--tolerate", is_flag=True, help="Log and count violations instead of aborting."),
    click.option("--defensive-clamp/--no-defensive-clamp", default=None, help="Clamp information flow to the backlog."),
    click.option("--theta-override/--no-theta-override", default=None, help="Use the config's theta_override block."),
    click.option("--warmup-fraction", type=float, default=0.1, show_default=True),
    click.option("--record/--no-record", default=True, show_default=True, help="Store the summary in the run registry."),
    click.option("--db", "db_path", default=None, help="Run registry path or URL (default WMSN_DB_PATH)."),
]


def _with(flags):
    def decorate(func):
        for flag in reversed(flags):
            func = flag(func)
        return func

    return decorate


# -----------------------------------------------------------
# 🚀 Commands
# -----------------------------------------------------------
@click.group()
@click.option("--log-level", default=None, help="Overrides WMSN_LOG_LEVEL.")
def cli(log_level: Optional[str]) -> None:
    """Cross-layer controller simulator for heterogeneously powered sensor networks."""
    configure_logging(log_level)


@cli.command("run")
@_with(run_flags)
@click.option("--v", "v", type=float, required=True)
@click.option("--seed", type=int, default=1, show_default=True)
@_handle_errors
def run_cmd(config_path, slots, output_dir, tolerate, defensive_clamp, theta_override, warmup_fraction, record, db_path, v, seed):
    """Simulate one (config, V, seed) and write trace.csv, summary.json, constants.json."""
    opts = _options(
        subcommand="run", config=config_path, v=v, slots=slots, seeds=[seed], output_dir=output_dir,
        tolerate=tolerate, defensive_clamp=defensive_clamp, theta_override=theta_override, warmup_fraction=warmup_fraction,
    )
    config = load_config(opts.config)
    out = Path(opts.output_dir) if opts.output_dir else Path(settings.OUTPUT_DIR) / f"{config.name}_v{v:g}_seed{seed}"
    result = run(
        config, opts.v, opts.slots, seed, output_dir=out, tolerate=opts.tolerate,
        defensive_clamp=opts.defensive_clamp, theta_override=opts.theta_override, warmup_fraction=opts.warmup_fraction,
    )
    _record(result.summary, out, record, db_path)
    s = result.summary
    click.echo(
        f"V={s.v:g} seed={s.seed} slots={s.slots}: avg objective {s.avg_objective:.6g}, "
        f"avg data backlog {s.avg_data_backlog:.6g}, violations {s.violation_count} -> {out}"
    )
    _exit(EXIT_VIOLATIONS if s.violation_count else EXIT_OK)


@cli.command("sweep")
@_with(run_flags)
@click.option("--v", "v_list", required=True, callback=_float_list, help="Comma-separated V values.")
@click.option("--seeds", default="1", callback=_int_list, show_default=True, help="Comma-separated seeds.")
@click.option("--workers", type=int, default=1, show_default=True)
@_handle_errors
def sweep_cmd(config_path, slots, output_dir, tolerate, defensive_clamp, theta_override, warmup_fraction, record, db_path, v_list, seeds, workers):
    """One run per (V, seed) plus tradeoff.csv."""
    opts = _options(
        subcommand="sweep", config=config_path, v_list=v_list, slots=slots, seeds=seeds, output_dir=output_dir,
        tolerate=tolerate, defensive_clamp=defensive_clamp, theta_override=theta_override,
        warmup_fraction=warmup_fraction, workers=workers,
    )
    config = load_config(opts.config)
    out = Path(opts.output_dir) if opts.output_dir else Path(settings.OUTPUT_DIR) / f"{config.name}_sweep"
    summaries = sweep(
        config, opts.v_list, opts.slots, opts.seeds, output_dir=out, workers=opts.workers,
        tolerate=opts.tolerate, defensive_clamp=opts.defensive_clamp, theta_override=opts.theta_override,
        warmup_fraction=opts.warmup_fraction,
    )
    for s in summaries:
        _record(s, out, record, db_path)
        click.echo(f"V={s.v:g} seed={s.seed}: avg objective {s.avg_objective:.6g}, avg data backlog {s.avg_data_backlog:.6g}")
    click.echo(f"{len(summaries)} run(s) -> {out / 'tradeoff.csv'}")
    _exit(EXIT_VIOLATIONS if any(s.violation_count for s in summaries) else EXIT_OK)


def _load_params(trace_path: Path, config_path: Optional[str], v: Optional[float], theta_override: Optional[bool]) -> LyapunovParams:
    constants = trace_path.parent / "constants.json"
    if config_path is None:
        if not constants.exists():
            raise ConfigError(f"no --config given and no constants.json next to {trace_path}")
        return LyapunovParams.model_validate(read_json(constants)["params"])
    if v is None:
        if not constants.exists():
            raise ConfigError("verify with --config needs --v (or a constants.json next to the trace)")
        v = float(read_json(constants)["v"])
    return compute_perturbations(Network(load_config(config_path)), v, theta_override=theta_override)


@cli.command("verify")
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False), required=True)
@click.option("--config", "config_path", default=None, help="Recompute bounds from this config instead of constants.json.")
@click.option("--v", "v", type=float, default=None)
@click.option("--theta-override/--no-theta-override", default=None)
@click.option("--max-report", type=int, default=10, show_default=True)
@_handle_errors
def verify_cmd(trace_path, config_path, v, theta_override, max_report):
    """Check every slot of a trace against the queue, energy and dual bounds."""
    _options(subcommand="verify", trace=trace_path, config=config_path, v=v)
    path = Path(trace_path)
    params = _load_params(path, config_path, v, theta_override)
    trace = read_trace(path)
    violations = check_trace_bounds(trace, params) + check_dual_bounds(trace, params)
    for violation in violations[:max_report]:
        click.echo(str(violation))

    mismatch = False
    summary_path = path.parent / "summary.json"
    if summary_path.exists():
        stored = read_json(summary_path)
        recomputed = summarize_trace(trace, stored["config_name"], stored["v"], stored["seed"], stored["warmup_fraction"])
        if recomputed.model_dump() != stored:
            mismatch = True
            click.echo(f"summary.json does not match the summary recomputed from {path.name}")

    click.echo(f"{len(trace)} slot(s) checked, {len(violations)} violation(s)")
    _exit(EXIT_VIOLATIONS if violations or mismatch else EXIT_OK)


@cli.command("derive-constants")
@click.option("--config", "config_path", default="six_node.cfg", show_default=True)
@click.option("--v", "v", type=float, required=True)
@click.option("--theta-override/--no-theta-override", default=None)
@click.option("--output-dir", type=click.Path(file_okay=False), default=None)
@_handle_errors
def derive_constants_cmd(config_path, v, theta_override, output_dir):
    """Write constants.json for one V and print the headline constants."""
    opts = _options(subcommand="derive-constants", config=config_path, v=v, output_dir=output_dir, theta_override=theta_override)
    config = load_config(opts.config)
    params = compute_perturbations(Network(config), opts.v, theta_override=opts.theta_override)
    if opts.output_dir:
        out = Path(opts.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "constants.json", constants_payload(config.name, params))
    headline = {
        "beta": params.beta, "sigma": params.sigma, "epsilon": params.epsilon,
        "theta": params.theta, "q_bound": params.q_bound, "lambda_bound": params.lambda_bound,
        "B": params.b_const, "B_tilde": params.b_tilde,
    }
    click.echo(json.dumps(headline, indent=2, sort_keys=True))


@cli.command("runs")
@click.option("--limit", type=int, default=20, show_default=True)
@click.option("--db", "db_path", default=None)
@_handle_errors
def runs_cmd(limit, db_path):
    """List recorded runs, most recent first."""
    records = db.list_runs(limit=limit, db_path=db_path)
    if not records:
        click.echo("no runs recorded")
        return
    for r in records:
        click.echo(
            f"{r.id}\t{r.created_at:%Y-%m-%d %H:%M:%S}\t{r.config_name}\tV={r.v:g}\tseed={r.seed}\t"
            f"slots={r.slots}\tobj={r.avg_objective:.6g}\tbacklog={r.avg_data_backlog:.6g}\t"
            f"violations={r.violation_count}\t{r.output_dir}"
        )


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return its exit code."""
    try:
        rv = cli.main(args=list(argv) if argv is not None else None, prog_name="wmsn", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
