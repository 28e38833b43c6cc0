from __future__ import annotations

import csv
from pathlib import Path
from typing import Callable, Dict, List, Optional

import typer

from .config import RunConfig, load_config
from .errors import ConfigError, FormatError, StageError
from .fs import CONFIG_FILE, dumps_canonical
from .logger import Logger, LogLevel, get_logger, info, level_from_env, set_logger, warning
from .materials import (
    MaterialDatabase,
    StackGeometry,
    dmm_transmission,
    load_material_db,
    mean_phonon_velocity,
    phonon_lifetime,
)
from .pipeline import Pipeline, report_lines

app = typer.Typer(
    name="qpburst",
    help="Simulate, detect and analyze radiation-induced quasiparticle bursts in MKID/qubit chips",
    add_completion=False,
)

DISCREPANCY_TOLERANCE = 0.01

PHYSICS_COLUMNS = (
    "substrate",
    "plane",
    "v_formula",
    "v_quoted",
    "v_used",
    "p_formula",
    "p_quoted",
    "tau_formula_ns",
    "tau_quoted_ns",
    "velocity_flag",
    "transmission_flag",
)


def _differs(formula: float, quoted: Optional[float]) -> bool:
    return quoted is not None and abs(formula - quoted) > DISCREPANCY_TOLERANCE * abs(quoted)


def physics_table(
    db: MaterialDatabase, substrate_height_um: float = 500.0, v_override: Optional[float] = None
) -> List[Dict[str, object]]:
    """
    Mean velocity, DMM transmission and phonon lifetime for every
    substrate/plane pair.

    ``tau_formula_ns`` uses the formula velocity and transmission;
    ``tau_quoted_ns`` uses ``v_override`` (else the quoted velocity) and the
    quoted transmission where the database carries one. Formula values more
    than 1% away from a quoted one are flagged.
    """
    rows: List[Dict[str, object]] = []
    substrates = [n for n in db.names() if not db.get(n).is_superconductor]
    for sub_name in substrates:
        sub = db.get(sub_name)
        v_formula = mean_phonon_velocity(sub)
        v_quoted = db.quoted_mean_velocity(sub_name)
        v_used = v_override if v_override is not None else (v_quoted if v_quoted is not None else v_formula)
        for plane_name in db.names():
            plane = db.get(plane_name)
            geometry = StackGeometry(substrate_height_um, sub, plane)
            p_formula = dmm_transmission(sub, plane)
            p_quoted = db.quoted_transmission(sub_name, plane_name)
            rows.append(
                {
                    "substrate": sub_name,
                    "plane": plane_name,
                    "v_formula": v_formula,
                    "v_quoted": v_quoted,
                    "v_used": v_used,
                    "p_formula": p_formula,
                    "p_quoted": p_quoted,
                    "tau_formula_ns": phonon_lifetime(geometry),
                    "tau_quoted_ns": phonon_lifetime(geometry, v_override=v_used, p_override=p_quoted),
                    "velocity_flag": _differs(v_formula, v_quoted),
                    "transmission_flag": _differs(p_formula, p_quoted),
                }
            )
    return rows


def _cell(value: object, spec: str) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "!" if value else ""
    return format(value, spec)


def format_physics_table(rows: List[Dict[str, object]]) -> List[str]:
    lines = [
        f"{'substrate':<10}{'plane':<7}{'v_formula':>10}{'v_quoted':>10}{'v_used':>9}"
        f"{'P_formula':>10}{'P_quoted':>9}{'tau_formula':>13}{'tau_quoted':>12}  flags"
    ]
    for r in rows:
        flags = " ".join(
            name for name, key in (("velocity", "velocity_flag"), ("transmission", "transmission_flag")) if r[key]
        )
        lines.append(
            f"{r['substrate']:<10}{r['plane']:<7}{_cell(r['v_formula'], '10.1f')}{_cell(r['v_quoted'], '10.1f')}"
            f"{_cell(r['v_used'], '9.1f')}{_cell(r['p_formula'], '10.4f')}{_cell(r['p_quoted'], '9.3f')}"
            f"{_cell(r['tau_formula_ns'], '13.1f')}{_cell(r['tau_quoted_ns'], '12.1f')}  {flags}"
        )
    return lines


def write_physics_csv(path: Path, rows: List[Dict[str, object]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(PHYSICS_COLUMNS), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if r[k] is None else r[k] for k in PHYSICS_COLUMNS})


# plumbing

def _init_logger(verbose: bool, quiet: bool) -> Logger:
    if verbose:
        level = LogLevel.VERBOSE
    elif quiet:
        level = LogLevel.QUIET
    else:
        level = level_from_env()
    logger = Logger(level)
    set_logger(logger)
    return logger


def _resolve_config(config: Optional[str], seed: Optional[int], out: Optional[str]) -> tuple[RunConfig, Path]:
    """The config file given, else the one stored in the run directory."""
    if config is not None:
        cfg = load_config(Path(config), seed=seed, output_dir=out)
    elif out is not None and (Path(out) / CONFIG_FILE).exists():
        cfg = load_config(Path(out) / CONFIG_FILE, seed=seed, output_dir=out)
    else:
        raise ConfigError("config", "pass --config, or --out pointing at an existing run")
    return cfg, Path(out) if out is not None else Path(cfg.output_dir)


def _guard(action: Callable[[], None]) -> None:
    """Map failures onto the exit codes: 2 config/input, 3 stage failure, 130 interrupt."""
    logger = get_logger()
    try:
        action()
    except typer.Exit:
        raise
    except KeyboardInterrupt:
        logger.error("Operation cancelled by user")
        raise typer.Exit(code=130)
    except (ConfigError, FormatError, FileNotFoundError) as e:
        logger.error(str(e))
        raise typer.Exit(code=2)
    except StageError as e:
        cause = e.__cause__ if isinstance(e.__cause__, Exception) else None
        logger.error(str(e), cause)
        raise typer.Exit(code=3)
    except Exception as e:
        logger.error("Unexpected error occurred", e)
        raise typer.Exit(code=3)


def _run_stages(
    stage: Optional[str],
    config: Optional[str],
    seed: Optional[int],
    out: Optional[str],
    dry_run: bool,
) -> None:
    def action() -> None:
        cfg, run_dir = _resolve_config(config, seed, out)
        pipeline = Pipeline(cfg, run_dir, dry_run=dry_run)
        planned = pipeline.planner.plan_stages(stage)
        pipeline.run(planned)
        if "report" in planned and not dry_run:
            for line in report_lines(pipeline.load_report()):
                typer.echo(line)

    _guard(action)


ConfigOpt = typer.Option(None, "-c", "--config", help="Run config (JSON)")
SeedOpt = typer.Option(None, "--seed", help="Master seed (overrides the config)")
OutOpt = typer.Option(None, "-o", "--out", help="Run directory (default: the config's output_dir)")
DryRunOpt = typer.Option(False, "--dry-run", help="Report what would run without writing anything")
VerboseOpt = typer.Option(False, "-v", "--verbose", help="Enable verbose output")
QuietOpt = typer.Option(False, "-q", "--quiet", help="Suppress all output except errors")


@app.command()
def simulate(
    config: Optional[str] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    out: Optional[str] = OutOpt,
    dry_run: bool = DryRunOpt,
    verbose: bool = VerboseOpt,
    quiet: bool = QuietOpt,
) -> None:
    """Sample ground truth and synthesize MKID streams, qubit records and TLS traces."""
    _init_logger(verbose, quiet)
    _run_stages("simulate", config, seed, out, dry_run)


@app.command()
def detect(
    config: Optional[str] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    out: Optional[str] = OutOpt,
    dry_run: bool = DryRunOpt,
    verbose: bool = VerboseOpt,
    quiet: bool = QuietOpt,
) -> None:
    """Run the live and offline triggers over the stored MKID streams."""
    _init_logger(verbose, quiet)
    _run_stages("detect", config, seed, out, dry_run)


@app.command()
def analyze(
    config: Optional[str] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    out: Optional[str] = OutOpt,
    dry_run: bool = DryRunOpt,
    verbose: bool = VerboseOpt,
    quiet: bool = QuietOpt,
) -> None:
    """Align qubit records on detected events, fit recoveries, build coincidence and TLS reports."""
    _init_logger(verbose, quiet)
    _run_stages("analyze", config, seed, out, dry_run)


@app.command()
def run(
    config: Optional[str] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    out: Optional[str] = OutOpt,
    stage: Optional[str] = typer.Option(None, "--stage", help="Run only this stage"),
    dry_run: bool = DryRunOpt,
    verbose: bool = VerboseOpt,
    quiet: bool = QuietOpt,
) -> None:
    """
    End-to-end run: simulate → detect → analyze.

    \b
    # desk-scale run
    python -m qpburst run -c configs/desk.json -o runs/desk
    \b
    # re-run only the analysis of an existing run
    python -m qpburst run -o runs/desk --stage analyze
    \b
    # preview
    python -m qpburst run -c configs/desk.json --dry-run
    """
    _init_logger(verbose, quiet)
    _run_stages(stage, config, seed, out, dry_run)


@app.command()
def report(
    out: str = typer.Option(..., "-o", "--out", help="Run directory"),
    as_json: bool = typer.Option(False, "--json", help="Print the stored report as JSON"),
    export: Optional[str] = typer.Option(None, "--export", help="Copy report and curve CSVs into this folder"),
    verbose: bool = VerboseOpt,
    quiet: bool = QuietOpt,
) -> None:
    """Re-emit the stored analysis of a run."""
    _init_logger(verbose, quiet)

    def action() -> None:
        cfg, run_dir = _resolve_config(None, None, out)
        pipeline = Pipeline(cfg, run_dir)
        stored = pipeline.load_report()
        if as_json:
            typer.echo(dumps_canonical(stored), nl=False)
        else:
            for line in report_lines(stored):
                typer.echo(line)
        if export is not None:
            copied = pipeline.export_report(Path(export))
            info(f"📤 Exported {len(copied)} files to {export}")

    _guard(action)


@app.command()
def physics(
    materials: Optional[str] = typer.Option(None, "--materials", help="Material database (JSON)"),
    height: float = typer.Option(500.0, "--height", help="Substrate height in µm"),
    v_override: Optional[float] = typer.Option(
        None, "--v-override", help="Mean phonon velocity in m/s (default: the quoted value)"
    ),
    csv_path: Optional[str] = typer.Option(None, "--csv", help="Also write the table as CSV"),
    verbose: bool = VerboseOpt,
    quiet: bool = QuietOpt,
) -> None:
    """Phonon velocities, transmissions and lifetimes for every substrate/plane pair."""
    _init_logger(verbose, quiet)

    def action() -> None:
        db = load_material_db(Path(materials) if materials else None)
        rows = physics_table(db, height, v_override)
        for line in format_physics_table(rows):
            typer.echo(line)
        for r in rows:
            if r["velocity_flag"] and r["plane"] == r["substrate"]:
                warning(
                    f"{r['substrate']}: formula mean velocity {r['v_formula']:.1f} m/s "
                    f"differs from the quoted {r['v_quoted']:.1f} m/s"
                )
            if r["transmission_flag"]:
                warning(
                    f"{r['substrate']}->{r['plane']}: formula transmission {r['p_formula']:.3f} "
                    f"differs from the quoted {r['p_quoted']:.3f}"
                )
        if csv_path is not None:
            write_physics_csv(Path(csv_path), rows)
            info(f"📄 Wrote {csv_path}")

    _guard(action)


def main() -> None:
    """Entry point for the CLI."""
    app()


if __name__ == "__main__":
    app()
