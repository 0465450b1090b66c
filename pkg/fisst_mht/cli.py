"""Command line interface for fisst_mht."""

import functools
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, List, Optional, Sequence, Tuple

import click

from fisst_mht import __version__
from fisst_mht.core.parsers import ScenarioConfig, get_parser
from fisst_mht.core.sim import (
    TRACKER_MODES,
    LabelledScan,
    MeasurementScan,
    ScanRecord,
    TruthScan,
    generate_measurements,
    generate_truth,
    run as run_scenario,
    scenario_rng,
    score,
    track as track_scans,
)
from fisst_mht.core.verify import CHECKS, run_verification_suite
from fisst_mht.exceptions import ConfigError, ExplosionGuardError, FisstError
from fisst_mht.utils.file_utils import ensure_directory, write_hypothesis_table, write_json, write_jsonl

EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_EXPLOSION = 3


def _guarded(command: Callable[..., None]) -> Callable[..., None]:
    """Map library errors to exit codes at the edge of the CLI."""

    @functools.wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> None:
        try:
            command(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"Configuration error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except ExplosionGuardError as exc:
            click.echo(f"Hypothesis explosion: {exc}", err=True)
            sys.exit(EXIT_EXPLOSION)
        except FisstError as exc:
            click.echo(f"Error: {exc}", err=True)
            sys.exit(EXIT_FAILURE)

    return wrapper


def _load_scenario(path: str, seed: Optional[int], horizon: Optional[int]) -> ScenarioConfig:
    config: ScenarioConfig = get_parser("scenario").parse(Path(path).read_text(encoding="utf-8"))
    scenario = config.scenario
    if seed is not None:
        scenario = replace(scenario, rng_seed=seed)
    if horizon is not None:
        scenario = replace(scenario, horizon=horizon)
    return replace(config, scenario=scenario)


def _apply_overrides(config: ScenarioConfig, mode: Optional[str], max_hyp: Optional[int],
                     min_weight: Optional[float], drop_undetected_births: Optional[bool],
                     workers: Optional[int]) -> ScenarioConfig:
    settings = config.settings
    pruning = settings.pruning
    if max_hyp is not None:
        pruning = replace(pruning, max_hypotheses=max_hyp)
    if min_weight is not None:
        pruning = replace(pruning, min_weight=min_weight)
    if drop_undetected_births is not None:
        pruning = replace(pruning, drop_undetected_births=drop_undetected_births)
    engine = settings.engine if workers is None else replace(settings.engine, workers=workers)
    settings = replace(settings, mode=mode or settings.mode, pruning=pruning, engine=engine)
    return replace(config, settings=settings)


def _write_truth(out_dir: Path, truth: Sequence[TruthScan], labelled: Sequence[LabelledScan]) -> None:
    write_jsonl(out_dir / "truth.jsonl",
                [dict(t.to_dict(), **ls.to_dict()) for t, ls in zip(truth, labelled)])
    write_jsonl(out_dir / "measurements.jsonl", [ls.scan.to_dict() for ls in labelled])


def _write_trace(out_dir: Path, records: Sequence[ScanRecord]) -> None:
    write_jsonl(out_dir / "trace.jsonl", [r.to_dict() for r in records])
    write_hypothesis_table(out_dir / "hypotheses.csv", [
        dict(h.to_dict(), scan=r.scan_index) for r in records for h in r.top_hypotheses
    ])


def tracker_options(command: Callable[..., Any]) -> Callable[..., Any]:
    options = [
        click.option('--mode', type=click.Choice(TRACKER_MODES), default=None,
                     help='Tracker recursion (overrides the scenario run section).'),
        click.option('--max-hyp', type=click.IntRange(min=1), default=None,
                     help='Hypotheses kept after each scan.'),
        click.option('--min-weight', type=click.FloatRange(0.0, 1.0, max_open=True), default=None,
                     help='Drop hypotheses below this normalized weight.'),
        click.option('--drop-undetected-births/--keep-undetected-births', default=None,
                     help='Prune hypotheses with births missed on their creation scan.'),
        click.option('--workers', type=click.IntRange(min=1), default=None,
                     help='Threads used to expand parent hypotheses.'),
    ]
    for option in reversed(options):
        command = option(command)
    return command


@click.group()
@click.version_option(version=__version__)
@click.option('--verbose', '-v', is_flag=True, help='Enable debug logging.')
@click.option('--quiet', '-q', is_flag=True, help='Only log warnings and errors.')
def main(verbose: bool, quiet: bool) -> None:
    """FISST/HOMHT multi-target tracking engine, simulator and verifier."""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


@main.command()
@click.argument('scenario', type=click.Path(exists=True, dir_okay=False))
@click.option('--seed', type=int, default=None, help='RNG seed (overrides the scenario).')
@click.option('--horizon', type=click.IntRange(min=1), default=None, help='Number of scans.')
@click.option('--out-dir', '-o', type=click.Path(file_okay=False), default='out',
              help='Directory for truth.jsonl and measurements.jsonl.')
@_guarded
def simulate(scenario: str, seed: Optional[int], horizon: Optional[int], out_dir: str) -> None:
    """Simulate ground truth and measurements for SCENARIO."""
    config = _load_scenario(scenario, seed, horizon)
    rng = scenario_rng(config.scenario)
    truth = generate_truth(config.scenario, rng)
    labelled = generate_measurements(truth, config.scenario.models, rng)
    out = ensure_directory(out_dir)
    _write_truth(out, truth, labelled)
    click.echo(f"Simulated {len(truth)} scans into {out}")


@main.command()
@click.argument('scenario', type=click.Path(exists=True, dir_okay=False))
@click.argument('measurements', type=click.Path(exists=True, dir_okay=False))
@tracker_options
@click.option('--out-dir', '-o', type=click.Path(file_okay=False), default='out',
              help='Directory for trace.jsonl and hypotheses.csv.')
@_guarded
def track(scenario: str, measurements: str, mode: Optional[str], max_hyp: Optional[int],
          min_weight: Optional[float], drop_undetected_births: Optional[bool],
          workers: Optional[int], out_dir: str) -> None:
    """
    Run the tracker of SCENARIO on a MEASUREMENTS trace.

    MEASUREMENTS is a measurements.jsonl file as written by `simulate`; only
    the measurement values are read.
    """
    config = _apply_overrides(_load_scenario(scenario, None, None), mode, max_hyp, min_weight,
                              drop_undetected_births, workers)
    models = config.scenario.models
    scans = get_parser("measurements", models.measurement.dim).parse(
        Path(measurements).read_text(encoding="utf-8"))
    settings = config.settings
    records = track_scans(scans, models, config.scenario.initial_targets, settings.mode,
                          settings.pruning, settings.engine, settings.top_hypotheses)
    out = ensure_directory(out_dir)
    _write_trace(out, records)
    click.echo(f"Tracked {len(records)} scans in {settings.mode} mode into {out}")


@main.command()
@click.argument('scenario', type=click.Path(exists=True, dir_okay=False))
@tracker_options
@click.option('--seed', type=int, default=None, help='RNG seed (overrides the scenario).')
@click.option('--horizon', type=click.IntRange(min=1), default=None, help='Number of scans.')
@click.option('--out-dir', '-o', type=click.Path(file_okay=False), default='out',
              help='Directory for all run outputs.')
@_guarded
def run(scenario: str, mode: Optional[str], max_hyp: Optional[int], min_weight: Optional[float],
        drop_undetected_births: Optional[bool], workers: Optional[int], seed: Optional[int],
        horizon: Optional[int], out_dir: str) -> None:
    """Simulate SCENARIO, track it and score the result."""
    config = _apply_overrides(_load_scenario(scenario, seed, horizon), mode, max_hyp, min_weight,
                              drop_undetected_births, workers)
    settings = config.settings
    records = run_scenario(config.scenario, settings.mode, settings.pruning, settings.engine,
                           settings.top_hypotheses)
    out = ensure_directory(out_dir)
    truth: List[TruthScan] = [r.truth for r in records if r.truth is not None]
    labelled = [LabelledScan(MeasurementScan(r.scan_index, r.measurements), r.origins or ()) for r in records]
    _write_truth(out, truth, labelled)
    _write_trace(out, records)
    metrics = score(records, config.scenario.models)
    write_json(out / "metrics.json", metrics.to_dict())
    click.echo(f"Ran {len(records)} scans in {settings.mode} mode: "
               f"MAP cardinality accuracy {metrics.map_cardinality_accuracy:.3f}, "
               f"mean dropped mass {metrics.mean_dropped_mass:.3g}")


@main.command()
@click.option('--check', 'checks', type=click.Choice(sorted(CHECKS)), multiple=True,
              help='Run only this check (repeatable).')
@_guarded
def verify(checks: Tuple[str, ...]) -> None:
    """Run the oracle and closed-form verification suite."""
    results = run_verification_suite(checks)
    width = max(len(r.name) for r in results)
    for result in results:
        status = "ok" if result.passed else "FAIL"
        click.echo(f"{result.name.ljust(width)}  {status:4}  {result.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        click.echo(f"Verification failed: {', '.join(failed)}", err=True)
        sys.exit(EXIT_FAILURE)
    click.echo("All checks passed.")


if __name__ == '__main__':
    main()  # pragma: no cover
