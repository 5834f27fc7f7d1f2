"""Command-line entry point: train, attack, mine, probe, report, runs."""

import logging
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional, Tuple

import click
from rich.console import Console
from rich.table import Table

from backend.classifier.dataset import save_dataset, train_eval_split
from backend.classifier.training import clean_accuracy, train_toy
from backend.classifier.weights_io import load_weights, save_weights
from backend.errors import MOSAttackError
from backend.harness.config import DEFAULT_CONFIG, load_experiment_config
from backend.harness.experiment import run_experiment
from backend.harness.ledger import RunLedger
from backend.harness.mining import MinerRunner
from backend.harness.probe import gradient_cost_probe, probe_frame
from backend.harness.reports import merge_reports, print_table
from backend.miner.patterns import MinerConfig
from backend.startup import run_preflight_checks
from backend.utils import load_config, sanitize_error, save_config

logger = logging.getLogger("MOSAttack")
console = Console()


def _ledger() -> Optional[RunLedger]:
    try:
        return RunLedger()
    except Exception as e:
        logger.warning(f"[MOSAttack] Run ledger unavailable: {e}")
        return None


@contextmanager
def recorded_run(kind: str, config_path: Optional[str], output_dir: Optional[Path]) -> Iterator[None]:
    """Record the run in the ledger; a failing ledger never fails the run."""
    ledger = _ledger()
    run_id = None
    if ledger is not None:
        try:
            run_id = ledger.start(kind, config_path, str(output_dir) if output_dir else None)
        except Exception as e:
            logger.warning(f"[MOSAttack] Could not record run: {e}")
    status, message = "Completed", None
    try:
        yield
    except BaseException as e:
        status, message = "Failed", sanitize_error(e) if isinstance(e, Exception) else "Interrupted"
        raise
    finally:
        if ledger is not None and run_id is not None:
            try:
                ledger.finish(run_id, status, message)
            except Exception as e:
                logger.warning(f"[MOSAttack] Could not update run {run_id}: {e}")


@click.group()
@click.option(
    "--log-level",
    default=lambda: os.environ.get("MOSATTACK_LOG_LEVEL", "INFO"),
    show_default="INFO",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
)
def cli(log_level: str) -> None:
    """Set-based multi-loss adversarial attack toolkit."""
    logging.basicConfig(level=getattr(logging, log_level.upper()), format="%(levelname)s %(message)s")


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="Experiment config JSON.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="Weight file to write.")
@click.option("--dataset-out", type=click.Path(dir_okay=False), default=None, help="Also write the eval split CSV.")
@click.option("--adversarial/--standard", default=None, help="Override the config's training mode.")
def train(config_path: Optional[str], out_path: Optional[str], dataset_out: Optional[str], adversarial: Optional[bool]) -> None:
    """Train the toy classifier and write its weight file.

    The resolved config, pointing at the new weights, is saved next to them
    as <weights>.config.json for later attack runs.
    """
    try:
        cfg = load_experiment_config(config_path)
    except MOSAttackError as e:
        raise click.ClickException(sanitize_error(e))
    out = Path(out_path) if out_path else cfg.output_dir / "model.mosw"

    with recorded_run("train", config_path, out.parent):
        t = cfg.training
        train_set, eval_set = train_eval_split(t.n_train, t.n_eval, t.d, t.n_classes, t.data_seed, t.spread)
        try:
            model = train_toy(t, train_set, adversarial=adversarial)
        except MOSAttackError as e:
            raise click.ClickException(sanitize_error(e))
        save_weights(out, model)
        if dataset_out:
            save_dataset(dataset_out, eval_set)
        resolved = cfg.to_dict()
        resolved["model"] = {**resolved["model"], "weights_path": str(out.resolve())}
        config_out = out.with_suffix(".config.json")
        if not save_config(config_out, resolved):
            logger.warning(f"[MOSAttack] Resolved config not written next to {out.name}")
        console.print(
            f"Trained {model.layer_dims}: train accuracy {model.report['clean_accuracy']:.4f}, "
            f"eval accuracy {clean_accuracy(model, eval_set):.4f} -> {out}"
        )


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True, help="Experiment config JSON.")
@click.option("--weights", type=click.Path(exists=True, dir_okay=False), default=None, help="Use these weights.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None, help="Override output_dir.")
@click.option("--workers", type=int, default=None, help="Worker threads (default MOSATTACK_WORKERS).")
@click.option("--progress/--no-progress", default=True)
def attack(config_path: str, weights: Optional[str], out_dir: Optional[str], workers: Optional[int], progress: bool) -> None:
    """Run the configured attack grid and write results, loss matrices and traces."""
    overrides = {}
    if out_dir:
        overrides["output_dir"] = out_dir
    try:
        cfg = load_experiment_config(config_path, overrides)
    except MOSAttackError as e:
        raise click.ClickException(sanitize_error(e))

    check = run_preflight_checks(cfg.output_dir, [spec.losses for spec in cfg.attacks], workers)
    if check["status"] != "completed":
        raise click.ClickException(check["message"])

    with recorded_run("attack", config_path, cfg.output_dir):
        model = load_weights(weights) if weights else None
        result = run_experiment(cfg, model=model, workers=workers, progress=progress)
        print_table(result.table, console)
        console.print(f"Artifacts written to {cfg.output_dir}")


@cli.command()
@click.argument("artifacts", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="Config JSON with a 'miner' section.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default="patterns.json", show_default=True)
@click.option("--by-label", is_flag=True, help="Also report one histogram per artifact.")
def mine(artifacts: Tuple[str, ...], config_path: Optional[str], out_path: str, by_label: bool) -> None:
    """Mine loss-synergy patterns from loss-matrix artifacts."""
    try:
        data = load_config(config_path, {"miner": DEFAULT_CONFIG["miner"]})
        miner_dict = {**DEFAULT_CONFIG["miner"], **data.get("miner", {})}
        if miner_dict.get("mu") is None:
            miner_dict["mu"] = DEFAULT_CONFIG["attack"]["mu"]
        cfg = MinerConfig.from_dict(miner_dict)
    except MOSAttackError as e:
        raise click.ClickException(sanitize_error(e))

    with recorded_run("mine", config_path, Path(out_path).parent):
        result = MinerRunner.run(artifacts, cfg, out_path=out_path, by_label=by_label)
        if not result["success"]:
            raise click.ClickException(result["message"])
        hist = result["histogram"]
        view = Table(title="Loss synergy patterns (>= 1%)")
        view.add_column("Pattern")
        view.add_column("Count", justify="right")
        view.add_column("Percent", justify="right")
        for key, pct in hist.filtered.items():
            view.add_row(key, str(hist.counts[key]), f"{pct:.2f}")
        console.print(view)
        console.print(f"{result['message']}; all-losses share {hist.all_losses_share:.2f}% -> {out_path}")


@cli.command()
@click.option("--k", "k_values", type=int, multiple=True, default=(1, 4, 8), show_default=True)
@click.option("--losses", default="0", show_default=True, help="Preset name or comma list of loss ids.")
@click.option("--weights", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--repeats", type=int, default=5, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="Write the timing table as CSV.")
def probe(k_values: Tuple[int, ...], losses: str, weights: Optional[str], repeats: int, out_path: Optional[str]) -> None:
    """Time one set-objective gradient against K single-loss gradients."""
    model = load_weights(weights) if weights else None
    try:
        rows = gradient_cost_probe(model, k_values, losses, repeats=repeats)
    except MOSAttackError as e:
        raise click.ClickException(sanitize_error(e))
    frame = probe_frame(rows)
    view = Table(title="Gradient cost")
    for col in frame.columns:
        view.add_column(col, justify="right")
    for rec in frame.itertuples(index=False):
        view.add_row(str(rec.K), str(rec.m), f"{rec.mos_seconds:.2e}", f"{rec.single_seconds:.2e}", f"{rec.ratio:.3f}")
    console.print(view)
    if out_path:
        frame.to_csv(out_path, index=False)


@cli.command()
@click.argument("results", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", type=click.Path(file_okay=False), default="report", show_default=True)
def report(results: Tuple[str, ...], out_dir: str) -> None:
    """Merge results.csv files into a wide ASR table and a long-format table."""
    merged = merge_reports(results, out_dir)
    if not merged["success"]:
        raise click.ClickException(merged["message"])
    console.print(f"{merged['message']}: {merged['table']}, {merged['long']}")


@cli.command()
def runs() -> None:
    """List recorded runs."""
    from query_runs import list_runs

    list_runs(console=console)


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
