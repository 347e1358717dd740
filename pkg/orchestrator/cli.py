"""Command-line interface for the HrSegNet crack segmentation engine."""

import functools
import logging
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
import typer

from app.complexity import model_complexity
from app.core.config import settings
from app.core.configfile import RunConfig, load_run_config
from app.core.errors import ArtifactIOError, HrSegError, UsageError
from app.core.logging import configure_logging
from app.data.augment import AugmentParams, normalize
from app.data.dataset import load_dataset
from app.data.png import read_image, write_image, write_mask
from app.data.synthetic import gen_synthetic
from app.metrics.confusion import CSV_HEADER
from app.model.checkpoint import load_checkpoint, read_checkpoint
from app.model.network import build_model
from app.model.presets import get_preset
from app.training.evaluation import evaluate
from app.training.trainer import CompositeSink, CsvLossSink, LoggingSink, train_loop

app = typer.Typer(help="HrSegNet crack segmentation: data, training, evaluation, analysis.")
logger = logging.getLogger(__name__)

OVERLAY_COLOR = np.array([1.0, 0.0, 0.0], dtype=np.float32).reshape(3, 1, 1)


def guarded(command: Callable[..., Any]) -> Callable[..., Any]:
    """Turn engine errors into one ``error[<code>]: ...`` line and a nonzero exit."""

    @functools.wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return command(*args, **kwargs)
        except HrSegError as exc:
            typer.echo(f"error[{exc.code}]: {exc.message}", err=True)
            raise typer.Exit(2 if isinstance(exc, UsageError) else 1)

    return wrapper


@app.callback()
def main_options(
    log_level: Optional[str] = typer.Option(None, help="Log level (default from HRSEG_LOG_LEVEL)"),
) -> None:
    configure_logging(log_level)


@app.command("gen-data")
@guarded
def gen_data(
    out: Path = typer.Option(..., "--out", help="Output directory"),
    count: int = typer.Option(20, help="Number of image/mask pairs"),
    size: int = typer.Option(128, help="Image side length in pixels"),
    seed: int = typer.Option(0, help="Generator seed"),
) -> None:
    """Generate a synthetic crack dataset."""
    if count < 1:
        raise UsageError(f"--count must be >= 1, got {count}")
    written = gen_synthetic(count, size, seed, out)
    typer.echo(f"wrote {len(written)} pairs to {out}")


@app.command()
@guarded
def train(
    config: Path = typer.Option(..., "--config", help="Run config file"),
    data: Path = typer.Option(..., "--data", help="Dataset directory"),
    out: Path = typer.Option(..., "--out", help="Output directory for checkpoints and loss log"),
    resume: Optional[Path] = typer.Option(None, "--resume", help="Checkpoint to continue from"),
) -> None:
    """Train a model; the last line printed is the final checkpoint path."""
    run = load_run_config(config)
    dataset = load_dataset(data)
    start, velocities = 0, None
    if resume is not None:
        payload = read_checkpoint(resume)
        model = load_checkpoint(resume, config=run.model)
        start, velocities = payload.iteration, payload.velocities
        logger.info("resuming from %s at iteration %d", resume, start)
    else:
        model = build_model(run.model, seed=run.train.seed)

    sink = CompositeSink(
        [
            LoggingSink(run.train.log_interval),
            CsvLossSink(out / "loss.csv", len(run.model.aux_heads), append=resume is not None),
        ]
    )
    result = train_loop(
        model, dataset, run.train, sink=sink, augment_params=run.data, out_dir=out,
        start_iteration=start, velocities=velocities,
    )
    if result.history:
        final = result.history[-1].total_loss
        typer.echo(f"final loss {final:.6f} at iteration {result.iteration}")
    typer.echo(str(result.last_checkpoint))


def _data_params(config: Optional[Path]) -> AugmentParams:
    return load_run_config(config).data if config is not None else RunConfig().data


@app.command("eval")
@guarded
def eval_command(
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Checkpoint file"),
    data: Path = typer.Option(..., "--data", help="Dataset directory"),
    config: Optional[Path] = typer.Option(None, "--config", help="Run config (for normalization)"),
) -> None:
    """Report mIoU, precision, recall and F1 on a dataset."""
    model = load_checkpoint(checkpoint)
    dataset = load_dataset(data)
    cm, metrics = evaluate(model, dataset, _data_params(config))
    typer.echo(metrics.report())
    typer.echo(f"pixels: tp={cm.tp} fp={cm.fp} fn={cm.fn} tn={cm.tn}")
    typer.echo(CSV_HEADER)
    typer.echo(metrics.csv_row())


@app.command()
@guarded
def predict(
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Checkpoint file"),
    image: Path = typer.Option(..., "--image", help="Input PNG image"),
    out: Path = typer.Option(..., "--out", help="Output mask PNG"),
    config: Optional[Path] = typer.Option(None, "--config", help="Run config (for normalization)"),
) -> None:
    """Write the predicted crack mask and a red overlay next to it."""
    model = load_checkpoint(checkpoint)
    rgb = read_image(image, error=ArtifactIOError)
    batch = normalize(rgb, _data_params(config))[None].astype(model.dtype)
    mask = model.predict(batch)[0, 0]
    write_mask(out, mask)

    overlay_path = out.with_name(f"{out.stem}_overlay.png")
    crack = mask[None].astype(bool)
    overlay = np.where(crack, 0.5 * rgb + 0.5 * OVERLAY_COLOR, rgb)
    write_image(overlay_path, overlay)
    typer.echo(f"mask: {out}")
    typer.echo(f"overlay: {overlay_path}")


@app.command()
@guarded
def analyze(
    config: Optional[Path] = typer.Option(None, "--config", help="Run config file"),
    preset: Optional[str] = typer.Option(None, "--preset", help="Named model variant, e.g. b32"),
    input_size: int = typer.Option(
        settings.reference_input_size, "--input-size", help="Square input side length"
    ),
    all_layers: bool = typer.Option(False, "--all-layers", help="Also list zero-cost layers"),
) -> None:
    """Print the per-layer complexity table and ``params=<M> flops=<G>``."""
    if (config is None) == (preset is None):
        raise UsageError("give exactly one of --config and --preset")
    model_config = load_run_config(config).model if config is not None else get_preset(preset or "")
    report = model_complexity(model_config, input_size, input_size)
    typer.echo(report.table(include_free=all_layers))
    typer.echo(report.totals_line())


def main() -> None:
    app()


if __name__ == "__main__":
    main()
