"""Command-line interface for dacnet.

Subcommands: ``train``, ``approx``, ``flops``, ``equiv``, ``demo`` and
``export``. Reports go to stdout (JSON with ``--json``), logs to the log
directory and warnings to stderr.

Exit codes: 0 success, 2 usage error, 3 criterion not met, 4 runtime failure.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional

import numpy as np
import typer
from pydantic import ValidationError

from config import (
    DESK_TRAIN_ITERS,
    EXIT_CRITERION_UNMET,
    EXIT_OK,
    EXIT_RUNTIME_FAILURE,
    get_default_seed,
)
from engine.executor import init_params
from models.network import NetworkSpec
from models.reports import ErrorResponse
from models.settings import TrainConfig
from tools.approximator import run_approximation
from tools.complexity import run_flops
from tools.datasets import load_dataset
from tools.demos import run_square_demo, run_three_point_demo
from tools.equivalence import non_equivalence_witness, run_equivalence
from tools.resnet import dacify, preset
from tools.targets import resolve_target
from tools.training import train_replicates
from utils.errors import DacnetError, ParameterSearchError
from utils.file_utils import load_config_file, load_spec, save_spec, write_history_csv
from utils.logger import get_logger

logger = get_logger(__name__)

app = typer.Typer(
    help="DAC networks: training, approximation, complexity and equivalence tools.",
    no_args_is_help=True,
    add_completion=False,
)

JSON_OPTION = typer.Option(False, "--json", help="Emit machine-readable JSON on stdout.")
THREADS_OPTION = typer.Option(1, "--threads", min=1, help="Worker threads for batch evaluation.")
SEED_OPTION = typer.Option(None, "--seed", help="Random seed (defaults to DACNET_SEED, then 0).")


def _emit(payload: str) -> None:
    typer.echo(payload)


def _fail(error: Exception, json_output: bool, code: int, details: Optional[str] = None) -> None:
    if json_output:
        _emit(ErrorResponse(error=str(error), details=details).model_dump_json(indent=2))
    else:
        typer.echo(f"❌ Error: {error}", err=True)
        if details:
            typer.echo(details, err=True)
    raise typer.Exit(code)


@contextmanager
def _reporting(json_output: bool) -> Iterator[None]:
    """Map exceptions to the exit-code contract."""
    try:
        yield
    except (typer.Exit, typer.BadParameter):
        raise
    except ParameterSearchError as e:
        logger.error(f"❌ Parameter search failed: {e}")
        _fail(e, json_output, EXIT_CRITERION_UNMET, json.dumps(e.diagnostic, default=str))
    except ValidationError as e:
        logger.error(f"❌ Invalid configuration: {e}")
        _fail(e, json_output, EXIT_RUNTIME_FAILURE, "configuration validation failed")
    except (DacnetError, FileNotFoundError, ValueError) as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        _fail(e, json_output, EXIT_RUNTIME_FAILURE, type(e).__name__)
    except Exception as e:
        logger.exception(f"❌ Unexpected error: {e}")
        _fail(e, json_output, EXIT_RUNTIME_FAILURE, type(e).__name__)


def _seed(seed: Optional[int]) -> int:
    return seed if seed is not None else get_default_seed()


def resolve_model(value: str) -> NetworkSpec:
    """A spec JSON path, else a preset name."""
    path = Path(value)
    if path.suffix.lower() == ".json":
        return load_spec(path)
    return preset(value)


def parse_input_shape(value: Optional[str]) -> Optional[List[int]]:
    """``"80x80x3"`` -> ``[80, 80, 3]``; ``"16"`` -> ``[16]``."""
    if value is None:
        return None
    try:
        shape = [int(part) for part in value.lower().split("x")]
    except ValueError:
        raise typer.BadParameter(f"expected HxWxC or a feature count, got '{value}'") from None
    if min(shape) < 1:
        raise typer.BadParameter(f"dimensions must be positive, got '{value}'")
    return shape


def _train_config(
    config_path: Optional[Path], iters: Optional[int], seed: int, batch_size: Optional[int]
) -> TrainConfig:
    """Config file values, rescaled to ``iters`` when given; flags win."""
    values = load_config_file(config_path) if config_path else {}
    values["seed"] = seed
    if batch_size is not None:
        values["batch_size"] = batch_size
    if iters is None and not config_path:
        iters = DESK_TRAIN_ITERS
    if iters is not None:
        values = {k: v for k, v in values.items() if k not in ("total_iters", "lr_boundaries")}
        return TrainConfig.scaled(iters, **values)
    return TrainConfig(**values)


@app.command()
def train(
    model: str = typer.Option(..., "--model", help="Preset name or spec JSON path."),
    data: str = typer.Option(..., "--data", help="synthetic:<name>, cifar100:<path> or a CIFAR-10 path."),
    config: Optional[Path] = typer.Option(None, "--config", help="TrainConfig as JSON or YAML."),
    out: Path = typer.Option(Path("run"), "--out", help="Output directory."),
    replicates: int = typer.Option(1, "--replicates", min=1, help="Runs over folds 0..K-1 with seeds seed+k."),
    iters: Optional[int] = typer.Option(None, "--iters", min=1, help="Total iterations (schedule rescaled)."),
    batch_size: Optional[int] = typer.Option(None, "--batch-size", min=1),
    samples: Optional[int] = typer.Option(None, "--samples", min=1, help="Size of a synthetic dataset."),
    shard_gradients: bool = typer.Option(False, "--shard-gradients", help="Split each batch across --threads."),
    threads: int = THREADS_OPTION,
    seed: Optional[int] = SEED_OPTION,
    json_output: bool = JSON_OPTION,
):
    """Train a network and write history CSV, final spec and summary."""
    with _reporting(json_output):
        run_seed = _seed(seed)
        cfg = _train_config(config, iters, run_seed, batch_size)
        net = resolve_model(model)
        dataset = load_dataset(data, seed=run_seed, samples=samples)
        result = train_replicates(net, dataset, cfg, replicates, threads, shard_gradients)

        out.mkdir(parents=True, exist_ok=True)
        runs = []
        for k, run in enumerate(result.runs):
            suffix = "" if replicates == 1 else f"_{k}"
            write_history_csv(run.history.rows, out / f"history{suffix}.csv")
            save_spec(run.spec, out / f"model{suffix}.json")
            final = run.history.rows[-1]
            runs.append({"seed": run.history.seed, "fold": run.history.fold_index, "final": final.model_dump()})

        summary = {
            "model": net.name,
            "data": data,
            "replicates": replicates,
            "config": cfg.model_dump(),
            "runs": runs,
            "estimate": None,
        }
        if result.estimate is not None:
            summary["estimate"] = dict(result.estimate.model_dump(), stderr=result.estimate.stderr)
        (out / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")

        if json_output:
            _emit(json.dumps(summary, indent=2))
        else:
            for run in runs:
                final = run["final"]
                _emit(
                    f"seed {run['seed']}: epoch {final['epoch']}, train err {final['train_err']:.4f}, "
                    f"loss {final['train_loss']:.4f}"
                )
            if result.estimate is not None:
                e = result.estimate
                _emit(f"early stop: m={e.m}, T̄={e.t_bar:.6f}, stderr={e.stderr:.6f}")
            _emit(f"✅ Outputs written to {out}")
    raise typer.Exit(EXIT_OK)


@app.command()
def approx(
    dim: int = typer.Option(..., "--dim", min=1, help="Input dimension d."),
    fn: str = typer.Option(..., "--fn", help="Named target or x1..xd,value CSV table."),
    epsilon: Optional[float] = typer.Option(None, "--epsilon", help="Target sup error (> 0)."),
    delta: Optional[float] = typer.Option(None, "--delta", help="Spike radius (skips the search with --mesh)."),
    mesh: Optional[int] = typer.Option(None, "--mesh", min=1, help="Cells per axis (with --delta)."),
    emit: Path = typer.Option(Path("approx.json"), "--emit", help="Where to write the network spec."),
    certificate: Optional[Path] = typer.Option(None, "--certificate", help="Certificate path (default <emit>.cert.txt)."),
    contract: bool = typer.Option(
        True, "--contract/--no-contract", help="Contract the input by 1 - delta so spike windows stay in the cube."
    ),
    threads: int = THREADS_OPTION,
    json_output: bool = JSON_OPTION,
):
    """Emit a DAC network approximating a function on [-1, 1]^d and certify it."""
    if epsilon is not None and epsilon <= 0:
        raise typer.BadParameter(f"epsilon must be > 0, got {epsilon}", param_hint="--epsilon")
    if epsilon is None and (delta is None or mesh is None):
        raise typer.BadParameter("give --epsilon, or both --delta and --mesh", param_hint="--epsilon")
    if delta is not None and delta <= 0:
        raise typer.BadParameter(f"delta must be > 0, got {delta}", param_hint="--delta")

    with _reporting(json_output):
        target = resolve_target(fn)
        net, cert = run_approximation(
            target, target.name, dim, eps=epsilon, delta=delta, mesh=mesh, threads=threads, contract=contract
        )
        spec_path = save_spec(net, emit)
        cert_path = certificate or emit.with_suffix(".cert.txt")
        cert_path.parent.mkdir(parents=True, exist_ok=True)
        cert_path.write_text(cert.to_text(), encoding="utf-8")

        if json_output:
            _emit(json.dumps({"certificate": cert.model_dump(), "spec": str(spec_path)}, indent=2))
        else:
            _emit(cert.to_text().rstrip("\n"))
            _emit(f"spec: {spec_path}")
        code = EXIT_CRITERION_UNMET if cert.passed is False else EXIT_OK
    raise typer.Exit(code)


@app.command()
def flops(
    model: str = typer.Option(..., "--model", help="Preset name or spec JSON path."),
    input_shape: Optional[str] = typer.Option(None, "--input-shape", help="HxWxC (default: the spec's)."),
    baseline: Optional[str] = typer.Option(None, "--baseline", help="Standard model to compute DAC/std ratios against."),
    out: Optional[Path] = typer.Option(None, "--out", help="Also write the JSON report here."),
    json_output: bool = JSON_OPTION,
):
    """Per-layer FLOPs and weights (formula and instrumented)."""
    shape = parse_input_shape(input_shape)
    with _reporting(json_output):
        spec = resolve_model(model)
        base = resolve_model(baseline) if baseline else None
        report = run_flops(spec, shape, base)
        payload = report.model_dump_json(indent=2)
        if out is not None:
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(payload, encoding="utf-8")
        if json_output:
            _emit(payload)
        else:
            _emit(report.to_text())
    raise typer.Exit(EXIT_OK)


@app.command()
def equiv(
    layers: int = typer.Option(3, "--layers", min=1, help="Layers in the random chain."),
    width: int = typer.Option(8, "--width", min=1, help="Units per layer."),
    samples: int = typer.Option(100, "--samples", min=1, help="Random inputs."),
    witness: bool = typer.Option(False, "--witness", help="Also search a shared-bias net for a non-shared DAC unit."),
    seed: Optional[int] = SEED_OPTION,
    json_output: bool = JSON_OPTION,
):
    """Check the standard -> preactivated shared-bias rewrite numerically."""
    with _reporting(json_output):
        report = run_equivalence(layers, width, _seed(seed), samples)
        found = non_equivalence_witness() if witness else None
        if json_output:
            payload = {"equivalence": report.model_dump()}
            if found is not None:
                payload["witness"] = found.model_dump()
            _emit(json.dumps(payload, indent=2))
        else:
            _emit(f"max deviation: {report.max_deviation:.3e} (tolerance {report.tolerance:.0e})")
            if found is not None:
                _emit(
                    f"shared-bias best deviation from {found.target}: {found.best_deviation:.3e} "
                    f"over {found.candidates_tried} candidates"
                )
        code = EXIT_OK if report.passed else EXIT_CRITERION_UNMET
    raise typer.Exit(code)


@app.command()
def demo(
    name: str = typer.Argument(..., help="three-point or square."),
    train_model: bool = typer.Option(False, "--train", help="Also train the architecture from scratch."),
    samples: int = typer.Option(1000, "--samples", min=1, help="Generated samples (square)."),
    threads: int = THREADS_OPTION,
    seed: Optional[int] = SEED_OPTION,
    json_output: bool = JSON_OPTION,
):
    """Evaluate the explicit DAC constructions on the toy datasets."""
    if name not in ("three-point", "square"):
        raise typer.BadParameter(f"unknown demo '{name}', expected three-point or square", param_hint="NAME")
    with _reporting(json_output):
        run_seed = _seed(seed)
        if name == "square":
            report = run_square_demo(samples, run_seed, train_model, threads=threads)
        else:
            report = run_three_point_demo(run_seed, train_model, threads=threads)
        if json_output:
            _emit(report.model_dump_json(indent=2))
        else:
            for key, value in report.checks.items():
                _emit(f"{key} = {value:.6g}")
            _emit(f"correctly classified: {report.correctly_classified}/{report.samples}")
            _emit(f"linearly separable: {report.linear_separable}")
            if report.trained_accuracy is not None:
                _emit(f"trained accuracy: {report.trained_accuracy:.4f}")
            _emit("✅ passed" if report.passed else "❌ failed")
        code = EXIT_OK if report.passed else EXIT_CRITERION_UNMET
    raise typer.Exit(code)


@app.command()
def export(
    model: str = typer.Option(..., "--model", help="Preset name or spec JSON path."),
    out: Path = typer.Option(..., "--out", help="Spec JSON to write."),
    dac: bool = typer.Option(False, "--dacify", help="Apply the DAC ResNet rewrite."),
    init: bool = typer.Option(False, "--init", help="Fill missing parameters (He-normal, seeded)."),
    seed: Optional[int] = SEED_OPTION,
    json_output: bool = JSON_OPTION,
):
    """Write a preset or rewritten spec to JSON."""
    with _reporting(json_output):
        spec = resolve_model(model)
        if dac:
            spec = dacify(spec)
        if init:
            spec = init_params(spec, np.random.default_rng(_seed(seed)))
        path = save_spec(spec, out)
        if json_output:
            _emit(spec.model_dump_json(indent=2))
        else:
            _emit(f"✅ {spec.name}: {len(spec.layers)} layers written to {path}")
    raise typer.Exit(EXIT_OK)


def main() -> None:
    app()


if __name__ == "__main__":
    main()
