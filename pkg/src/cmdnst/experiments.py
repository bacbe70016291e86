"""Scripted studies: toy 1D alignment, moment ablation, lr study, benchmark.

Every experiment can write its results (CSV/PNG/JSON) into an output
directory together with a manifest recording the configuration and
git-style content hashes of its inputs, so a results directory is
self-describing and reproducible runs are byte-comparable.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
import platform
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from statistics import fmean, stdev
from typing import NamedTuple, Sequence

import numpy as np
import torch

from .encoder import Architecture, Encoder, EncoderSpec, load_encoder
from .errors import ConfigError, InvalidInputError, OptimizationDivergedError
from .images import save_image
from .losses import LossFamily, StyleLossConfig, equal_layer_weights, parse_family
from .measures import EmpiricalMeasure
from .optimizer import (
    AlignmentResult,
    OptimizationConfig,
    OptimizationRun,
    align_samples,
    optimize_from_targets,
    prepare_targets,
)

TOY_GAP_ORDERS = 6

_BETA_SOURCE = (2.0, 3.0)
_BETA_TARGET = (0.5, 0.45)


def content_hash(data: bytes) -> str:
    """Hash bytes the way git hashes a blob: sha1 over a length header + body."""
    header = b"blob %d\x00" % len(data)
    return hashlib.sha1(header + data).hexdigest()


def array_content_hash(values) -> str:
    """Git-blob hash of an array's raw bytes (a tensor is detached first)."""
    arr = np.ascontiguousarray(
        values.detach().cpu().numpy() if isinstance(values, torch.Tensor) else values
    )
    return content_hash(arr.tobytes())


def write_manifest(out_dir, experiment: str, config: dict, inputs: dict[str, str]) -> Path:
    """Write <out_dir>/manifest.json describing one experiment invocation."""
    path = Path(out_dir) / "manifest.json"
    payload = {"experiment": experiment, "config": config, "inputs": inputs}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


@dataclass(frozen=True)
class ToyFamilySpec:
    """One toy-experiment entry: a loss family plus its CMD moment order."""

    family: LossFamily
    n_moments: int = 5

    def __post_init__(self):
        object.__setattr__(self, "family", parse_family(self.family))
        k = self.n_moments
        if isinstance(k, bool) or not isinstance(k, int) or k < 1:
            raise ConfigError(f"n_moments must be an integer >= 1, got {k!r}")

    @property
    def label(self) -> str:
        if self.family is LossFamily.CMD:
            return f"cmd_k{self.n_moments}"
        return self.family.value


def parse_toy_family(text: str | ToyFamilySpec) -> ToyFamilySpec:
    """Parse 'cmd', 'cmd:50', 'mm', 'mmd', 'ot' into a ToyFamilySpec."""
    if isinstance(text, ToyFamilySpec):
        return text
    name, _, arg = str(text).partition(":")
    family = parse_family(name)
    if not arg:
        return ToyFamilySpec(family=family)
    if family is not LossFamily.CMD:
        raise ConfigError(f"only the cmd family takes a moment order, got {text!r}")
    try:
        k = int(arg)
    except ValueError:
        raise ConfigError(f"bad moment order in {text!r}") from None
    return ToyFamilySpec(family=family, n_moments=k)


class ToyFamilyResult(NamedTuple):
    spec: ToyFamilySpec
    alignment: AlignmentResult

    @property
    def gaps(self) -> dict[int, float]:
        return self.alignment.gaps


def beta_sample_pair(n_samples: int, seed: int) -> tuple[EmpiricalMeasure, EmpiricalMeasure]:
    """Draw the source Beta(2, 3) and target Beta(0.5, 0.45) clouds, (n, 1) each."""
    rng = np.random.Generator(np.random.PCG64(seed))
    source = rng.beta(*_BETA_SOURCE, size=(n_samples, 1))
    target = rng.beta(*_BETA_TARGET, size=(n_samples, 1))
    return (
        EmpiricalMeasure.from_samples(torch.from_numpy(source)),
        EmpiricalMeasure.from_samples(torch.from_numpy(target)),
    )


def run_toy_experiment(
    families: Sequence[str | ToyFamilySpec],
    n_samples: int = 10_000,
    steps: int = 2000,
    seed: int = 0,
    learning_rate: float = 0.05,
    out_dir: str | os.PathLike | None = None,
) -> list[ToyFamilyResult]:
    """Align Beta(2,3) samples onto Beta(0.5,0.45) under each loss family.

    Returns one result per family, in input order, each carrying the moment
    gaps for orders 1..6. With ``out_dir`` set, writes a gap table, sample
    dumps, per-family histograms, and a manifest.
    """
    if isinstance(n_samples, bool) or not isinstance(n_samples, int) or n_samples < 100:
        raise InvalidInputError(f"n_samples must be an integer >= 100, got {n_samples!r}")
    specs = [parse_toy_family(f) for f in families]
    if not specs:
        raise InvalidInputError("need at least one loss family")
    source, target = beta_sample_pair(n_samples, seed)

    results = []
    for spec in specs:
        alignment = align_samples(
            source,
            target,
            spec.family,
            n_moments=spec.n_moments,
            steps=steps,
            learning_rate=learning_rate,
            gap_orders=TOY_GAP_ORDERS,
        )
        results.append(ToyFamilyResult(spec=spec, alignment=alignment))

    if out_dir is not None:
        _write_toy_outputs(out_dir, results, source, target, n_samples, steps, seed, learning_rate)
    return results


def _write_toy_outputs(out_dir, results, source, target, n_samples, steps, seed, learning_rate):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "gaps.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["family", "order", "gap"])
        for result in results:
            for order in range(1, TOY_GAP_ORDERS + 1):
                writer.writerow([result.spec.label, order, repr(result.gaps[order])])
    _write_sample_column(out / "samples_source.csv", source.samples)
    _write_sample_column(out / "samples_target.csv", target.samples)
    for result in results:
        final = result.alignment.measure.samples
        _write_sample_column(out / f"samples_{result.spec.label}.csv", final)
        _write_histogram(out / f"hist_{result.spec.label}.csv", final, target.samples)
    write_manifest(
        out,
        "toy",
        config={
            "families": [r.spec.label for r in results],
            "n_samples": n_samples,
            "steps": steps,
            "seed": seed,
            "learning_rate": learning_rate,
            "source_beta": list(_BETA_SOURCE),
            "target_beta": list(_BETA_TARGET),
        },
        inputs={
            "source_samples": array_content_hash(source.samples),
            "target_samples": array_content_hash(target.samples),
        },
    )


def _write_sample_column(path, samples: torch.Tensor) -> None:
    flat = samples.detach().reshape(-1).tolist()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value"])
        for v in flat:
            writer.writerow([repr(v)])


def _write_histogram(path, final: torch.Tensor, target: torch.Tensor, bins: int = 50) -> None:
    f = final.detach().reshape(-1).numpy()
    t = target.detach().reshape(-1).numpy()
    lo = float(min(f.min(), t.min()))
    hi = float(max(f.max(), t.max()))
    if hi <= lo:
        hi = lo + 1.0
    f_counts, edges = np.histogram(f, bins=bins, range=(lo, hi))
    t_counts, _ = np.histogram(t, bins=bins, range=(lo, hi))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "final_count", "target_count"])
        for i in range(bins):
            writer.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(f_counts[i]), int(t_counts[i])])


def ablation_grid(k: int = 5) -> list[tuple[int, ...]]:
    """All contiguous binary moment-weight vectors a[i..j] = 1, 1 <= i <= j <= k.

    For k = 5 this is the 15-cell upper-triangular layout: diagonal cells use
    a single moment order, cell (i, j) uses orders i through j.
    """
    if isinstance(k, bool) or not isinstance(k, int) or k < 1:
        raise ConfigError(f"k must be an integer >= 1, got {k!r}")
    grid = []
    for i in range(k):
        for j in range(i, k):
            grid.append(tuple(1 if i <= p <= j else 0 for p in range(k)))
    return grid


class AblationCell(NamedTuple):
    vector: tuple[int, ...]
    run: OptimizationRun


def _vector_label(vector: Sequence[int]) -> str:
    return "a=" + "".join(str(int(v)) for v in vector)


def run_moment_ablation(
    content,
    style,
    encoder: Encoder,
    k: int = 5,
    grid: Sequence[Sequence[int]] | None = None,
    layer_weights: dict[str, float] | None = None,
    opt_cfg: OptimizationConfig | None = None,
    out_dir: str | os.PathLike | None = None,
    max_workers: int | None = None,
) -> list[AblationCell]:
    """One CMD stylization per binary moment-weight vector.

    ``grid`` defaults to ``ablation_grid(k)``. Duplicate vectors are dropped
    with a warning; an all-zero vector is rejected. Cells run in a bounded
    thread pool and come back in grid order.
    """
    if grid is None:
        grid = ablation_grid(k)
    vectors: list[tuple[int, ...]] = []
    for vec in grid:
        vec = tuple(int(v) for v in vec)
        if any(v not in (0, 1) for v in vec):
            raise ConfigError(f"moment-weight vectors must be binary, got {vec}")
        if not any(vec):
            raise ConfigError("all-zero moment weight vector selects no moments")
        if vec in vectors:
            warnings.warn(f"dropping duplicate moment-weight vector {vec}", stacklevel=2)
            continue
        vectors.append(vec)
    if layer_weights is None:
        layer_weights = equal_layer_weights(encoder.spec.style_layers)
    if opt_cfg is None:
        opt_cfg = OptimizationConfig()

    targets = prepare_targets(
        encoder,
        content,
        style,
        StyleLossConfig(family=LossFamily.CMD, layer_weights=layer_weights),
    )

    def run_cell(vector: tuple[int, ...]) -> AblationCell:
        cfg = StyleLossConfig(
            family=LossFamily.CMD,
            layer_weights=layer_weights,
            moment_weights=tuple(float(v) for v in vector),
        )
        run = optimize_from_targets(
            targets, encoder, cfg, opt_cfg, label=_vector_label(vector)
        )
        return AblationCell(vector=vector, run=run)

    with ThreadPoolExecutor(max_workers=_pool_size(len(vectors), max_workers)) as pool:
        cells = list(pool.map(run_cell, vectors))

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "ablation.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["vector", "iterations", "stop_reason", "total", "content", "style"])
            for cell in cells:
                final = cell.run.final
                writer.writerow(
                    [
                        "".join(map(str, cell.vector)),
                        cell.run.iterations_executed,
                        cell.run.stop_reason.value,
                        repr(final.total),
                        repr(final.content),
                        repr(final.style),
                    ]
                )
        for cell in cells:
            stem = "ablate_" + "".join(map(str, cell.vector))
            save_image(out / f"{stem}.png", cell.run.output)
            cell.run.write_trace_csv(out / f"{stem}_trace.csv")
        write_manifest(
            out,
            "moment-ablation",
            config={
                "k": k,
                "vectors": ["".join(map(str, c.vector)) for c in cells],
                "layer_weights": layer_weights,
                "opt": _config_dict(opt_cfg),
            },
            inputs={"content": array_content_hash(content), "style": array_content_hash(style)},
        )
    return cells


class LrStudyEntry(NamedTuple):
    """Outcome for one learning rate; ``run`` is None when the run diverged."""

    learning_rate: float
    run: OptimizationRun | None
    error: str | None

    @property
    def final_content_loss(self) -> float | None:
        return self.run.final.content if self.run is not None else None


def run_lr_study(
    content,
    style,
    encoder: Encoder,
    learning_rates: Sequence[float],
    loss_cfg: StyleLossConfig | None = None,
    opt_cfg: OptimizationConfig | None = None,
    out_dir: str | os.PathLike | None = None,
    max_workers: int | None = None,
) -> list[LrStudyEntry]:
    """Stylize once per learning rate with shared targets.

    A run whose loss diverges is recorded as an aborted entry instead of
    raising. Entries come back in input order.
    """
    rates = [float(lr) for lr in learning_rates]
    if not rates:
        raise InvalidInputError("need at least one learning rate")
    for lr in rates:
        if not math.isfinite(lr) or lr <= 0.0:
            raise InvalidInputError(f"learning rates must be positive, got {lr}")
    if loss_cfg is None:
        loss_cfg = StyleLossConfig(
            family=LossFamily.CMD,
            layer_weights=equal_layer_weights(encoder.spec.style_layers),
        )
    if opt_cfg is None:
        opt_cfg = OptimizationConfig()
    targets = prepare_targets(encoder, content, style, loss_cfg)

    def run_one(lr: float) -> LrStudyEntry:
        cfg = dataclasses.replace(opt_cfg, learning_rate=lr)
        try:
            run = optimize_from_targets(targets, encoder, loss_cfg, cfg, label=f"lr={lr:g}")
        except OptimizationDivergedError as exc:
            return LrStudyEntry(learning_rate=lr, run=None, error=str(exc))
        return LrStudyEntry(learning_rate=lr, run=run, error=None)

    with ThreadPoolExecutor(max_workers=_pool_size(len(rates), max_workers)) as pool:
        entries = list(pool.map(run_one, rates))

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "lr_study.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["learning_rate", "status", "final_content", "iterations"])
            for entry in entries:
                if entry.run is None:
                    writer.writerow([repr(entry.learning_rate), "aborted", "", ""])
                else:
                    writer.writerow(
                        [
                            repr(entry.learning_rate),
                            "ok",
                            repr(entry.final_content_loss),
                            entry.run.iterations_executed,
                        ]
                    )
        for entry in entries:
            if entry.run is not None:
                save_image(out / f"lr_{entry.learning_rate:g}.png", entry.run.output)
        write_manifest(
            out,
            "lr-study",
            config={
                "learning_rates": rates,
                "loss": _config_dict(loss_cfg),
                "opt": _config_dict(opt_cfg),
            },
            inputs={"content": array_content_hash(content), "style": array_content_hash(style)},
        )
    return entries


@dataclass(frozen=True)
class BenchmarkReport:
    """Wall-clock timing of the optimization loop for one loss family."""

    method: str
    image_size: int
    iterations: int
    repeats: int
    mean_seconds: float
    std_seconds: float
    hardware: str

    def __post_init__(self):
        if self.repeats < 1:
            raise InvalidInputError(f"repeats must be >= 1, got {self.repeats}")
        if not self.mean_seconds > 0.0:
            raise InvalidInputError(f"mean_seconds must be positive, got {self.mean_seconds}")


def _hardware_descriptor() -> str:
    cpu = platform.processor() or platform.machine() or "unknown-cpu"
    return f"{cpu} / {platform.system()} / torch {torch.__version__} / {torch.get_num_threads()} threads"


def run_benchmark(
    methods: Sequence[str | LossFamily],
    image_size: int = 128,
    iterations: int = 100,
    repeats: int = 5,
    encoder: Encoder | None = None,
    seed: int = 0,
    out_dir: str | os.PathLike | None = None,
) -> list[BenchmarkReport]:
    """Time the optimization loop per loss family on synthetic images.

    The stopping rule is disabled (every run executes exactly ``iterations``
    steps) and only the loop is timed; encoder loading, target extraction,
    and I/O stay outside the clock. Each family gets a short untimed warm-up
    run first so one-time allocator and kernel-cache costs do not leak into
    the per-iteration numbers. Timing runs sequentially.
    """
    families = [parse_family(m) for m in methods]
    if not families:
        raise InvalidInputError("need at least one method")
    if isinstance(iterations, bool) or not isinstance(iterations, int) or iterations < 1:
        raise InvalidInputError(f"iterations must be an integer >= 1, got {iterations!r}")
    if isinstance(repeats, bool) or not isinstance(repeats, int) or repeats < 1:
        raise InvalidInputError(f"repeats must be an integer >= 1, got {repeats!r}")
    if isinstance(image_size, bool) or not isinstance(image_size, int) or image_size < 32:
        raise InvalidInputError(f"image_size must be an integer >= 32, got {image_size!r}")
    if encoder is None:
        encoder = load_encoder(EncoderSpec(architecture=Architecture.TINY, weight_source=seed))

    generator = torch.Generator().manual_seed(seed)
    content = torch.rand((image_size, image_size, 3), generator=generator, dtype=encoder.dtype)
    style = torch.rand((image_size, image_size, 3), generator=generator, dtype=encoder.dtype)

    opt_cfg = OptimizationConfig(
        alpha=0.5,
        max_iterations=iterations,
        min_iterations=iterations,
        seed=seed,
    )
    warm = min(iterations, 5)
    warm_cfg = OptimizationConfig(
        alpha=0.5, max_iterations=warm, min_iterations=warm, seed=seed
    )
    hardware = _hardware_descriptor()
    reports = []
    for family in families:
        loss_cfg = StyleLossConfig(
            family=family,
            layer_weights=equal_layer_weights(encoder.spec.style_layers),
        )
        targets = prepare_targets(encoder, content, style, loss_cfg)
        optimize_from_targets(targets, encoder, loss_cfg, warm_cfg, label=family.value)
        durations = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            optimize_from_targets(targets, encoder, loss_cfg, opt_cfg, label=family.value)
            durations.append(time.perf_counter() - t0)
        reports.append(
            BenchmarkReport(
                method=family.value,
                image_size=image_size,
                iterations=iterations,
                repeats=repeats,
                mean_seconds=fmean(durations),
                std_seconds=stdev(durations) if repeats > 1 else 0.0,
                hardware=hardware,
            )
        )

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "benchmark.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["method", "image_size", "iterations", "repeats", "mean_seconds", "std_seconds", "hardware"]
            )
            for report in reports:
                writer.writerow(
                    [
                        report.method,
                        report.image_size,
                        report.iterations,
                        report.repeats,
                        repr(report.mean_seconds),
                        repr(report.std_seconds),
                        report.hardware,
                    ]
                )
        write_manifest(
            out,
            "benchmark",
            config={
                "methods": [f.value for f in families],
                "image_size": image_size,
                "iterations": iterations,
                "repeats": repeats,
                "seed": seed,
            },
            inputs={"content": array_content_hash(content), "style": array_content_hash(style)},
        )
    return reports


def _pool_size(n_tasks: int, max_workers: int | None) -> int:
    if max_workers is not None:
        if isinstance(max_workers, bool) or not isinstance(max_workers, int) or max_workers < 1:
            raise InvalidInputError(f"max_workers must be an integer >= 1, got {max_workers!r}")
        return min(max_workers, max(n_tasks, 1))
    return max(1, min(4, os.cpu_count() or 1, n_tasks))


def _config_dict(cfg) -> dict:
    # str-valued enums and tuples serialize as plain strings and lists
    return dataclasses.asdict(cfg)
