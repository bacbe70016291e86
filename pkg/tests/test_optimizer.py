"""Pixel optimization loop, stopping rule, and the 1-d alignment routine."""

import csv

import pytest
import torch

from cmdnst.errors import (
    ConfigError,
    ContractViolationError,
    InvalidInputError,
    OptimizationDivergedError,
)
from cmdnst.losses import LossFamily, StyleLossConfig, equal_layer_weights
from cmdnst.measures import EmpiricalMeasure
from cmdnst.optimizer import (
    InitMode,
    OptimizationConfig,
    OptimizationRun,
    StopReason,
    TraceEntry,
    align_samples,
    alpha_sweep,
    optimize_from_targets,
    prepare_targets,
    stylize,
)
from tests.conftest import gradient_image, stripe_image


def tiny_loss_cfg(family=LossFamily.CMD) -> StyleLossConfig:
    return StyleLossConfig(
        family=family,
        layer_weights=equal_layer_weights(["conv1_1", "conv2_1", "conv3_1"]),
    )


def quick_opt(**overrides) -> OptimizationConfig:
    base = dict(
        alpha=0.5,
        learning_rate=0.05,
        max_iterations=20,
        stop_window=5,
        min_iterations=10,
        seed=0,
    )
    base.update(overrides)
    return OptimizationConfig(**base)


# ---------------------------------------------------------------- config


def test_config_defaults():
    cfg = OptimizationConfig()
    assert cfg.min_iterations == 2 * cfg.stop_window
    assert cfg.init is InitMode.CONTENT_COPY


@pytest.mark.parametrize(
    "kwargs",
    [
        {"alpha": -0.1},
        {"alpha": 1.1},
        {"learning_rate": 0.0},
        {"learning_rate": float("nan")},
        {"max_iterations": 0},
        {"stop_window": 0},
        {"stop_rel_tol": 0.0},
        {"stop_rel_tol": 1.0},
        {"max_iterations": 5, "min_iterations": 6},
        {"min_iterations": -1},
    ],
)
def test_config_rejects_bad_values(kwargs):
    with pytest.raises(ConfigError):
        OptimizationConfig(**kwargs)


def test_run_invariants_enforced():
    trace = [TraceEntry(1.0, 0.5, 0.5)]
    with pytest.raises(ContractViolationError):
        OptimizationRun(
            output=torch.rand(4, 4, 3),
            trace=trace,
            iterations_executed=2,
            stop_reason=StopReason.MAX_ITERS,
            seed=0,
            alpha=0.5,
            learning_rate=0.1,
        )
    with pytest.raises(ContractViolationError):
        OptimizationRun(
            output=torch.rand(4, 4, 3),
            trace=[TraceEntry(float("nan"), 0.0, 0.0)],
            iterations_executed=1,
            stop_reason=StopReason.MAX_ITERS,
            seed=0,
            alpha=0.5,
            learning_rate=0.1,
        )


# ---------------------------------------------------------------- loop


def test_style_equals_content_converges_at_floor(tiny_encoder):
    # identical targets make every loss term exactly zero from step one,
    # so the rule must fire the first moment it is allowed to
    image = gradient_image(32)
    run = stylize(image, image, tiny_encoder, tiny_loss_cfg(), quick_opt())
    assert run.stop_reason is StopReason.CONVERGED
    assert run.iterations_executed == 10
    assert float(run.trace[0].total) == 0.0
    assert float(run.final.total) == 0.0
    assert torch.equal(run.output, image)


def test_stopping_never_fires_before_min_iterations(tiny_encoder):
    image = gradient_image(32)
    run = stylize(
        image, image, tiny_encoder, tiny_loss_cfg(), quick_opt(min_iterations=17)
    )
    assert run.iterations_executed == 17


def test_trace_total_mixes_parts(tiny_encoder):
    run = stylize(
        gradient_image(32),
        stripe_image(32),
        tiny_encoder,
        tiny_loss_cfg(),
        quick_opt(alpha=0.3),
    )
    for entry in run.trace:
        assert float(entry.total) == pytest.approx(
            0.3 * float(entry.content) + 0.7 * float(entry.style), rel=1e-6
        )


def test_runs_are_bitwise_deterministic(tiny_encoder):
    args = (
        gradient_image(32),
        stripe_image(32),
        tiny_encoder,
        tiny_loss_cfg(),
        quick_opt(init=InitMode.NOISE, seed=3),
    )
    a = stylize(*args)
    b = stylize(*args)
    assert torch.equal(a.output, b.output)
    assert a.trace == b.trace


def test_noise_seeds_differ(tiny_encoder):
    cfg = tiny_loss_cfg()
    a = stylize(
        gradient_image(32), stripe_image(32), tiny_encoder, cfg,
        quick_opt(init=InitMode.NOISE, seed=1),
    )
    b = stylize(
        gradient_image(32), stripe_image(32), tiny_encoder, cfg,
        quick_opt(init=InitMode.NOISE, seed=2),
    )
    assert not torch.equal(a.output, b.output)


def test_content_only_objective_recovers_content(tiny_encoder):
    content = gradient_image(32)
    run = stylize(
        content,
        stripe_image(32),
        tiny_encoder,
        tiny_loss_cfg(),
        quick_opt(alpha=1.0, init=InitMode.NOISE, max_iterations=150,
                  min_iterations=150, learning_rate=0.05),
    )
    assert float(run.final.content) < 0.5 * float(run.trace[0].content)


def test_output_stays_in_unit_range(tiny_encoder):
    run = stylize(
        gradient_image(32),
        stripe_image(32),
        tiny_encoder,
        tiny_loss_cfg(LossFamily.MOMENT_MATCH),
        quick_opt(),
    )
    assert float(run.output.min()) >= 0.0
    assert float(run.output.max()) <= 1.0


def test_huge_learning_rate_survives_via_pixel_clamp(tiny_encoder):
    # the per-step clamp keeps pixels in range, so even absurd step sizes
    # stay finite instead of blowing up
    run = stylize(
        gradient_image(32),
        stripe_image(32),
        tiny_encoder,
        tiny_loss_cfg(),
        quick_opt(learning_rate=1e12),
    )
    assert all(
        entry.total == entry.total and entry.total != float("inf")
        for entry in run.trace
    )


def test_non_finite_loss_raises_diverged_with_trace(tiny_encoder):
    from cmdnst.measures import FeatureMap

    cfg = tiny_loss_cfg()
    targets = prepare_targets(tiny_encoder, gradient_image(32), stripe_image(32), cfg)
    layer, fm = next(iter(targets.content_features.items()))
    poisoned = fm.values.clone()
    poisoned[0, 0] = float("nan")
    bad = targets._replace(content_features={layer: FeatureMap(layer, poisoned)})
    with pytest.raises(OptimizationDivergedError) as exc:
        optimize_from_targets(bad, tiny_encoder, cfg, quick_opt())
    assert isinstance(exc.value.trace, list)


def test_zero_weight_style_layer_not_computed(tiny_encoder):
    cfg = StyleLossConfig(
        family=LossFamily.CMD,
        layer_weights={"conv1_1": 1.0, "conv2_1": 0.0, "conv3_1": 0.0},
    )
    targets = prepare_targets(tiny_encoder, gradient_image(32), stripe_image(32), cfg)
    assert "conv2_1" not in targets.style_features
    assert "conv1_1" in targets.out_layers
    run = optimize_from_targets(targets, tiny_encoder, cfg, quick_opt())
    assert run.iterations_executed >= 10


def test_prepare_targets_rejects_unknown_layer(tiny_encoder):
    cfg = StyleLossConfig(family=LossFamily.CMD, layer_weights={"conv7_7": 1.0})
    with pytest.raises(ConfigError):
        prepare_targets(tiny_encoder, gradient_image(32), stripe_image(32), cfg)


# ---------------------------------------------------------------- artifacts


def test_trace_csv_round_trips(tiny_encoder, tmp_path):
    run = stylize(
        gradient_image(32), stripe_image(32), tiny_encoder, tiny_loss_cfg(), quick_opt()
    )
    path = tmp_path / "trace.csv"
    run.write_trace_csv(path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == run.iterations_executed
    assert float(rows[0]["total"]) == run.trace[0].total
    assert float(rows[-1]["style"]) == run.trace[-1].style
    assert int(rows[0]["iteration"]) == 1


def test_metadata_round_trips(tiny_encoder, tmp_path):
    run = stylize(
        gradient_image(32), stripe_image(32), tiny_encoder, tiny_loss_cfg(),
        quick_opt(), label="smoke",
    )
    meta = run.metadata()
    assert meta["label"] == "smoke"
    assert meta["iterations_executed"] == run.iterations_executed
    assert meta["stop_reason"] == run.stop_reason.value
    path = tmp_path / "run.json"
    run.write_metadata(path)
    assert path.exists()


# ---------------------------------------------------------------- alpha sweep


def test_alpha_sweep_empty():
    assert alpha_sweep(None, None, None, None, []) == []


def test_alpha_sweep_orders_content_fidelity(tiny_encoder):
    runs = alpha_sweep(
        gradient_image(32),
        stripe_image(32),
        tiny_encoder,
        tiny_loss_cfg(),
        [0.9, 0.1],
        quick_opt(max_iterations=40, min_iterations=40),
    )
    assert [r.alpha for r in runs] == [0.9, 0.1]
    assert float(runs[0].final.content) <= float(runs[1].final.content)


def test_alpha_zero_total_equals_style(tiny_encoder):
    (run,) = alpha_sweep(
        gradient_image(32),
        stripe_image(32),
        tiny_encoder,
        tiny_loss_cfg(),
        [0.0],
        quick_opt(),
    )
    for entry in run.trace:
        assert entry.total == entry.style


# ---------------------------------------------------------------- alignment


def beta_cloud(a: float, b: float, n: int, seed: int) -> EmpiricalMeasure:
    import numpy as np

    rng = np.random.default_rng(seed)
    return EmpiricalMeasure(
        torch.from_numpy(rng.beta(a, b, size=(n, 1))), support_bounded=True
    )


def test_align_identical_clouds_is_immediate():
    cloud = beta_cloud(2.0, 3.0, 50, 0)
    result = align_samples(cloud, cloud, LossFamily.CMD, steps=10)
    assert result.loss_trace[0] == 0.0
    assert len(result.loss_trace) == 1
    assert all(gap <= 1e-12 for gap in result.gaps.values())


def test_align_cmd_shrinks_moment_gaps():
    source = beta_cloud(2.0, 3.0, 300, 1)
    target = beta_cloud(0.5, 0.45, 300, 2)
    from cmdnst.measures import moment_gaps

    before = moment_gaps(source, target, 3)
    result = align_samples(source, target, LossFamily.CMD, steps=150,
                           learning_rate=0.05)
    assert result.loss_trace[-1] < result.loss_trace[0]
    for order in range(1, 4):
        assert result.gaps[order] < before[order]
    samples = result.measure.samples
    assert float(samples.min()) >= 0.0 and float(samples.max()) <= 1.0


def test_align_accepts_family_aliases():
    source = beta_cloud(2.0, 3.0, 60, 3)
    target = beta_cloud(0.5, 0.45, 60, 4)
    result = align_samples(source, target, "mm", steps=20)
    assert len(result.loss_trace) >= 1


def test_align_cmd_requires_bounded_source():
    loose = EmpiricalMeasure(torch.randn(20, 1) * 3)
    target = beta_cloud(0.5, 0.45, 20, 5)
    with pytest.raises(ContractViolationError):
        align_samples(loose, target, LossFamily.CMD, steps=5)


def test_align_validates_arguments():
    p = beta_cloud(2.0, 3.0, 10, 6)
    q = beta_cloud(2.0, 3.0, 10, 7)
    with pytest.raises(InvalidInputError):
        align_samples(p, q, LossFamily.CMD, steps=-1)
    with pytest.raises(InvalidInputError):
        align_samples(p, q, LossFamily.CMD, learning_rate=-1.0)
    with pytest.raises(InvalidInputError):
        align_samples(p, EmpiricalMeasure(torch.rand(10, 2)), LossFamily.CMD)
    # zero steps is a legal no-op: gaps are just measured
    untouched = align_samples(p, q, LossFamily.CMD, steps=0)
    assert torch.equal(untouched.measure.samples, p.samples)
