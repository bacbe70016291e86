"""Command-line behavior: exit codes, emitted files, and config replay."""

import json

import pytest
import torch

from cmdnst.cli import main
from cmdnst.images import save_image
from cmdnst.weights import read_weight_archive
from tests.conftest import gradient_image, stripe_image


@pytest.fixture()
def image_pair(tmp_path):
    content = tmp_path / "content.png"
    style = tmp_path / "style.png"
    save_image(content, gradient_image(32))
    save_image(style, stripe_image(32))
    return content, style


def stylize_args(content, style, out_dir, *extra):
    return [
        "stylize",
        "--content", str(content),
        "--style", str(style),
        "--encoder", "tiny",
        "--iterations", "8",
        "--min-iterations", "4",
        "--stop-window", "2",
        "--out-dir", str(out_dir),
        *extra,
    ]


def test_no_arguments_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_help_exits_zero():
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0


def test_unknown_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["stylize", "--frobnicate"])
    assert exc.value.code == 2


def test_stylize_writes_artifacts(image_pair, tmp_path):
    content, style = image_pair
    out_dir = tmp_path / "run"
    assert main(stylize_args(content, style, out_dir)) == 0
    assert (out_dir / "out.png").exists()
    assert (out_dir / "trace.csv").exists()
    assert (out_dir / "run.json").exists()
    resolved = json.loads((out_dir / "resolved_config.json").read_text())
    assert resolved["command"] == "stylize"
    assert resolved["options"]["iterations"] == 8
    assert resolved["options"]["loss"] == "cmd"
    run_meta = json.loads((out_dir / "run.json").read_text())
    assert run_meta["iterations_executed"] >= 4


def test_stylize_replay_from_config_is_identical(image_pair, tmp_path):
    content, style = image_pair
    first = tmp_path / "first"
    second = tmp_path / "second"
    assert main(stylize_args(content, style, first)) == 0
    assert (
        main(
            [
                "--from-config", str(first / "resolved_config.json"),
                "--out-dir", str(second),
            ]
        )
        == 0
    )
    assert (second / "out.png").read_bytes() == (first / "out.png").read_bytes()


def test_stylize_moment_weight_override(image_pair, tmp_path):
    content, style = image_pair
    out_dir = tmp_path / "mw"
    code = main(
        stylize_args(content, style, out_dir, "--moments", "0,1,1,1,0")
    )
    assert code == 0
    resolved = json.loads((out_dir / "resolved_config.json").read_text())
    assert resolved["options"]["moments"] == "0.0,1.0,1.0,1.0,0.0"


def test_stylize_missing_content_fails_cleanly(tmp_path, capsys):
    code = main(
        [
            "stylize",
            "--content", str(tmp_path / "absent.png"),
            "--style", str(tmp_path / "alsoabsent.png"),
            "--encoder", "tiny",
            "--out-dir", str(tmp_path / "out"),
        ]
    )
    assert code == 1
    err = capsys.readouterr().err
    assert err.startswith("error[")


def test_stylize_unknown_loss_name(image_pair, tmp_path, capsys):
    content, style = image_pair
    code = main(
        stylize_args(content, style, tmp_path / "x", "--loss", "frobenius")
    )
    assert code == 1
    assert "error[ConfigError]" in capsys.readouterr().err


def test_from_config_with_bad_file(tmp_path, capsys):
    bad = tmp_path / "not_config.json"
    bad.write_text(json.dumps({"surprise": True}))
    code = main(["--from-config", str(bad)])
    assert code == 1
    assert "error[" in capsys.readouterr().err
    code = main(["--from-config", str(tmp_path / "missing.json")])
    assert code == 1


def test_toy_subcommand(tmp_path):
    out_dir = tmp_path / "toy"
    code = main(
        [
            "toy",
            "--losses", "cmd,mm",
            "--samples", "150",
            "--steps", "10",
            "--out-dir", str(out_dir),
        ]
    )
    assert code == 0
    assert (out_dir / "gaps.csv").exists()
    resolved = json.loads((out_dir / "resolved_config.json").read_text())
    assert resolved["options"]["losses"] == "cmd:5,moment_match"


def test_bench_subcommand(tmp_path):
    out_dir = tmp_path / "bench"
    code = main(
        [
            "bench",
            "--methods", "cmd",
            "--encoder", "tiny",
            "--size", "32",
            "--iterations", "2",
            "--repeats", "1",
            "--out-dir", str(out_dir),
        ]
    )
    assert code == 0
    assert (out_dir / "benchmark.csv").exists()


def test_sweep_alpha_subcommand(image_pair, tmp_path):
    content, style = image_pair
    out_dir = tmp_path / "sweep"
    code = main(
        [
            "sweep-alpha",
            "--content", str(content),
            "--style", str(style),
            "--encoder", "tiny",
            "--alphas", "0.8,0.2",
            "--iterations", "6",
            "--min-iterations", "4",
            "--stop-window", "2",
            "--out-dir", str(out_dir),
        ]
    )
    assert code == 0
    assert (out_dir / "alpha_sweep.csv").exists()
    assert len(list(out_dir.glob("*.png"))) == 2


def test_convert_weights_subcommand(tmp_path):
    src = tmp_path / "state.pth"
    dst = tmp_path / "weights.zip"
    torch.save(
        {
            "features.0.weight": torch.randn(2, 3, 3, 3),
            "features.0.bias": torch.randn(2),
        },
        src,
    )
    code = main(["convert-weights", "--src", str(src), "--dst", str(dst)])
    assert code == 0
    manifest, tensors = read_weight_archive(dst)
    assert "conv1_1.weight" in tensors
    assert manifest["architecture"] == "VGG19"
