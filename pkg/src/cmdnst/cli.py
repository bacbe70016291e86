"""Command-line interface.

Subcommands: stylize, toy, ablate, sweep-alpha, sweep-lr, bench,
convert-weights. Every run validates its flags up front, then writes a
``resolved_config.json`` into the output directory recording each value it
actually used; ``--from-config that.json`` replays the run (appended flags
override saved ones). Errors exit with code 1 and a categorized message;
bad flags exit with the usual argparse code 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from .encoder import WEIGHTS_ENV_VAR, Architecture, EncoderSpec, load_encoder
from .errors import CmdnstError, ConfigError
from .experiments import (
    array_content_hash,
    parse_toy_family,
    run_benchmark,
    run_lr_study,
    run_moment_ablation,
    run_toy_experiment,
    write_manifest,
)
from .images import load_image, save_image
from .losses import LossFamily, StyleLossConfig, equal_layer_weights, parse_family
from .optimizer import InitMode, OptimizationConfig, alpha_sweep, stylize
from .weights import convert_torch_state_dict


def main(argv=None) -> int:
    raw = list(sys.argv[1:]) if argv is None else [str(a) for a in argv]
    try:
        raw = _expand_from_config(raw)
    except (OSError, json.JSONDecodeError, CmdnstError) as exc:
        return _fail(exc)
    parser = build_parser()
    args = parser.parse_args(raw)
    try:
        return args.handler(args)
    except (CmdnstError, OSError) as exc:
        return _fail(exc)


def _fail(exc: BaseException) -> int:
    print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
    return 1


def _expand_from_config(argv: list[str]) -> list[str]:
    """Replace ``--from-config path`` with the argv saved in that file."""
    if "--from-config" not in argv:
        return argv
    idx = argv.index("--from-config")
    if idx + 1 >= len(argv):
        raise ConfigError("--from-config needs a path argument")
    path = argv[idx + 1]
    overrides = argv[:idx] + argv[idx + 2 :]
    with open(path) as fh:
        saved = json.load(fh)
    if not isinstance(saved, dict) or "command" not in saved or "options" not in saved:
        raise ConfigError(f"{path} is not a resolved-config file")
    rebuilt = [str(saved["command"])]
    for key, value in saved["options"].items():
        if value is None:
            continue
        rebuilt.append("--" + str(key).replace("_", "-"))
        rebuilt.append(str(value))
    return rebuilt + overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmdnst",
        description="Neural style transfer by matching deep-feature distributions "
        "(central moments, Gram/MMD, mean-and-std, or Gaussian transport).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stylize", help="optimize one output image")
    _add_image_flags(p)
    _add_encoder_flags(p)
    _add_loss_flags(p)
    _add_opt_flags(p)
    p.set_defaults(handler=_cmd_stylize)

    p = sub.add_parser("toy", help="1D Beta-to-Beta alignment study")
    p.add_argument("--losses", default="cmd,mm", help="comma list: cmd, cmd:K, mm, mmd, ot")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    _add_out_dir(p)
    p.set_defaults(handler=_cmd_toy)

    p = sub.add_parser("ablate", help="stylize once per binary moment-weight vector")
    _add_image_flags(p)
    _add_encoder_flags(p)
    p.add_argument("--K", "--k", dest="k", type=int, default=5, help="moment order bound")
    p.add_argument("--max-workers", type=int, default=None)
    _add_opt_flags(p)
    p.set_defaults(handler=_cmd_ablate)

    p = sub.add_parser("sweep-alpha", help="stylize once per content weight")
    _add_image_flags(p)
    _add_encoder_flags(p)
    _add_loss_flags(p)
    _add_opt_flags(p)
    p.add_argument("--alphas", default="0.6,0.2,0.01,0", help="comma list of content weights")
    p.set_defaults(handler=_cmd_sweep_alpha)

    p = sub.add_parser("sweep-lr", help="stylize once per learning rate")
    _add_image_flags(p)
    _add_encoder_flags(p)
    _add_loss_flags(p)
    _add_opt_flags(p)
    p.add_argument("--lrs", default="0.01,0.1,0.2,0.3", help="comma list of learning rates")
    p.add_argument("--max-workers", type=int, default=None)
    p.set_defaults(handler=_cmd_sweep_lr)

    p = sub.add_parser("bench", help="time the optimization loop per loss family")
    p.add_argument("--methods", default="cmd,mmd_gram", help="comma list of loss families")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    _add_encoder_flags(p, default_arch="tiny")
    _add_out_dir(p)
    p.set_defaults(handler=_cmd_bench)

    p = sub.add_parser("convert-weights", help="turn a torch checkpoint into a weight archive")
    p.add_argument("--src", required=True, help="torch .pth state dict")
    p.add_argument("--dst", required=True, help="output archive path")
    _add_out_dir(p)
    p.set_defaults(handler=_cmd_convert_weights)

    return parser


def _add_out_dir(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out-dir", default="cmdnst_out", help="directory for outputs")


def _add_image_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--content", required=True, help="content image (PNG or JPEG)")
    p.add_argument("--style", required=True, help="style image (PNG or JPEG)")
    p.add_argument(
        "--resize", default=None, help="resize both inputs, HEIGHTxWIDTH or one side length"
    )
    _add_out_dir(p)


def _add_encoder_flags(p: argparse.ArgumentParser, default_arch: str = "vgg19") -> None:
    p.add_argument(
        "--encoder", choices=[a.value for a in Architecture], default=default_arch
    )
    p.add_argument(
        "--weights",
        default=None,
        help=f"weight archive for the vgg19 encoder (default: ${WEIGHTS_ENV_VAR})",
    )
    p.add_argument("--encoder-seed", type=int, default=0, help="tiny-encoder init seed")
    p.add_argument("--style-layers", default=None, help="comma list, default per encoder")
    p.add_argument("--content-layer", default=None)


def _add_loss_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--loss", default="cmd", help="cmd | mmd_gram | mm | ot (plus aliases)")
    p.add_argument("--K", "--k", dest="k", type=int, default=5, help="moment order bound")
    p.add_argument(
        "--moments",
        default=None,
        help="comma list of moment weights; its length overrides --K",
    )


def _add_opt_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=0.2, help="content weight in [0,1]")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--stop-window", type=int, default=50)
    p.add_argument("--stop-rel-tol", type=float, default=1e-4)
    p.add_argument("--min-iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--init", choices=[m.value for m in InitMode], default=InitMode.CONTENT_COPY.value
    )


def _csv_floats(text: str, flag: str) -> list[float]:
    try:
        values = [float(part) for part in str(text).split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated numbers, got {text!r}") from None
    if not values:
        raise ConfigError(f"{flag} must name at least one value")
    return values


def _csv_names(text: str) -> list[str]:
    return [part.strip() for part in str(text).split(",") if part.strip()]


def _parse_resize(text: str | None) -> tuple[int, int] | None:
    if text is None:
        return None
    parts = str(text).lower().split("x")
    try:
        dims = [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f"--resize expects HEIGHTxWIDTH or one integer, got {text!r}") from None
    if len(dims) == 1:
        return dims[0], dims[0]
    if len(dims) == 2:
        return dims[0], dims[1]
    raise ConfigError(f"--resize expects HEIGHTxWIDTH or one integer, got {text!r}")


def _build_encoder_spec(args) -> tuple[EncoderSpec, str | None]:
    arch = Architecture(args.encoder)
    if arch is Architecture.TINY:
        weights = None
        source: object = args.encoder_seed
    else:
        weights = args.weights or os.environ.get(WEIGHTS_ENV_VAR) or None
        source = weights
    spec = EncoderSpec(
        architecture=arch,
        weight_source=source,
        style_layers=tuple(_csv_names(args.style_layers)) if args.style_layers else None,
        content_layer=args.content_layer,
    )
    return spec, weights


def _build_loss_config(args, spec: EncoderSpec) -> StyleLossConfig:
    moment_weights = (
        tuple(_csv_floats(args.moments, "--moments")) if args.moments else None
    )
    return StyleLossConfig(
        family=parse_family(args.loss),
        layer_weights=equal_layer_weights(spec.style_layers),
        n_moments=args.k,
        moment_weights=moment_weights,
    )


def _build_opt_config(args, alpha: float | None = None) -> OptimizationConfig:
    return OptimizationConfig(
        alpha=args.alpha if alpha is None else alpha,
        learning_rate=args.lr,
        max_iterations=args.iterations,
        stop_window=args.stop_window,
        stop_rel_tol=args.stop_rel_tol,
        min_iterations=args.min_iterations,
        seed=args.seed,
        init=args.init,
    )


def _encoder_options(args, spec: EncoderSpec, weights: str | None) -> dict:
    return {
        "encoder": spec.architecture.value,
        "weights": weights,
        "encoder_seed": args.encoder_seed,
        "style_layers": ",".join(spec.style_layers),
        "content_layer": spec.content_layer,
    }


def _loss_options(loss_cfg: StyleLossConfig) -> dict:
    return {
        "loss": loss_cfg.family.value,
        "k": loss_cfg.n_moments,
        "moments": ",".join(str(a) for a in loss_cfg.moment_weights),
    }


def _opt_options(opt_cfg: OptimizationConfig) -> dict:
    return {
        "alpha": opt_cfg.alpha,
        "lr": opt_cfg.learning_rate,
        "iterations": opt_cfg.max_iterations,
        "stop_window": opt_cfg.stop_window,
        "stop_rel_tol": opt_cfg.stop_rel_tol,
        "min_iterations": opt_cfg.min_iterations,
        "seed": opt_cfg.seed,
        "init": opt_cfg.init.value,
    }


def _image_options(args) -> dict:
    return {
        "content": str(args.content),
        "style": str(args.style),
        "resize": args.resize,
        "out_dir": str(args.out_dir),
    }


def _write_resolved_config(out_dir: Path, command: str, options: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "resolved_config.json", "w") as fh:
        json.dump({"command": command, "options": options}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_stylize(args) -> int:
    spec, weights = _build_encoder_spec(args)
    loss_cfg = _build_loss_config(args, spec)
    opt_cfg = _build_opt_config(args)
    size = _parse_resize(args.resize)
    out = Path(args.out_dir)
    _write_resolved_config(
        out,
        "stylize",
        {
            **_image_options(args),
            **_encoder_options(args, spec, weights),
            **_loss_options(loss_cfg),
            **_opt_options(opt_cfg),
        },
    )
    content = load_image(args.content, size=size)
    style = load_image(args.style, size=size)
    encoder = load_encoder(spec)
    run = stylize(content, style, encoder, loss_cfg, opt_cfg)
    save_image(out / "out.png", run.output)
    run.write_trace_csv(out / "trace.csv")
    run.write_metadata(out / "run.json")
    print(
        f"stylize: {run.iterations_executed} iterations ({run.stop_reason.value}), "
        f"final total {run.final.total:.6g} -> {out / 'out.png'}"
    )
    return 0


def _cmd_toy(args) -> int:
    specs = [parse_toy_family(s) for s in _csv_names(args.losses)]
    if not specs:
        raise ConfigError("--losses must name at least one family")
    canonical = ",".join(
        f"cmd:{s.n_moments}" if s.family is LossFamily.CMD else s.family.value for s in specs
    )
    out = Path(args.out_dir)
    _write_resolved_config(
        out,
        "toy",
        {
            "losses": canonical,
            "samples": args.samples,
            "steps": args.steps,
            "lr": args.lr,
            "seed": args.seed,
            "out_dir": str(args.out_dir),
        },
    )
    results = run_toy_experiment(
        specs,
        n_samples=args.samples,
        steps=args.steps,
        seed=args.seed,
        learning_rate=args.lr,
        out_dir=out,
    )
    for result in results:
        gaps = " ".join(f"c{i}={result.gaps[i]:.2e}" for i in sorted(result.gaps))
        print(f"toy {result.spec.label}: {gaps}")
    print(f"wrote {out / 'gaps.csv'}")
    return 0


def _cmd_ablate(args) -> int:
    spec, weights = _build_encoder_spec(args)
    opt_cfg = _build_opt_config(args)
    layer_weights = equal_layer_weights(spec.style_layers)
    size = _parse_resize(args.resize)
    out = Path(args.out_dir)
    _write_resolved_config(
        out,
        "ablate",
        {
            **_image_options(args),
            **_encoder_options(args, spec, weights),
            "k": args.k,
            "max_workers": args.max_workers,
            **_opt_options(opt_cfg),
        },
    )
    content = load_image(args.content, size=size)
    style = load_image(args.style, size=size)
    encoder = load_encoder(spec)
    cells = run_moment_ablation(
        content,
        style,
        encoder,
        k=args.k,
        layer_weights=layer_weights,
        opt_cfg=opt_cfg,
        out_dir=out,
        max_workers=args.max_workers,
    )
    print(f"ablate: {len(cells)} runs -> {out / 'ablation.csv'}")
    return 0


def _cmd_sweep_alpha(args) -> int:
    spec, weights = _build_encoder_spec(args)
    loss_cfg = _build_loss_config(args, spec)
    opt_cfg = _build_opt_config(args)
    alphas = _csv_floats(args.alphas, "--alphas")
    size = _parse_resize(args.resize)
    out = Path(args.out_dir)
    _write_resolved_config(
        out,
        "sweep-alpha",
        {
            **_image_options(args),
            **_encoder_options(args, spec, weights),
            **_loss_options(loss_cfg),
            **_opt_options(opt_cfg),
            "alphas": ",".join(f"{a:g}" for a in alphas),
        },
    )
    content = load_image(args.content, size=size)
    style = load_image(args.style, size=size)
    encoder = load_encoder(spec)
    runs = alpha_sweep(content, style, encoder, loss_cfg, alphas, opt_cfg)
    with open(out / "alpha_sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "iterations", "stop_reason", "total", "content", "style"])
        for alpha, run in zip(alphas, runs):
            final = run.final
            writer.writerow(
                [
                    repr(alpha),
                    run.iterations_executed,
                    run.stop_reason.value,
                    repr(final.total),
                    repr(final.content),
                    repr(final.style),
                ]
            )
            save_image(out / f"alpha_{alpha:g}.png", run.output)
            run.write_trace_csv(out / f"alpha_{alpha:g}_trace.csv")
    write_manifest(
        out,
        "alpha-sweep",
        config={"alphas": alphas, "loss": loss_cfg.family.value, "k": loss_cfg.n_moments},
        inputs={"content": array_content_hash(content), "style": array_content_hash(style)},
    )
    print(f"sweep-alpha: {len(runs)} runs -> {out / 'alpha_sweep.csv'}")
    return 0


def _cmd_sweep_lr(args) -> int:
    spec, weights = _build_encoder_spec(args)
    loss_cfg = _build_loss_config(args, spec)
    opt_cfg = _build_opt_config(args)
    rates = _csv_floats(args.lrs, "--lrs")
    size = _parse_resize(args.resize)
    out = Path(args.out_dir)
    _write_resolved_config(
        out,
        "sweep-lr",
        {
            **_image_options(args),
            **_encoder_options(args, spec, weights),
            **_loss_options(loss_cfg),
            **_opt_options(opt_cfg),
            "lrs": ",".join(f"{r:g}" for r in rates),
            "max_workers": args.max_workers,
        },
    )
    content = load_image(args.content, size=size)
    style = load_image(args.style, size=size)
    encoder = load_encoder(spec)
    entries = run_lr_study(
        content,
        style,
        encoder,
        rates,
        loss_cfg=loss_cfg,
        opt_cfg=opt_cfg,
        out_dir=out,
        max_workers=args.max_workers,
    )
    for entry in entries:
        if entry.run is None:
            print(f"lr={entry.learning_rate:g}: aborted ({entry.error})")
        else:
            print(
                f"lr={entry.learning_rate:g}: final content {entry.final_content_loss:.6g}"
            )
    return 0


def _cmd_bench(args) -> int:
    spec, weights = _build_encoder_spec(args)
    methods = _csv_names(args.methods)
    if not methods:
        raise ConfigError("--methods must name at least one loss family")
    out = Path(args.out_dir)
    _write_resolved_config(
        out,
        "bench",
        {
            "methods": ",".join(parse_family(m).value for m in methods),
            "size": args.size,
            "iterations": args.iterations,
            "repeats": args.repeats,
            "seed": args.seed,
            **_encoder_options(args, spec, weights),
            "out_dir": str(args.out_dir),
        },
    )
    encoder = load_encoder(spec)
    reports = run_benchmark(
        methods,
        image_size=args.size,
        iterations=args.iterations,
        repeats=args.repeats,
        encoder=encoder,
        seed=args.seed,
        out_dir=out,
    )
    for report in reports:
        print(
            f"bench {report.method}: {report.mean_seconds:.3f}s "
            f"+/- {report.std_seconds:.3f}s over {report.repeats} runs "
            f"({report.image_size}x{report.image_size}, {report.iterations} iters)"
        )
    return 0


def _cmd_convert_weights(args) -> int:
    out = Path(args.out_dir)
    _write_resolved_config(
        out,
        "convert-weights",
        {"src": str(args.src), "dst": str(args.dst), "out_dir": str(args.out_dir)},
    )
    manifest = convert_torch_state_dict(args.src, args.dst)
    print(
        f"convert-weights: wrote {len(manifest['tensors'])} tensors to {args.dst} "
        f"(sha256 {manifest['sha256'][:12]}...)"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
