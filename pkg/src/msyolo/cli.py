"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from ._atomic import write_text_atomic
from .blocks import LadsConfig, MissingWeightError, lads_vs_strided_report
from .core import Rng, Tensor, TensorFormatError, load_tensor, save_tensor
from .core.tensor import ShapeError
from .detection import LabelFormatError, MissingManifestEntry, evaluate, load_labels, load_manifest, load_predictions
from .detection.metrics import AP_METHODS, IOU_SWEEP
from .graph import (
    ConfigError,
    GraphModel,
    ToyTask,
    TrainingDiverged,
    count_buffers,
    count_flops,
    count_params,
    infer_shapes,
    init_model,
    load_weights,
    parse_model_config,
    save_weights,
    train_toy,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ValidationFailure(Exception):
    """A run that completed but did not validate (e.g. a failing gradcheck)."""


def _shape_arg(text: str) -> tuple[int, int, int, int]:
    try:
        shape = tuple(int(v) for v in text.replace("x", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N,C,H,W, got {text!r}") from None
    if len(shape) != 4 or min(shape) < 1:
        raise argparse.ArgumentTypeError(f"expected four positive extents N,C,H,W, got {text!r}")
    return shape


def _load_graph(path: str, input_shape=None):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FileNotFoundError(f"cannot read model config {path!r}: {exc.strerror}") from None
    try:
        return infer_shapes(parse_model_config(text), input_shape)
    except ConfigError as exc:
        raise type(exc)(exc.line, exc.message, path) from None


def _fmt_shape(shape) -> str:
    return "x".join(str(s) for s in shape)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_shapes(args) -> str:
    graph = _load_graph(args.model, args.input_shape)
    params, buffers, flops = count_params(graph), count_buffers(graph), count_flops(graph)
    rows = [("layer", "kind", "output", "params", "buffers", "flops")]
    for layer, info in zip(graph.layers, graph.info):
        rows.append((layer.id, layer.kind, ",".join(_fmt_shape(s) for s in info.shapes),
                     str(params.per_layer[layer.id]), str(buffers.per_layer[layer.id]),
                     str(flops.per_layer[layer.id])))
    rows.append(("total", "", "", str(params.total), str(buffers.total), str(flops.total)))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) if i < 3 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip()
             for r in rows]
    return "\n".join(lines) + "\n"


def cmd_init_weights(args) -> str:
    graph = _load_graph(args.model)
    model = init_model(graph, args.seed, args.precision)
    save_weights(args.weights, model.state_dict(), graph)
    return f"wrote {len(model.state_dict())} tensors ({model.num_parameters()} parameters) to {args.weights}\n"


def cmd_forward(args) -> str:
    x = load_tensor(args.input)
    graph = _load_graph(args.model, x.shape)
    model = GraphModel(graph, x.precision)
    model.load_state_dict(load_weights(args.weights))
    model.eval()
    outputs = model(x)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for ref, t in outputs.items():
        path = out_dir / f"{ref}.mst"
        save_tensor(path, t)
        lines.append(f"{ref}\t{_fmt_shape(t.shape)}\t{path}")
    return "\n".join(lines) + "\n"


def _gradcheck_model(args):
    from .gradsuite import randomize_module

    graph = _load_graph(args.model)
    inp = graph.inputs()[0]
    graph = infer_shapes(graph, (min(inp.shape[0], 2),) + inp.shape[1:])
    rng = Rng(args.seed)
    model = GraphModel(graph, args.precision)
    randomize_module(model, rng)
    model.eval()
    x = Tensor(rng.normal(graph.inputs()[0].shape), precision=args.precision)
    from .autodiff import gradcheck

    def fn(x, *params):
        return list(model(x).values())

    return gradcheck(fn, {"input": x, **dict(model.named_parameters())}, args.precision,
                     h=args.step, tolerance=args.tolerance, seed=args.seed)


def cmd_gradcheck(args) -> str:
    from .gradsuite import CASES, run_case

    lines = []
    ok = True
    if args.model:
        report = _gradcheck_model(args)
        lines.append(f"# model {args.model} seed {args.seed}")
        lines.append(report.text().rstrip("\n"))
        ok = report.passed
    else:
        names = list(CASES) if args.target == "all" else [args.target]
        for name in names:
            for seed in range(args.seed, args.seed + args.seeds):
                report = run_case(name, seed, args.precision, h=args.step, tolerance=args.tolerance)
                lines.append(f"# {name} seed {seed} max_rel_err {report.max_rel_err:.3e}")
                lines.append(report.text().rstrip("\n"))
                ok &= report.passed
    lines.append("PASS" if ok else "FAIL")
    text = "\n".join(lines) + "\n"
    if not ok:
        raise ValidationFailure(text)
    return text


def cmd_train_toy(args) -> str:
    graph = _load_graph(args.model)
    task = ToyTask(samples=args.samples, target_channels=args.target_channels, lr_max=args.lr,
                   lr_min=args.lr_min, weight_decay=args.weight_decay, precision=args.precision)
    losses = train_toy(graph, task, args.steps, args.seed)
    body = "step\tloss\n" + "".join(f"{i}\t{v!r}\n" for i, v in enumerate(losses))
    write_text_atomic(args.output, body)
    if not losses:
        return f"0 steps; wrote {args.output}\n"
    return (f"initial loss {losses[0]:.6g}, final loss {losses[-1]:.6g}, "
            f"ratio {losses[-1] / losses[0] if losses[0] else float('nan'):.4g}; wrote {args.output}\n")


def _iou_arg(text: str) -> tuple[float, ...]:
    if text == "sweep":
        return IOU_SWEEP
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'sweep' or comma-separated thresholds, got {text!r}") from None
    if not vals or not all(0.0 <= v <= 1.0 for v in vals):
        raise argparse.ArgumentTypeError("IoU thresholds must lie in [0, 1]")
    return vals


def cmd_eval(args) -> str:
    ids = load_manifest(args.manifest) if args.manifest else None
    gts = load_labels(args.gt, ids)
    ids = list(gts)
    preds = load_predictions(args.pred, ids)
    report = evaluate([preds[i] for i in ids], [gts[i] for i in ids], args.iou, args.method, args.conf, ids)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_text_atomic(out / "report.txt", report.text())
    write_text_atomic(out / "metrics.tsv", report.tsv())
    matches = "image\tdetection\tclass\tconfidence\ttp\tgt\n" + "".join(
        f"{r.image}\t{r.detection}\t{r.class_id}\t{r.confidence!r}\t{int(r.tp)}\t{'-' if r.gt is None else r.gt}\n"
        for r in report.matches)
    write_text_atomic(out / "matches.tsv", matches)
    return report.text()


def cmd_lads_report(args) -> str:
    cfg = LadsConfig(args.cin, args.cout, args.groups)
    r = lads_vs_strided_report(cfg, args.height, args.width, args.batch)
    return (
        f"input\t{args.batch}x{args.cin}x{args.height}x{args.width}\n"
        f"lads_params\t{r['lads_params']}\n"
        f"baseline_params\t{r['baseline_params']}\n"
        f"param_ratio\t{r['lads_params'] / r['baseline_params']:.6f}\n"
        f"lads_flops\t{r['lads_flops']}\n"
        f"baseline_flops\t{r['baseline_flops']}\n"
        f"flop_ratio\t{r['lads_flops'] / r['baseline_flops']:.6f}\n"
    )


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random draw")
    common.add_argument("--threads", type=int, default=1, help="BLAS thread count")
    common.add_argument("--out", default=None, help="also write the printed summary to this file")

    parser = argparse.ArgumentParser(prog="msyolo", description=__doc__, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("shapes", parents=[common], formatter_class=fmt,
                       help="per-layer output shapes, parameter and FLOP counts")
    p.add_argument("--model", required=True, help="model config file")
    p.add_argument("--input-shape", type=_shape_arg, default=None, help="override input N,C,H,W")
    p.set_defaults(func=cmd_shapes)

    p = sub.add_parser("init-weights", parents=[common], formatter_class=fmt,
                       help="write a seeded weight directory for a model")
    p.add_argument("--model", required=True, help="model config file")
    p.add_argument("--weights", required=True, help="output weight directory")
    p.add_argument("--precision", choices=("single", "double"), default="single", help="weight precision")
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("forward", parents=[common], formatter_class=fmt,
                       help="run a model and write one tensor file per sink")
    p.add_argument("--model", required=True, help="model config file")
    p.add_argument("--weights", required=True, help="weight directory")
    p.add_argument("--input", required=True, help="input tensor file")
    p.add_argument("--output-dir", required=True, help="directory for <sink>.mst files")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("gradcheck", parents=[common], formatter_class=fmt,
                       help="finite-difference gradient check of an op, a block, 'all', or a model")
    p.add_argument("target", nargs="?", default=None, help="op or block name, or 'all'")
    p.add_argument("--model", default=None, help="check a whole model config instead")
    p.add_argument("--precision", choices=("single", "double"), default="double", help="analytic precision")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds starting at --seed")
    p.add_argument("--tolerance", type=float, default=None, help="relative error bound (precision default)")
    p.add_argument("--step", type=float, default=None, help="finite-difference step (precision default)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train-toy", parents=[common], formatter_class=fmt,
                       help="fit a synthetic memorization task and write the loss curve")
    p.add_argument("--model", required=True, help="model config file (one input, one sink)")
    p.add_argument("--steps", type=int, default=500, help="optimizer steps")
    p.add_argument("--output", default="loss.tsv", help="loss curve file (step<TAB>loss)")
    p.add_argument("--samples", type=int, default=8, help="batch size of the fixed task")
    p.add_argument("--target-channels", type=int, default=1, help="channels of the regression target")
    p.add_argument("--lr", type=float, default=1e-3, help="peak learning rate")
    p.add_argument("--lr-min", type=float, default=1e-5, help="final learning rate")
    p.add_argument("--weight-decay", type=float, default=0.01, help="decoupled weight decay")
    p.add_argument("--precision", choices=("single", "double"), default="single", help="training precision")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("eval", parents=[common], formatter_class=fmt,
                       help="detection metrics for a label/prediction corpus")
    p.add_argument("--gt", required=True, help="ground-truth label directory")
    p.add_argument("--pred", required=True, help="prediction directory")
    p.add_argument("--manifest", default=None, help="image id list; without it, label file names in sorted order")
    p.add_argument("--iou", type=_iou_arg, default="sweep", help="'sweep' or comma-separated IoU thresholds")
    p.add_argument("--method", choices=AP_METHODS, default="101-point", help="AP integration")
    p.add_argument("--conf", type=float, default=0.25, help="confidence threshold for precision/recall")
    p.add_argument("--output-dir", default="eval", help="directory for report.txt, metrics.tsv, matches.tsv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("lads-report", parents=[common], formatter_class=fmt,
                       help="LADS against a strided 3x3 convolution")
    p.add_argument("--cin", type=int, default=64, help="input channels")
    p.add_argument("--cout", type=int, default=64, help="output channels")
    p.add_argument("--groups", type=int, default=64, help="LADS feature-branch groups")
    p.add_argument("--height", type=int, default=64, help="input height")
    p.add_argument("--width", type=int, default=64, help="input width")
    p.add_argument("--batch", type=int, default=1, help="batch size")
    p.set_defaults(func=cmd_lads_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "gradcheck":
        from .gradsuite import CASES

        if (args.target is None) == (args.model is None):
            parser.error("gradcheck takes exactly one of a target name or --model")
        if args.target is not None and args.target != "all" and args.target not in CASES:
            parser.error(f"unknown op or block {args.target!r}; choose from: all, {', '.join(CASES)}")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        with threadpool_limits(limits=args.threads):
            text = args.func(args)
        status = EXIT_OK
    except ValidationFailure as exc:
        text, status = str(exc), EXIT_FAIL
    except (ConfigError, MissingWeightError, TensorFormatError, LabelFormatError, MissingManifestEntry,
            TrainingDiverged, ShapeError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    sys.stdout.write(text)
    if args.out:
        write_text_atomic(args.out, text)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
