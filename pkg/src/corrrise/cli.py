"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error. Errors go
to stderr as ``corrrise: error[<kind>]: <message>``.
"""

import argparse
import csv
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .embedder import load_backend
from .errors import (BackendError, ConfigError, ContractError, DataError, DegenerateInputError,
                     UnsupportedOperationError)
from .explain import ExplainRequest, explain_pair
from .io import (load_image, load_manifest, load_pairs, read_config, render_heatmap, save_image,
                 save_mask_png, save_saliency, write_manifest)
from .maskgen import MaskGenConfig, generate_stack
from .metrics import (MATCH, EvalConfig, compute_maps, deletion_curve, insertion_curve, make_method,
                      pair_scores, select_threshold)
from .numerics import pearson_correlation

log = logging.getLogger("corrrise")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}")


def _add_model_args(p):
    p.add_argument("--model", required=True, help="ONNX model file, or a toy model .json spec")
    p.add_argument("--mean", type=_floats, default=None, help="per-channel mean subtracted before inference")
    p.add_argument("--std", type=_floats, default=None, help="per-channel std divisor before inference")
    p.add_argument("--threads", type=int, default=1, help="onnxruntime intra-op threads")


def _add_mask_args(p):
    p.add_argument("--iterations", type=int, default=500, help="number of masks N")
    p.add_argument("--patches", type=int, default=8, help="square patches per mask")
    p.add_argument("--patch-size", type=int, default=None, help="patch side in pixels (default scales 28/112)")
    p.add_argument("--blur", type=int, default=0, help="optional box-blur radius for mask edges")


def _add_common(p):
    p.add_argument("--config", default=None, help="key=value file; command-line flags take precedence")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="corrrise", description="Signed saliency maps for face verification models.")
    parser.add_argument("--version", action="version", version=f"corrrise {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("explain", help="explain one image pair")
    _add_model_args(p)
    p.add_argument("--image-a", required=True)
    p.add_argument("--image-b", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    _add_mask_args(p)
    _add_common(p)

    p = sub.add_parser("evaluate", help="deletion/insertion curves over a pair manifest")
    _add_model_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", default="corrrise", help="comma list of corrrise, random, center")
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--threshold", type=float, default=None,
                   help="fixed decision threshold (default: accuracy-maximising on unmodified pairs)")
    p.add_argument("--deletion-fill", type=float, default=0.0)
    p.add_argument("--insertion-base", type=float, default=0.0)
    p.add_argument("--ranking-source", choices=("signed", "positive-only"), default="signed")
    p.add_argument("--eval-labels", choices=("match", "all"), default="match",
                   help="which pairs the curves are computed on")
    p.add_argument("--cache-dir", default=None, help="saliency cache (default <out>/saliency)")
    _add_mask_args(p)
    _add_common(p)

    p = sub.add_parser("sanity-check", help="model parameter randomisation test")
    _add_model_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--randomize-seed", type=int, default=None, help="default: --seed")
    p.add_argument("--max-correlation", type=float, default=0.3)
    _add_mask_args(p)
    _add_common(p)

    p = sub.add_parser("genmasks", help="dump a mask stack as PNG files")
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"), required=True)
    _add_mask_args(p)
    _add_common(p)

    p = sub.add_parser("toy-suite", help="write the synthetic pair suite and its toy model spec")
    p.add_argument("--match", type=int, default=10)
    p.add_argument("--nonmatch", type=int, default=10)
    p.add_argument("--size", type=int, default=112)
    _add_common(p)
    return parser


def _parse(parser, argv):
    subparsers = parser._subparsers._group_actions[0].choices
    required = [a for sub in subparsers.values() for a in sub._actions if a.required]
    # first pass only locates the command and config file; required flags may come from the config
    for action in required:
        action.required = False
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a command is required (explain, evaluate, sanity-check, genmasks, toy-suite)")
    sub = subparsers[args.command]
    values = read_config(args.config) if getattr(args, "config", None) else {}
    known = {a.dest for a in sub._actions}
    unknown = sorted(set(values) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    if "size" in values and args.command == "genmasks":
        values["size"] = [int(v) for v in values["size"].replace(",", " ").split()]
    for action in required:
        action.required = action.dest not in values
    sub.set_defaults(**values)
    # argparse runs string defaults through each action's type
    return parser.parse_args(argv)


def _mask_config(args):
    return MaskGenConfig(num_masks=args.iterations, patches_per_mask=args.patches,
                         patch_size=args.patch_size, seed=args.seed, blur=args.blur)


def _backend(args):
    return load_backend(args.model, mean=args.mean, std=args.std, threads=args.threads)


def _image_size(backend):
    return None if backend.input_shape is None else backend.input_shape[:2]


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# output locations do not affect results; leaving them out keeps reruns comparable
_NOT_RECORDED = ("verbose", "out", "cache_dir", "config")


def _metadata(args, **run):
    record = {
        "command": args.command,
        "version": __version__,
        "kernels": _kernels.active_backend(),
        "arguments": {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_RECORDED},
    }
    record.update(run)
    return {"run": record, "timestamp": datetime.now(timezone.utc).isoformat()}


def _model_hash(backend):
    return getattr(backend, "model_hash", None)


def cmd_explain(args):
    backend = _backend(args)
    size = _image_size(backend)
    channels = backend.input_shape[2] if backend.input_shape else 3
    img_a = load_image(args.image_a, size, channels=channels)
    img_b = load_image(args.image_b, size, channels=channels)
    cfg = _mask_config(args)
    res = explain_pair(ExplainRequest(img_a, img_b, backend, cfg), workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_saliency(res.s_a, out / "a.salm")
    save_saliency(res.s_b, out / "b.salm")
    render_heatmap(img_a, res.s_a, "positive", out / "a_positive.png")
    render_heatmap(img_a, res.s_a, "negative", out / "a_negative.png")
    render_heatmap(img_b, res.s_b, "positive", out / "b_positive.png")
    render_heatmap(img_b, res.s_b, "negative", out / "b_negative.png")
    decision = res.decision(args.threshold)
    _write_json(out / "metadata.json", _metadata(
        args, model_sha256=_model_hash(backend), explain=res.metadata,
        score_unperturbed=res.score_unperturbed, threshold=args.threshold, decision=decision,
        heatmap_colormap="positive: red->yellow, negative: blue->cyan, opacity = |s| / max|s|",
    ))
    print(f"score={res.score_unperturbed:.6f} threshold={args.threshold} decision={decision}")
    return EXIT_OK


def _write_curve(path, curve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "fraction", "accuracy"])
        for k, (p, acc) in enumerate(curve.points):
            w.writerow([k, repr(p), repr(acc)])


def cmd_evaluate(args):
    backend = _backend(args)
    manifest = load_manifest(args.manifest)
    if len(manifest) == 0:
        raise DataError(f"{args.manifest}: manifest has no pairs")
    channels = backend.input_shape[2] if backend.input_shape else 3
    all_pairs = load_pairs(manifest, _image_size(backend), channels=channels)
    methods = [m.strip() for m in args.method.split(",") if m.strip()]
    if not methods:
        raise UsageError("--method is empty")
    threshold = args.threshold
    if threshold is None:
        scores = pair_scores(backend, [p.image_a for p in all_pairs], [p.image_b for p in all_pairs])
        labels = {p.label for p in all_pairs}
        if len(labels) < 2:
            raise UsageError("automatic threshold needs both match and nonmatch pairs; pass --threshold")
        threshold = select_threshold(scores, [p.label for p in all_pairs])
    pairs = all_pairs if args.eval_labels == "all" else [p for p in all_pairs if p.label == MATCH]
    if not pairs:
        raise DataError("no pairs left to evaluate")
    cfg = EvalConfig(steps=args.steps, threshold=threshold, deletion_fill=args.deletion_fill,
                     insertion_base=args.insertion_base, ranking_source=args.ranking_source).validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cache = Path(args.cache_dir) if args.cache_dir else out / "saliency"
    summary = []
    for name in methods:
        method = make_method(name, _mask_config(args), seed=args.seed, workers=args.workers)
        maps = compute_maps(method, backend, pairs, cache_dir=cache)
        d = deletion_curve(backend, pairs, maps, cfg)
        i = insertion_curve(backend, pairs, maps, cfg)
        _write_curve(out / f"{name}_deletion.csv", d)
        _write_curve(out / f"{name}_insertion.csv", i)
        summary.append((name, d.auc_percent, i.auc_percent))
        log.info("%s deletion=%.2f insertion=%.2f", name, d.auc_percent, i.auc_percent)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "deletion_auc", "insertion_auc"])
        for name, d, i in summary:
            w.writerow([name, f"{d:.4f}", f"{i:.4f}"])
    _write_json(out / "metadata.json", _metadata(
        args, model_sha256=_model_hash(backend), backend=backend.describe(),
        mask_config=_mask_config(args).as_dict(), eval_config=cfg.as_dict(),
        threshold_source="flag" if args.threshold is not None else "max-accuracy on unmodified pairs",
        pairs_evaluated=len(pairs), pairs_total=len(all_pairs),
        modification="both images of each pair, each by its own map",
        summary=[{"method": n, "deletion_auc": d, "insertion_auc": i} for n, d, i in summary],
    ))
    for name, d, i in summary:
        print(f"{name}: deletion_auc={d:.2f} insertion_auc={i:.2f}")
    return EXIT_OK


def _region_precision(s, region, top=0.05):
    """Fraction of the top ``top`` positive-saliency pixels inside ``region``."""
    flat = np.asarray(s).ravel()
    k = max(1, int(top * flat.size))
    order = np.argsort(-flat, kind="stable")[:k]
    order = order[flat[order] > 0]
    if order.size == 0:
        return 0.0
    h, w = np.shape(s)
    x0, y0, x1, y1 = region
    rows, cols = order // w, order % w
    return float(np.mean((rows >= y0) & (rows < y1) & (cols >= x0) & (cols < x1)))


def cmd_sanity_check(args):
    backend = _backend(args)
    rseed = args.seed if args.randomize_seed is None else args.randomize_seed
    randomized = backend.randomize_parameters(rseed)
    manifest = load_manifest(args.manifest)
    if len(manifest) == 0:
        raise DataError(f"{args.manifest}: manifest has no pairs")
    channels = backend.input_shape[2] if backend.input_shape else 3
    pairs = load_pairs(manifest, _image_size(backend), channels=channels)
    cfg = _mask_config(args)
    out = Path(args.out)
    (out / "maps").mkdir(parents=True, exist_ok=True)
    region = getattr(backend, "sensitive_region", None)
    rows = []
    for i, pair in enumerate(pairs):
        trained = explain_pair(ExplainRequest(pair.image_a, pair.image_b, backend, cfg), workers=args.workers)
        rand = explain_pair(ExplainRequest(pair.image_a, pair.image_b, randomized, cfg), workers=args.workers)
        for tag, s_t, s_r in (("a", trained.s_a, rand.s_a), ("b", trained.s_b, rand.s_b)):
            save_saliency(s_t, out / "maps" / f"{i:05d}_{tag}_trained.salm")
            save_saliency(s_r, out / "maps" / f"{i:05d}_{tag}_randomized.salm")
            row = {"pair": i, "image": tag, "correlation": pearson_correlation(s_t, s_r)}
            if region is not None:
                row["precision_trained"] = _region_precision(s_t, region)
                row["precision_randomized"] = _region_precision(s_r, region)
            rows.append(row)
    mean_abs = float(np.mean([abs(r["correlation"]) for r in rows]))
    report = {
        "mean_abs_correlation": mean_abs,
        "max_correlation": args.max_correlation,
        "passed": mean_abs <= args.max_correlation,
        "randomize_seed": rseed,
        "randomized_backend": randomized.describe(),
        "per_map": rows,
    }
    if region is not None:
        report["mean_precision_trained"] = float(np.mean([r["precision_trained"] for r in rows]))
        report["mean_precision_randomized"] = float(np.mean([r["precision_randomized"] for r in rows]))
    _write_json(out / "report.json", report)
    _write_json(out / "metadata.json", _metadata(args, model_sha256=_model_hash(backend),
                                                 backend=backend.describe(), mask_config=cfg.as_dict()))
    print(f"mean |correlation| = {mean_abs:.4f} ({'pass' if report['passed'] else 'FAIL'} at <= {args.max_correlation})")
    return EXIT_OK


def cmd_genmasks(args):
    h, w = args.size
    cfg = _mask_config(args)
    masks = generate_stack(cfg, h, w)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(masks) - 1)))
    for k, m in enumerate(masks):
        save_mask_png(m, out / f"mask_{k:0{width}d}.png")
    _write_json(out / "metadata.json", _metadata(args, mask_config=cfg.as_dict(),
                                                 patch_size=cfg.resolved_patch_size(h, w)))
    print(f"wrote {len(masks)} masks to {out}")
    return EXIT_OK


def cmd_toy_suite(args):
    from .toysuite import LEFT_HALF, toy_backend, toy_pairs

    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    region = tuple(v * args.size // 112 for v in LEFT_HALF)
    spec = toy_backend(region=region, size=args.size).to_json()
    _write_json(out / "toy_model.json", spec)
    rows = []
    for pair in toy_pairs(args.match, args.nonmatch, seed=args.seed, size=args.size):
        a = Path("images") / f"{pair.name}_a.png"
        b = Path("images") / f"{pair.name}_b.png"
        save_image(pair.image_a, out / a)
        save_image(pair.image_b, out / b)
        rows.append((a.as_posix(), b.as_posix(), pair.label))
    write_manifest(out / "manifest.csv", rows)
    print(f"wrote {len(rows)} pairs, manifest {out / 'manifest.csv'}, model {out / 'toy_model.json'}")
    return EXIT_OK


COMMANDS = {
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "sanity-check": cmd_sanity_check,
    "genmasks": cmd_genmasks,
    "toy-suite": cmd_toy_suite,
}


def _fail(kind, code, exc):
    print(f"corrrise: error[{kind}]: {exc}", file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = _parse(parser, argv)
    except UsageError as exc:
        return _fail("usage", EXIT_USAGE, exc)
    except (ContractError, DataError) as exc:
        return _fail("usage", EXIT_USAGE, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail("usage", EXIT_USAGE, exc)
    except (BackendError, UnsupportedOperationError) as exc:
        return _fail("backend", EXIT_BACKEND, exc)
    except (DataError, DegenerateInputError) as exc:
        return _fail("data", EXIT_DATA, exc)
    except (ConfigError, ContractError, argparse.ArgumentTypeError) as exc:
        return _fail("usage", EXIT_USAGE, exc)


if __name__ == "__main__":
    sys.exit(main())
