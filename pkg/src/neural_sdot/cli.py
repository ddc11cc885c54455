"""Command-line entry point: ``neural-sdot {train,map,metrics,color,da}``.

Every subcommand writes into ``--out`` (default ``out``).  Reports are JSON
with sorted keys; wall-clock times and timestamps live only under
``metadata`` so reruns with the same flags give identical bytes elsewhere.

Exit codes: 0 success (non-convergence is flagged in the report, not an
error), 2 usage or input error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .apps import (
    COLOR_LR,
    Image,
    choose_subset,
    color_transfer,
    domain_adapt,
    domain_adapt_partial,
    mode_benchmark,
    read_ppm,
    write_ppm,
)
from .core import DiscreteTarget, SourceSpec, assign_cells, read_points_csv, write_points_csv
from .errors import InvalidInputError, InvalidStateError, InvariantViolation
from .heightnet import load_checkpoint, save_checkpoint
from .solver import TrainConfig, predict_heights, run_report, train_height_net
from .synth import (
    make_da_dataset,
    named_spec,
    read_labeled_csv,
    sample_mixture,
    write_labeled_csv,
)
from .volume import VolumeConfig

log = logging.getLogger("neural_sdot")

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 2, 3
DA_MAX_ITER = 150


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _add_train_flags(p: argparse.ArgumentParser, *, lr: float, max_iter: int) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--delta", type=float, default=1e-2, help="gradient-norm tolerance")
    g.add_argument("--max-iter", type=int, default=max_iter)
    g.add_argument("--samples", type=int, default=65536, help="source samples per volume pass (N)")
    g.add_argument("--batches", type=int, default=None, help="atom batches (B) for the batched scheme")
    g.add_argument("--batch-size", type=int, default=None, help="atoms per batch (b)")
    g.add_argument("--scheme", choices=["auto", "global", "batched"], default="auto")
    g.add_argument("--lr", type=float, default=lr)
    g.add_argument("--hidden", type=_ints, default=(512, 512, 512), help="hidden widths, comma separated")
    g.add_argument("--no-batch-norm", action="store_true")
    g.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="neural-sdot", description="Semi-discrete OT with a neural height representation.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", type=Path, help="JSON file of flag defaults (keys as flag names)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a height net on a dataset or an atom file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset", choices=["ring", "grid"])
    src.add_argument("--atoms", type=Path, help="CSV of atoms, optional trailing mass column")
    p.add_argument("--ratio", type=float, default=1.0, help="fraction of atoms used for training")
    p.add_argument("--source", type=Path, help="CSV of source samples (default: uniform box)")
    p.add_argument("--source-low", type=_floats, help="uniform source box lower corner")
    p.add_argument("--source-high", type=_floats, help="uniform source box upper corner")
    p.add_argument("--out", type=Path, default=Path("out"))
    _add_train_flags(p, lr=0.005, max_iter=2000)

    p = sub.add_parser("map", help="map query points through a trained checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    tgt = p.add_mutually_exclusive_group(required=True)
    tgt.add_argument("--dataset", choices=["ring", "grid"])
    tgt.add_argument("--atoms", type=Path)
    p.add_argument("--queries", type=Path, required=True, help="CSV of query points")
    p.add_argument("--out", type=Path, default=Path("out"))

    p = sub.add_parser("metrics", help="mode-collapse benchmark on ring or grid")
    p.add_argument("--dataset", choices=["ring", "grid"], required=True)
    p.add_argument("--ratio", type=float, default=1.0)
    p.add_argument("--generate", type=int, default=10_000, help="number of generated samples")
    p.add_argument("--out", type=Path, default=Path("out"))
    _add_train_flags(p, lr=0.005, max_iter=2000)

    p = sub.add_parser("color", help="recolour an image with another image's palette")
    p.add_argument("--source", type=Path, required=True, help="PPM (or PNG with Pillow)")
    p.add_argument("--target", type=Path, required=True)
    p.add_argument("--palette-size", type=int, default=512)
    p.add_argument("--png", action="store_true", help="also write output.png (needs Pillow)")
    p.add_argument("--out", type=Path, default=Path("out"))
    _add_train_flags(p, lr=COLOR_LR, max_iter=2000)

    p = sub.add_parser("da", help="domain adaptation by label transfer")
    p.add_argument("--source", type=Path, help="labelled CSV (x, y, label); default: generated")
    p.add_argument("--target", type=Path)
    p.add_argument("--count", type=int, default=4000, help="points per generated domain")
    p.add_argument("--ratio", type=float, default=None, help="train on this fraction of target atoms")
    p.add_argument("--out", type=Path, default=Path("out"))
    _add_train_flags(p, lr=0.005, max_iter=DA_MAX_ITER)
    return parser


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _train_config(args, *, scheme: str | None = None) -> TrainConfig:
    vol = VolumeConfig(samples_per_batch=args.samples, atom_batches=args.batches or 1,
                       atom_batch_size=args.batch_size, seed=args.seed)
    return TrainConfig(delta=args.delta, max_iter=args.max_iter, volume=vol, lr=args.lr,
                       scheme=scheme if scheme and args.scheme == "auto" else args.scheme,
                       hidden=args.hidden, batch_norm=not args.no_batch_norm, workers=args.workers)


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _run_config(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "verbose", "config"):
            continue
        out[k] = str(v) if isinstance(v, Path) else list(v) if isinstance(v, tuple) else v
    return out


def _load_target(args) -> DiscreteTarget:
    if args.dataset:
        return DiscreteTarget(named_spec(args.dataset).means)
    pts, masses = read_points_csv(args.atoms)
    if pts.shape[0] == 0:
        raise InvalidInputError(f"{args.atoms}: no atoms")
    return DiscreteTarget(pts, masses)


def _source_for(args, target: DiscreteTarget) -> SourceSpec:
    if args.dataset:
        return named_spec(args.dataset).source()
    if args.source:
        pts, _ = read_points_csv(args.source, dim=target.dim, with_mass=False)
        return SourceSpec.explicit(pts)
    if args.source_low or args.source_high:
        if not (args.source_low and args.source_high):
            raise InvalidInputError("--source-low and --source-high go together")
        return SourceSpec.uniform_box(args.source_low, args.source_high)
    # Bounding box of the atoms, padded by a tenth of its extent (at least 1).
    lo, hi = target.atoms.min(axis=0), target.atoms.max(axis=0)
    pad = np.maximum(0.1 * (hi - lo), 1.0)
    return SourceSpec.uniform_box(lo - pad, hi + pad)


def _read_image(path: Path) -> Image:
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image as PILImage
        except ImportError:
            raise InvalidInputError("reading PNG needs Pillow; convert to PPM or install pillow") from None
        with PILImage.open(path) as im:
            return Image(np.asarray(im.convert("RGB")))
    return read_ppm(path)


def _write_png(path: Path, img: Image) -> None:
    try:
        from PIL import Image as PILImage
    except ImportError:
        raise InvalidInputError("--png needs Pillow") from None
    PILImage.fromarray(img.pixels, "RGB").save(path)


def _write_scatter(path: Path, groups: list[tuple[str, np.ndarray]]) -> None:
    with open(path, "w") as fh:
        fh.write("kind,x,y\n")
        for kind, pts in groups:
            for x, y in np.asarray(pts, dtype=np.float64).tolist():
                fh.write(f"{kind},{x!r},{y!r}\n")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_train(args) -> int:
    target = _load_target(args)
    source = _source_for(args, target)
    cfg = _train_config(args)
    idx = choose_subset(target.n, args.ratio, args.seed)
    if idx.size < 2 and target.n >= 2:
        raise InvalidInputError("ratio leaves fewer than 2 training atoms")
    res = train_height_net(target.subset(idx), source, cfg)
    steps = res.net.adam.step
    t0 = time.perf_counter()
    h = predict_heights(res.net, target)
    predict_time = time.perf_counter() - t0
    if res.net.adam.step != steps:
        raise InvariantViolation("prediction advanced the optimizer")
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(res.net, out / "checkpoint.json")
    write_points_csv(out / "heights.csv", h.values[:, None], header=["height"])
    write_points_csv(out / "atoms.csv", target.atoms, target.masses,
                     header=[f"x{i}" for i in range(target.dim)] + ["mass"])
    report = run_report(res, cfg, predict_time=predict_time, extra={
        "run": _run_config(args),
        "n_atoms": target.n,
        "n_trained": int(idx.size),
        "trained_index": idx.tolist(),
        "source": source.to_dict() if source.kind != "explicit-samples" else {"kind": source.kind},
        "predict_optimizer_steps": res.net.adam.step - steps,
    })
    _write_json(out / "report.json", report)
    log.info("train: converged=%s iterations=%d |grad|=%.4g", res.converged, res.iterations, res.grad_norm)
    return EXIT_OK


def cmd_map(args) -> int:
    net = load_checkpoint(args.checkpoint)
    target = _load_target(args)
    if target.dim != net.dim:
        raise InvalidInputError(f"atoms of dimension {target.dim} for a network of input width {net.dim}")
    text = args.queries.read_text()
    if text.strip():
        X, _ = read_points_csv(args.queries, dim=target.dim, with_mass=False)
    else:
        X = np.zeros((0, target.dim))
    if X.shape[1] != target.dim:
        raise InvalidInputError(f"queries of dimension {X.shape[1]} for atoms of dimension {target.dim}")
    h = predict_heights(net, target)
    idx = assign_cells(X, target, h)
    if idx.size and (idx.min() < 0 or idx.max() >= target.n):
        raise InvariantViolation("winner index out of range")
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "mapped.csv", "w") as fh:
        fh.write(",".join(["index"] + [f"y{i}" for i in range(target.dim)]) + "\n")
        for i in idx.tolist():
            fh.write(",".join([str(i)] + [repr(v) for v in target.atoms[i].tolist()]) + "\n")
    return EXIT_OK


def cmd_metrics(args) -> int:
    mix = named_spec(args.dataset)
    cfg = _train_config(args)
    res = mode_benchmark(mix, args.ratio, cfg, n_generated=args.generate, seed=args.seed)
    if res.predict_optimizer_steps:
        raise InvariantViolation("prediction advanced the optimizer")
    args.out.mkdir(parents=True, exist_ok=True)
    report = run_report(res.train, cfg, predict_time=res.predict_time, extra={
        "run": _run_config(args),
        "metrics": res.metrics.to_dict(),
        "n_trained": int(res.trained_index.size),
        "trained_index": res.trained_index.tolist(),
        "predict_optimizer_steps": res.predict_optimizer_steps,
    })
    _write_json(args.out / "metrics.json", report)
    real, _ = sample_mixture(mix, args.generate, args.seed)
    _write_scatter(args.out / "scatter.csv", [("generated", res.generated), ("real", real)])
    return EXIT_OK


def cmd_color(args) -> int:
    src = _read_image(args.source)
    tgt = _read_image(args.target)
    cfg = _train_config(args)
    res = color_transfer(src, tgt, palette_size=args.palette_size, cfg=cfg, seed=args.seed)
    pal = np.clip(np.rint(res.palette * 255), 0, 255).astype(np.uint8)
    if not np.array_equal(res.image.pixels.reshape(-1, 3), pal[res.assignment]):
        raise InvariantViolation("output pixel outside the palette")
    args.out.mkdir(parents=True, exist_ok=True)
    write_ppm(args.out / "output.ppm", res.image)
    if args.png:
        _write_png(args.out / "output.png", res.image)
    hist = res.histogram()
    report = run_report(res.train, cfg, extra={
        "run": _run_config(args),
        "palette_size": int(res.palette.shape[0]),
        "histogram_l1_vs_uniform": float(np.abs(hist - 1.0 / hist.size).sum()),
    })
    _write_json(args.out / "report.json", report)
    return EXIT_OK


def cmd_da(args) -> int:
    if (args.source is None) != (args.target is None):
        raise InvalidInputError("--source and --target go together")
    if args.source:
        source, target = read_labeled_csv(args.source), read_labeled_csv(args.target)
    else:
        source, target = make_da_dataset(args.count, 3, seed=args.seed)
    cfg = _train_config(args, scheme="global")
    args.out.mkdir(parents=True, exist_ok=True)
    extra = {"run": _run_config(args)}
    if args.ratio is None:
        res = domain_adapt(source, target, cfg=cfg, seed=args.seed)
        extra["accuracy"] = res.accuracy
        train, mapped, predict_time = res.train, res.mapped, None
    else:
        res = domain_adapt_partial(source, target, args.ratio, cfg=cfg, seed=args.seed)
        extra.update(accuracy_part=res.accuracy_part, accuracy_all=res.accuracy_all,
                     n_trained=int(res.trained_index.size))
        train, mapped, predict_time = res.part.train, res.mapped_all, res.predict_time
    _write_json(args.out / "da.json", run_report(train, cfg, predict_time=predict_time, extra=extra))
    write_labeled_csv(args.out / "source.csv", *source)
    write_labeled_csv(args.out / "target.csv", *target)
    _write_scatter(args.out / "scatter.csv", [("mapped", mapped), ("target", target[0])])
    return EXIT_OK


COMMANDS = {"train": cmd_train, "map": cmd_map, "metrics": cmd_metrics, "color": cmd_color, "da": cmd_da}


def _apply_config_file(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        doc = json.loads(args.config.read_text())
    except (OSError, ValueError) as exc:
        parser.exit(EXIT_INPUT, f"neural-sdot: cannot read config {args.config}: {exc}\n")
    if not isinstance(doc, dict):
        parser.exit(EXIT_INPUT, "neural-sdot: config must be a JSON object\n")
    # File values become defaults; explicit flags still win.
    extra = []
    for k, v in doc.items():
        flag = "--" + k.replace("_", "-")
        if f"{flag}" in argv or any(a.startswith(flag + "=") for a in argv):
            continue
        if isinstance(v, bool):
            if v:
                extra.append(flag)
        elif isinstance(v, list):
            extra += [flag, ",".join(str(x) for x in v)]
        else:
            extra += [flag, str(v)]
    return parser.parse_args(list(argv) + extra)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = _apply_config_file(parser, argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InvariantViolation, InvalidStateError) as exc:
        print(f"neural-sdot: internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (InvalidInputError, OSError, ValueError) as exc:
        print(f"neural-sdot: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
