"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

from . import __version__
from .codec import ChangeCodec, LandClassSet, change_map
from .dataset import (
    SPLITS,
    SplitManifest,
    SynthSpec,
    dataset_stems,
    load_pair,
    parse_fractions,
    parse_synth_spec,
    split,
    tile,
    write_pair,
    write_synth_dataset,
)
from .errors import DataError
from .metrics import PRESENCE_RULES, ChangeConfusion, accumulate, report, write_confusion_csv, write_report_json
from .pipeline import PipelineConfig, ingest_external_predictions, parse_config, run_two_step
from .rasters import (
    LabelRaster,
    Palette,
    load_change_raster,
    load_image,
    load_label_raster,
    load_palette,
    save_change_raster,
    save_image,
    save_label_raster,
    save_render,
)
from .segmenter import TrainConfig, load_model, predict, save_model, train
from .transitions import (
    asymmetry_report,
    class_distribution,
    transition_matrix,
    write_asymmetry_csv,
    write_distribution_json,
    write_matrix_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("scpa")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


def _default_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


# ------------------------------------------------------------------ helpers

def _add_class_args(p, palette_help="palette file (id r g b name per line)"):
    p.add_argument("-L", "--n-classes", type=int, help="number of land classes")
    p.add_argument("--names", help="comma-separated class names (sets the class count)")
    p.add_argument("--palette", type=Path, help=palette_help)


def _palette(args) -> Optional[Palette]:
    return load_palette(args.palette) if getattr(args, "palette", None) else None


def _classes(args, palette: Optional[Palette] = None) -> LandClassSet:
    if args.names:
        cls = LandClassSet.from_names([n.strip() for n in args.names.split(",")])
        if args.n_classes is not None and args.n_classes != cls.count:
            raise DataError(f"--n-classes {args.n_classes} disagrees with {cls.count} --names")
        return cls
    if args.n_classes is not None:
        if palette is not None and len(palette) != args.n_classes:
            raise DataError(f"--n-classes {args.n_classes} disagrees with a {len(palette)}-class palette")
        return palette.classes if palette is not None else LandClassSet(args.n_classes)
    if palette is not None:
        return palette.classes
    raise UsageError("give --n-classes, --names or --palette")


def _pngs(path: Path) -> List[Path]:
    return sorted(path.glob("*.png")) if path.is_dir() else [path]


# ------------------------------------------------------------------ subcommands

def cmd_tile(args):
    pal = _palette(args)
    classes = _classes(args, pal)
    src_lbl = load_label_raster(args.src_lbl, classes, pal)
    dst_lbl = load_label_raster(args.dst_lbl, classes, pal)
    tiles, grid = tile(
        load_image(args.src_img), load_image(args.dst_img), src_lbl, dst_lbl, args.tile_size, args.stem
    )
    with ThreadPoolExecutor(max(1, args.jobs)) as pool:
        list(pool.map(lambda t: write_pair(args.out, t.tile_id, t.src_image, t.dst_image, t.src_labels, t.dst_labels), tiles))
    print(f"wrote {len(grid)} tiles of {grid.tile_size}x{grid.tile_size} to {args.out}")


def cmd_split(args):
    if args.dir is not None:
        ids = dataset_stems(args.dir)
    elif args.ids is not None:
        ids = [l.strip() for l in Path(args.ids).read_text().splitlines() if l.strip()]
    else:
        raise UsageError("give --dir or --ids")
    manifest = split(ids, args.seed, parse_fractions(args.fractions))
    out = args.out or (Path(args.dir) / "manifest.json" if args.dir else None)
    if out is None:
        json.dump(manifest.to_dict(), sys.stdout, indent=2, sort_keys=True)
        print()
    else:
        manifest.save(out)
        c = manifest.counts()
        print(f"train {c['train']}  val {c['val']}  test {c['test']}  -> {out}")


def cmd_encode_labels(args):
    pal = load_palette(args.palette) if args.palette else Palette.default()
    raster = load_label_raster(args.input, pal.classes, pal, snap_tolerance=args.snap_tolerance)
    save_label_raster(raster, args.output, "ids")


def cmd_decode_labels(args):
    pal = load_palette(args.palette) if args.palette else Palette.default()
    raster = load_label_raster(args.input, pal.classes)
    save_label_raster(raster, args.output, "colored", pal)


def cmd_diff(args):
    pal = _palette(args)
    classes = _classes(args, pal)
    src = load_label_raster(args.src, classes, pal)
    dst = load_label_raster(args.dst, classes, pal)
    cr = change_map(src, dst, ChangeCodec(classes))
    save_change_raster(cr, args.out)
    if args.render:
        save_render(cr, args.render)
    changed = int((cr.data != 0).sum())
    print(f"{changed} of {cr.data.size} pixels changed -> {args.out}")


def cmd_eval(args):
    pal = _palette(args)
    jobs = max(1, args.jobs)
    if args.truth is not None and args.pred is not None:
        classes = _classes(args, pal) if (args.n_classes or args.names or pal) else None
        codec = ChangeCodec(classes) if classes else None
        truths = _pngs(args.truth)
        if args.pred.is_dir():
            preds = [args.pred / t.name for t in truths]
        else:
            preds = [args.pred]
        if len(truths) != len(preds):
            raise DataError("truth and prediction inputs differ in count")

        def one(tp):
            t, p = tp
            if not p.exists():
                raise DataError(f"no prediction for {t.name}: {p} missing")
            tr = load_change_raster(t, codec)
            pr = load_change_raster(p, codec or tr.codec)
            return accumulate(ChangeConfusion(tr.codec), tr, pr)

        with ThreadPoolExecutor(jobs) as pool:
            confs = list(pool.map(one, zip(truths, preds)))
    elif args.truth_dir is not None and args.pred_src_dir is not None and args.pred_dst_dir is not None:
        if pal is None and (Path(args.truth_dir) / "palette.txt").exists():
            pal = load_palette(Path(args.truth_dir) / "palette.txt")
        classes = _classes(args, pal)
        codec = ChangeCodec(classes)
        stems = dataset_stems(args.truth_dir)
        preds = ingest_external_predictions(args.pred_src_dir, args.pred_dst_dir, stems, classes, pal)

        def one(stem):
            _, _, ts, td = load_pair(args.truth_dir, stem, classes, with_images=False)
            ps, pd = preds[stem]
            return accumulate(ChangeConfusion(codec), change_map(ts, td, codec), change_map(ps, pd, codec))

        with ThreadPoolExecutor(jobs) as pool:
            confs = list(pool.map(one, stems))
    else:
        raise UsageError("give --truth and --pred, or --truth-dir with --pred-src-dir and --pred-dst-dir")
    if not confs:
        raise DataError("no rasters to evaluate")
    conf = confs[0]
    for c in confs[1:]:
        conf = conf + c
    rep = report(conf, args.presence)
    if args.out_json:
        write_report_json(rep, args.out_json)
    if args.out_csv:
        write_confusion_csv(conf, args.out_csv)
    print(f"mIoU {rep.miou:.6f}")
    print(f"BAcc {rep.bacc:.6f}")
    print(f"change types present: {rep.n_present} of {conf.n_types}")


def cmd_transition(args):
    pal = _palette(args)
    classes = _classes(args, pal)
    src = load_label_raster(args.src, classes, pal)
    dst = load_label_raster(args.dst, classes, pal)
    tm = transition_matrix(src, dst)
    if args.out_csv:
        write_matrix_csv(tm, args.out_csv)
    if args.asymmetry_csv:
        write_asymmetry_csv(tm, args.asymmetry_csv)
    if args.distribution_json:
        write_distribution_json(class_distribution(src), Path(args.distribution_json).with_suffix(".src.json"))
        write_distribution_json(class_distribution(dst), Path(args.distribution_json).with_suffix(".dst.json"))
    names = classes.names
    print(f"{tm.total_pixels} pixels, {tm.total_pixels - tm.unchanged} changed")
    for i, j, a, b, ratio in asymmetry_report(tm)[: args.top]:
        print(f"{names[i]} -> {names[j]}: {a} (reverse {b}, ratio {ratio:.3g})")


def cmd_synth(args):
    spec = parse_synth_spec(Path(args.spec).read_text()) if args.spec else SynthSpec()
    if args.pairs is not None:
        spec.n_pairs = args.pairs
        spec.validate()
    manifest = write_synth_dataset(spec, args.seed, args.out)
    c = manifest.counts()
    print(f"wrote {spec.n_pairs} pairs to {args.out} (train {c['train']}, val {c['val']}, test {c['test']})")


def _split_stems(root: Path, splits: str) -> List[str]:
    stems = dataset_stems(root)
    if splits == "all":
        return stems
    wanted = {s.strip() for s in splits.split(",")}
    bad = wanted - set(SPLITS)
    if bad:
        raise UsageError(f"unknown split(s) {sorted(bad)}")
    manifest = SplitManifest.load(root / "manifest.json")
    chosen = {i for s in wanted for i in manifest.ids(s)}
    return [s for s in stems if s in chosen]


def cmd_train(args):
    root = Path(args.data)
    pal = _palette(args)
    if pal is None and (root / "palette.txt").exists():
        pal = load_palette(root / "palette.txt")
    classes = _classes(args, pal)
    stems = _split_stems(root, args.split)
    if not stems:
        raise DataError(f"no training pairs in {root} for split {args.split!r}")
    samples = []
    for stem in stems:
        si, di, sl, dl = load_pair(root, stem, classes)
        samples += [(si, sl), (di, dl)]
    cfg = TrainConfig(
        initial_lr=args.lr,
        power=args.power,
        momentum=args.momentum,
        max_iter=args.max_iter,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        window=args.window,
    )
    model = train(samples, args.kind, cfg)
    save_model(model, args.out)
    print(f"trained {args.kind} model on {len(stems)} pairs -> {args.out}")


def cmd_predict(args):
    model = load_model(args.model)
    pal = _palette(args)
    args.out.mkdir(parents=True, exist_ok=True)
    for path in args.images:
        for img_path in _pngs(path):
            raster = predict(model, load_image(img_path))
            out = args.out / f"{img_path.stem}.png"
            if args.colored:
                save_label_raster(raster, out, "colored", pal or Palette.default(model.n_classes))
            else:
                save_label_raster(raster, out)
    print(f"predictions written to {args.out}")


def cmd_run(args):
    if args.config:
        cfg = parse_config(Path(args.config).read_text(), Path(args.config).parent)
    else:
        cfg = PipelineConfig()
    for key, attr in (
        ("data", "data_dir"),
        ("out", "out_dir"),
        ("model", "model"),
        ("pred_src_dir", "pred_src_dir"),
        ("pred_dst_dir", "pred_dst_dir"),
        ("palette", "palette"),
        ("split", "split"),
        ("presence", "presence"),
        ("jobs", "jobs"),
    ):
        value = getattr(args, key)
        if value is not None:
            setattr(cfg, attr, value)
    if args.no_render:
        cfg.render = False
    if args.names or args.n_classes:
        cfg.classes = _classes(args)
    if cfg.data_dir is None or cfg.out_dir is None:
        raise UsageError("run needs a data directory and an output directory")
    summary = run_two_step(cfg)
    print(f"mIoU {summary.report.miou:.6f}")
    print(f"BAcc {summary.report.bacc:.6f}")
    print(f"summary: {summary.summary_path}")


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scpa", description="Semantic change pattern analysis toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--help-json", action="store_true", help="print a machine-readable description and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    jobs = _default_jobs()

    s = sub.add_parser("tile", help="cut a co-registered image/label quadruple into tiles")
    s.add_argument("--src-img", type=Path, required=True)
    s.add_argument("--dst-img", type=Path, required=True)
    s.add_argument("--src-lbl", type=Path, required=True)
    s.add_argument("--dst-lbl", type=Path, required=True)
    s.add_argument("--tile-size", type=int, default=512)
    s.add_argument("--stem", default="tile", help="tile id prefix")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--jobs", type=int, default=jobs)
    _add_class_args(s)
    s.set_defaults(func=cmd_tile)

    s = sub.add_parser("split", help="seeded train/val/test manifest")
    s.add_argument("--dir", type=Path, help="dataset directory (ids = stems in src_lbl/)")
    s.add_argument("--ids", type=Path, help="text file with one id per line")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--fractions", default="1/2,1/6,1/3")
    s.add_argument("--out", type=Path, help="manifest path (default <dir>/manifest.json, else stdout)")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("encode-labels", help="RGB label image -> class-ID raster")
    s.add_argument("input", type=Path)
    s.add_argument("output", type=Path)
    s.add_argument("--palette", type=Path, help="palette file (default: built-in 7-class palette)")
    s.add_argument("--snap-tolerance", type=int, default=0, help="snap colors within this per-channel distance")
    s.set_defaults(func=cmd_encode_labels)

    s = sub.add_parser("decode-labels", help="class-ID raster -> RGB label image")
    s.add_argument("input", type=Path)
    s.add_argument("output", type=Path)
    s.add_argument("--palette", type=Path, help="palette file (default: built-in 7-class palette)")
    s.set_defaults(func=cmd_decode_labels)

    s = sub.add_parser("diff", help="two class-ID rasters -> change raster")
    s.add_argument("src", type=Path)
    s.add_argument("dst", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--render", type=Path, help="also write a colored view and legend")
    _add_class_args(s)
    s.set_defaults(func=cmd_diff)

    s = sub.add_parser("eval", help="metrics for predicted vs ground-truth change")
    s.add_argument("--truth", type=Path, help="truth change raster or directory")
    s.add_argument("--pred", type=Path, help="predicted change raster or directory")
    s.add_argument("--truth-dir", type=Path, help="dataset directory with src_lbl/ and dst_lbl/")
    s.add_argument("--pred-src-dir", type=Path)
    s.add_argument("--pred-dst-dir", type=Path)
    s.add_argument("--presence", choices=PRESENCE_RULES, default="union")
    s.add_argument("--out-json", type=Path)
    s.add_argument("--out-csv", type=Path)
    s.add_argument("--jobs", type=int, default=jobs)
    _add_class_args(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("transition", help="class transition matrix and asymmetry report")
    s.add_argument("src", type=Path)
    s.add_argument("dst", type=Path)
    s.add_argument("--out-csv", type=Path)
    s.add_argument("--asymmetry-csv", type=Path)
    s.add_argument("--distribution-json", type=Path, help="prefix for .src.json/.dst.json class distributions")
    s.add_argument("--top", type=int, default=5, help="asymmetry rows to print")
    _add_class_args(s)
    s.set_defaults(func=cmd_transition)

    s = sub.add_parser("synth", help="generate a synthetic paired dataset")
    s.add_argument("--spec", type=Path, help="generator spec (key = value lines)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pairs", type=int, help="override n_pairs")
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train the toy segmenter")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--split", default="train", help="comma list of splits, or 'all'")
    s.add_argument("--kind", choices=("centroid", "softmax"), default="centroid")
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--power", type=float, default=0.9)
    s.add_argument("--momentum", type=float, default=0.9)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--batch-size", type=int, default=256)
    s.add_argument("--epochs", type=int, default=5)
    s.add_argument("--window", type=int, default=0, help="add k x k mean/std features when k > 1")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)
    _add_class_args(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="segment images with a trained model")
    s.add_argument("--model", type=Path, required=True)
    s.add_argument("images", type=Path, nargs="+")
    s.add_argument("--out", type=Path, required=True, help="output directory")
    s.add_argument("--colored", action="store_true", help="write RGB via palette instead of IDs")
    s.add_argument("--palette", type=Path)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("run", help="full two-step pipeline")
    s.add_argument("--config", type=Path, help="key = value run config")
    s.add_argument("--data", type=Path)
    s.add_argument("--out", type=Path)
    s.add_argument("--model", type=Path)
    s.add_argument("--pred-src-dir", type=Path)
    s.add_argument("--pred-dst-dir", type=Path)
    s.add_argument("--split", choices=("train", "val", "test", "all"))
    s.add_argument("--presence", choices=PRESENCE_RULES)
    s.add_argument("--jobs", type=int)
    s.add_argument("--no-render", action="store_true")
    _add_class_args(s)
    s.set_defaults(func=cmd_run)
    return p


def describe(parser: argparse.ArgumentParser) -> dict:
    def args_of(p):
        out = []
        for a in p._actions:
            if isinstance(a, (argparse._HelpAction, argparse._SubParsersAction)):
                continue
            out.append(
                {
                    "dest": a.dest,
                    "flags": list(a.option_strings),
                    "required": bool(a.required),
                    "default": a.default if isinstance(a.default, (int, float, str, bool, type(None))) else str(a.default),
                    "choices": list(a.choices) if a.choices else None,
                    "help": a.help,
                }
            )
        return out

    subs = {}
    for a in parser._actions:
        if isinstance(a, argparse._SubParsersAction):
            helps = {c.dest: c.help for c in a._choices_actions}
            for name, sp in a.choices.items():
                subs[name] = {"help": helps.get(name), "arguments": args_of(sp)}
    return {
        "prog": parser.prog,
        "version": __version__,
        "exit_codes": {"0": "success", "1": "usage error", "2": "data/validation error", "3": "I/O error"},
        "arguments": args_of(parser),
        "subcommands": subs,
    }


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.help_json:
        json.dump(describe(parser), sys.stdout, indent=2)
        print()
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"scpa {args.command}: error: {exc}\n")
        return EXIT_USAGE
    except DataError as exc:
        sys.stderr.write(f"scpa {args.command}: data error: {exc}\n")
        return EXIT_DATA
    except OSError as exc:
        sys.stderr.write(f"scpa {args.command}: I/O error: {exc}\n")
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
