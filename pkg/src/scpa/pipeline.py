"""Two-step change analysis: segment both dates, compare labels, evaluate.

The first step is pluggable.  Either a trained toolkit segmenter produces the
label rasters, or prediction rasters written by any external model are
ingested from two directories (``<stem>.png`` per pair, grayscale IDs or
palette colors).  Evaluation is a single confusion over all pairs; per-pair
reports are kept for diagnosis.
"""

from __future__ import annotations

import configparser
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .codec import ChangeCodec, LandClassSet, change_map
from .dataset import SplitManifest, dataset_stems, load_pair
from .errors import DataError
from .metrics import PRESENCE_RULES, ChangeConfusion, MetricsReport, accumulate, report, write_confusion_csv, write_report_json
from .rasters import (
    ChangeRaster,
    LabelRaster,
    Palette,
    load_label_raster,
    load_palette,
    save_change_raster,
    save_label_raster,
    save_render,
)
from .segmenter import SegmenterModel, load_model, predict
from .transitions import TransitionMatrix, transition_matrix, write_asymmetry_csv, write_matrix_csv

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    data_dir: Optional[Path] = None
    out_dir: Optional[Path] = None
    model: Optional[Path] = None
    pred_src_dir: Optional[Path] = None
    pred_dst_dir: Optional[Path] = None
    classes: Optional[LandClassSet] = None
    palette: Optional[Path] = None
    split: str = "test"
    presence: str = "union"
    jobs: int = 1
    render: bool = True

    def validate(self) -> None:
        has_model = self.model is not None
        has_preds = self.pred_src_dir is not None or self.pred_dst_dir is not None
        if has_model == has_preds:
            raise DataError("configure exactly one segmenter source: model, or pred_src_dir + pred_dst_dir")
        if has_preds and (self.pred_src_dir is None or self.pred_dst_dir is None):
            raise DataError("external predictions need both pred_src_dir and pred_dst_dir")
        if self.presence not in PRESENCE_RULES:
            raise DataError(f"unknown presence rule {self.presence!r}")
        if self.split not in ("train", "val", "test", "all"):
            raise DataError(f"unknown split {self.split!r}")
        for p in (self.data_dir, self.model, self.pred_src_dir, self.pred_dst_dir, self.palette):
            if p is not None and not Path(p).exists():
                raise FileNotFoundError(f"{p} does not exist")

    def to_dict(self) -> dict:
        out = {}
        for k in ("data_dir", "out_dir", "model", "pred_src_dir", "pred_dst_dir", "palette"):
            v = getattr(self, k)
            out[k] = None if v is None else str(v)
        out.update(split=self.split, presence=self.presence, jobs=self.jobs, render=self.render)
        out["class_names"] = None if self.classes is None else list(self.classes.names)
        return out


_PATH_KEYS = ("data_dir", "out_dir", "model", "pred_src_dir", "pred_dst_dir", "palette")


def parse_config(text: str, base_dir=".") -> PipelineConfig:
    """Read a ``key = value`` run config; relative paths resolve against ``base_dir``."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise DataError(f"bad config: {exc}") from None
    sec = parser["run"]
    cfg = PipelineConfig()
    known = set(_PATH_KEYS) | {"split", "presence", "jobs", "render", "n_classes", "class_names"}
    unknown = set(sec) - known
    if unknown:
        raise DataError(f"unknown config keys: {sorted(unknown)}")
    for key in _PATH_KEYS:
        if key in sec:
            setattr(cfg, key, (Path(base_dir) / sec[key]).resolve())
    cfg.split = sec.get("split", cfg.split)
    cfg.presence = sec.get("presence", cfg.presence)
    try:
        cfg.jobs = sec.getint("jobs", cfg.jobs)
        cfg.render = sec.getboolean("render", cfg.render)
        n = sec.getint("n_classes", None)
    except ValueError as exc:
        raise DataError(f"bad config value: {exc}") from None
    names = [s.strip() for s in sec["class_names"].split(",")] if "class_names" in sec else None
    if names:
        cfg.classes = LandClassSet.from_names(names)
        if n is not None and n != len(names):
            raise DataError(f"n_classes = {n} but {len(names)} class names given")
    elif n is not None:
        cfg.classes = LandClassSet(n)
    return cfg


@dataclass
class PairData:
    stem: str
    src_labels: LabelRaster
    dst_labels: LabelRaster
    src_image: Optional[np.ndarray] = None
    dst_image: Optional[np.ndarray] = None


@dataclass
class PairResult:
    stem: str
    pred_src: LabelRaster
    pred_dst: LabelRaster
    truth_change: ChangeRaster
    pred_change: ChangeRaster
    confusion: ChangeConfusion
    transition_truth: TransitionMatrix
    transition_pred: TransitionMatrix


@dataclass
class RunSummary:
    report: MetricsReport
    confusion: ChangeConfusion
    transition_truth: TransitionMatrix
    transition_pred: TransitionMatrix
    per_pair: Dict[str, MetricsReport]
    results: List[PairResult] = field(default_factory=list)
    artifacts: Dict[str, object] = field(default_factory=dict)
    summary_path: Optional[Path] = None


def ingest_external_predictions(
    dir_src,
    dir_dst,
    stems: Sequence[str],
    classes: LandClassSet,
    palette: Optional[Palette] = None,
) -> Dict[str, Tuple[LabelRaster, LabelRaster]]:
    """Load ``<stem>.png`` predictions for both dates; IDs or palette colors."""
    out = {}
    for stem in stems:
        pair = []
        for d, role in ((dir_src, "source"), (dir_dst, "destination")):
            path = Path(d) / f"{stem}.png"
            if not path.exists():
                raise DataError(f"missing {role} prediction for pair {stem!r}: {path}")
            pair.append(load_label_raster(path, classes, palette))
        out[stem] = (pair[0], pair[1])
    return out


def _resolve_classes(cfg: PipelineConfig, palette: Optional[Palette], model: Optional[SegmenterModel]) -> LandClassSet:
    candidates = [c for c in (cfg.classes, palette.classes if palette else None, model.classes if model else None) if c]
    if not candidates:
        raise DataError("class set unknown: give n_classes/class_names, a palette or a model")
    classes = candidates[0]
    for c in candidates[1:]:
        if c.count != classes.count:
            raise DataError(f"inconsistent class counts: {classes.count} vs {c.count}")
    return classes


def load_pairs(cfg: PipelineConfig, classes: LandClassSet, with_images: bool) -> List[PairData]:
    root = Path(cfg.data_dir)
    stems = dataset_stems(root)
    manifest_path = root / "manifest.json"
    if cfg.split != "all":
        if not manifest_path.exists():
            raise DataError(f"split {cfg.split!r} requested but {manifest_path} is missing")
        chosen = set(SplitManifest.load(manifest_path).ids(cfg.split))
        stems = [s for s in stems if s in chosen]
    if not stems:
        raise DataError(f"no pairs selected from {root} (split {cfg.split!r})")
    pairs = []
    for stem in stems:
        si, di, sl, dl = load_pair(root, stem, classes, with_images)
        pairs.append(PairData(stem, sl, dl, si, di))
    return pairs


def evaluate_pair(
    stem: str,
    truth_src: LabelRaster,
    truth_dst: LabelRaster,
    pred_src: LabelRaster,
    pred_dst: LabelRaster,
    codec: ChangeCodec,
) -> PairResult:
    for r, role in ((pred_src, "source prediction"), (pred_dst, "destination prediction")):
        if r.shape != truth_src.shape:
            raise DataError(f"pair {stem!r}: {role} is {r.shape}, ground truth is {truth_src.shape}")
    try:
        truth_change = change_map(truth_src, truth_dst, codec)
        pred_change = change_map(pred_src, pred_dst, codec)
    except DataError as exc:
        raise DataError(f"pair {stem!r}: {exc}") from None
    conf = accumulate(ChangeConfusion(codec), truth_change, pred_change)
    return PairResult(
        stem,
        pred_src,
        pred_dst,
        truth_change,
        pred_change,
        conf,
        transition_matrix(truth_src, truth_dst),
        transition_matrix(pred_src, pred_dst),
    )


def run_two_step(
    cfg: PipelineConfig,
    pairs: Optional[Sequence[PairData]] = None,
    model: Optional[SegmenterModel] = None,
    predictions: Optional[Dict[str, Tuple[LabelRaster, LabelRaster]]] = None,
) -> RunSummary:
    """Run segmentation (or ingestion), comparison and evaluation.

    ``pairs``, ``model`` and ``predictions`` may be passed in memory; anything
    missing is loaded from the paths in ``cfg``.  Any malformed pair aborts the
    run with the pair named.
    """
    if model is None and predictions is None:
        cfg.validate()
    palette = load_palette(cfg.palette) if cfg.palette else None
    if palette is None and cfg.data_dir and (Path(cfg.data_dir) / "palette.txt").exists():
        palette = load_palette(Path(cfg.data_dir) / "palette.txt")
    if model is None and cfg.model is not None:
        model = load_model(cfg.model)
    classes = _resolve_classes(cfg, palette, model)
    if palette is not None and len(palette) < classes.count:
        raise DataError(f"palette covers {len(palette)} classes, codec needs {classes.count}")
    codec = ChangeCodec(classes)

    if pairs is None:
        pairs = load_pairs(cfg, classes, with_images=model is not None)
    if model is None and predictions is None:
        predictions = ingest_external_predictions(
            cfg.pred_src_dir, cfg.pred_dst_dir, [p.stem for p in pairs], classes, palette
        )

    def work(p: PairData) -> PairResult:
        if model is not None:
            if p.src_image is None or p.dst_image is None:
                raise DataError(f"pair {p.stem!r}: images are needed to run the segmenter")
            ps, pd = predict(model, p.src_image), predict(model, p.dst_image)
        else:
            if p.stem not in predictions:
                raise DataError(f"no prediction for pair {p.stem!r}")
            ps, pd = predictions[p.stem]
        return evaluate_pair(p.stem, p.src_labels, p.dst_labels, ps, pd, codec)

    if cfg.jobs > 1:
        with ThreadPoolExecutor(cfg.jobs) as pool:
            results = list(pool.map(work, pairs))
    else:
        results = [work(p) for p in pairs]
    if not results:
        raise DataError("no pairs to evaluate")

    conf = ChangeConfusion(codec)
    tm_truth = TransitionMatrix(classes, np.zeros((classes.count,) * 2))
    tm_pred = TransitionMatrix(classes, np.zeros((classes.count,) * 2))
    for r in results:
        conf = conf + r.confusion
        tm_truth = tm_truth + r.transition_truth
        tm_pred = tm_pred + r.transition_pred
    summary = RunSummary(
        report(conf, cfg.presence),
        conf,
        tm_truth,
        tm_pred,
        {r.stem: report(r.confusion, cfg.presence) for r in results},
        results,
    )
    if cfg.out_dir is not None:
        _write_outputs(cfg, summary, codec)
    return summary


def _write_outputs(cfg: PipelineConfig, summary: RunSummary, codec: ChangeCodec) -> None:
    out = Path(cfg.out_dir)
    dirs = {
        "pred_src": out / "pred" / "src_lbl",
        "pred_dst": out / "pred" / "dst_lbl",
        "change_truth": out / "change" / "truth",
        "change_pred": out / "change" / "pred",
    }
    if cfg.render:
        dirs["render_truth"] = out / "render" / "truth"
        dirs["render_pred"] = out / "render" / "pred"
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    per_pair_artifacts = {}
    for r in summary.results:
        paths = {k: d / f"{r.stem}.png" for k, d in dirs.items()}
        save_label_raster(r.pred_src, paths["pred_src"])
        save_label_raster(r.pred_dst, paths["pred_dst"])
        save_change_raster(r.truth_change, paths["change_truth"])
        save_change_raster(r.pred_change, paths["change_pred"])
        if cfg.render:
            save_render(r.truth_change, paths["render_truth"])
            save_render(r.pred_change, paths["render_pred"])
        per_pair_artifacts[r.stem] = {k: str(p.relative_to(out)) for k, p in paths.items()}

    files = {
        "metrics": out / "metrics.json",
        "confusion": out / "confusion.csv",
        "transition_truth": out / "transition_truth.csv",
        "transition_pred": out / "transition_pred.csv",
        "asymmetry_truth": out / "asymmetry_truth.csv",
        "asymmetry_pred": out / "asymmetry_pred.csv",
    }
    write_report_json(summary.report, files["metrics"])
    write_confusion_csv(summary.confusion, files["confusion"])
    write_matrix_csv(summary.transition_truth, files["transition_truth"])
    write_matrix_csv(summary.transition_pred, files["transition_pred"])
    write_asymmetry_csv(summary.transition_truth, files["asymmetry_truth"])
    write_asymmetry_csv(summary.transition_pred, files["asymmetry_pred"])

    summary.artifacts = {
        **{k: str(p.relative_to(out)) for k, p in files.items()},
        "pairs": per_pair_artifacts,
    }
    doc = {
        "metadata": {
            "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "tool_version": __version__,
        },
        "config": cfg.to_dict(),
        "codec": codec.metadata(),
        "global": summary.report.to_dict(),
        "per_pair": {k: v.to_dict() for k, v in sorted(summary.per_pair.items())},
        "artifacts": summary.artifacts,
    }
    summary.summary_path = out / "summary.json"
    with open(summary.summary_path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("wrote %s", summary.summary_path)
