import json
from pathlib import Path

import numpy as np
import pytest

from scpa.codec import ChangeCodec
from scpa.dataset import SynthSpec, synth_pair, write_synth_dataset
from scpa.errors import DataError
from scpa.metrics import ChangeConfusion, accumulate, report
from scpa.pipeline import (
    PairData,
    PipelineConfig,
    ingest_external_predictions,
    parse_config,
    run_two_step,
)
from scpa.rasters import LabelRaster, Palette, load_change_raster, save_label_raster
from scpa.segmenter import TrainConfig, save_model, train


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    write_synth_dataset(SynthSpec(height=64, width=64, n_classes=4, n_pairs=6, noise=15), 11, root)
    return root


@pytest.fixture(scope="module")
def centroid_model(dataset, tmp_path_factory):
    from scpa.dataset import load_pair

    pal = Palette.default(4)
    samples = []
    for stem in ("pair_0000", "pair_0001", "pair_0002"):
        si, di, sl, dl = load_pair(dataset, stem, pal.classes)
        samples += [(si, sl), (di, dl)]
    path = tmp_path_factory.mktemp("model") / "m.json"
    save_model(train(samples, "centroid"), path)
    return path


def test_oracle_predictions_are_perfect(dataset, tmp_path):
    cfg = PipelineConfig(
        data_dir=dataset,
        out_dir=tmp_path / "out",
        pred_src_dir=dataset / "src_lbl",
        pred_dst_dir=dataset / "dst_lbl",
        split="all",
    )
    s = run_two_step(cfg)
    assert s.report.miou == 1.0 and s.report.bacc == 1.0
    assert s.confusion.is_diagonal()
    assert s.transition_pred == s.transition_truth
    assert len(s.per_pair) == 6


def test_trained_centroid_run_writes_artifacts(dataset, centroid_model, tmp_path):
    out = tmp_path / "out"
    s = run_two_step(PipelineConfig(data_dir=dataset, out_dir=out, model=centroid_model))
    assert s.report.miou >= 0.95
    doc = json.loads((out / "summary.json").read_text())
    assert set(doc) == {"metadata", "config", "codec", "global", "per_pair", "artifacts"}
    assert doc["global"]["miou"] == s.report.miou
    assert sorted(doc["per_pair"]) == sorted(s.per_pair)
    for stem, paths in doc["artifacts"]["pairs"].items():
        for rel in paths.values():
            assert (out / rel).exists()
    assert (out / "render" / "pred" / f"{stem}_legend.csv").exists()
    for key in ("metrics", "confusion", "transition_truth", "transition_pred"):
        assert (out / doc["artifacts"][key]).exists()


def test_metrics_recomputed_from_saved_change_rasters(dataset, centroid_model, tmp_path):
    out = tmp_path / "out"
    s = run_two_step(PipelineConfig(data_dir=dataset, out_dir=out, model=centroid_model, split="all"))
    codec = s.confusion.codec
    conf = ChangeConfusion(codec)
    for stem in s.per_pair:
        t = load_change_raster(out / "change" / "truth" / f"{stem}.png", codec)
        p = load_change_raster(out / "change" / "pred" / f"{stem}.png", codec)
        conf = accumulate(conf, t, p)
    assert conf == s.confusion
    assert report(conf) == s.report


def test_parallel_equals_sequential(dataset, centroid_model):
    seq = run_two_step(PipelineConfig(data_dir=dataset, model=centroid_model, split="all", jobs=1))
    par = run_two_step(PipelineConfig(data_dir=dataset, model=centroid_model, split="all", jobs=4))
    assert seq.confusion == par.confusion
    assert seq.report == par.report


def test_swapped_predictions_transpose_codes():
    spec = SynthSpec(height=48, width=48, n_classes=4, change_budget=0.3)
    p = synth_pair(spec, 2)
    pair = PairData("a", p.src_labels, p.dst_labels)
    normal = run_two_step(
        PipelineConfig(classes=p.src_labels.classes), [pair], predictions={"a": (p.src_labels, p.dst_labels)}
    )
    swapped = run_two_step(
        PipelineConfig(classes=p.src_labels.classes), [pair], predictions={"a": (p.dst_labels, p.src_labels)}
    )
    codec = ChangeCodec(p.src_labels.classes)
    a = normal.results[0].pred_change.data
    b = swapped.results[0].pred_change.data
    assert np.array_equal(a == 0, b == 0)
    for code_a, code_b in zip(a[a != 0], b[b != 0]):
        s, d = codec.decode(int(code_a))
        assert codec.decode(int(code_b)) == (d, s)
    assert np.array_equal(swapped.transition_pred.counts, normal.transition_pred.counts.T)


def test_missing_prediction_names_pair(dataset, tmp_path):
    preds = tmp_path / "preds"
    preds.mkdir()
    with pytest.raises(DataError, match="pair_0000"):
        run_two_step(
            PipelineConfig(data_dir=dataset, pred_src_dir=preds, pred_dst_dir=preds, split="all")
        )


def test_bad_pair_fails_fast():
    classes = Palette.default(3).classes
    ok = LabelRaster(np.zeros((4, 4), int), classes)
    small = LabelRaster(np.zeros((4, 3), int), classes)
    pairs = [PairData("good", ok, ok), PairData("bad", ok, ok)]
    preds = {"good": (ok, ok), "bad": (ok, small)}
    with pytest.raises(DataError, match="'bad'"):
        run_two_step(PipelineConfig(classes=classes), pairs, predictions=preds)


def test_config_needs_exactly_one_source(dataset, centroid_model):
    with pytest.raises(DataError, match="exactly one"):
        PipelineConfig(data_dir=dataset).validate()
    with pytest.raises(DataError, match="exactly one"):
        PipelineConfig(
            data_dir=dataset, model=centroid_model, pred_src_dir=dataset, pred_dst_dir=dataset
        ).validate()
    with pytest.raises(FileNotFoundError):
        PipelineConfig(data_dir=dataset, model=Path("/nonexistent/model.json")).validate()


def test_palette_inconsistency(dataset, tmp_path):
    from scpa.rasters import save_palette

    save_palette(Palette.default(4), tmp_path / "p.txt")
    cfg = PipelineConfig(
        data_dir=dataset,
        pred_src_dir=dataset / "src_lbl",
        pred_dst_dir=dataset / "dst_lbl",
        palette=tmp_path / "p.txt",
        classes=Palette.default(7).classes,
        split="all",
    )
    with pytest.raises(DataError, match="inconsistent"):
        run_two_step(cfg)


class TestIngest:
    def test_round_trip(self, dataset):
        classes = Palette.default(4).classes
        preds = ingest_external_predictions(dataset / "src_lbl", dataset / "dst_lbl", ["pair_0001"], classes)
        from scpa.dataset import load_pair

        _, _, sl, dl = load_pair(dataset, "pair_0001", classes, with_images=False)
        assert preds["pair_0001"] == (sl, dl)

    def test_missing_stem(self, dataset):
        with pytest.raises(DataError, match="pair_9999"):
            ingest_external_predictions(dataset / "src_lbl", dataset / "dst_lbl", ["pair_9999"], Palette.default(4).classes)

    def test_rgb_equals_gray(self, tmp_path, label_pair):
        pal = Palette.default(5)
        src, dst = label_pair(12, 9, 5, seed=1)
        src, dst = LabelRaster(src.data, pal.classes), LabelRaster(dst.data, pal.classes)
        for kind, mode in (("gray", "ids"), ("rgb", "colored")):
            for side, r in (("s", src), ("d", dst)):
                (tmp_path / kind / side).mkdir(parents=True, exist_ok=True)
                save_label_raster(r, tmp_path / kind / side / "x.png", mode, pal)
        gray = ingest_external_predictions(tmp_path / "gray/s", tmp_path / "gray/d", ["x"], pal.classes, pal)
        rgb = ingest_external_predictions(tmp_path / "rgb/s", tmp_path / "rgb/d", ["x"], pal.classes, pal)
        assert gray == rgb


def test_parse_config(tmp_path):
    text = """
    # comment
    data_dir = data
    out_dir = out
    model = m.json
    split = val
    presence = truth-only
    jobs = 3
    render = no
    class_names = a, b, c
    """
    cfg = parse_config("\n".join(l.strip() for l in text.splitlines()), tmp_path)
    assert cfg.data_dir == (tmp_path / "data").resolve()
    assert cfg.split == "val" and cfg.presence == "truth-only" and cfg.jobs == 3 and cfg.render is False
    assert cfg.classes.names == ("a", "b", "c")
    with pytest.raises(DataError, match="unknown"):
        parse_config("colour = red")
    with pytest.raises(DataError):
        parse_config("jobs = many")
