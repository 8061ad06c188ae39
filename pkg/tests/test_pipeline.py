"""Tests that need the trained utility and noise models (shared session run)."""

import json

import numpy as np
import pytest
import yaml

from segnoise.cli.main import main
from segnoise.core import Image, SaliencyMap, gen_shapes_dataset
from segnoise.core.data import _background
from segnoise.explainers import build_explainer
from segnoise.integrate import integrate_mul
from segnoise.metrics import MetricsReport, ThresholdSweep, evaluate_method, evaluate_methods, metric_rows
from segnoise.unoise import NoiseTrainConfig, noise_mask, train_unoise


@pytest.fixture(scope="module")
def test_items():
    ds = gen_shapes_dataset(0, 20, 64, 2, split="test")
    return [(f"test_{i:04d}", img, seg) for i, (img, seg) in enumerate(ds.items)]


def test_sidecars(trained_run):
    u = json.loads((trained_run.out / "models" / "utility.json").read_text())
    n = json.loads((trained_run.out / "models" / "noise.json").read_text())
    assert {"seed", "epochs", "dataset_hash", "val_iou"} <= set(u)
    assert {"lambda", "s", "mean_noise_val", "iou_drop_val"} <= set(n)
    assert u["val_iou"] >= 0.85
    assert n["iou_drop_val"] <= 0.05 and n["mean_noise_val"] >= 0.2


def test_train_manifest_inventory(trained_run):
    manifest = json.loads((trained_run.out / "manifest_train.json").read_text())
    files = set(manifest["files"])
    assert {"models/utility.pt", "models/utility.json", "models/noise.pt", "models/noise.json"} <= files
    for rel, digest in manifest["files"].items():
        assert (trained_run.out / rel).exists()
        assert len(digest) == 64


def test_probmask_simplex(trained_run, test_items):
    for _, img, _ in test_items[:5]:
        pm = trained_run.utility.predict(img)
        np.testing.assert_allclose(pm.probs.sum(axis=2), 1.0, atol=1e-5)


def test_noise_mask_contract(trained_run, test_items):
    img = test_items[0][1]
    a, b = noise_mask(trained_run.noise, img), noise_mask(trained_run.noise, img)
    assert np.array_equal(a.values, b.values)
    assert a.values.shape == img.hw
    assert a.values.min() > 0 and a.values.max() < 1


def test_background_gets_more_noise(trained_run, test_items):
    rng = np.random.default_rng(5)
    bg = [Image(np.clip(_background(rng, 64, 3), 0, 1)) for _ in test_items]
    mean_bg = np.mean([noise_mask(trained_run.noise, im).values.mean() for im in bg])
    mean_obj = np.mean([noise_mask(trained_run.noise, im).values.mean() for _, im, _ in test_items])
    assert mean_bg >= mean_obj


def test_faithful_vs_antifaithful_masks(trained_run, test_items):
    gt, inv = build_explainer("ground_truth"), build_explainer("inverted")
    wins = 0
    for _, img, seg in test_items:
        f = noise_mask(trained_run.noise, integrate_mul(img, gt(img, 1, seg))).values.mean()
        a = noise_mask(trained_run.noise, integrate_mul(img, inv(img, 1, seg))).values.mean()
        wins += f <= a
    assert wins >= 0.9 * len(test_items)


def test_all_ones_explainer_equals_raw_baseline(trained_run, test_items):
    def ones(image, c, seg=None):
        return SaliencyMap(np.ones(image.hw), method_id="ones")

    sweep = ThresholdSweep()
    rep = evaluate_method(ones, trained_run.noise, trained_run.utility, test_items[:3], "mul", sweep)
    raw = []
    for image_id, img, _ in test_items[:3]:
        raw += metric_rows(noise_mask(trained_run.noise, img), sweep, "ones", "mul", image_id)
    assert rep.rows == raw


def test_report_cardinality(trained_run, test_items):
    explainers = {n: build_explainer(n) for n in ("ground_truth", "inverted", "random")}
    rep = evaluate_methods(explainers, trained_run.noise, trained_run.utility, test_items, "mul", ThresholdSweep())
    assert len(rep.rows) == 300
    assert rep.ranking(-0.1)[0] == "ground_truth"
    for r in rep.rows:
        assert r.ana is None or 0 <= r.srm <= r.ana <= 1


def test_failures_are_recorded(trained_run, test_items):
    def broken(image, c, seg=None):
        raise RuntimeError("boom")

    rep = evaluate_method(broken, trained_run.noise, trained_run.utility, test_items[:2], "mul", ThresholdSweep())
    assert len(rep.failures) == 2 and not rep.rows


def test_lambda_zero_adds_no_noise(trained_run):
    before = trained_run.utility.state_hash()
    train = gen_shapes_dataset(0, 400, 64, 2, split="train")
    val = gen_shapes_dataset(0, 100, 64, 2, split="val")
    nm = train_unoise(trained_run.utility, train, NoiseTrainConfig(lam=0.0), val=val, enforce=False)
    assert nm.metadata["mean_noise_val"] <= 0.05
    assert trained_run.utility.state_hash() == before


def _cli_cfg(trained_run, tmp_path, **overrides):
    cfg = yaml.safe_load(trained_run.config.read_text()) | overrides
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_cmd_explain_outputs(trained_run, tmp_path):
    explainers = [{"name": "ground_truth"}, {"name": "random", "params": {"seed": 1}}, {"name": "seg_grad_cam"}]
    path = _cli_cfg(trained_run, tmp_path, explainers=explainers)
    assert main(["explain", "-c", str(path), "--images", "0", "1"]) == 0
    edir = trained_run.out / "explain"
    assert len(list(edir.glob("test_000[01]_*_saliency.png"))) == 6
    assert len(list(edir.glob("test_000[01]_*_saliency.csv"))) == 6
    first = (edir / "test_0000_random_saliency.png").read_bytes()
    gt = np.loadtxt(edir / "test_0000_ground_truth_saliency.csv", delimiter=",")
    img, seg = gen_shapes_dataset(0, 1, 64, 2, split="test").items[0]
    assert np.array_equal(gt, build_explainer("ground_truth")(img, 1, seg).values)
    assert main(["explain", "-c", str(path), "--images", "0"]) == 0
    assert (edir / "test_0000_random_saliency.png").read_bytes() == first
    manifest = json.loads((trained_run.out / "manifest_explain.json").read_text())
    assert len(manifest["files"]) == 3 * 3


def test_cmd_evaluate_single_method(trained_run, tmp_path):
    path = _cli_cfg(trained_run, tmp_path, explainers=[{"name": "seg_grad_cam_pp"}], evaluate={"n_images": 3, "jobs": 1})
    assert main(["evaluate", "-c", str(path)]) == 0
    edir = trained_run.out / "evaluate"
    rep = MetricsReport.from_csv(edir / "report.csv")
    assert rep.methods() == ["seg_grad_cam_pp"]
    assert len(rep.rows) == 1 * 5 * 3
    assert (edir / "ana.png").exists() and (edir / "srm.png").exists()
    payload = json.loads((edir / "report.json").read_text())
    assert payload["schema_version"] == 1 and payload["failure_count"] == 0
    assert main(["report", "-c", str(path)]) == 0


def test_cmd_evaluate_jobs_match_serial(trained_run, tmp_path):
    explainers = [{"name": "seg_grad_cam"}, {"name": "random"}]
    serial = _cli_cfg(trained_run, tmp_path, explainers=explainers, evaluate={"n_images": 4, "jobs": 1})
    assert main(["evaluate", "-c", str(serial)]) == 0
    a = (trained_run.out / "evaluate" / "report.csv").read_bytes()
    assert main(["evaluate", "-c", str(serial), "--jobs", "2"]) == 0
    assert (trained_run.out / "evaluate" / "report.csv").read_bytes() == a
