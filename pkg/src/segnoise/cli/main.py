"""Command-line entry point.

Verbs: ``train``, ``explain``, ``evaluate``, ``report``, ``show-config``.
Exit codes: 0 ok, 2 config error, 3 missing artifact, 4 training floor missed.
"""

from __future__ import annotations

import argparse
import copy
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path


from ..core.data import gen_shapes_dataset
from ..core.determinism import seed_everything, set_deterministic
from ..core.io import save_grid_csv, save_png, write_json
from ..core.model import TrainingFloorError, load_utility, save_model, train_utility
from ..explainers import build_explainer
from ..integrate import SamplingConfig, integrate
from ..metrics import MetricsReport, ThresholdSweep, evaluate_method
from ..unoise import NoiseTrainConfig, load_noise_model, save_noise_model, train_unoise
from . import config as config_mod
from .config import ConfigError
from .manifest import RunManifest

logger = logging.getLogger("segnoise")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_FLOOR = 4


class MissingArtifact(RuntimeError):
    pass


def _datasets(cfg, splits=("train", "val", "test")):
    d = cfg["dataset"]
    out = {}
    for split in splits:
        n = d[f"n_{split}"]
        shapes = tuple(d["test_shapes"]) if split == "test" else (1, 3)
        out[split] = gen_shapes_dataset(
            d["seed"], n, d["size"], d["num_classes"], split=split, channels=d["channels"], shapes_range=shapes
        )
    return out


def _model_paths(out: Path) -> tuple[Path, Path]:
    return out / "models" / "utility.pt", out / "models" / "noise.pt"


def _load_models(out: Path, need_noise: bool = True):
    upath, npath = _model_paths(out)
    missing = [p for p in ([upath, npath] if need_noise else [upath]) if not p.exists() or not p.with_suffix(".json").exists()]
    if missing:
        raise MissingArtifact(f"missing trained weights: {', '.join(map(str, missing))}; run `train` first")
    utility = load_utility(upath)
    noise = load_noise_model(npath) if need_noise else None
    return utility, noise


def _prepare(cfg):
    if cfg["deterministic"]:
        set_deterministic(True)
    seed_everything(cfg["seed"])


def cmd_train(cfg) -> int:
    _prepare(cfg)
    out = config_mod.output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("train", config_mod.config_hash(cfg), out)
    data = _datasets(cfg, ("train", "val"))
    upath, npath = _model_paths(out)
    u = cfg["utility"]
    try:
        with manifest.stage("utility"):
            utility = train_utility(
                data["train"], u["epochs"], u["seed"], val=data["val"], widths=tuple(u["widths"]), lr=u["lr"],
                batch_size=u["batch_size"], noise_aug=u["noise_aug"], min_val_iou=u["min_val_iou"],
                target_class=cfg["target_class"],
            )
        manifest.add(*save_model(utility, upath))
        write_json(out / "models" / "utility_curve.json", utility.metadata.get("curve", []))
        manifest.add(out / "models" / "utility_curve.json")
        n = cfg["noise"]
        ncfg = NoiseTrainConfig(
            lam=n["lam"], noise_scale=n["noise_scale"], epochs=n["epochs"], seed=n["seed"], lr=n["lr"],
            batch_size=n["batch_size"], widths=tuple(n["widths"]), max_iou_drop=n["max_iou_drop"],
            min_mean_noise=n["min_mean_noise"], target_class=cfg["target_class"],
        )
        with manifest.stage("noise"):
            noise = train_unoise(utility, data["train"], ncfg, val=data["val"])
        manifest.add(*save_noise_model(noise, npath))
    except TrainingFloorError as exc:
        dump = write_json(out / "training_failure.json", {"error": str(exc), "trace": exc.trace})
        manifest.add(dump)
        manifest.write()
        logger.error("%s (trace in %s)", exc, dump)
        return EXIT_FLOOR
    manifest.components = {"utility": utility.state_hash(), "dataset_train": data["train"].content_hash()}
    manifest.write()
    print(f"utility val IoU {utility.metadata['val_iou']:.4f}; noise mean {noise.metadata['mean_noise_val']:.4f}, "
          f"IoU drop {noise.metadata['iou_drop_val']:.4f}")
    return EXIT_OK


def _explainers(cfg, utility):
    return {e["id"]: build_explainer(e["name"], utility, **e["params"]) for e in cfg["explainers"]}


def _sampling(cfg):
    return SamplingConfig(sigma=cfg["sampling"]["sigma"], seed=cfg["sampling"]["seed"])


def cmd_explain(cfg, image_ids=None) -> int:
    _prepare(cfg)
    out = config_mod.output_dir(cfg)
    utility, _ = _load_models(out, need_noise=False)
    manifest = RunManifest("explain", config_mod.config_hash(cfg), out)
    manifest.components = {"utility": utility.state_hash()}
    test = _datasets(cfg, ("test",))["test"]
    ids = list(image_ids if image_ids is not None else cfg["explain"]["image_ids"])
    for i in ids:
        if not 0 <= i < len(test):
            raise ConfigError(f"image id {i} outside the test split (size {len(test)})")
    explainers = _explainers(cfg, utility)
    tech = cfg["technique"]
    c = cfg["target_class"]
    edir = out / "explain"
    with manifest.stage("explain"):
        for i in ids:
            image, seg = test[i]
            for mid, fn in explainers.items():
                sal = fn(image, c, seg)
                stem = f"test_{i:04d}_{mid}"
                xmap = integrate(tech, image, sal, _sampling(cfg))
                manifest.add(
                    save_png(edir / f"{stem}_saliency.png", sal.values),
                    save_grid_csv(edir / f"{stem}_saliency.csv", sal.values),
                    save_png(edir / f"{stem}_{tech}_explanation.png", xmap.pixels),
                )
    manifest.write()
    print(f"wrote explanations for {len(ids)} image(s) x {len(explainers)} method(s) to {edir}")
    return EXIT_OK


def _evaluate_chunk(cfg, utility, noise, items):
    explainers = _explainers(cfg, utility)
    sweep = ThresholdSweep(tuple(cfg["taus"]))
    reports = {}
    for mid, fn in explainers.items():
        reports[mid] = evaluate_method(
            fn, noise, utility, items, cfg["technique"], sweep, method_id=mid,
            target_class=cfg["target_class"], sampling=_sampling(cfg),
        )
    return reports


def cmd_evaluate(cfg, jobs: int | None = None) -> int:
    _prepare(cfg)
    out = config_mod.output_dir(cfg)
    utility, noise = _load_models(out)
    manifest = RunManifest("evaluate", config_mod.config_hash(cfg), out)
    manifest.components = {"utility": utility.state_hash()}
    test = _datasets(cfg, ("test",))["test"]
    n_images = min(cfg["evaluate"]["n_images"], len(test))
    items = [(f"test_{i:04d}", *test[i]) for i in range(n_images)]
    jobs = max(1, int(jobs or cfg["evaluate"]["jobs"]))
    with manifest.stage("evaluate"):
        if jobs == 1:
            chunks = [_evaluate_chunk(cfg, utility, noise, items)]
        else:
            # one model replica per worker: gradient hooks are per-instance state
            parts = [items[k::jobs] for k in range(jobs)]
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                futures = [
                    pool.submit(_evaluate_chunk, cfg, copy.deepcopy(utility), copy.deepcopy(noise), part)
                    for part in parts if part
                ]
                chunks = [f.result() for f in futures]
    report = MetricsReport(meta={"technique": cfg["technique"], "taus": list(cfg["taus"]), "n_images": n_images})
    order = {image_id: k for k, (image_id, _, _) in enumerate(items)}
    for e in cfg["explainers"]:
        rows, failures = [], []
        for chunk in chunks:
            rows += chunk[e["id"]].rows
            failures += chunk[e["id"]].failures
        rows.sort(key=lambda r: (order[r.image_id], r.tau))
        report.rows += rows
        report.failures += failures
    report.meta["methods"] = [e["id"] for e in cfg["explainers"]]
    edir = out / "evaluate"
    manifest.add(report.write_csv(edir / "report.csv"), report.write_json(edir / "report.json"))
    manifest.add(*plot_report(report, edir))
    manifest.write()
    _print_summary(report)
    total = n_images * len(cfg["explainers"])
    if total and len(report.failures) >= total:
        logger.error("every image failed for every method")
        return EXIT_FAILED
    return EXIT_OK


def plot_report(report: MetricsReport, out_dir: Path) -> list[Path]:
    """One figure per metric: threshold on the x-axis, one curve per method."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    agg = report.aggregate()
    paths = []
    for metric, label in (("ana", "ANA"), ("srm", "SRM")):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for method in report.methods():
            pts = sorted((e["tau"], e[f"{metric}_mean"]) for e in agg if e["method_id"] == method)
            pts = [(t, v) for t, v in pts if v is not None]
            if pts:
                ax.plot(*zip(*pts), marker="o", label=f"{method}_{label[0]}")
        ax.set_xlabel("threshold")
        ax.set_ylabel(label)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = Path(out_dir) / f"{metric}.png"
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths


def _print_summary(report: MetricsReport) -> None:
    print(f"{'method':<18}{'tau':>6}{'ANA':>10}{'SRM':>10}{'kept':>8}")
    for e in report.aggregate():
        a = "null" if e["ana_mean"] is None else f"{e['ana_mean']:.4f}"
        s = "null" if e["srm_mean"] is None else f"{e['srm_mean']:.4f}"
        print(f"{e['method_id']:<18}{e['tau']:>6.2f}{a:>10}{s:>10}{e['retained_mean']:>8.3f}")
    if report.failures:
        print(f"{len(report.failures)} failure(s)")


def cmd_report(cfg) -> int:
    out = config_mod.output_dir(cfg)
    path = out / "evaluate" / "report.csv"
    if not path.exists():
        raise MissingArtifact(f"missing report {path}; run `evaluate` first")
    report = MetricsReport.from_csv(path)
    plot_report(report, out / "evaluate")
    _print_summary(report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="segnoise", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("train", "explain", "evaluate", "report", "show-config"):
        sp = sub.add_parser(name)
        sp.add_argument("-c", "--config", type=Path, default=None, help="YAML run config")
        if name == "explain":
            sp.add_argument("--images", type=int, nargs="+", default=None, help="test-split image indices")
        if name == "evaluate":
            sp.add_argument("--jobs", type=int, default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_mod.load_config(args.config)
        if args.command == "show-config":
            print(config_mod.dump(cfg), end="")
            return EXIT_OK
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "explain":
            return cmd_explain(cfg, args.images)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.jobs)
        return cmd_report(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
