"""Thresholded ANA / SRM metrics over noise masks and per-method reports.

ANA is the mean noise-mask value and SRM the mean squared value (an
uncentered second moment), both over the pixels whose noise exceeds a
threshold ``tau``. Lower is better for both. A threshold of -0.1 keeps every
pixel. When no pixel survives the threshold the metrics are ``None`` rather
than zero, since zero would read as a perfect score.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .core.types import Image, NoiseMask, SaliencyMap, SegMask
from .integrate import UNRELIABLE_TECHNIQUES, SamplingConfig, integrate

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_TAUS = (-0.1, 0.0, 0.1, 0.2, 0.3)
CSV_FIELDS = ("method_id", "technique", "tau", "image_id", "ana", "srm", "retained_pixel_fraction")


@dataclass(frozen=True)
class ThresholdSweep:
    taus: tuple[float, ...] = DEFAULT_TAUS

    def __post_init__(self):
        taus = tuple(float(t) for t in self.taus)
        if not taus:
            raise ValueError("threshold sweep is empty")
        if any(not math.isfinite(t) for t in taus):
            raise ValueError("thresholds must be finite")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValueError(f"thresholds must be strictly increasing, got {taus}")
        object.__setattr__(self, "taus", taus)


def _values(O) -> np.ndarray:
    return O.values if isinstance(O, NoiseMask) else np.asarray(O, dtype=np.float64)


def retained_pixels(O: NoiseMask, tau: float) -> np.ndarray:
    """Boolean mask of pixels with ``O > tau``."""
    if not math.isfinite(tau):
        raise ValueError("tau must be finite")
    keep = _values(O) > tau
    if not keep.any():
        logger.debug("no pixel retained at tau=%s", tau)
    return keep


def ana(O: NoiseMask, tau: float = -0.1) -> float | None:
    v = _values(O)
    keep = retained_pixels(O, tau)
    n = int(keep.sum())
    if n == 0:
        return None
    return float(v[keep].sum() / n)


def srm(O: NoiseMask, tau: float = -0.1) -> float | None:
    v = _values(O)
    keep = retained_pixels(O, tau)
    n = int(keep.sum())
    if n == 0:
        return None
    return float((v[keep] ** 2).sum() / n)


@dataclass(frozen=True)
class MetricRow:
    method_id: str
    technique: str
    tau: float
    image_id: str
    ana: float | None
    srm: float | None
    retained_pixel_fraction: float


@dataclass
class MetricsReport:
    rows: list[MetricRow] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def extend(self, other: "MetricsReport") -> None:
        self.rows.extend(other.rows)
        self.failures.extend(other.failures)

    def methods(self) -> list[str]:
        return list(dict.fromkeys(r.method_id for r in self.rows))

    def taus(self) -> list[float]:
        return sorted({r.tau for r in self.rows})

    def aggregate(self) -> list[dict]:
        """Mean and standard deviation per (method, technique, tau); null
        metric values are excluded and counted."""
        groups: dict[tuple, list[MetricRow]] = {}
        for r in self.rows:
            groups.setdefault((r.method_id, r.technique, r.tau), []).append(r)
        out = []
        for (method, technique, tau), rows in groups.items():
            entry = {"method_id": method, "technique": technique, "tau": tau, "n_images": len(rows)}
            for name in ("ana", "srm"):
                vals = np.array([getattr(r, name) for r in rows if getattr(r, name) is not None])
                entry[f"{name}_mean"] = float(vals.mean()) if vals.size else None
                entry[f"{name}_std"] = float(vals.std()) if vals.size else None
                entry[f"{name}_null"] = len(rows) - int(vals.size)
            entry["retained_mean"] = float(np.mean([r.retained_pixel_fraction for r in rows]))
            entry["unreliable_technique"] = technique in UNRELIABLE_TECHNIQUES
            out.append(entry)
        return out

    def mean(self, method_id: str, tau: float, metric: str = "ana") -> float | None:
        for entry in self.aggregate():
            if entry["method_id"] == method_id and entry["tau"] == tau:
                return entry[f"{metric}_mean"]
        raise KeyError((method_id, tau))

    def ranking(self, tau: float, metric: str = "ana") -> list[str]:
        """Methods ordered best (lowest) first at ``tau``."""
        entries = [e for e in self.aggregate() if e["tau"] == tau and e[f"{metric}_mean"] is not None]
        return [e["method_id"] for e in sorted(entries, key=lambda e: e[f"{metric}_mean"])]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for r in self.rows:
            writer.writerow([
                r.method_id,
                r.technique,
                repr(r.tau),
                r.image_id,
                "" if r.ana is None else repr(r.ana),
                "" if r.srm is None else repr(r.srm),
                repr(r.retained_pixel_fraction),
            ])
        return buf.getvalue()

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv())
        return path

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "aggregate": self.aggregate(),
            "failures": self.failures,
            "failure_count": len(self.failures),
            "meta": self.meta,
        }

    def write_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_csv(cls, path) -> "MetricsReport":
        def opt(s):
            return None if s == "" else float(s)

        rows = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append(MetricRow(
                    rec["method_id"], rec["technique"], float(rec["tau"]), rec["image_id"],
                    opt(rec["ana"]), opt(rec["srm"]), float(rec["retained_pixel_fraction"]),
                ))
        return cls(rows=rows)


def metric_rows(O: NoiseMask, sweep: ThresholdSweep, method_id: str, technique: str, image_id: str) -> list[MetricRow]:
    rows = []
    for tau in sweep.taus:
        keep = retained_pixels(O, tau)
        rows.append(MetricRow(
            method_id=method_id,
            technique=technique,
            tau=tau,
            image_id=image_id,
            ana=ana(O, tau),
            srm=srm(O, tau),
            retained_pixel_fraction=float(keep.mean()),
        ))
    return rows


Explainer = Callable[[Image, int, "SegMask | None"], SaliencyMap]


def evaluate_method(
    explainer: Explainer,
    noise_model,
    utility,
    images: Iterable[tuple[str, Image, SegMask | None]],
    technique: str = "mul",
    sweep: ThresholdSweep = ThresholdSweep(),
    *,
    method_id: str | None = None,
    target_class: int = 1,
    sampling: SamplingConfig | None = None,
) -> MetricsReport:
    """Run saliency -> explanation map -> noise mask -> ANA/SRM for each image.

    ``utility`` is the model the explainer was built around; it is recorded
    in the report metadata. Per-image failures are logged into
    ``report.failures`` and do not stop the run.
    """
    from .unoise import noise_mask

    method_id = method_id or getattr(explainer, "method_id", getattr(explainer, "__name__", "explainer"))
    report = MetricsReport(meta={"technique": technique, "taus": list(sweep.taus)})
    if utility is not None and hasattr(utility, "metadata"):
        report.meta["utility_val_iou"] = utility.metadata.get("val_iou")
    for image_id, image, seg in images:
        try:
            sal = explainer(image, target_class, seg)
            xmap = integrate(technique, image, sal, sampling)
            O = noise_mask(noise_model, xmap)
            report.rows.extend(metric_rows(O, sweep, method_id, technique, str(image_id)))
        except Exception as exc:  # noqa: BLE001 - recorded, run continues
            logger.warning("method %s failed on image %s: %s", method_id, image_id, exc)
            report.failures.append({"method_id": method_id, "image_id": str(image_id), "error": repr(exc)})
    return report


def evaluate_methods(
    explainers: dict[str, Explainer],
    noise_model,
    utility,
    images: Sequence[tuple[str, Image, SegMask | None]],
    technique: str = "mul",
    sweep: ThresholdSweep = ThresholdSweep(),
    **kwargs,
) -> MetricsReport:
    report = MetricsReport(meta={"technique": technique, "taus": list(sweep.taus)})
    for method_id, explainer in explainers.items():
        report.extend(evaluate_method(
            explainer, noise_model, utility, images, technique, sweep, method_id=method_id, **kwargs
        ))
    report.meta["methods"] = list(explainers)
    return report
