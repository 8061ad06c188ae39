from __future__ import annotations

import numpy as np

from .types import SaliencyMap


def normalize_saliency(raw, target_class: int = 1, method_id: str = "unknown", meta=None) -> SaliencyMap:
    """Min-max rescale a raw attribution grid to [0, 1].

    A constant grid carries no ranking information and maps to all zeros.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2:
        raise ValueError(f"expected a 2-D attribution grid, got shape {raw.shape}")
    if not np.all(np.isfinite(raw)):
        bad = int(np.size(raw) - np.isfinite(raw).sum())
        raise ValueError(f"attribution grid has {bad} non-finite value(s)")
    lo, hi = raw.min(), raw.max()
    meta = dict(meta or {})
    if hi <= lo:
        out = np.zeros_like(raw)
    else:
        out = (raw - lo) / (hi - lo)
    return SaliencyMap(out, target_class=target_class, method_id=method_id, meta=meta)
