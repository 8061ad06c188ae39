"""Combine an image with a saliency map into an explanation map.

Four techniques are supported: plain multiplication (``mul``), addition
(``add``), and their normal-sampling variants (``nsm``, ``nsa``) where the
saliency value is replaced by a per-pixel draw from ``Normal(L_ij, sigma)``.
Results are clamped to [0, 1]. ``mul`` is the default for evaluation runs;
``nsm`` produces inputs far from the noise model's training distribution and
is flagged as such in reports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core.types import ExplanationMap, Image, SaliencyMap

TECHNIQUES = ("mul", "add", "nsm", "nsa")
UNRELIABLE_TECHNIQUES = frozenset({"nsm"})


@dataclass(frozen=True)
class SamplingConfig:
    sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


def _operands(I: Image, L: SaliencyMap) -> tuple[np.ndarray, np.ndarray]:
    L.check_matches(I)
    return I.pixels.astype(np.float64), L.values.astype(np.float64)


def _sample(L: np.ndarray, cfg: SamplingConfig) -> np.ndarray:
    return np.random.default_rng(cfg.seed).normal(loc=L, scale=cfg.sigma)


def _wrap(out: np.ndarray, technique: str, L: SaliencyMap) -> ExplanationMap:
    return ExplanationMap(np.clip(out, 0.0, 1.0), technique=technique, source_method=L.method_id)


def integrate_mul(I: Image, L: SaliencyMap) -> ExplanationMap:
    x, s = _operands(I, L)
    return _wrap(x * s[..., None], "mul", L)


def integrate_add(I: Image, L: SaliencyMap) -> ExplanationMap:
    x, s = _operands(I, L)
    return _wrap(x + s[..., None], "add", L)


def integrate_nsm(I: Image, L: SaliencyMap, cfg: SamplingConfig = SamplingConfig()) -> ExplanationMap:
    x, s = _operands(I, L)
    return _wrap(x * _sample(s, cfg)[..., None], "nsm", L)


def integrate_nsa(I: Image, L: SaliencyMap, cfg: SamplingConfig = SamplingConfig()) -> ExplanationMap:
    x, s = _operands(I, L)
    return _wrap(x + _sample(s, cfg)[..., None], "nsa", L)


def integrate(technique: str, I: Image, L: SaliencyMap, cfg: SamplingConfig | None = None) -> ExplanationMap:
    """Dispatch by technique name."""
    if technique == "mul":
        return integrate_mul(I, L)
    if technique == "add":
        return integrate_add(I, L)
    if technique == "nsm":
        return integrate_nsm(I, L, cfg or SamplingConfig())
    if technique == "nsa":
        return integrate_nsa(I, L, cfg or SamplingConfig())
    raise ValueError(f"unknown integration technique {technique!r}; expected one of {TECHNIQUES}")
