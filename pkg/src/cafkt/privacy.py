"""Differential privacy for client uplinks.

Clients clip the decoder update (returned minus incoming weights) to a
round-scheduled Frobenius bound, then add Gaussian noise calibrated to
(epsilon, delta) via the classical mechanism, all before transmission.
Calibration is per round; no cross-round composition accounting is done.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DPConfig:
    """Privacy knobs. ``clip_hat`` is the plateau of the clipping schedule;
    ``clip_max`` scales its cosine decay. ``min_client_size`` is a fallback
    for the smallest client dataset when no partition is at hand."""

    enabled: bool = False
    epsilon: float = 10.0
    delta: float = 1e-5
    clip_hat: float = 12.6
    clip_max: float = 26.9
    min_client_size: int = 130

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.clip_hat > self.clip_max:
            raise ValueError("clip_hat cannot exceed clip_max")
        if self.min_client_size < 1:
            raise ValueError("min_client_size must be at least 1")


def clip_schedule(r: int, total: int, cfg: DPConfig) -> float:
    """Round-r clipping norm: min(clip_hat, clip_max * cos^2(pi r / (2 total)))."""
    if total <= 0:
        raise ValueError(f"total must be positive, got {total}")
    if r < 0 or r > total:
        raise ValueError(f"round {r} outside [0, {total}]")
    return min(cfg.clip_hat, cfg.clip_max * float(np.cos(np.pi * r / (2.0 * total)) ** 2))


def clip_update(delta_w: np.ndarray, norm_bound: float) -> np.ndarray:
    """Rescale the whole update so its Frobenius norm is at most the bound."""
    if norm_bound < 0:
        raise ValueError("norm_bound must be non-negative")
    delta_w = np.asarray(delta_w, dtype=np.float64)
    norm = float(np.linalg.norm(delta_w))
    if norm <= norm_bound:
        return delta_w.copy()
    if norm_bound == 0.0:
        return np.zeros_like(delta_w)
    return delta_w * (norm_bound / norm)


def sensitivity(norm_bound: float, min_client_size: int) -> float:
    """Update sensitivity: 2 * bound / (smallest client dataset size)."""
    if min_client_size < 1:
        raise ValueError("min_client_size must be at least 1")
    return 2.0 * norm_bound / min_client_size


def noise_sigma(delta_s: float, epsilon: float, delta: float) -> float:
    """Gaussian-mechanism scale delta_s * sqrt(2 ln(1.25/delta)) / epsilon."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if math.isinf(epsilon):
        return 0.0
    return delta_s * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def gaussian_mechanism(
    clipped: np.ndarray,
    delta_s: float,
    epsilon: float,
    delta: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise at the calibrated scale."""
    clipped = np.asarray(clipped, dtype=np.float64)
    sigma = noise_sigma(delta_s, epsilon, delta)
    if sigma == 0.0:
        return clipped.copy()
    return clipped + rng.normal(0.0, sigma, size=clipped.shape)


def suggest_clip_hat(update_norms) -> float:
    """Plateau value for the clipping schedule from a dry run.

    The heuristic sets the plateau to the median of unclipped update norms
    observed over training (collect Frobenius norms of returned-minus-
    incoming decoder weights from a noise-free run, then configure
    ``clip_hat`` with this value for the private one).
    """
    norms = np.asarray(update_norms, dtype=np.float64)
    if norms.size == 0:
        raise ValueError("need at least one observed update norm")
    if norms.min() < 0:
        raise ValueError("norms must be non-negative")
    return float(np.median(norms))
