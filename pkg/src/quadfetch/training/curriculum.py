"""Terrain level promotion/demotion from episode completion fractions."""

from __future__ import annotations

import numpy as np

UP_THRESHOLD = 0.8
DOWN_THRESHOLD = 0.5
N_LEVELS = 10


def curriculum_update(levels: np.ndarray, finished_fraction: np.ndarray, mask=None) -> np.ndarray:
    """Fraction >= 0.8 of the course moves an env up a level, < 0.5 moves it
    down; levels clamp to [0, 9]. ``mask`` limits the update to finished envs.
    """
    levels = np.asarray(levels, dtype=np.int64).copy()
    frac = np.asarray(finished_fraction, dtype=float)
    if (frac < 0).any() or (frac > 1).any():
        raise ValueError("finished fraction must lie in [0, 1]")
    mask = np.ones_like(levels, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    up = mask & (frac >= UP_THRESHOLD)
    down = mask & (frac < DOWN_THRESHOLD)
    levels[up] += 1
    levels[down] -= 1
    return np.clip(levels, 0, N_LEVELS - 1)
