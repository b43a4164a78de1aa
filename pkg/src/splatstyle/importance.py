"""Importance scoring and filtering of primitives by blending weight.

A primitive's importance is the total blending weight it contributes over a
set of training views: ``sum over views and pixels of alpha_i * T_i``, where
``T_i`` is the transmittance in front of it. An alternative weighting by raw
opacity (``sigma_i`` with an opacity-only transmittance) is available behind
the ``mode`` flag. Filtering keeps the top fraction by score, preserving the
original storage order of the survivors.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError
from .render import RenderConfig, record_hits
from .scene import Camera, GaussianScene


def importance_scores(scene: GaussianScene, cameras: list[Camera],
                      config: RenderConfig = RenderConfig(),
                      mode: str = "alpha") -> np.ndarray:
    """Per-primitive accumulated blending weight across ``cameras``."""
    if not cameras:
        raise ValidationError("importance scoring needs at least one camera")
    return record_hits(scene, cameras, config, mode=mode)


def filter_scene(scene: GaussianScene, scores: np.ndarray,
                 keep: float = 0.5) -> tuple[GaussianScene, np.ndarray]:
    """Keep the ``ceil(keep * N)`` highest-scoring primitives.

    Survivors stay in their original storage order. Returns the filtered
    scene and an old-to-new index map with -1 marking removed primitives.
    Ties at the threshold resolve toward the lower storage index.
    """
    if not 0.0 < keep <= 1.0:
        raise ValidationError(f"keep fraction must be in (0, 1], got {keep}")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (scene.count,):
        raise ValidationError(
            f"scores shape {scores.shape} does not match scene of {scene.count}")
    n_keep = math.ceil(keep * scene.count)

    # Rank by descending score, ties by ascending index, then restore
    # storage order among the survivors.
    ranking = np.lexsort((np.arange(scene.count), -scores))
    kept = np.sort(ranking[:n_keep])

    index_map = np.full(scene.count, -1, dtype=np.int64)
    index_map[kept] = np.arange(n_keep)
    return scene.subset(kept), index_map
