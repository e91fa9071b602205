"""
Seeded synthetic sample clouds for the Karcher experiments.

Points are drawn from uniform(0, 1)^4 and normalized onto S^3, so every
cloud lies in the positive orthant and no two samples are antipodal.
"""

import logging
from typing import List, Sequence

import numpy as np

from .errors import ConfigError
from .manifold import Chart, ManifoldPoint

logger = logging.getLogger(__name__)

S3 = Chart.sphere(3)


def sphere_point(coords: Sequence[float]) -> ManifoldPoint:
    """Normalize raw coordinates onto S^3."""
    x = np.asarray(coords, dtype=float)
    nx = float(np.linalg.norm(x))
    if x.shape != (4,) or nx == 0.0:
        raise ConfigError(f"Cannot place {list(coords)} on S^3")
    return ManifoldPoint(S3, x / nx)


def karcher_points(n_points: int, seed: int) -> List[ManifoldPoint]:
    if n_points < 1:
        raise ConfigError(f"Need at least one sample point, got {n_points}")
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.0, 1.0, size=(n_points, 4))
    while np.any(np.linalg.norm(raw, axis=1) == 0.0):
        raw = rng.uniform(0.0, 1.0, size=(n_points, 4))
    logger.debug(f"Generated {n_points} sample points with seed {seed}")
    return [sphere_point(row) for row in raw]
