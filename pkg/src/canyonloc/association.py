"""Stage 1: hypothesize a geometric origin for every measured path.

The minimum-delay measurement is taken as the direct path. Every other
measurement gets a Monte Carlo treatment: its measured arrival direction is
perturbed by its own angular error bars, the perturbed rays are cast from the
BS, and each surface is scored by the fraction of rays that hit it first.
Measurements whose best surface does not clear the confidence threshold are
dropped from the later estimation stages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Scene, cast_rays, direction_from_angles
from .measurement import PathMeasurement

LOS_ORIGIN = 0

ASSIGNED = "assigned"
REJECTED_LOW_SCORE = "rejected_low_score"


@dataclass(frozen=True)
class Hypothesis:
    """Origin hypothesis for one measurement: 0 = direct path, i >= 1 = surface."""

    measurement_index: int
    origin: int
    score: float
    status: str

    @property
    def assigned(self) -> bool:
        return self.status == ASSIGNED


@dataclass(frozen=True)
class AssociationConfig:
    sample_count: int = 1000     # perturbed rays per measurement
    score_threshold: float = 0.7
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if not (0.0 < self.score_threshold <= 1.0):
            raise ValueError("score_threshold must be in (0, 1]")


def pick_los(measurements: list[PathMeasurement]) -> int:
    """Index (into the list) of the minimum-delay measurement; ties -> lowest."""
    if not measurements:
        raise ValueError("no measurements")
    delays = np.array([m.delay for m in measurements])
    return int(np.argmin(delays))


def fold_zenith(zenith):
    """Reflect zenith samples back into [0, pi]."""
    z = np.mod(zenith, 2.0 * np.pi)
    return np.where(z > np.pi, 2.0 * np.pi - z, z)


def sample_directions(
    azimuth: float,
    zenith: float,
    sigma_azimuth: float,
    sigma_zenith: float,
    count: int,
    seed,
) -> np.ndarray:
    """(count, 3) unit directions with Gaussian-perturbed spherical angles."""
    rng = np.random.default_rng(seed)
    az = rng.normal(azimuth, sigma_azimuth, size=count)
    zen = fold_zenith(rng.normal(zenith, sigma_zenith, size=count))
    return direction_from_angles(az, zen)


def score_surfaces(directions: np.ndarray, scene: Scene) -> dict[int, float]:
    """Fraction of rays from the BS whose first hit is each surface.

    Rays that escape the scene contribute to no surface, so the scores sum
    to at most 1.
    """
    ids, _ = cast_rays(directions, scene.bs_position, scene)
    k = len(ids)
    counts = np.bincount(ids, minlength=len(scene.surfaces) + 1)
    return {sid: counts[sid] / k for sid in scene.surface_ids if counts[sid] > 0}


def associate_all(
    measurements: list[PathMeasurement], scene: Scene, config: AssociationConfig
) -> list[Hypothesis]:
    """One hypothesis per measurement, in measurement order.

    The minimum-delay measurement is assigned the direct-path origin with
    score 1 by convention. Each remaining measurement is assigned its
    best-scoring surface when the score exceeds the threshold, and is
    otherwise rejected. Score ties break toward the lowest surface id.
    """
    los_pos = pick_los(measurements)
    seeds = np.random.SeedSequence(config.rng_seed).spawn(len(measurements))
    out = []
    for pos, m in enumerate(measurements):
        if pos == los_pos:
            out.append(Hypothesis(m.index, LOS_ORIGIN, 1.0, ASSIGNED))
            continue
        directions = sample_directions(
            m.azimuth,
            m.zenith,
            float(np.sqrt(m.var_azimuth)),
            float(np.sqrt(m.var_zenith)),
            config.sample_count,
            seeds[pos],
        )
        scores = score_surfaces(directions, scene)
        if scores:
            best = min(scores, key=lambda sid: (-scores[sid], sid))
            if scores[best] > config.score_threshold:
                out.append(Hypothesis(m.index, best, scores[best], ASSIGNED))
                continue
            out.append(Hypothesis(m.index, best, scores[best], REJECTED_LOW_SCORE))
        else:
            out.append(Hypothesis(m.index, -1, 0.0, REJECTED_LOW_SCORE))
    return out
