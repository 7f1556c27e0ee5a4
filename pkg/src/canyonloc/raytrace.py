"""Generative multipath model: enumerate valid specular paths UE <-> BS.

Paths are built with the image method: the UE is mirrored through an ordered
surface sequence, reflection points are recovered by intersecting backwards
from the BS, and every candidate is validated against surface boundaries and
occlusion before it is kept.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from itertools import product
from typing import Optional

import numpy as np

from .constants import SPEED_OF_LIGHT
from .geometry import (
    Scene,
    Vec3,
    angles_from_direction,
    as_vec3,
    mirror_point,
    segment_occluded,
)

LOS = "los"
SINGLE_BOUNCE = "single_bounce"
MULTI_BOUNCE = "multi_bounce"


@dataclass(frozen=True)
class PropagationPath:
    """One resolvable propagation path and its ground-truth parameters.

    Angles are the arrival direction at the BS, i.e. the spherical angles of
    the unit vector pointing from the BS back along the final segment.
    """

    index: int
    kind: str
    surface_sequence: tuple[int, ...]
    reflection_points: tuple[tuple[float, float, float], ...]
    length: float           # m
    delay: float            # s
    azimuth: float          # rad, (-pi, pi]
    zenith: float           # rad, [0, pi]

    @property
    def bounces(self) -> int:
        return len(self.surface_sequence)


def _path_from_points(kind: str, seq: tuple[int, ...], points: list[Vec3], b: Vec3) -> PropagationPath:
    """Assemble a path record from the ordered point chain u, r_1..r_k, b."""
    chain = points + [b]
    length = 0.0
    for p, q in zip(chain[:-1], chain[1:]):
        length += float(np.linalg.norm(q - p))
    final_from_bs = chain[-2] - b  # BS toward the last reflection point (or UE)
    azimuth, zenith = angles_from_direction(final_from_bs)
    return PropagationPath(
        index=0,
        kind=kind,
        surface_sequence=seq,
        reflection_points=tuple(tuple(float(c) for c in p) for p in points[1:]),
        length=length,
        delay=length / SPEED_OF_LIGHT,
        azimuth=azimuth,
        zenith=zenith,
    )


def trace_los(u: Vec3, scene: Scene) -> Optional[PropagationPath]:
    """Direct path, or None when some surface blocks the straight segment."""
    u = as_vec3(u)
    b = scene.bs_position
    if float(np.linalg.norm(u - b)) == 0.0:
        raise ValueError("UE and BS positions coincide")
    if segment_occluded(u, b, scene):
        return None
    return _path_from_points(LOS, (), [u], b)


def _chain_reflection_points(u: Vec3, b: Vec3, seq: tuple[int, ...], scene: Scene) -> Optional[list[Vec3]]:
    """Reflection points for an ordered surface sequence, or None if absent.

    Mirrors u forward through the sequence, then walks back from the BS:
    each leg must cross its plane strictly between the endpoints and inside
    the surface boundary.
    """
    images = [u]
    for sid in seq:
        images.append(mirror_point(images[-1], scene.surface(sid)))

    points: list[Vec3] = []
    target = b
    for j in range(len(seq), 0, -1):
        s = scene.surface(seq[j - 1])
        image = images[j]
        chord = image - target
        denom = float(chord @ s.normal)
        if abs(denom) < 1e-15:
            return None
        t = float((s.anchor - target) @ s.normal) / denom
        if not (0.0 < t < 1.0):
            return None
        point = target + t * chord
        if not s.contains(point):
            return None
        points.append(point)
        target = point
    points.reverse()
    return points


def _segments_clear(u: Vec3, points: list[Vec3], b: Vec3, seq: tuple[int, ...], scene: Scene) -> bool:
    """Occlusion test for every leg, ignoring the surfaces each leg touches."""
    chain = [u] + points + [b]
    touching: list[set[int]] = [set() for _ in chain]
    for j, sid in enumerate(seq):
        touching[j + 1].add(sid)
    for i in range(len(chain) - 1):
        if segment_occluded(chain[i], chain[i + 1], scene, ignore=touching[i] | touching[i + 1]):
            return False
    return True


def trace_reflections(u: Vec3, scene: Scene, max_bounces: int = 2) -> list[PropagationPath]:
    """All valid reflected paths with 1..max_bounces bounces, sorted by delay.

    Surface sequences never repeat a surface consecutively (a flat plane
    cannot reflect onto itself); longer repeats such as (1, 2, 1) are legal.
    """
    if max_bounces < 1:
        raise ValueError("max_bounces must be >= 1")
    u = as_vec3(u)
    b = scene.bs_position
    ids = scene.surface_ids
    paths = []
    for order in range(1, max_bounces + 1):
        for seq in product(ids, repeat=order):
            if any(seq[i] == seq[i + 1] for i in range(len(seq) - 1)):
                continue
            points = _chain_reflection_points(u, b, seq, scene)
            if points is None:
                continue
            if not _segments_clear(u, points, b, seq, scene):
                continue
            kind = SINGLE_BOUNCE if order == 1 else MULTI_BOUNCE
            paths.append(_path_from_points(kind, seq, [u] + points, b))
    paths.sort(key=lambda p: (p.delay, p.bounces, p.surface_sequence))
    return paths


def generate_paths(u: Vec3, scene: Scene, max_bounces: int = 2) -> list[PropagationPath]:
    """LOS plus reflections, sorted by true delay and re-indexed from 1."""
    found = []
    los = trace_los(u, scene)
    if los is not None:
        found.append(los)
    found.extend(trace_reflections(u, scene, max_bounces))
    found.sort(key=lambda p: (p.delay, p.bounces, p.surface_sequence))
    return [
        PropagationPath(
            index=i + 1,
            kind=p.kind,
            surface_sequence=p.surface_sequence,
            reflection_points=p.reflection_points,
            length=p.length,
            delay=p.delay,
            azimuth=p.azimuth,
            zenith=p.zenith,
        )
        for i, p in enumerate(found)
    ]


def census(paths: list[PropagationPath]) -> tuple[int, int, int]:
    """(LOS, single-bounce, multi-bounce) counts."""
    kinds = [p.kind for p in paths]
    return kinds.count(LOS), kinds.count(SINGLE_BOUNCE), kinds.count(MULTI_BOUNCE)


def dump_paths_jsonl(paths: list[PropagationPath], fp) -> None:
    """One JSON object per path; used for golden-file fixtures and debugging."""
    for p in paths:
        fp.write(json.dumps(asdict(p)) + "\n")


def load_paths_jsonl(fp) -> list[PropagationPath]:
    out = []
    for line in fp:
        line = line.strip()
        if not line:
            continue
        doc = json.loads(line)
        doc["surface_sequence"] = tuple(doc["surface_sequence"])
        doc["reflection_points"] = tuple(tuple(pt) for pt in doc["reflection_points"])
        out.append(PropagationPath(**doc))
    return out
