"""Planar-surface map model and its geometric query primitives.

The environment map is a set of bounded convex planar reflectors (building
facades, ground slabs). Three queries drive everything downstream: nearest-hit
ray casting from the base station, point mirroring across a reflector plane,
and the specular incidence point between two endpoints.

All functions are pure and the map objects are treated as immutable after
construction, so they are safe to share across worker processes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .constants import TOL

Vec3 = np.ndarray  # shape (3,), float64


class SceneValidationError(ValueError):
    """A scene document violates a structural or geometric invariant."""


def as_vec3(v: Sequence[float]) -> Vec3:
    a = np.asarray(v, dtype=float)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    return a


def unit(v: Vec3) -> Vec3:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def wrap_angle(a):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


def direction_from_angles(azimuth, zenith):
    """Unit direction [sin z cos a, sin z sin a, cos z]; broadcasts to (..., 3)."""
    sz = np.sin(zenith)
    return np.stack(
        [sz * np.cos(azimuth), sz * np.sin(azimuth), np.cos(zenith) * np.ones_like(azimuth)],
        axis=-1,
    )


def angles_from_direction(v: Vec3) -> tuple[float, float]:
    """(azimuth, zenith) of a direction vector; azimuth 0 for vertical rays."""
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("zero direction has no angles")
    azimuth = math.atan2(v[1], v[0])
    zenith = math.acos(min(1.0, max(-1.0, v[2] / n)))
    return azimuth, zenith


@dataclass(eq=False)
class Surface:
    """A bounded convex planar reflector.

    Attributes:
        id: positive integer index, unique within a scene.
        normal: unit plane normal (either orientation is accepted).
        anchor: any point on the plane, meters.
        boundary: (N, 3) convex polygon vertices, coplanar with the plane.
    """

    id: int
    normal: Vec3
    anchor: Vec3
    boundary: np.ndarray
    # derived, filled by __post_init__
    _edge_origins: np.ndarray = field(init=False, repr=False)
    _edge_inward: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if int(self.id) < 1:
            raise ValueError(f"surface id must be >= 1, got {self.id}")
        self.id = int(self.id)
        self.normal = unit(as_vec3(self.normal))
        self.anchor = as_vec3(self.anchor)
        boundary = np.asarray(self.boundary, dtype=float)
        if boundary.ndim != 2 or boundary.shape[1] != 3 or boundary.shape[0] < 3:
            raise ValueError("boundary must be an (N>=3, 3) vertex array")
        self.boundary = boundary

        offsets = (boundary - self.anchor) @ self.normal
        worst = float(np.max(np.abs(offsets)))
        if worst >= TOL.coplanarity:
            raise ValueError(f"boundary vertex {worst:.3e} m off the plane")

        # Signed area vector; also fixes the winding used for edge tests.
        cross_sum = np.cross(boundary, np.roll(boundary, -1, axis=0)).sum(axis=0)
        area = 0.5 * float(np.linalg.norm(cross_sum))
        if area <= TOL.min_polygon_area:
            raise ValueError(f"degenerate boundary polygon (area {area:.3e} m^2)")
        orientation = 1.0 if float(cross_sum @ self.normal) >= 0.0 else -1.0

        edges = np.roll(boundary, -1, axis=0) - boundary
        turns = np.cross(edges, np.roll(edges, -1, axis=0)) @ self.normal * orientation
        if float(turns.min()) < -1e-9 * max(1.0, float(np.abs(turns).max())):
            raise ValueError("boundary polygon is not convex")

        # Unit in-plane inward normal per edge: metric point-in-polygon test.
        inward = orientation * np.cross(self.normal, edges)
        lengths = np.linalg.norm(inward, axis=1, keepdims=True)
        if float(lengths.min()) == 0.0:
            raise ValueError("boundary has a zero-length edge")
        self._edge_inward = inward / lengths
        self._edge_origins = boundary

    def plane_offset(self, point: Vec3) -> float:
        """Signed distance of a point from the surface plane, meters."""
        return float((point - self.anchor) @ self.normal)

    def contains(self, point, tol: float = TOL.polygon_edge):
        """True where in-plane point(s) lie inside the boundary (metric slack).

        Accepts a single (3,) point or an (K, 3) batch; membership is tested
        edge by edge against the precomputed inward normals.
        """
        p = np.asarray(point, dtype=float)
        single = p.ndim == 1
        if single:
            p = p[None, :]
        inside = np.ones(p.shape[0], dtype=bool)
        for origin, inward in zip(self._edge_origins, self._edge_inward):
            inside &= (p - origin) @ inward >= -tol
        return bool(inside[0]) if single else inside


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned region the user can occupy; the floor is fixed at z = 0."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_max: float

    Z_MIN = 0.0

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max and self.z_max > self.Z_MIN):
            raise ValueError("bounds box is empty")

    def contains(self, p: Vec3, tol: float = 0.0) -> bool:
        return bool(
            self.x_min - tol <= p[0] <= self.x_max + tol
            and self.y_min - tol <= p[1] <= self.y_max + tol
            and self.Z_MIN - tol <= p[2] <= self.z_max + tol
        )

    def center(self) -> Vec3:
        return np.array(
            [
                0.5 * (self.x_min + self.x_max),
                0.5 * (self.y_min + self.y_max),
                0.5 * (self.Z_MIN + self.z_max),
            ]
        )

    def diagonal(self) -> float:
        return float(
            math.sqrt(
                (self.x_max - self.x_min) ** 2
                + (self.y_max - self.y_min) ** 2
                + (self.z_max - self.Z_MIN) ** 2
            )
        )

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        """(lower, upper) arrays over (x, y, z) for box-constrained solves."""
        lo = np.array([self.x_min, self.y_min, self.Z_MIN])
        hi = np.array([self.x_max, self.y_max, self.z_max])
        return lo, hi


@dataclass(eq=False)
class Scene:
    """Immutable environment: reflecting surfaces, BS position, user bounds."""

    surfaces: list[Surface]
    bs_position: Vec3
    bounds: Bounds

    def __post_init__(self) -> None:
        self.bs_position = as_vec3(self.bs_position)
        ids = [s.id for s in self.surfaces]
        if sorted(ids) != list(range(1, len(ids) + 1)):
            raise ValueError(f"surface ids must be contiguous from 1, got {sorted(ids)}")
        self.surfaces = sorted(self.surfaces, key=lambda s: s.id)
        if not self.bounds.contains(self.bs_position):
            raise ValueError("bs_position lies outside the scene bounds")

    def surface(self, surface_id: int) -> Surface:
        return self.surfaces[surface_id - 1]

    @property
    def surface_ids(self) -> list[int]:
        return [s.id for s in self.surfaces]


@dataclass(frozen=True)
class RayHit:
    """First surface hit by a ray: id, intersection point, and distance t."""

    surface_id: int
    point: Vec3
    distance: float


def find_surface(direction: Vec3, origin: Vec3, scene: Scene) -> Optional[RayHit]:
    """Nearest boundary-valid surface hit of the ray origin + t * direction.

    Returns None when the ray escapes the scene. Hits closer than the
    self-hit epsilon are ignored so rays may start on a surface.
    """
    d = unit(as_vec3(direction))
    o = as_vec3(origin)
    best: Optional[RayHit] = None
    for s in scene.surfaces:
        denom = float(d @ s.normal)
        if abs(denom) < 1e-15:
            continue
        t = float((s.anchor - o) @ s.normal) / denom
        if t <= TOL.ray_self_hit:
            continue
        if best is not None and t >= best.distance:
            continue
        point = o + t * d
        if s.contains(point):
            best = RayHit(surface_id=s.id, point=point, distance=t)
    return best


def cast_rays(directions: np.ndarray, origin: Vec3, scene: Scene) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized nearest-hit casting for a (K, 3) direction batch.

    Returns (ids, distances): ids[k] is the hit surface id or 0 on a miss,
    distances[k] the ray parameter (inf on a miss). Semantics match
    find_surface ray by ray.
    """
    D = np.asarray(directions, dtype=float)
    norms = np.linalg.norm(D, axis=1, keepdims=True)
    if float(norms.min()) == 0.0:
        raise ValueError("zero direction in ray batch")
    D = D / norms
    o = as_vec3(origin)
    k = D.shape[0]
    best_t = np.full(k, np.inf)
    best_id = np.zeros(k, dtype=np.int64)
    for s in scene.surfaces:
        denom = D @ s.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(denom) > 1e-15, float((s.anchor - o) @ s.normal) / denom, np.inf)
        candidate = (t > TOL.ray_self_hit) & (t < best_t)
        if not candidate.any():
            continue
        pts = o + t[candidate, None] * D[candidate]
        inside = s.contains(pts)
        sel = np.flatnonzero(candidate)[inside]
        best_t[sel] = t[sel]
        best_id[sel] = s.id
    return best_id, best_t


def mirror_point(u: Vec3, surface: Surface) -> Vec3:
    """Mirror image of a point across the surface plane."""
    u = as_vec3(u)
    return u - 2.0 * float((u - surface.anchor) @ surface.normal) * surface.normal


def incidence_point(
    u: Vec3, b: Vec3, surface: Surface, scene: Optional[Scene] = None
) -> Optional[Vec3]:
    """Specular reflection point on a surface between endpoints u and b.

    Mirrors u across the plane and intersects the segment from b to the
    image with the plane. Returns None when the reflection is geometrically
    absent: segment parallel to the plane, intersection parameter outside
    (0, 1), point outside the finite boundary, or either endpoint on the
    plane (degenerate grazing reflection).

    The scene argument is accepted for interface parity with the other map
    queries; occlusion of the reflected legs is the caller's concern.
    """
    u = as_vec3(u)
    b = as_vec3(b)
    if abs(surface.plane_offset(u)) < TOL.plane_degenerate:
        return None
    if abs(surface.plane_offset(b)) < TOL.plane_degenerate:
        return None
    if float(np.linalg.norm(u - b)) < TOL.plane_degenerate:
        return None
    image = mirror_point(u, surface)
    chord = image - b
    denom = float(chord @ surface.normal)
    if abs(denom) < 1e-15:
        return None
    s = float((surface.anchor - b) @ surface.normal) / denom
    if not (0.0 < s < 1.0):
        return None
    point = b + s * chord
    if not surface.contains(point):
        return None
    return point


def segment_occluded(
    a: Vec3, b: Vec3, scene: Scene, ignore: Iterable[int] = ()
) -> bool:
    """True iff any surface (not ignored) blocks the open segment (a, b).

    Endpoint contact does not count: the crossing parameter must lie
    strictly inside (eps, 1 - eps).
    """
    a = as_vec3(a)
    b = as_vec3(b)
    skip = frozenset(ignore)
    v = b - a
    lo = TOL.segment_interior
    hi = 1.0 - TOL.segment_interior
    for s in scene.surfaces:
        if s.id in skip:
            continue
        denom = float(v @ s.normal)
        if abs(denom) < 1e-15:
            continue
        t = float((s.anchor - a) @ s.normal) / denom
        if lo < t < hi and s.contains(a + t * v):
            return True
    return False


# ---------------------------------------------------------------------------
# Scene (de)serialization
# ---------------------------------------------------------------------------


def scene_from_dict(doc: dict) -> Scene:
    """Build and validate a Scene from a parsed JSON document."""

    def fail(path: str, msg: str) -> SceneValidationError:
        return SceneValidationError(f"{path}: {msg}")

    if not isinstance(doc, dict):
        raise fail("$", "scene document must be a JSON object")
    for key in ("bs_position", "bounds", "surfaces"):
        if key not in doc:
            raise fail("$", f"missing required field '{key}'")

    try:
        bs = as_vec3(doc["bs_position"])
    except (ValueError, TypeError) as e:
        raise fail("bs_position", str(e)) from e

    bdoc = doc["bounds"]
    if not isinstance(bdoc, dict):
        raise fail("bounds", "must be an object")
    try:
        bounds = Bounds(
            x_min=float(bdoc["x_min"]),
            x_max=float(bdoc["x_max"]),
            y_min=float(bdoc["y_min"]),
            y_max=float(bdoc["y_max"]),
            z_max=float(bdoc["z_max"]),
        )
    except KeyError as e:
        raise fail("bounds", f"missing field {e}") from e
    except (ValueError, TypeError) as e:
        raise fail("bounds", str(e)) from e

    if not isinstance(doc["surfaces"], list):
        raise fail("surfaces", "must be an array")
    surfaces = []
    for i, sdoc in enumerate(doc["surfaces"]):
        path = f"surfaces[{i}]"
        if not isinstance(sdoc, dict):
            raise fail(path, "must be an object")
        try:
            surfaces.append(
                Surface(
                    id=sdoc["id"],
                    normal=as_vec3(sdoc["normal"]),
                    anchor=as_vec3(sdoc["anchor"]),
                    boundary=np.asarray(sdoc["boundary"], dtype=float),
                )
            )
        except KeyError as e:
            raise fail(path, f"missing field {e}") from e
        except (ValueError, TypeError) as e:
            raise fail(path, str(e)) from e

    try:
        return Scene(surfaces=surfaces, bs_position=bs, bounds=bounds)
    except ValueError as e:
        raise fail("$", str(e)) from e


def load_scene(path) -> Scene:
    """Load a scene JSON file; parse errors carry line/column positions."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneValidationError(
            f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}"
        ) from e
    try:
        return scene_from_dict(doc)
    except SceneValidationError as e:
        raise SceneValidationError(f"{path}: {e}") from e


def scene_to_dict(scene: Scene) -> dict:
    return {
        "bs_position": list(scene.bs_position),
        "bounds": {
            "x_min": scene.bounds.x_min,
            "x_max": scene.bounds.x_max,
            "y_min": scene.bounds.y_min,
            "y_max": scene.bounds.y_max,
            "z_max": scene.bounds.z_max,
        },
        "surfaces": [
            {
                "id": s.id,
                "normal": list(s.normal),
                "anchor": list(s.anchor),
                "boundary": [list(v) for v in s.boundary],
            }
            for s in scene.surfaces
        ],
    }


def save_scene(scene: Scene, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(scene_to_dict(scene), f, indent=2)
        f.write("\n")
