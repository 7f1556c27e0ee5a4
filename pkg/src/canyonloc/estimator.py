"""Stages 2-3: residual cost, RANSAC path classification, final refinement.

The unknown state is the user position plus a clock bias shared by all
delays. Internally the bias is carried in meters (bias times the speed of
light) so the four state components are comparably scaled; the public API
speaks seconds.

A candidate state is scored against a measurement/hypothesis pair by the
variance-normalized squared residuals of delay, azimuth and zenith. A
geometrically impossible prediction (no incidence point on the hypothesized
surface) scores +inf, which counts against a candidate's consensus rather
than being skipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import combinations
from typing import Optional

import numpy as np

from .association import LOS_ORIGIN, Hypothesis
from .constants import SPEED_OF_LIGHT, TOL
from .geometry import (
    Scene,
    Vec3,
    as_vec3,
    direction_from_angles,
    incidence_point,
    mirror_point,
)
from .measurement import PathMeasurement
from .solver import InvalidStartError, ResidualProblem, SolveResult, solve

TWO_PI = 2.0 * math.pi


class NotEnoughPathsError(RuntimeError):
    """Fewer assigned hypotheses than the minimal subset size."""


class EstimationError(RuntimeError):
    """No RANSAC iteration produced a usable candidate state."""


@dataclass(frozen=True)
class RansacConfig:
    min_subset_size: int = 2
    success_probability: float = 0.999
    outlier_ratio: float = 3.0 / 7.0
    inlier_threshold: float = 11.34
    max_iterations_cap: int = 10000

    def __post_init__(self) -> None:
        if self.min_subset_size < 2:
            raise ValueError("min_subset_size must be >= 2 (6 residuals for 4 unknowns)")
        if not (0.0 < self.success_probability < 1.0):
            raise ValueError("success_probability must be in (0, 1)")
        if not (0.0 <= self.outlier_ratio < 1.0):
            raise ValueError("outlier_ratio must be in [0, 1)")
        if self.inlier_threshold <= 0.0:
            raise ValueError("inlier_threshold must be positive")


@dataclass(frozen=True)
class StateEstimate:
    """Candidate or refined solution with its supporting inlier set."""

    position: np.ndarray
    clock_bias: float            # s
    inliers: frozenset[int]      # measurement indices
    total_cost: float
    source: str                  # minimal | ransac_winner | refined
    converged: bool = True


@dataclass
class SolveDiagnostics:
    """Counters filled while solving; used to audit the cost-trace invariant."""

    solves: int = 0
    monotone_violations: int = 0

    def note(self, result: SolveResult) -> None:
        self.solves += 1
        trace = result.cost_trace
        if any(b > a for a, b in zip(trace, trace[1:])):
            self.monotone_violations += 1


def _wrap(a: float) -> float:
    """Wrap a scalar angle difference into (-pi, pi]."""
    return math.pi - (math.pi - a) % TWO_PI


class _Entry:
    """Precomputed scalar geometry for one (measurement, origin) pair."""

    __slots__ = (
        "index", "los", "nx", "ny", "nz", "off_b", "edges", "feasible_geometry",
        "bx", "by", "bz", "pn",
        "target_d", "w_d", "target_a", "w_a", "target_z", "w_z",
    )

    def __init__(self, m: PathMeasurement, origin: int, scene: Scene):
        if min(m.var_delay, m.var_azimuth, m.var_zenith) <= 0.0:
            raise ValueError("measurement variances must be positive for estimation")
        b = scene.bs_position
        self.index = m.index
        self.bx, self.by, self.bz = float(b[0]), float(b[1]), float(b[2])
        self.los = origin == LOS_ORIGIN
        self.feasible_geometry = True
        if not self.los:
            s = scene.surface(origin)
            self.nx, self.ny, self.nz = (float(c) for c in s.normal)
            self.pn = float(s.anchor @ s.normal)
            self.off_b = float((b - s.anchor) @ s.normal)
            if abs(self.off_b) < TOL.plane_degenerate:
                self.feasible_geometry = False  # BS on the plane: never reflects
            self.edges = [
                (float(o[0]), float(o[1]), float(o[2]), float(w[0]), float(w[1]), float(w[2]))
                for o, w in zip(s._edge_origins, s._edge_inward)
            ]
        sigma_d = math.sqrt(m.var_delay)
        self.w_d = 1.0 / (SPEED_OF_LIGHT * sigma_d)
        self.target_d = SPEED_OF_LIGHT * m.delay
        self.w_a = 1.0 / math.sqrt(m.var_azimuth)
        self.target_a = m.azimuth
        self.w_z = 1.0 / math.sqrt(m.var_zenith)
        self.target_z = m.zenith

    def geometry(self, ux: float, uy: float, uz: float):
        """(dir_x, dir_y, dir_z, range) of the BS-side arrival geometry for a
        user at u, or None when the hypothesis is infeasible there.

        For a reflection hypothesis the direction points from the BS toward
        the mirror image of u, which is also the direction of the reflection
        point; the range is the full reflected path length.
        """
        if self.los:
            dx, dy, dz = ux - self.bx, uy - self.by, uz - self.bz
            d = math.sqrt(dx * dx + dy * dy + dz * dz)
            if d < TOL.plane_degenerate:
                return None
            return dx, dy, dz, d
        if not self.feasible_geometry:
            return None
        off_u = ux * self.nx + uy * self.ny + uz * self.nz - self.pn
        if abs(off_u) < TOL.plane_degenerate:
            return None
        denom = self.off_b + off_u
        if abs(denom) < 1e-15:
            return None
        s = self.off_b / denom
        if not (0.0 < s < 1.0):
            return None
        # mirror image of u and the reflection point on the plane
        ix = ux - 2.0 * off_u * self.nx
        iy = uy - 2.0 * off_u * self.ny
        iz = uz - 2.0 * off_u * self.nz
        dx, dy, dz = ix - self.bx, iy - self.by, iz - self.bz
        rx, ry, rz = self.bx + s * dx, self.by + s * dy, self.bz + s * dz
        for ox, oy, oz, wx, wy, wz in self.edges:
            if (rx - ox) * wx + (ry - oy) * wy + (rz - oz) * wz < -TOL.polygon_edge:
                return None
        d = math.sqrt(dx * dx + dy * dy + dz * dz)
        if d < TOL.plane_degenerate:
            return None
        return dx, dy, dz, d

    def residuals(self, ux, uy, uz, rho):
        geo = self.geometry(ux, uy, uz)
        if geo is None:
            return None
        dx, dy, dz, d = geo
        azimuth = math.atan2(dy, dx)
        zenith = math.acos(min(1.0, max(-1.0, dz / d)))
        return (
            self.w_d * (self.target_d - d - rho),
            self.w_a * _wrap(self.target_a - azimuth),
            self.w_z * _wrap(self.target_z - zenith),
        )

    def cost(self, ux, uy, uz, rho) -> float:
        r = self.residuals(ux, uy, uz, rho)
        if r is None:
            return math.inf
        return r[0] * r[0] + r[1] * r[1] + r[2] * r[2]

    def jacobian_rows(self, ux, uy, uz):
        """Three rows of d(residual)/d(ux, uy, uz, rho), or None if infeasible."""
        geo = self.geometry(ux, uy, uz)
        if geo is None:
            return None
        dx, dy, dz, d = geo
        hx, hy, hz = dx / d, dy / d, dz / d  # unit direction BS -> image
        hor = dx * dx + dy * dy
        if hor > 0.0:
            ax, ay, az = -dy / hor, dx / hor, 0.0
        else:
            ax = ay = az = 0.0
        w = dz / d
        sin_z = math.sqrt(max(0.0, 1.0 - w * w))
        if sin_z > 1e-12:
            k = -1.0 / (d * sin_z)
            zx, zy, zz = k * (0.0 - w * hx), k * (0.0 - w * hy), k * (1.0 - w * hz)
        else:
            zx = zy = zz = 0.0
        if not self.los:
            # chain rule through the mirror map: grad_u = H grad_q, H = I - 2 n n^T
            nx, ny, nz = self.nx, self.ny, self.nz
            t = 2.0 * (hx * nx + hy * ny + hz * nz)
            hx, hy, hz = hx - t * nx, hy - t * ny, hz - t * nz
            t = 2.0 * (ax * nx + ay * ny + az * nz)
            ax, ay, az = ax - t * nx, ay - t * ny, az - t * nz
            t = 2.0 * (zx * nx + zy * ny + zz * nz)
            zx, zy, zz = zx - t * nx, zy - t * ny, zz - t * nz
        wd, wa, wz_ = self.w_d, self.w_a, self.w_z
        return (
            (-wd * hx, -wd * hy, -wd * hz, -wd),
            (-wa * ax, -wa * ay, -wa * az, 0.0),
            (-wz_ * zx, -wz_ * zy, -wz_ * zz, 0.0),
        )


def predict_path(
    u: Vec3, origin: int, scene: Scene
) -> Optional[tuple[float, float, float]]:
    """(path length, azimuth, zenith) predicted for a user at u under a
    hypothesis origin (0 = direct path, i >= 1 = one reflection off surface
    i). None when the geometry does not admit the hypothesized path."""
    u = as_vec3(u)
    if origin == LOS_ORIGIN:
        dirv = u - scene.bs_position
        d = float(np.linalg.norm(dirv))
        if d < TOL.plane_degenerate:
            return None
    else:
        surface = scene.surface(origin)
        if incidence_point(u, scene.bs_position, surface) is None:
            return None
        dirv = mirror_point(u, surface) - scene.bs_position
        d = float(np.linalg.norm(dirv))
    azimuth = math.atan2(dirv[1], dirv[0])
    zenith = math.acos(min(1.0, max(-1.0, dirv[2] / d)))
    return d, azimuth, zenith


def residual_cost(
    measurement: PathMeasurement, u: Vec3, clock_bias: float, origin: int, scene: Scene
) -> float:
    """Variance-normalized squared residual of one measurement under a state
    and hypothesis; +inf when the predicted path is infeasible."""
    entry = _Entry(measurement, origin, scene)
    u = as_vec3(u)
    return entry.cost(float(u[0]), float(u[1]), float(u[2]), SPEED_OF_LIGHT * clock_bias)


def build_problem(
    entries: list[_Entry], scene: Scene, bias_bound_m: float = math.inf
) -> ResidualProblem:
    """Stack per-entry residuals/Jacobians into a box-bounded problem over
    (x, y, z, bias-in-meters)."""
    lo, hi = scene.bounds.box()
    lower = np.append(lo, -bias_bound_m)
    upper = np.append(hi, bias_bound_m)

    def fun(x: np.ndarray) -> np.ndarray:
        ux, uy, uz, rho = float(x[0]), float(x[1]), float(x[2]), float(x[3])
        out = np.empty(3 * len(entries))
        for i, e in enumerate(entries):
            r = e.residuals(ux, uy, uz, rho)
            if r is None:
                out[3 * i : 3 * i + 3] = np.inf
            else:
                out[3 * i] = r[0]
                out[3 * i + 1] = r[1]
                out[3 * i + 2] = r[2]
        return out

    def jac(x: np.ndarray) -> np.ndarray:
        ux, uy, uz, _ = float(x[0]), float(x[1]), float(x[2]), float(x[3])
        out = np.empty((3 * len(entries), 4))
        for i, e in enumerate(entries):
            rows = e.jacobian_rows(ux, uy, uz)
            if rows is None:
                out[3 * i : 3 * i + 3, :] = np.nan
            else:
                out[3 * i] = rows[0]
                out[3 * i + 1] = rows[1]
                out[3 * i + 2] = rows[2]
        return out

    return ResidualProblem(fun=fun, jac=jac, lower=lower, upper=upper)


def make_entries(
    pairs: list[tuple[PathMeasurement, int]], scene: Scene
) -> list[_Entry]:
    return [_Entry(m, origin, scene) for m, origin in pairs]


def _start_states(
    pairs: list[tuple[PathMeasurement, int]],
    all_measurements: list[PathMeasurement],
    scene: Scene,
) -> list[np.ndarray]:
    """Deterministic multi-start grid for the non-convex minimal solve.

    Three back-projections along the minimum-delay measurement's direction,
    the bounds-box center, and (when the subset hypothesizes a reflection)
    one mirror back-projection through that surface.
    """
    b = scene.bs_position
    lo, hi = scene.bounds.box()
    diag = scene.bounds.diagonal()
    ref = min(all_measurements, key=lambda m: (m.delay, m.index))
    d_ref = direction_from_angles(ref.azimuth, ref.zenith)
    starts = []
    for frac in (0.25, 0.5, 0.75):
        u = np.clip(b + frac * diag * d_ref, lo, hi)
        starts.append(np.append(u, 0.0))
    starts.append(np.append(scene.bounds.center(), 0.0))
    for m, origin in pairs:
        if origin != LOS_ORIGIN:
            d_m = direction_from_angles(m.azimuth, m.zenith)
            image_guess = b + 0.5 * diag * d_m
            u = np.clip(mirror_point(image_guess, scene.surface(origin)), lo, hi)
            starts.append(np.append(u, 0.0))
            break
    return starts


# Candidate states from minimal subsets only gate inlier classification, so
# their fits may stop orders of magnitude below any measurement scale without
# changing a single classification; the final refinement runs at the solver's
# full-precision defaults. (The terminal convergence is superlinear, so the
# achieved accuracy is far below this tolerance anyway.)
MINIMAL_FIT_STEP_TOL = 1e-4


def fit_state(
    pairs: list[tuple[PathMeasurement, int]],
    all_measurements: list[PathMeasurement],
    scene: Scene,
    x0: Optional[np.ndarray] = None,
    diagnostics: Optional[SolveDiagnostics] = None,
    step_tol: Optional[float] = None,
) -> Optional[tuple[np.ndarray, SolveResult]]:
    """Minimize the summed cost of the given pairs over (u, bias).

    Runs the multi-start grid (or a single provided start) and returns the
    best converged solution as (state4, SolveResult), or None when nothing
    converges with finite cost.
    """
    entries = make_entries(pairs, scene)
    problem = build_problem(entries, scene)
    starts = [np.asarray(x0, dtype=float)] if x0 is not None else _start_states(pairs, all_measurements, scene)
    kwargs = {} if step_tol is None else {"step_tol": step_tol}
    best: Optional[tuple[np.ndarray, SolveResult]] = None
    for start in starts:
        try:
            result = solve(problem, start, **kwargs)
        except InvalidStartError:
            continue
        if diagnostics is not None:
            diagnostics.note(result)
        if not (result.converged and math.isfinite(result.cost)):
            continue
        if best is None or result.cost < best[1].cost:
            best = (result.x, result)
    return best


def estimate_minimal(
    subset: list[Hypothesis],
    measurements: list[PathMeasurement],
    scene: Scene,
    diagnostics: Optional[SolveDiagnostics] = None,
) -> Optional[StateEstimate]:
    """Best multi-start solution fitting exactly the subset's hypotheses."""
    by_index = {m.index: m for m in measurements}
    pairs = [(by_index[h.measurement_index], h.origin) for h in subset]
    fit = fit_state(
        pairs, measurements, scene, diagnostics=diagnostics, step_tol=MINIMAL_FIT_STEP_TOL
    )
    if fit is None:
        return None
    x, result = fit
    return StateEstimate(
        position=x[:3].copy(),
        clock_bias=x[3] / SPEED_OF_LIGHT,
        inliers=frozenset(h.measurement_index for h in subset),
        total_cost=result.cost,
        source="minimal",
    )


def ransac_iterations(
    success_probability: float, outlier_ratio: float, subset_size: int
) -> int:
    """Number of random subsets needed to draw one outlier-free subset with
    the requested probability."""
    clean = (1.0 - outlier_ratio) ** subset_size
    if clean >= 1.0:
        return 1
    n = math.ceil(math.log(1.0 - success_probability) / math.log(1.0 - clean))
    return max(1, n)


@dataclass(frozen=True)
class Candidate:
    """One RANSAC iteration's state and its per-measurement costs."""

    iteration: int
    position: np.ndarray
    clock_bias: float
    costs: dict[int, float]  # assigned measurement index -> f


def ransac_candidates(
    hypotheses: list[Hypothesis],
    measurements: list[PathMeasurement],
    scene: Scene,
    config: RansacConfig,
    seed,
    diagnostics: Optional[SolveDiagnostics] = None,
) -> list[Candidate]:
    """Run the sampling + minimal-estimation loop and score every candidate
    against all assigned hypotheses. Classification against a threshold is
    left to select_winner, so one candidate set serves many thresholds."""
    assigned = sorted((h for h in hypotheses if h.assigned), key=lambda h: h.measurement_index)
    if len(assigned) < config.min_subset_size:
        raise NotEnoughPathsError(
            f"{len(assigned)} assigned hypotheses < minimal subset {config.min_subset_size}"
        )
    by_index = {m.index: m for m in measurements}
    entries = {
        h.measurement_index: _Entry(by_index[h.measurement_index], h.origin, scene)
        for h in assigned
    }
    n_iter = min(
        ransac_iterations(config.success_probability, config.outlier_ratio, config.min_subset_size),
        config.max_iterations_cap,
    )
    rng = np.random.default_rng(seed)
    candidates = []
    for iteration, pick in enumerate(
        _sample_subsets(rng, len(assigned), config.min_subset_size, n_iter)
    ):
        subset = [assigned[j] for j in pick]
        est = estimate_minimal(subset, measurements, scene, diagnostics=diagnostics)
        if est is None:
            continue
        ux, uy, uz = (float(c) for c in est.position)
        rho = SPEED_OF_LIGHT * est.clock_bias
        costs = {idx: e.cost(ux, uy, uz, rho) for idx, e in entries.items()}
        candidates.append(
            Candidate(iteration=iteration, position=est.position, clock_bias=est.clock_bias, costs=costs)
        )
    return candidates


def _sample_subsets(rng, n: int, size: int, count: int) -> list[tuple[int, ...]]:
    """Uniformly sample `count` distinct index subsets (all of them when the
    pool is smaller). Re-estimating a subset can never change its candidate,
    so duplicate draws are pure waste; sampling distinct subsets also
    tightens the probability that at least one outlier-free subset appears.
    """
    pool = math.comb(n, size)
    if count >= pool:
        return list(combinations(range(n), size))
    if pool <= 100_000:
        all_subsets = list(combinations(range(n), size))
        idx = rng.choice(pool, size=count, replace=False)
        return [all_subsets[i] for i in sorted(idx)]
    out: list[tuple[int, ...]] = []
    seen = set()
    while len(out) < count:
        pick = tuple(sorted(rng.choice(n, size=size, replace=False)))
        if pick not in seen:
            seen.add(pick)
            out.append(pick)
    return out


def select_winner(candidates: list[Candidate], inlier_threshold: float) -> Optional[StateEstimate]:
    """Largest consensus set; ties break on lower inlier cost, then on the
    earlier iteration."""
    best_key = None
    best: Optional[StateEstimate] = None
    for c in candidates:
        inliers = frozenset(i for i, f in c.costs.items() if f <= inlier_threshold)
        total = sum(c.costs[i] for i in inliers)
        key = (-len(inliers), total, c.iteration)
        if best_key is None or key < best_key:
            best_key = key
            best = StateEstimate(
                position=c.position,
                clock_bias=c.clock_bias,
                inliers=inliers,
                total_cost=total,
                source="ransac_winner",
            )
    return best


def run_ransac(
    hypotheses: list[Hypothesis],
    measurements: list[PathMeasurement],
    scene: Scene,
    config: RansacConfig,
    seed,
    diagnostics: Optional[SolveDiagnostics] = None,
) -> StateEstimate:
    """Full RANSAC pass at the configured inlier threshold."""
    candidates = ransac_candidates(hypotheses, measurements, scene, config, seed, diagnostics)
    winner = select_winner(candidates, config.inlier_threshold)
    if winner is None:
        raise EstimationError("no RANSAC iteration produced a candidate state")
    return winner


def refine(
    winner: StateEstimate,
    hypotheses: list[Hypothesis],
    measurements: list[PathMeasurement],
    scene: Scene,
    diagnostics: Optional[SolveDiagnostics] = None,
) -> StateEstimate:
    """Re-minimize over the winner's inlier set from the winner's state,
    subject to the scene's position box. Falls back to the winner (flagged
    not converged) if the solve cannot run."""
    if len(winner.inliers) < 2:
        raise NotEnoughPathsError("refinement needs at least 2 inlier paths")
    origin_of = {h.measurement_index: h.origin for h in hypotheses}
    by_index = {m.index: m for m in measurements}
    pairs = [(by_index[i], origin_of[i]) for i in sorted(winner.inliers)]
    x0 = np.append(winner.position, SPEED_OF_LIGHT * winner.clock_bias)
    fit = fit_state(pairs, measurements, scene, x0=x0, diagnostics=diagnostics)
    if fit is None:
        return replace(winner, converged=False)
    x, result = fit
    return StateEstimate(
        position=x[:3].copy(),
        clock_bias=x[3] / SPEED_OF_LIGHT,
        inliers=winner.inliers,
        total_cost=result.cost,
        source="refined",
        converged=result.converged,
    )
