"""Monte Carlo benchmark harness and CLI.

Sweeps transmit power and the RANSAC inlier threshold over many noise
realizations of a fixed scenario, runs the estimation pipeline plus optional
baselines on each trial, and aggregates association / false-alarm / missed-
detection / RMSE metrics into one CSV per figure. Everything is reproducible
bit for bit from a single master seed, independent of the worker count.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .association import AssociationConfig, associate_all
from .estimator import (
    NotEnoughPathsError,
    RansacConfig,
    SolveDiagnostics,
    fit_state,
    ransac_candidates,
    refine,
    residual_cost,
    select_winner,
)
from .geometry import Scene, load_scene, scene_from_dict
from .measurement import NoiseModel, RadioConfig, synthesize, with_tx_power
from .raytrace import LOS, MULTI_BOUNCE, SINGLE_BOUNCE, census, dump_paths_jsonl, generate_paths

DEFAULT_POWERS = tuple(float(p) for p in range(-40, 11, 5))
DEFAULT_THRESHOLDS = (7.81, 11.34, 16.27)  # chi-square(3) 95/99/99.9% quantiles
ALL_BASELINES = ("ransac", "all_paths", "perfect_inlier")


class BenchConfigError(ValueError):
    """Invalid experiment configuration."""


def default_scene() -> Scene:
    """The packaged street-canyon scene used by the shipped configuration."""
    text = resources.files("canyonloc.data").joinpath("default_scene.json").read_text()
    return scene_from_dict(json.loads(text))


@dataclass(frozen=True)
class ExperimentConfig:
    scene_path: Optional[str] = None          # None -> packaged default scene
    ue_position: tuple[float, float, float] = (-15.0, -15.0, 0.0)
    clock_bias: float = 100e-9                # s
    max_bounces: int = 2
    radio: RadioConfig = field(default_factory=RadioConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    association: AssociationConfig = field(default_factory=AssociationConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    tx_power_sweep: tuple[float, ...] = DEFAULT_POWERS
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    runs: int = 500
    baselines: tuple[str, ...] = ALL_BASELINES
    master_seed: int = 0
    expected_census: Optional[tuple[int, int, int]] = (1, 3, 3)
    zero_noise: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        if self.runs < 1:
            raise BenchConfigError("runs must be >= 1")
        if not self.tx_power_sweep or not self.thresholds:
            raise BenchConfigError("power and threshold sweeps must be non-empty")
        bad = set(self.baselines) - set(ALL_BASELINES)
        if bad:
            raise BenchConfigError(f"unknown baselines {sorted(bad)}; valid: {ALL_BASELINES}")
        if self.workers < 1:
            raise BenchConfigError("workers must be >= 1")


def load_config(path) -> ExperimentConfig:
    """Read an ExperimentConfig JSON file (all fields optional)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise BenchConfigError(
            f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}"
        ) from e
    return config_from_dict(doc, base_dir=path.parent)


def config_from_dict(doc: dict, base_dir: Optional[Path] = None) -> ExperimentConfig:
    known = {
        "scene", "ue_position", "clock_bias", "max_bounces", "radio", "noise",
        "association", "ransac", "tx_power_sweep", "thresholds", "runs",
        "baselines", "master_seed", "expected_census", "zero_noise", "workers",
    }
    unknown = set(doc) - known
    if unknown:
        raise BenchConfigError(f"unknown config fields: {sorted(unknown)}")
    kwargs = {}
    if "scene" in doc and doc["scene"] is not None:
        scene_path = Path(doc["scene"])
        if base_dir is not None and not scene_path.is_absolute():
            scene_path = base_dir / scene_path
        kwargs["scene_path"] = str(scene_path)
    for src, dst in (("ue_position", "ue_position"), ("tx_power_sweep", "tx_power_sweep"),
                     ("thresholds", "thresholds"), ("baselines", "baselines")):
        if src in doc:
            kwargs[dst] = tuple(doc[src])
    for key in ("clock_bias", "max_bounces", "runs", "master_seed", "zero_noise", "workers"):
        if key in doc:
            kwargs[key] = doc[key]
    if "expected_census" in doc:
        ec = doc["expected_census"]
        kwargs["expected_census"] = tuple(ec) if ec is not None else None
    try:
        if "radio" in doc:
            kwargs["radio"] = RadioConfig(**doc["radio"])
        if "noise" in doc:
            kwargs["noise"] = NoiseModel(**doc["noise"])
        if "association" in doc:
            kwargs["association"] = AssociationConfig(**doc["association"])
        if "ransac" in doc:
            kwargs["ransac"] = RansacConfig(**doc["ransac"])
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as e:
        raise BenchConfigError(str(e)) from e


# ---------------------------------------------------------------------------
# Trial execution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdOutcome:
    inliers: tuple[int, ...]
    position_error: float
    bias_error: float
    converged: bool
    winner_state: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)  # x, y, z, bias
    refined_state: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    path_costs: dict[int, float] = field(default_factory=dict)  # at the winner state


@dataclass(frozen=True)
class TrialRecord:
    power: float
    run: int
    # association report rows: (index, origin, score, status, true surface sequence)
    association: tuple[tuple[int, int, float, str, tuple[int, ...]], ...]
    sb_correct: dict[int, bool]
    rejected: tuple[int, ...]
    per_threshold: dict[float, ThresholdOutcome]
    baseline_errors: dict[str, float]
    solves: int
    monotone_violations: int
    failure: Optional[str] = None


def _stage_seed(master_seed: int, power_idx: int, run_idx: int, stage: int) -> int:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(power_idx, run_idx, stage))
    return int(ss.generate_state(2, np.uint64)[0])


@dataclass
class _TrialContext:
    """Static per-sweep state shared by every trial (picklable for workers)."""

    scene: Scene
    paths: list
    true_origin: dict[int, int]      # true inlier index -> true origin (0 or surface)
    sb_surface: dict[int, int]       # single-bounce index -> true surface
    mb_indices: tuple[int, ...]
    config: ExperimentConfig


def run_trial(ctx: _TrialContext, power_idx: int, run_idx: int) -> TrialRecord:
    cfg = ctx.config
    scene = ctx.scene
    power = cfg.tx_power_sweep[power_idx]
    u_true = np.asarray(cfg.ue_position, dtype=float)
    diag = SolveDiagnostics()
    center_error = float(np.linalg.norm(scene.bounds.center() - u_true))

    radio = with_tx_power(cfg.radio, power)
    labeled = synthesize(
        ctx.paths, radio, cfg.clock_bias,
        _stage_seed(cfg.master_seed, power_idx, run_idx, 0),
        model=cfg.noise, zero_noise=cfg.zero_noise,
    )
    measurements = [l.measurement for l in labeled]
    assoc_cfg = replace(cfg.association, rng_seed=_stage_seed(cfg.master_seed, power_idx, run_idx, 1))
    hypotheses = associate_all(measurements, scene, assoc_cfg)

    assoc_rows = tuple(
        (h.measurement_index, h.origin, h.score, h.status, l.truth.surface_sequence)
        for h, l in zip(hypotheses, labeled)
    )
    sb_correct = {
        idx: any(h.measurement_index == idx and h.assigned and h.origin == surf for h in hypotheses)
        for idx, surf in ctx.sb_surface.items()
    }
    rejected = tuple(h.measurement_index for h in hypotheses if not h.assigned)
    by_index = {m.index: m for m in measurements}
    origin_of = {h.measurement_index: h.origin for h in hypotheses if h.assigned}

    failure = None
    per_threshold: dict[float, ThresholdOutcome] = {}
    if "ransac" in cfg.baselines:
        try:
            candidates = ransac_candidates(
                hypotheses, measurements, scene, cfg.ransac,
                _stage_seed(cfg.master_seed, power_idx, run_idx, 2),
                diagnostics=diag,
            )
        except NotEnoughPathsError as e:
            candidates = []
            failure = str(e)
        for threshold in cfg.thresholds:
            winner = select_winner(candidates, threshold)
            if winner is None:
                per_threshold[threshold] = ThresholdOutcome(
                    inliers=(), position_error=center_error,
                    bias_error=abs(cfg.clock_bias), converged=False,
                )
                continue
            estimate = winner
            if len(winner.inliers) >= cfg.ransac.min_subset_size:
                estimate = refine(winner, hypotheses, measurements, scene, diagnostics=diag)
            costs = {
                i: residual_cost(by_index[i], winner.position, winner.clock_bias,
                                 origin_of[i], scene)
                for i in sorted(origin_of)
            }
            per_threshold[threshold] = ThresholdOutcome(
                inliers=tuple(sorted(winner.inliers)),
                position_error=float(np.linalg.norm(estimate.position - u_true)),
                bias_error=abs(estimate.clock_bias - cfg.clock_bias),
                converged=estimate.converged,
                winner_state=(*(float(c) for c in winner.position), winner.clock_bias),
                refined_state=(*(float(c) for c in estimate.position), estimate.clock_bias),
                path_costs=costs,
            )

    baseline_errors: dict[str, float] = {}
    if "all_paths" in cfg.baselines:
        pairs = [(by_index[i], origin_of[i]) for i in sorted(origin_of)]
        fit = fit_state(pairs, measurements, scene, diagnostics=diag) if len(pairs) >= 2 else None
        baseline_errors["all_paths"] = (
            float(np.linalg.norm(fit[0][:3] - u_true)) if fit is not None else center_error
        )
    if "perfect_inlier" in cfg.baselines:
        pairs = [(by_index[i], ctx.true_origin[i]) for i in sorted(ctx.true_origin)]
        fit = fit_state(pairs, measurements, scene, diagnostics=diag)
        baseline_errors["perfect_inlier"] = (
            float(np.linalg.norm(fit[0][:3] - u_true)) if fit is not None else center_error
        )

    return TrialRecord(
        power=power,
        run=run_idx,
        association=assoc_rows,
        sb_correct=sb_correct,
        rejected=rejected,
        per_threshold=per_threshold,
        baseline_errors=baseline_errors,
        solves=diag.solves,
        monotone_violations=diag.monotone_violations,
        failure=failure,
    )


_WORKER_CTX: Optional[_TrialContext] = None


def _worker_init(ctx: _TrialContext) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _worker_run(task: tuple[int, int]) -> TrialRecord:
    assert _WORKER_CTX is not None
    return run_trial(_WORKER_CTX, task[0], task[1])


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def metric_association_rate(outcomes: list[dict[int, bool]]) -> dict[int, float]:
    """Per-path fraction of trials with a correct surface association."""
    if not outcomes:
        return {}
    keys = outcomes[0].keys()
    return {k: sum(o[k] for o in outcomes) / len(outcomes) for k in keys}


def metric_fa_md(
    classifications: list[tuple[Sequence[int], Sequence[int]]],
    mb_indices: Sequence[int],
    true_inlier_indices: Sequence[int],
) -> tuple[float, float]:
    """(false-alarm, missed-detection) rates over trials.

    Each classification is (inlier_indices, rejected_indices). A multi-bounce
    path counts as a false alarm when classified inlier; a true inlier counts
    as missed when it is not in the inlier set (association rejections
    included).
    """
    mb = set(mb_indices)
    true_in = set(true_inlier_indices)
    fa_num = md_num = 0
    for inliers, _rejected in classifications:
        ins = set(inliers)
        fa_num += len(ins & mb)
        md_num += len(true_in - ins)
    n = len(classifications)
    if n == 0:
        return 0.0, 0.0
    return fa_num / (n * len(mb)), md_num / (n * len(true_in))


def metric_rmse(errors: Sequence[float]) -> float:
    """Root mean square of per-run position errors."""
    e = np.asarray(errors, dtype=float)
    return float(np.sqrt(np.mean(e * e)))


def _rate_stderr(rate: float, n: int) -> float:
    return math.sqrt(max(rate * (1.0 - rate), 0.0) / n) if n > 0 else 0.0


def _rmse_stderr(errors: Sequence[float]) -> float:
    e = np.asarray(errors, dtype=float)
    if e.size < 2:
        return 0.0
    rmse = metric_rmse(e)
    if rmse == 0.0:
        return 0.0
    se_mean_sq = float(np.std(e * e, ddof=1)) / math.sqrt(e.size)
    return se_mean_sq / (2.0 * rmse)


# ---------------------------------------------------------------------------
# Sweep driver
# ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    config: ExperimentConfig
    scene: Scene
    paths: list
    sb_surface: dict[int, int]
    mb_indices: tuple[int, ...]
    true_inliers: tuple[int, ...]
    records: list[TrialRecord]

    # aggregates keyed by power (and threshold where applicable)
    association_rate: dict[float, dict[int, float]] = field(default_factory=dict)
    fa: dict[tuple[float, float], tuple[float, float]] = field(default_factory=dict)
    md: dict[tuple[float, float], tuple[float, float]] = field(default_factory=dict)
    rmse: dict[tuple[float, float], tuple[float, float]] = field(default_factory=dict)
    baseline_rmse: dict[tuple[float, str], tuple[float, float]] = field(default_factory=dict)
    partition_violations: int = 0
    solves: int = 0
    monotone_violations: int = 0
    failures: int = 0


def build_context(config: ExperimentConfig) -> _TrialContext:
    scene = load_scene(config.scene_path) if config.scene_path else default_scene()
    u = np.asarray(config.ue_position, dtype=float)
    if not scene.bounds.contains(u):
        raise BenchConfigError("ue_position lies outside the scene bounds")
    paths = generate_paths(u, scene, config.max_bounces)
    if config.expected_census is not None:
        got = census(paths)
        if got != tuple(config.expected_census):
            raise BenchConfigError(
                f"scene census {got} (LOS, single, multi) does not match the expected "
                f"{tuple(config.expected_census)}; paths: "
                + ", ".join(f"{p.index}:{p.kind}{p.surface_sequence}" for p in paths)
            )
    true_origin = {}
    sb_surface = {}
    mb = []
    for p in paths:
        if p.kind == LOS:
            true_origin[p.index] = 0
        elif p.kind == SINGLE_BOUNCE:
            true_origin[p.index] = p.surface_sequence[0]
            sb_surface[p.index] = p.surface_sequence[0]
        elif p.kind == MULTI_BOUNCE:
            mb.append(p.index)
    return _TrialContext(
        scene=scene, paths=paths, true_origin=true_origin,
        sb_surface=sb_surface, mb_indices=tuple(mb), config=config,
    )


def run_sweep(config: ExperimentConfig, progress=None) -> SweepResult:
    """Execute the full Monte Carlo sweep and aggregate every metric.

    The per-trial work is deterministic in (master_seed, power index, run
    index), so scheduling across workers cannot change any number in the
    result.
    """
    ctx = build_context(config)
    tasks = [
        (pi, ri)
        for pi in range(len(config.tx_power_sweep))
        for ri in range(config.runs)
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(
            max_workers=config.workers, initializer=_worker_init, initargs=(ctx,)
        ) as pool:
            records = list(pool.map(_worker_run, tasks, chunksize=16))
    else:
        records = [run_trial(ctx, pi, ri) for pi, ri in tasks]
    if progress is not None:
        progress(len(records))

    result = SweepResult(
        config=config,
        scene=ctx.scene,
        paths=ctx.paths,
        sb_surface=ctx.sb_surface,
        mb_indices=ctx.mb_indices,
        true_inliers=tuple(sorted(ctx.true_origin)),
        records=records,
    )
    n_paths = len(ctx.paths)
    for pi, power in enumerate(config.tx_power_sweep):
        group = records[pi * config.runs : (pi + 1) * config.runs]
        result.association_rate[power] = metric_association_rate([r.sb_correct for r in group])
        for threshold in config.thresholds:
            outs = [r.per_threshold.get(threshold) for r in group]
            outs = [o for o in outs if o is not None]
            if not outs:
                continue
            classifications = [
                (o.inliers, r.rejected) for o, r in zip(outs, group)
            ]
            fa, md = metric_fa_md(classifications, ctx.mb_indices, result.true_inliers)
            n = len(outs)
            result.fa[(power, threshold)] = (fa, _rate_stderr(fa, n * len(ctx.mb_indices)))
            result.md[(power, threshold)] = (md, _rate_stderr(md, n * len(result.true_inliers)))
            errors = [o.position_error for o in outs]
            result.rmse[(power, threshold)] = (metric_rmse(errors), _rmse_stderr(errors))
            for o, r in zip(outs, group):
                assigned_count = n_paths - len(r.rejected)
                if len(o.inliers) + (assigned_count - len(o.inliers)) + len(r.rejected) != n_paths:
                    result.partition_violations += 1
        for name in ("all_paths", "perfect_inlier"):
            if name in config.baselines:
                errors = [r.baseline_errors[name] for r in group]
                result.baseline_rmse[(power, name)] = (metric_rmse(errors), _rmse_stderr(errors))
    result.solves = sum(r.solves for r in records)
    result.monotone_violations = sum(r.monotone_violations for r in records)
    result.failures = sum(1 for r in records if r.failure is not None)
    return result


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.10g}"


def write_csvs(result: SweepResult, out_dir) -> list[Path]:
    """Write the four figure-analogue CSVs; returns the paths written.

    Columns: tx_power_dbm, T, metric, stderr, series. The series column
    distinguishes per-path association curves and the RMSE baselines; T is
    empty where a row does not depend on the inlier threshold.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    header = "tx_power_dbm,T,metric,stderr,series\n"
    written = []

    p = out / "fig2_association.csv"
    with open(p, "w") as f:
        f.write(header)
        for power in cfg.tx_power_sweep:
            rates = result.association_rate[power]
            for idx in sorted(rates):
                se = _rate_stderr(rates[idx], cfg.runs)
                f.write(f"{_fmt(power)},,{_fmt(rates[idx])},{_fmt(se)},sb_path_{idx}\n")
    written.append(p)

    for name, table in (("fig3_fa.csv", result.fa), ("fig4_md.csv", result.md)):
        p = out / name
        with open(p, "w") as f:
            f.write(header)
            for power in cfg.tx_power_sweep:
                for t in cfg.thresholds:
                    if (power, t) in table:
                        v, se = table[(power, t)]
                        f.write(f"{_fmt(power)},{_fmt(t)},{_fmt(v)},{_fmt(se)},ransac\n")
        written.append(p)

    p = out / "fig5_rmse.csv"
    with open(p, "w") as f:
        f.write(header)
        for power in cfg.tx_power_sweep:
            for t in cfg.thresholds:
                if (power, t) in result.rmse:
                    v, se = result.rmse[(power, t)]
                    f.write(f"{_fmt(power)},{_fmt(t)},{_fmt(v)},{_fmt(se)},ransac\n")
            for name in ("all_paths", "perfect_inlier"):
                if (power, name) in result.baseline_rmse:
                    v, se = result.baseline_rmse[(power, name)]
                    f.write(f"{_fmt(power)},,{_fmt(v)},{_fmt(se)},{name}\n")
    written.append(p)
    return written


def write_trials_jsonl(result: SweepResult, path) -> None:
    """Per-trial estimation records (association rows, inlier labels, errors)."""
    with open(path, "w") as f:
        for r in result.records:
            doc = {
                "power": r.power,
                "run": r.run,
                "association": [list(row) for row in r.association],
                "rejected": list(r.rejected),
                "per_threshold": {
                    _fmt(t): {
                        "inliers": list(o.inliers),
                        "winner_state": list(o.winner_state),
                        "refined_state": list(o.refined_state),
                        # infeasible predictions cost +inf; JSON gets null there
                        "path_costs": {
                            str(i): (c if math.isfinite(c) else None)
                            for i, c in o.path_costs.items()
                        },
                        "position_error": o.position_error,
                        "bias_error": o.bias_error,
                        "converged": o.converged,
                    }
                    for t, o in r.per_threshold.items()
                },
                "baseline_errors": r.baseline_errors,
                "failure": r.failure,
            }
            f.write(json.dumps(doc) + "\n")


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="canyonloc-bench",
        description="Monte Carlo benchmark for map-aided single-BS localization.",
    )
    parser.add_argument("--config", type=str, default=None, help="experiment config JSON")
    parser.add_argument("--out", type=str, default="bench_out", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument("--powers", type=str, default=None, help="tx power sweep, dBm (comma/space separated)")
    parser.add_argument("--thresholds", type=str, default=None, help="inlier threshold sweep")
    parser.add_argument("--runs", type=int, default=None, help="Monte Carlo runs per point")
    parser.add_argument("--baselines", type=str, default=None,
                        help=f"subset of {','.join(ALL_BASELINES)}")
    parser.add_argument("--workers", type=int, default=None, help="parallel worker processes")
    parser.add_argument("--zero-noise", action="store_true", help="debug: disable noise draws")
    parser.add_argument("--dump-paths", action="store_true",
                        help="write the traced ground-truth paths to <out>/paths.jsonl and exit")
    parser.add_argument("--dump-trials", action="store_true",
                        help="also write per-trial records to <out>/trials.jsonl")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config) if args.config else ExperimentConfig()
        overrides = {}
        if args.seed is not None:
            overrides["master_seed"] = args.seed
        if args.powers is not None:
            overrides["tx_power_sweep"] = _parse_float_list(args.powers)
        if args.thresholds is not None:
            overrides["thresholds"] = _parse_float_list(args.thresholds)
        if args.runs is not None:
            overrides["runs"] = args.runs
        if args.baselines is not None:
            overrides["baselines"] = tuple(args.baselines.replace(",", " ").split())
        if args.workers is not None:
            overrides["workers"] = args.workers
        if args.zero_noise:
            overrides["zero_noise"] = True
        if overrides:
            config = replace(config, **overrides)

        out = Path(args.out)
        if args.dump_paths:
            ctx = build_context(config)
            out.mkdir(parents=True, exist_ok=True)
            with open(out / "paths.jsonl", "w") as f:
                dump_paths_jsonl(ctx.paths, f)
            print(f"wrote {out / 'paths.jsonl'} ({len(ctx.paths)} paths, census {census(ctx.paths)})")
            return 0

        result = run_sweep(config)
        written = write_csvs(result, out)
        if args.dump_trials:
            write_trials_jsonl(result, out / "trials.jsonl")
            written.append(out / "trials.jsonl")
        print(f"trials: {len(result.records)}  failures: {result.failures}  "
              f"solves: {result.solves}  monotone violations: {result.monotone_violations}")
        for p in written:
            print(f"wrote {p}")
        return 0
    except (BenchConfigError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
