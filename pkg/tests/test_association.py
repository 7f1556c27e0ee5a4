import math

import numpy as np
import pytest

from canyonloc import (
    LOS_ORIGIN,
    REJECTED_LOW_SCORE,
    AssociationConfig,
    RadioConfig,
    associate_all,
    pick_los,
    sample_directions,
    score_surfaces,
    synthesize,
    with_tx_power,
)
from canyonloc.association import fold_zenith
from canyonloc.measurement import PathMeasurement

from conftest import make_ground, make_scene, make_wall_x


def meas(index, delay, azimuth=0.0, zenith=2.0, var_a=1e-6, var_z=1e-6):
    return PathMeasurement(
        index=index, delay=delay, azimuth=azimuth, zenith=zenith,
        var_delay=1e-18, var_azimuth=var_a, var_zenith=var_z,
    )


class TestPickLos:
    def test_min_delay_wins(self):
        ms = [meas(1, 86.7e-9), meas(2, 109.4e-9), meas(3, 120.1e-9)]
        assert pick_los(ms) == 0

    def test_tie_breaks_to_lowest_index(self):
        ms = [meas(1, 2e-7), meas(2, 1e-7), meas(3, 1e-7)]
        assert pick_los(ms) == 1

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            pick_los([])

    def test_noiseless_scenario_picks_true_los(self, canyon_paths):
        labeled = synthesize(canyon_paths, RadioConfig(), 1e-7, rng_seed=0, zero_noise=True)
        ms = [l.measurement for l in labeled]
        assert labeled[pick_los(ms)].truth.kind == "los"


class TestSampleDirections:
    def test_zero_sigma_gives_copies(self):
        d = sample_directions(0.5, 1.2, 0.0, 0.0, 64, seed=1)
        assert d.shape == (64, 3)
        assert np.allclose(d, d[0], atol=0.0)

    def test_unit_norm(self):
        d = sample_directions(-2.0, 0.7, 0.3, 0.2, 1000, seed=2)
        assert np.allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)

    def test_sample_mean_recovers_azimuth(self):
        k = 4000
        sigma = 0.05
        d = sample_directions(1.0, 1.3, sigma, sigma, k, seed=3)
        az = np.arctan2(d[:, 1], d[:, 0])
        mean = math.atan2(np.mean(np.sin(az)), np.mean(np.cos(az)))
        assert abs(mean - 1.0) < 4.0 * sigma / math.sqrt(k)

    def test_determinism(self):
        a = sample_directions(0.1, 1.0, 0.2, 0.2, 128, seed=9)
        b = sample_directions(0.1, 1.0, 0.2, 0.2, 128, seed=9)
        assert np.array_equal(a, b)

    def test_zenith_folded_into_range(self):
        z = fold_zenith(np.array([-0.3, 0.2, math.pi + 0.4, 2 * math.pi - 0.1, -math.pi - 0.2]))
        assert np.all(z >= 0.0)
        assert np.all(z <= math.pi)
        assert z[0] == pytest.approx(0.3)
        assert z[2] == pytest.approx(math.pi - 0.4)


class TestScoreSurfaces:
    def test_all_rays_one_surface(self):
        scene = make_scene([make_ground(1), make_wall_x(2, -20.0, +1)])
        d = np.tile(np.array([0.0, 0.0, -1.0]), (50, 1))
        assert score_surfaces(d, scene) == {1: 1.0}

    def test_counting_with_misses(self):
        scene = make_scene([make_ground(1), make_wall_x(2, -20.0, +1, y0=-5, y1=5, z0=0, z1=20)])
        directions = np.array(
            [
                [0.0, 0.0, -1.0],    # ground
                [0.2, 0.2, -1.0],    # ground
                [-1.0, 0.0, -0.1],   # wall
                [0.0, 0.0, 1.0],     # sky: miss
            ]
        )
        scores = score_surfaces(directions, scene)
        assert scores == {1: 0.5, 2: 0.25}

    def test_straddling_cone_splits_mass(self):
        # aim between the ground edge region and the wall so both collect hits
        scene = make_scene([make_ground(1, half=20.0), make_wall_x(2, -20.0, +1, y0=-30, y1=30, z0=0, z1=30)])
        d = sample_directions(math.pi, 2.35, 0.25, 0.25, 4000, seed=5)
        scores = score_surfaces(d, scene)
        assert set(scores) == {1, 2}
        assert scores[1] > 0.05 and scores[2] > 0.05
        assert sum(scores.values()) <= 1.0 + 1e-12

    def test_normalization_with_misses(self):
        scene = make_scene([make_ground(1, half=5.0)])
        d = sample_directions(0.0, 2.5, 0.8, 0.8, 2000, seed=6)
        scores = score_surfaces(d, scene)
        total = sum(scores.values())
        assert 0.0 < total < 1.0  # some rays must miss the small patch


class TestAssociateAll:
    def test_noiseless_canyon_all_correct(self, canyon_scene, canyon_paths):
        labeled = synthesize(canyon_paths, RadioConfig(), 1e-7, rng_seed=0, zero_noise=True)
        ms = [l.measurement for l in labeled]
        hyps = associate_all(ms, canyon_scene, AssociationConfig(rng_seed=11))
        for h, l in zip(hyps, labeled):
            assert h.assigned
            if l.truth.kind == "los":
                assert h.origin == LOS_ORIGIN
                assert h.score == 1.0
            else:
                assert h.origin == l.truth.final_surface
                assert h.score == 1.0

    def test_low_score_rejected(self):
        # a small floating patch: most of a wide cone misses it
        patch = make_ground(1, half=2.0)
        scene = make_scene([patch])
        ms = [meas(1, 1e-7), meas(2, 2e-7, azimuth=0.0, zenith=math.pi - 0.2, var_a=0.25, var_z=0.25)]
        hyps = associate_all(ms, scene, AssociationConfig(rng_seed=3, score_threshold=0.7))
        assert hyps[0].origin == LOS_ORIGIN
        assert hyps[1].status == REJECTED_LOW_SCORE
        assert hyps[1].score <= 0.7

    def test_threshold_is_strict(self, canyon_scene, canyon_paths):
        # at score exactly 1.0 > gamma=1.0 is false: the hypothesis is rejected
        labeled = synthesize(canyon_paths, RadioConfig(), 1e-7, rng_seed=0, zero_noise=True)
        ms = [l.measurement for l in labeled]
        hyps = associate_all(ms, canyon_scene, AssociationConfig(rng_seed=11, score_threshold=1.0))
        nlos = [h for h in hyps if h.origin != LOS_ORIGIN or not h.assigned]
        assert all(h.status == REJECTED_LOW_SCORE for h in nlos)

    def test_determinism(self, canyon_scene, canyon_paths):
        labeled = synthesize(canyon_paths, with_tx_power(RadioConfig(), -20.0), 1e-7, rng_seed=7)
        ms = [l.measurement for l in labeled]
        cfg = AssociationConfig(rng_seed=21)
        assert associate_all(ms, canyon_scene, cfg) == associate_all(ms, canyon_scene, cfg)

    def test_multi_bounce_usually_assigned_to_final_surface(self, canyon_scene, canyon_paths):
        radio = with_tx_power(RadioConfig(), 0.0)
        assigned = 0
        total = 0
        for seed in range(40):
            labeled = synthesize(canyon_paths, radio, 1e-7, rng_seed=seed)
            ms = [l.measurement for l in labeled]
            hyps = associate_all(ms, canyon_scene, AssociationConfig(rng_seed=seed))
            for h, l in zip(hyps, labeled):
                if l.truth.kind == "multi_bounce":
                    total += 1
                    if h.assigned and h.origin == l.truth.final_surface:
                        assigned += 1
        assert assigned / total >= 0.9

    def test_monotone_confidence_in_noise(self, canyon_scene, canyon_paths):
        # shrinking the angle noise must (statistically) not lower the score
        # of the surface the noiseless nominal ray hits
        radio = with_tx_power(RadioConfig(), -10.0)
        labeled = synthesize(canyon_paths, radio, 1e-7, rng_seed=0, zero_noise=True)
        wins = 0
        trials = 40
        target = labeled[2]  # a single-bounce measurement
        m = target.measurement
        for seed in range(trials):
            loose = sample_directions(m.azimuth, m.zenith, 0.2, 0.2, 500, seed=seed)
            tight = sample_directions(m.azimuth, m.zenith, 0.02, 0.02, 500, seed=seed)
            s_loose = score_surfaces(loose, canyon_scene).get(target.truth.final_surface, 0.0)
            s_tight = score_surfaces(tight, canyon_scene).get(target.truth.final_surface, 0.0)
            wins += s_tight >= s_loose
        assert wins >= 0.95 * trials

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AssociationConfig(sample_count=0)
        with pytest.raises(ValueError):
            AssociationConfig(score_threshold=0.0)
        with pytest.raises(ValueError):
            AssociationConfig(score_threshold=1.5)
