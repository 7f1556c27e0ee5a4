import io
import math
from pathlib import Path

import numpy as np
import pytest

from canyonloc import (
    LOS,
    SINGLE_BOUNCE,
    SPEED_OF_LIGHT,
    Bounds,
    census,
    dump_paths_jsonl,
    generate_paths,
    load_paths_jsonl,
    mirror_point,
    segment_occluded,
    trace_los,
    trace_reflections,
)
from canyonloc.geometry import direction_from_angles

from conftest import make_ground, make_scene, make_wall_x

BS = np.array([0.0, 0.0, 15.0])
UE = np.array([-15.0, -15.0, 0.0])


class TestTraceLos:
    def test_unobstructed_hand_values(self):
        scene = make_scene([make_ground()])
        path = trace_los(UE, scene)
        assert path is not None
        length = 15.0 * math.sqrt(3.0)
        assert path.length == pytest.approx(length, abs=1e-9)
        assert path.delay == pytest.approx(length / SPEED_OF_LIGHT, rel=1e-15)
        assert path.azimuth == pytest.approx(-3.0 * math.pi / 4.0, abs=1e-12)
        assert path.zenith == pytest.approx(math.acos(-15.0 / length), abs=1e-12)
        assert path.kind == LOS
        assert path.surface_sequence == ()

    def test_ue_below_bs_vertical_convention(self):
        scene = make_scene([make_ground()])
        path = trace_los(np.array([0.0, 0.0, 0.0]), scene)
        assert path is not None
        assert path.azimuth == 0.0
        assert path.zenith == pytest.approx(math.pi)

    def test_blocking_wall_gives_none(self):
        wall = make_wall_x(1, -7.0, +1, y0=-30, y1=30, z0=0, z1=30)
        scene = make_scene([wall])
        assert trace_los(UE, scene) is None

    def test_coincident_endpoints_rejected(self):
        scene = make_scene([make_ground()])
        with pytest.raises(ValueError):
            trace_los(BS, scene)


class TestTraceReflections:
    def test_single_wall_image_length(self):
        scene = make_scene([make_wall_x(1, -20.0, +1)])
        paths = trace_reflections(UE, scene, max_bounces=2)
        assert len(paths) == 1
        p = paths[0]
        assert p.kind == SINGLE_BOUNCE
        assert p.surface_sequence == (1,)
        assert np.allclose(p.reflection_points[0], [-20.0, -12.0, 3.0], atol=1e-9)
        assert p.length == pytest.approx(math.sqrt(1075.0), abs=1e-9)

    def test_empty_scene(self):
        scene = make_scene([])
        assert trace_reflections(UE, scene, max_bounces=3) == []

    def test_max_bounces_validated(self):
        scene = make_scene([make_ground()])
        with pytest.raises(ValueError):
            trace_reflections(UE, scene, max_bounces=0)

    def test_aoa_matches_final_segment(self, canyon_scene, canyon_paths):
        for p in canyon_paths:
            target = np.array(p.reflection_points[-1]) if p.reflection_points else UE
            expect = (target - BS) / np.linalg.norm(target - BS)
            got = direction_from_angles(p.azimuth, p.zenith)
            assert np.allclose(got, expect, atol=1e-12)

    def test_specular_law_at_every_bounce(self, canyon_scene, canyon_paths):
        for p in canyon_paths:
            chain = [UE] + [np.array(r) for r in p.reflection_points] + [BS]
            for j, sid in enumerate(p.surface_sequence):
                n = canyon_scene.surface(sid).normal
                r = chain[j + 1]
                d_in = (r - chain[j]) / np.linalg.norm(r - chain[j])
                d_out = (chain[j + 2] - r) / np.linalg.norm(chain[j + 2] - r)
                reflected = d_in - 2.0 * float(d_in @ n) * n
                assert np.allclose(d_out, reflected, atol=1e-7)

    def test_segments_unoccluded(self, canyon_scene, canyon_paths):
        for p in canyon_paths:
            chain = [UE] + [np.array(r) for r in p.reflection_points] + [BS]
            touching = [set() for _ in chain]
            for j, sid in enumerate(p.surface_sequence):
                touching[j + 1].add(sid)
            for i in range(len(chain) - 1):
                assert not segment_occluded(
                    chain[i], chain[i + 1], canyon_scene,
                    ignore=touching[i] | touching[i + 1],
                )

    def test_length_is_sum_of_segments(self, canyon_paths):
        for p in canyon_paths:
            chain = [UE] + [np.array(r) for r in p.reflection_points] + [BS]
            total = sum(np.linalg.norm(b - a) for a, b in zip(chain[:-1], chain[1:]))
            assert p.length == pytest.approx(total, abs=1e-9)
            assert p.delay == pytest.approx(p.length / SPEED_OF_LIGHT, rel=1e-15)

    def test_monotone_in_max_bounces(self, canyon_scene):
        seen = set()
        for k in (1, 2, 3):
            paths = trace_reflections(UE, canyon_scene, max_bounces=k)
            keys = {p.surface_sequence for p in paths}
            assert seen <= keys
            seen = keys

    def test_reciprocity_of_lengths(self, canyon_scene):
        forward = generate_paths(UE, canyon_scene, max_bounces=2)
        swapped = make_scene(
            canyon_scene.surfaces, bs=UE,
            bounds=Bounds(x_min=-20, x_max=4.5, y_min=-30, y_max=6, z_max=25),
        )
        backward = generate_paths(BS, swapped, max_bounces=2)
        a = sorted(round(p.length, 9) for p in forward)
        b = sorted(round(p.length, 9) for p in backward)
        assert a == b


class TestGeneratePaths:
    def test_canyon_census(self, canyon_paths):
        assert census(canyon_paths) == (1, 3, 3)
        assert [p.index for p in canyon_paths] == list(range(1, 8))

    def test_los_strictly_first(self, canyon_paths):
        assert canyon_paths[0].kind == LOS
        assert all(canyon_paths[0].delay < p.delay for p in canyon_paths[1:])

    def test_sorted_by_delay(self, canyon_paths):
        delays = [p.delay for p in canyon_paths]
        assert delays == sorted(delays)

    def test_blocked_los_leaves_reflections_only(self):
        wall = make_wall_x(1, -7.0, +1, y0=-30, y1=30, z0=0, z1=30)
        far_wall = make_wall_x(2, -40.0, +1, y0=-60, y1=60, z0=0, z1=60)
        scene = make_scene([wall, far_wall])
        paths = generate_paths(UE, scene, max_bounces=1)
        assert all(p.kind != LOS for p in paths)
        assert len(paths) == len(trace_reflections(UE, scene, max_bounces=1))

    def test_mirror_image_length_identity(self, canyon_scene, canyon_paths):
        for p in canyon_paths:
            if p.kind == LOS:
                continue
            image = UE.copy()
            for sid in p.surface_sequence:
                image = mirror_point(image, canyon_scene.surface(sid))
            assert p.length == pytest.approx(float(np.linalg.norm(image - BS)), abs=1e-9)


class TestGoldenDump:
    FIXTURE = Path(__file__).parent / "data" / "golden_paths.jsonl"

    def test_dump_matches_frozen_fixture(self, canyon_paths):
        buf = io.StringIO()
        dump_paths_jsonl(canyon_paths, buf)
        buf.seek(0)
        regenerated = load_paths_jsonl(buf)
        with open(self.FIXTURE) as f:
            frozen = load_paths_jsonl(f)
        assert len(regenerated) == len(frozen) == 7
        for a, b in zip(regenerated, frozen):
            assert a.index == b.index
            assert a.kind == b.kind
            assert a.surface_sequence == b.surface_sequence
            assert a.length == pytest.approx(b.length, abs=1e-9)
            assert a.delay == pytest.approx(b.delay, rel=1e-12)
            assert a.azimuth == pytest.approx(b.azimuth, abs=1e-9)
            assert a.zenith == pytest.approx(b.zenith, abs=1e-9)
            for pa, pb in zip(a.reflection_points, b.reflection_points):
                assert np.allclose(pa, pb, atol=1e-9)
