import math
import os

import pytest

from microcity.errors import ScenarioError, UnknownVehicle
from microcity.sim_core import (
    Footprint,
    World,
    detect_collision_pairs,
    parse_scenario,
    run_headless,
    standard_grid_scenario,
    step_world,
    verify_replay,
)
from microcity.vehicle_plant import ActuatorCommand
from tests.conftest import make_straight_map


class TestCollisionPairs:
    def test_disjoint_far_apart(self):
        a = Footprint("a", 0, 0, 0, 0.23, 0.12)
        b = Footprint("b", 1.0, 0, 0, 0.23, 0.12)
        assert detect_collision_pairs([a, b]) == []

    def test_identical_rectangles_overlap(self):
        a = Footprint("a", 0, 0, 0.3, 0.23, 0.12)
        b = Footprint("b", 0, 0, 0.3, 0.23, 0.12)
        assert detect_collision_pairs([a, b]) == [("a", "b")]

    def test_aligned_centers_020_apart_collide(self):
        # 0.23 m bodies, same heading: 0.23 > 0.20 overlap along the axis
        a = Footprint("a", 0, 0, 0, 0.23, 0.12)
        b = Footprint("b", 0.20, 0, 0, 0.23, 0.12)
        assert detect_collision_pairs([a, b]) == [("a", "b")]

    def test_corner_touching_at_45_degrees_not_collision(self):
        # square B rotated 45 degrees, its left-pointing corner exactly on A's
        # right edge corner: touching with a zero projection gap, no overlap
        a = Footprint("a", 0, 0, 0, 1.0, 1.0)
        half_diag = math.sqrt(2) / 2
        b = Footprint("b", 0.5 + half_diag, 0.5, math.pi / 4, 1.0, 1.0)
        assert detect_collision_pairs([a, b]) == []
        # pushed in by 1 mm they do collide
        c = Footprint("b", 0.5 + half_diag - 0.001, 0.5, math.pi / 4, 1.0, 1.0)
        assert detect_collision_pairs([a, c]) == [("a", "b")]

    def test_pairs_sorted_ascending(self):
        fps = [Footprint(v, 0, 0, 0, 1, 1) for v in ("c", "a", "b")]
        pairs = detect_collision_pairs(fps)
        assert pairs == [("a", "b"), ("a", "c"), ("b", "c")]

    def test_overlap_symmetric_and_distance_bounded(self):
        from hypothesis import given, settings
        from hypothesis import strategies as st

        coord = st.floats(-2, 2, allow_nan=False)
        angle = st.floats(-math.pi, math.pi, allow_nan=False)

        @given(coord, coord, angle, coord, coord, angle)
        @settings(max_examples=150, deadline=None)
        def check(xa, ya, ta, xb, yb, tb):
            a = Footprint("a", xa, ya, ta, 0.23, 0.12)
            b = Footprint("b", xb, yb, tb, 0.23, 0.12)
            hit_ab = detect_collision_pairs([a, b]) != []
            hit_ba = detect_collision_pairs([b, a]) != []
            assert hit_ab == hit_ba
            # separated centers beyond the diagonal sum can never collide
            if math.hypot(xb - xa, yb - ya) > math.hypot(0.23, 0.12):
                assert not hit_ab
            # coincident centers always collide
            if math.hypot(xb - xa, yb - ya) < 1e-3:
                assert hit_ab

        check()


def two_vehicle_scenario(gap=5.0, v=(0.0, 0.0), duration=2.0, controllers=None):
    spec = make_straight_map(60.0, 0.3, 1.0)
    controllers = controllers or [{"kind": "external"}, {"kind": "external"}]
    return parse_scenario({
        "name": "pair", "map": {"embedded": spec.to_obj()}, "duration_s": duration,
        "seed": 1,
        "vehicles": [
            {"vehicle_id": "a", "start": {"lane_id": "main:F0", "s": 10.0 + gap,
                                          "v": v[0]}, "controller": controllers[0]},
            {"vehicle_id": "b", "start": {"lane_id": "main:F0", "s": 10.0, "v": v[1]},
             "controller": controllers[1]},
        ],
    })


class TestStepWorld:
    def test_no_interaction_no_events(self):
        scen = two_vehicle_scenario(gap=5.0, v=(0.5, 0.5))
        world = World(scen)
        all_events = []
        for _ in range(100):
            world, events = step_world(world, None)
            all_events += events
        assert all_events == []
        # failsafe braking holds: both coast down, positions advance
        a = world.vehicles["a"].state
        assert a.x > world.vehicles["a"].spec.start_s

    def test_unknown_vehicle_command_rejected(self):
        world = World(two_vehicle_scenario())
        with pytest.raises(UnknownVehicle):
            world.step({"ghost": ActuatorCommand(0, 0, 0)})

    def test_collision_emits_once_and_freezes(self):
        # b accelerates into a stationary a; expect exactly one collision event
        scen = two_vehicle_scenario(gap=1.0, v=(0.0, 0.8), duration=8.0)
        world = World(scen)
        collisions = []
        for _ in range(800):
            world.step({"b": ActuatorCommand(0, 1.0, 0)})
        collisions = [e for e in world.events if e.kind == "collision"]
        assert len(collisions) == 1
        assert collisions[0].vehicle_ids == ("a", "b")
        assert world.vehicles["a"].frozen and world.vehicles["b"].frozen
        assert world.vehicles["b"].state.v == 0.0

    def test_starts_in_collision_rejected(self):
        with pytest.raises(ScenarioError):
            World(two_vehicle_scenario(gap=0.1))

    def test_off_road_event_once(self):
        spec = make_straight_map(30.0, 0.3, 1.0)
        scen = parse_scenario({
            "name": "off", "map": {"embedded": spec.to_obj()}, "duration_s": 10.0,
            "seed": 1,
            "vehicles": [{"vehicle_id": "a",
                          "start": {"lane_id": "main:F0", "s": 10.0, "v": 0.8},
                          "controller": {"kind": "external"}}],
        })
        world = World(scen)
        for _ in range(300):
            world.step({"a": ActuatorCommand(0.4, 0.6, 0)})
        # one continuous off-map excursion emits exactly one event
        offs = [e for e in world.events if e.kind == "off_road"]
        assert len(offs) == 1


class TestRedLightEntry:
    def make_world(self, schedule, v0=0.5):
        obj = {
            "name": "light", "scale_denominator": 10,
            "nodes": [{"id": "a", "x": 0.0, "y": 0.0},
                      {"id": "m", "x": 6.0, "y": 0.0},
                      {"id": "b", "x": 12.0, "y": 0.0}],
            "segments": [
                {"id": "s1", "from_node": "a", "to_node": "m",
                 "geometry": {"kind": "straight"}, "lanes_per_direction": 1,
                 "lane_width": 0.3, "speed_limit": 1.0},
                {"id": "s2", "from_node": "m", "to_node": "b",
                 "geometry": {"kind": "straight"}, "lanes_per_direction": 1,
                 "lane_width": 0.3, "speed_limit": 1.0},
            ],
            "schedules": {"sch": schedule},
            "signals": [{"id": "sig", "node_id": "m", "approach_segment_id": "s1",
                         "schedule_id": "sch"}],
            "signs": [],
        }
        scen = parse_scenario({
            "name": "redrun", "map": {"embedded": obj}, "duration_s": 30.0, "seed": 1,
            "vehicles": [{"vehicle_id": "a",
                          "start": {"lane_id": "s1:F0", "s": 3.0, "v": v0},
                          "controller": {"kind": "external"}}],
        })
        return World(scen)

    def test_crossing_on_red_emits_exactly_once(self):
        world = self.make_world({"green_s": 0.0, "amber_s": 0.0, "red_s": 100.0,
                                 "offset_s": 0.0})
        for _ in range(1500):
            world.step({"a": ActuatorCommand(0, 0.25, 0)})
        entries = [e for e in world.events if e.kind == "red_light_entry"]
        assert len(entries) == 1
        assert entries[0].details["light_id"] == "sig"

    def test_crossing_on_green_no_event(self):
        world = self.make_world({"green_s": 100.0, "amber_s": 1.0, "red_s": 1.0,
                                 "offset_s": 0.0})
        for _ in range(1500):
            world.step({"a": ActuatorCommand(0, 0.25, 0)})
        assert [e for e in world.events if e.kind == "red_light_entry"] == []


class TestRunHeadless:
    def test_tick_counting_1000_rows(self):
        spec = make_straight_map(30.0, 0.3, 1.0)
        scen = parse_scenario({
            "name": "count", "map": {"embedded": spec.to_obj()}, "duration_s": 10.0,
            "seed": 5,
            "vehicles": [{"vehicle_id": "solo",
                          "start": {"lane_id": "main:F0", "s": 5.0, "v": 0.3},
                          "controller": {"kind": "external"}}],
        })
        log = run_headless(scen)
        assert len(log.records) == 1000
        assert log.records[0].tick == 1
        assert log.records[-1].tick == 1000
        assert log.records[-1].sim_t == pytest.approx(10.0)

    def test_same_seed_identical_logs(self, tmp_path):
        from microcity.telemetry_analytics import write_log

        log1 = run_headless(standard_grid_scenario("aggressive", seed=9, duration_s=5.0))
        log2 = run_headless(standard_grid_scenario("aggressive", seed=9, duration_s=5.0))
        p1, p2 = str(tmp_path / "a"), str(tmp_path / "b")
        write_log(log1, p1)
        write_log(log2, p2)
        for suffix in (".header", ".telemetry.csv", ".events"):
            with open(p1 + suffix, "rb") as fa, open(p2 + suffix, "rb") as fb:
                assert fa.read() == fb.read()

    def test_vehicle_declaration_order_irrelevant(self):
        spec = make_straight_map(60.0, 0.3, 1.0).to_obj()
        vehicles = [
            {"vehicle_id": "x", "start": {"lane_id": "main:F0", "s": 20.0, "v": 0.4},
             "controller": {"kind": "cruise", "target_speed": 0.4}},
            {"vehicle_id": "y", "start": {"lane_id": "main:F0", "s": 10.0, "v": 0.4},
             "controller": {"kind": "agent", "profile": "defensive"}},
        ]
        base = {"name": "perm", "map": {"embedded": spec}, "duration_s": 5.0, "seed": 3,
                "subject_vehicle_id": "y"}
        log_a = run_headless(parse_scenario({**base, "vehicles": vehicles}))
        log_b = run_headless(parse_scenario({**base, "vehicles": vehicles[::-1]}))
        assert log_a.header == log_b.header
        assert log_a.records == log_b.records
        assert log_a.events == log_b.events

    def test_disjoint_paths_aggressive_faster(self):
        # one aggressive, one defensive in one world on disjoint directions
        spec = make_straight_map(60.0, 0.3, 0.6)
        scen = parse_scenario({
            "name": "duo", "map": {"embedded": spec.to_obj()},
            "duration_s": 40.0, "seed": 2,
            "vehicles": [
                {"vehicle_id": "agg",
                 "start": {"lane_id": "main:F0", "s": 1.0, "v": 0.0},
                 "controller": {"kind": "agent", "profile": "aggressive"}},
                {"vehicle_id": "def",
                 "start": {"lane_id": "main:R0", "s": 1.0, "v": 0.0},
                 "controller": {"kind": "agent", "profile": "defensive"}},
            ],
        })
        log = run_headless(scen)
        assert not any(e.kind == "collision" for e in log.events)
        mean = {}
        for vid in ("agg", "def"):
            vs = [r.v for r in log.records if r.vehicle_id == vid]
            mean[vid] = sum(vs) / len(vs)
        assert mean["agg"] > mean["def"]

    def test_bad_start_lane_rejected(self):
        spec = make_straight_map(30.0, 0.3, 1.0)
        with pytest.raises(ScenarioError):
            run_headless(parse_scenario({
                "name": "bad", "map": {"embedded": spec.to_obj()}, "duration_s": 1.0,
                "seed": 1,
                "vehicles": [{"vehicle_id": "a",
                              "start": {"lane_id": "zz", "s": 0.0},
                              "controller": {"kind": "external"}}],
            }))


class TestEstimatedPose:
    def test_mock_physical_pose_rms_within_millimeters(self):
        # sigma_xy 2 mm, latency-compensated: RMS position error in [1, 4] mm
        spec = make_straight_map(80.0, 0.3, 1.0)
        scen = parse_scenario({
            "name": "est", "map": {"embedded": spec.to_obj()}, "duration_s": 60.0,
            "seed": 3,
            "vehicles": [{
                "vehicle_id": "a",
                "noise": {"sigma_ax": 0.05, "sigma_yaw_rate": 0.02, "sigma_xy": 0.002,
                          "ax_bias": 0.0, "yaw_bias": 0.0, "window_s": 0.02,
                          "camera_period_s": 0.033333, "camera_latency_s": 0.05},
                "start": {"lane_id": "main:F0", "s": 5.0, "v": 0.5},
                "controller": {"kind": "cruise", "target_speed": 0.5},
                "backend": {"kind": "mock_physical", "actuation": "direct",
                            "noise_on": True},
            }],
        })
        world = World(scen)
        errs = []
        for k in range(6000):
            world.step()
            if (k + 1) % 5 == 0 and k > 500:  # 20 Hz state stream, post-warmup
                est = world.estimated_ego("a")
                st = world.vehicles["a"].state
                errs.append((est["x"] - st.x) ** 2 + (est["y"] - st.y) ** 2)
            if len(errs) >= 1000:
                break
        rms = math.sqrt(sum(errs) / len(errs))
        assert 0.001 <= rms <= 0.004, f"RMS {rms * 1000:.2f} mm outside [1, 4] mm"


class TestReplay:
    def test_verify_replay_roundtrip(self):
        log = run_headless(standard_grid_scenario("defensive", seed=4, duration_s=5.0))
        assert verify_replay(log) is None

    def test_verify_replay_detects_tamper(self):
        import dataclasses

        log = run_headless(standard_grid_scenario("defensive", seed=4, duration_s=5.0))
        tampered = dataclasses.replace(log.records[250], v=log.records[250].v + 0.001)
        log.records[250] = tampered
        mismatch = verify_replay(log)
        assert mismatch is not None
        assert "tick 251" in mismatch
