import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microcity.errors import UnknownLane
from microcity.map_model import build_graph, generate_grid
from microcity.traffic_infra import (
    LightPhaseSchedule,
    applicable_speed_limit,
    green_intervals_disjoint,
    light_state_at,
    signal_for_lane,
)
from tests.conftest import make_straight_map


class TestLightStateAt:
    def test_cycle_start_is_green(self):
        st8 = light_state_at(LightPhaseSchedule(8, 2, 10, 0), 0.0)
        assert st8.phase == "green"
        assert st8.time_to_change == pytest.approx(8.0)

    def test_amber_lookup(self):
        st9 = light_state_at(LightPhaseSchedule(8, 2, 10, 0), 9.0)
        assert st9.phase == "amber"
        assert st9.time_to_change == pytest.approx(1.0)

    def test_offset_boundary_belongs_to_later_phase(self):
        # (25-5) mod 20 = 0 -> cycle position 0 is green by the boundary rule
        sch = LightPhaseSchedule(8, 2, 10, 5)
        st0 = light_state_at(sch, 25.0)
        assert st0.phase == "green"
        assert st0.time_to_change == pytest.approx(8.0)
        # exactly at green end -> amber
        assert light_state_at(sch, 13.0).phase == "amber"

    @given(st.floats(min_value=0, max_value=1e4, allow_nan=False))
    @settings(max_examples=200, deadline=None)
    def test_periodicity(self, t):
        sch = LightPhaseSchedule(8, 2, 10, 3)
        a = light_state_at(sch, t)
        b = light_state_at(sch, t + sch.cycle_s)
        assert a.phase == b.phase
        assert a.time_to_change == pytest.approx(b.time_to_change, abs=1e-6)

    def test_conservation_over_cycles(self):
        # sampled at dt resolution, per-phase counts match schedule durations
        sch = LightPhaseSchedule(8, 2, 10, 0)
        dt = 0.01
        per_cycle = round(sch.cycle_s / dt)
        for cycle in range(10):
            counts = {"green": 0, "amber": 0, "red": 0}
            for k in range(per_cycle):
                t = (cycle * per_cycle + k) * dt
                counts[light_state_at(sch, t).phase] += 1
            assert counts["green"] == round(sch.green_s / dt)
            assert counts["amber"] == round(sch.amber_s / dt)
            assert counts["red"] == round(sch.red_s / dt)

    def test_time_to_change_bounds(self):
        sch = LightPhaseSchedule(8, 2, 10, 0)
        for k in range(2000):
            s = light_state_at(sch, k * 0.011)
            dur = {"green": 8, "amber": 2, "red": 10}[s.phase]
            assert 0 <= s.time_to_change <= dur + 1e-9


class TestCrossAxisConflict:
    def test_generated_grid_never_double_green(self, grid33):
        ns = grid33.spec.schedules["ns"]
        ew = grid33.spec.schedules["ew"]
        assert green_intervals_disjoint(ns, ew)
        dt = 0.01
        for k in range(int(ns.cycle_s / dt)):
            t = k * dt
            both = (light_state_at(ns, t).phase == "green"
                    and light_state_at(ew, t).phase == "green")
            assert not both

    def test_disjointness_detector(self):
        a = LightPhaseSchedule(8, 2, 10, 0)
        overlapping = LightPhaseSchedule(8, 2, 10, 4)
        assert not green_intervals_disjoint(a, overlapping)


class TestApplicableSpeedLimit:
    def test_no_changes(self, straight_graph):
        out = applicable_speed_limit(straight_graph, "main:F0", 3.0, 1.0)
        assert out["current"] == 1.0
        assert out["upcoming"] is None

    def test_change_within_lookahead(self):
        graph = build_graph(make_straight_map(
            length=10.0, lane_width=0.2, limit=1.0,
            changes=[{"s": 2.0 + 0.2, "new_limit": 0.3}],
        ))
        # lane starts at axis 0.2 so the change sits at lane s = 2.0
        out = applicable_speed_limit(graph, "main:F0", 1.2, 1.0)
        assert out["current"] == 1.0
        assert out["upcoming"] == {"limit": 0.3, "distance": pytest.approx(0.8)}

    def test_change_beyond_lookahead_excluded(self):
        graph = build_graph(make_straight_map(
            length=10.0, lane_width=0.2, limit=1.0,
            changes=[{"s": 2.2, "new_limit": 0.3}],
        ))
        out = applicable_speed_limit(graph, "main:F0", 1.2, 0.5)
        assert out["upcoming"] is None

    def test_search_crosses_successors(self, grid33):
        # uniform grid: no upcoming changes anywhere, even across junctions
        out = applicable_speed_limit(grid33, "h0-0:F0", 0.5, 3.0)
        assert out["current"] == 0.5
        assert out["upcoming"] is None

    def test_unknown_lane(self, grid33):
        with pytest.raises(UnknownLane):
            applicable_speed_limit(grid33, "nope", 0.0, 1.0)


class TestSignalForLane:
    def test_interior_approach_governed(self, grid33):
        got = signal_for_lane(grid33, "h1-0:F0")  # eastbound into the center node
        assert got is not None
        assert got["stop_line_s"] == pytest.approx(grid33.lanes["h1-0:F0"].length)

    def test_boundary_lane_ungoverned(self, grid33):
        assert signal_for_lane(grid33, "h0-0:F0") is None

    def test_4x3_grid_governs_eight_lanes(self, grid43):
        governed = [l for l in grid43.lanes.values() if l.light is not None]
        # 2 interior nodes x 4 approaches, single-lane roads
        assert len(governed) == 8
