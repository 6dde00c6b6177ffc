import pytest

from microcity.map_model import build_graph, generate_grid, parse_map
from microcity.canonical import canonical_json
from microcity.vehicle_plant import VehicleParams


@pytest.fixture(scope="session")
def grid33():
    return build_graph(generate_grid(3, 3, 1.0, 0.15, 0.5))


@pytest.fixture(scope="session")
def grid43():
    return build_graph(generate_grid(4, 3, 1.2, 0.15, 0.6))


@pytest.fixture(scope="session")
def params():
    return VehicleParams()


def make_straight_map(length=60.0, lane_width=0.3, limit=1.0, changes=(), signs=()):
    obj = {
        "name": "straight",
        "scale_denominator": 10,
        "nodes": [
            {"id": "a", "x": 0.0, "y": 0.0},
            {"id": "b", "x": length, "y": 0.0},
        ],
        "segments": [{
            "id": "main", "from_node": "a", "to_node": "b",
            "geometry": {"kind": "straight"}, "lanes_per_direction": 1,
            "lane_width": lane_width, "speed_limit": limit,
            "speed_limit_changes": list(changes),
        }],
        "schedules": {}, "signals": [], "signs": list(signs),
    }
    return parse_map(canonical_json(obj))


@pytest.fixture(scope="session")
def straight_graph():
    return build_graph(make_straight_map())
