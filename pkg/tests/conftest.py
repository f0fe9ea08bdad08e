import pytest

from drivesim import mapgen


@pytest.fixture(scope="session")
def intersection_map():
    return mapgen.build(mapgen.four_way_intersection())


@pytest.fixture(scope="session")
def two_segment_map():
    return mapgen.build(mapgen.two_segment_straight())


@pytest.fixture(scope="session")
def parallel_map():
    return mapgen.build(mapgen.parallel_two_lane())


@pytest.fixture(scope="session")
def single_lane_map():
    return mapgen.build(mapgen.single_lane())
