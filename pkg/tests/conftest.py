import pytest

from fleetops.topology import load_default_fleet


@pytest.fixture()
def topo():
    return load_default_fleet()
