from importlib import resources
import json

import numpy as np
import pytest

from gridstab.equilibrium import assemble_equilibrium, dispatch_from_dict
from gridstab.netmodel import load_network_config, network_from_dict

CONFIGS = resources.files("gridstab").joinpath("configs")


def config_path(name):
    return str(CONFIGS.joinpath(name))


def config_data(name):
    return json.loads(CONFIGS.joinpath(name).read_text())


def three_bus_point(net, p, v=None, q=None, k=None):
    """Equilibrium of the three-bus system with the GFL at (p, v) or (p, q)."""
    if k is not None:
        net = net.with_unit_params("GFL2", K_P_s=k)
    entry = {"p": p}
    if q is not None:
        entry.update(type="PQ", q=q)
    else:
        entry.update(type="PV", v=v)
    disp = dispatch_from_dict(net, {"slack": "GFM1", "units": {"GFM1": {"v": 1.0}, "GFL2": entry}})
    return assemble_equilibrium(net, disp)


@pytest.fixture(scope="session")
def three_bus():
    return load_network_config(config_path("three_bus.json"))


@pytest.fixture(scope="session")
def three_bus_data():
    return config_data("three_bus.json")


@pytest.fixture(scope="session")
def point_a(three_bus):
    return three_bus_point(three_bus, 0.10, v=0.95)


@pytest.fixture(scope="session")
def point_b(three_bus):
    return three_bus_point(three_bus, 0.60, v=1.06)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def two_bus_data(r=0.0, l=0.1, load_p=0.0, load_q=0.0):
    """GFM feeding a load bus over one line."""
    three = config_data("three_bus.json")
    gfm = dict(three["units"][0], id="G", bus="1")
    data = {
        "schema_version": 1, "name": "two_bus",
        "base": three["base"],
        "buses": [{"id": "1", "kind": "GFM"}, {"id": "2", "kind": "Load", "shunt_c": 0.05}],
        "lines": [{"id": "1-2", "from": "1", "to": "2", "r": r, "l": l, "g_sh": 0.0, "c_sh": 0.05}],
        "loads": [{"bus": "2", "p": load_p, "q": load_q}] if (load_p or load_q) else [],
        "units": [gfm],
        "reference_unit": "G",
    }
    return data


def two_bus(**kw):
    return network_from_dict(two_bus_data(**kw))
