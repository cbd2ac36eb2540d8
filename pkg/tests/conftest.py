#  Copyright (c) 2024 ltc-stability developers

import pytest

from ltc_stability.cli import read_network_file
from ltc_stability.network import Network


def one_load(b_s=0.1875, b_line=1.0, V_G=1.0, V_0=1.0, T=1.0):
    return Network(
        n_load=1,
        n_gen=1,
        lines=((0, 1, b_line),),
        gen_voltages=[V_G],
        load_susceptances=[b_s],
        setpoints=[V_0],
        time_constants=[T],
        bus_ids=("L", "G"),
    )


@pytest.fixture
def one_load_net():
    return one_load()


@pytest.fixture
def chain_net():
    return read_network_file("two_load_chain").network


@pytest.fixture
def symmetric_net():
    return read_network_file("two_load_symmetric").network


@pytest.fixture
def mesh_file():
    return read_network_file("six_bus_mesh")


@pytest.fixture
def mesh_net(mesh_file):
    return mesh_file.network
