"""Shared fixtures: small boundary sets reused across modules."""

from __future__ import annotations

import pytest

from codimlab.geometry import (SineProfile, make_cantor_garnett, make_flat,
                               make_lipschitz_graph)


@pytest.fixture(scope="session")
def flat():
    return make_flat(1, 3, 10, 0.01)


@pytest.fixture(scope="session")
def coarse_flat():
    return make_flat(1, 3, 6, 0.04)


@pytest.fixture(scope="session")
def graph():
    return make_lipschitz_graph(SineProfile(0.1), 0.1, 10, 0.01)


@pytest.fixture(scope="session")
def cantor6():
    return make_cantor_garnett(6)
