"""Shared fixtures for the test suite."""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import make_predicate_table  # noqa: E402


@pytest.fixture
def abc_preds():
    return make_predicate_table(list("abcde"))


@pytest.fixture
def rng():
    return np.random.default_rng(20260818)


@pytest.fixture(scope="session")
def corridor():
    """Corridor abstraction, built once: adjacency LPs dominate the cost."""
    from lassoplan.abstraction import build_kripke, build_partition
    from workspaces import make_corridor

    system, predicates, phi = make_corridor()
    regions = build_partition(system, phi)
    return build_kripke(regions, system, predicates=predicates)
