import copy
import math
import pathlib

import pytest

from gullyfire.model import Scenario
from gullyfire.scenario import parse_scenario

SCENARIOS = pathlib.Path(__file__).resolve().parent.parent / "scenarios"

BASE = {
    "curve": {"kind": "segment", "params": {"x0": 0.0, "y0": 0.0, "x1": 1.0, "y1": 0.0}},
    "domain": {"L": 0.3, "epsilon_list": [0.2, 0.1, 0.05], "T": 0.01},
    "kernel": {"shape": "gaussian", "A": 1.0, "r": 0.2, "C_L": 2.0},
    "reaction": {"c_psi": 0.5, "M": 10.0},
    "boundary": {
        "theta": 0.0,
        "inlet": {"kind": "constant", "value": 0.0},
        "outlet": {"kind": "constant", "value": 0.0},
        "initial": {"kind": "bump", "amplitude": 1.0, "center": 0.5, "width": 0.1},
    },
    "numerics": {"n_sigma": 21, "n_s": 5, "dt": 1e-3},
    "analysis": {"lambda": 0.2, "alpha": 0.3},
}

QUARTER_CIRCLE = {"kind": "circular_arc", "params": {"radius": 1.0, "span": math.pi / 2}}


def document(**sections) -> dict:
    """The base scenario document with whole sections or single keys replaced.

    ``document(domain={"T": 0.02})`` merges into the domain section;
    ``document(curve=QUARTER_CIRCLE)`` replaces the curve.
    """
    doc = copy.deepcopy(BASE)
    for name, update in sections.items():
        if name == "curve" or not isinstance(update, dict):
            doc[name] = copy.deepcopy(update)
        else:
            doc[name].update(copy.deepcopy(update))
    return doc


@pytest.fixture
def make_document():
    return document


@pytest.fixture
def quarter_circle() -> dict:
    return copy.deepcopy(QUARTER_CIRCLE)


@pytest.fixture
def make_scenario():
    def build(**sections) -> Scenario:
        return parse_scenario(document(**sections), "<test>")

    return build


@pytest.fixture
def straight(make_scenario) -> Scenario:
    return make_scenario()


@pytest.fixture
def circle(make_scenario) -> Scenario:
    return make_scenario(curve=QUARTER_CIRCLE, domain={"L": 0.2, "epsilon_list": [0.08, 0.04, 0.02]})


@pytest.fixture
def scenarios_dir() -> pathlib.Path:
    return SCENARIOS
