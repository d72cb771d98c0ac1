from __future__ import annotations

from importlib import resources

import numpy as np
import pytest
from hypothesis import strategies as st

from crnosc.inheritance import build_extension
from crnosc.model import Complex, Network, Reaction, parse_network
from crnosc.orbit import find_periodic_orbit


def network_text(name: str) -> str:
    return resources.files("crnosc").joinpath("networks", name).read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def r1():
    return parse_network(network_text("r1.crn"))


@pytest.fixture(scope="session")
def r2_additions_text():
    return network_text("r2_additions.crn")


@pytest.fixture(scope="session")
def r1_orbit(r1):
    return find_periodic_orbit(r1, np.ones(3))


@pytest.fixture(scope="session")
def r2_extension(r1, r2_additions_text):
    return build_extension(r1, r2_additions_text)


# ---------------------------------------------------------------------------
# random networks for property tests

NAMES = ("A", "B", "C", "D")
rate = st.floats(min_value=0.05, max_value=20.0, allow_nan=False, allow_infinity=False)


@st.composite
def complexes(draw, species):
    coeffs = draw(st.lists(st.integers(0, 2), min_size=len(species), max_size=len(species)))
    return Complex.from_dict(dict(zip(species, coeffs)))


@st.composite
def reactions(draw, species):
    lhs = draw(complexes(species))
    rhs = draw(complexes(species).filter(lambda c: c != lhs))
    if draw(st.booleans()):
        return Reaction(lhs, rhs, draw(rate), True, draw(rate))
    return Reaction(lhs, rhs, draw(rate))


@st.composite
def networks(draw, min_species=1, max_species=4, max_reactions=6):
    n = draw(st.integers(min_species, max_species))
    species = NAMES[:n]
    rxns = draw(st.lists(reactions(species), min_size=1, max_size=max_reactions))
    return Network(species, rxns)


@st.composite
def network_and_state(draw, **kw):
    net = draw(networks(**kw))
    x = draw(st.lists(st.floats(0.1, 3.0), min_size=net.n_species, max_size=net.n_species))
    return net, np.array(x)


@pytest.fixture(scope="session")
def r2_report(r1_orbit, r2_extension):
    from crnosc.inheritance import verify_inheritance
    return verify_inheritance(r1_orbit, r2_extension, 0.2, 0.2, [0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# acceptance log: one line per criterion, repeated in the terminal summary

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request, capsys):
    log = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        log.append(line)
        with capsys.disabled():
            print(f"\n[acceptance] {line}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
