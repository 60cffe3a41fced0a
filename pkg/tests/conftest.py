from __future__ import annotations

import pytest

from kipg.sim import CityConfig, SIRParams

# filled by the acceptance module, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def micro_city(**kw) -> CityConfig:
    """1 residence, 2 homes x 2 persons, 1 shop; every person shops at sh1."""
    base = dict(n_res=1, n_homes_per_res=2, n_persons_per_home=2, n_shops=1, n_workplaces=1,
                n_hospitals=1, route_map=(("r1", "sh1"),), base_testing_rate=0.0, horizon=10,
                initial_infected_fraction=0.25, hospitalization_rate=0.0,
                sir_params=SIRParams(beta_transmission=1.0, gamma_recovery=0.0, mortality=0.0))
    base.update(kw)
    return CityConfig(**base)


@pytest.fixture
def micro():
    return micro_city()
