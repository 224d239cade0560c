import numpy as np
import pytest

from adaptive_td.envs import ChainConfig, chain_env, labyrinth_env, mountain_car_env


@pytest.fixture
def chain():
    return chain_env(ChainConfig(k=4, p=2, mu=0.0, sigma=1.0))


@pytest.fixture(scope="session")
def lab2():
    return labyrinth_env(2)


@pytest.fixture(scope="session")
def car():
    return mountain_car_env()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
