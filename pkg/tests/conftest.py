import os
import sys

import pytest
from hypothesis import settings as hypothesis_settings

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from config.settings import settings  # noqa: E402
from shared.mc_model import load_taskset_file  # noqa: E402
from shared.scenario import load_scenario_file  # noqa: E402

hypothesis_settings.register_profile("default", max_examples=150, deadline=None)
hypothesis_settings.register_profile("acceptance", max_examples=1000, deadline=None)
hypothesis_settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def fixtures_dir():
    return settings.fixtures_dir


@pytest.fixture(scope="session")
def table1(fixtures_dir):
    return load_taskset_file(fixtures_dir / "table1.json")


@pytest.fixture(scope="session")
def table2(fixtures_dir):
    return load_taskset_file(fixtures_dir / "table2.json")


@pytest.fixture(scope="session")
def fig5(fixtures_dir):
    return load_taskset_file(fixtures_dir / "fig5.json")


@pytest.fixture
def fig4_script(fixtures_dir):
    return load_scenario_file(fixtures_dir / "fig4.json")
