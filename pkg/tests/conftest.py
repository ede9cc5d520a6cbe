"""
Shared fixtures
"""
import copy
import os
import sys

import pytest
import tomli_w

sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

from dampspde.config import config
from dampspde.core.spectral_domain import BoxDomain, EquationKind, enumerate_modes
from dampspde.scenario import scenario_from_dict

BASE_SCENARIO = {
    'schema': 1,
    'equation': {'kind': 'plate', 'rho': 2.0, 'q': 2},
    'domain': {'lengths': [1.0]},
    'truncation': {'cutoff': 8},
    'noise': {'point': {'s0': [0.3]}},
    'coefficients': {'C': {'name': 'constant', 'value': 1.0}},
    'initial': {'u0': {'profile': 'mode', 'index': [1], 'amplitude': 1.0}, 'u1': 'zero'},
    'time': {'T': 0.25, 'dt': 0.00390625},
    'output': {'kind': 'uniform', 'spacing': 0.0625},
    'run': {'paths': 4, 'seed': 5, 'persist_increments': True},
}


def merge(base, overrides):
    out = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@pytest.fixture
def scenario_data():
    """Mutable copy of the small additive point-noise plate scenario"""
    return copy.deepcopy(BASE_SCENARIO)


@pytest.fixture
def make_scenario():
    def build(**overrides):
        return scenario_from_dict(merge(BASE_SCENARIO, overrides))
    return build


@pytest.fixture
def write_scenario(tmp_path):
    def write(data, name='scenario.toml'):
        path = tmp_path / name
        path.write_text(tomli_w.dumps(data), encoding='utf-8')
        return path
    return write


@pytest.fixture
def plate_1d():
    return enumerate_modes(BoxDomain((1.0,)), EquationKind.PLATE, 16)


@pytest.fixture
def wave_1d():
    return enumerate_modes(BoxDomain((2.0,)), EquationKind.WAVE, 16)


@pytest.fixture(autouse=True)
def isolated_outputs(tmp_path, monkeypatch):
    """Registry and default run directory under the test's tmp_path"""
    monkeypatch.setattr(config.database, 'path', str(tmp_path / 'registry.db'))
    monkeypatch.setattr(config.output, 'directory', str(tmp_path / 'runs'))
