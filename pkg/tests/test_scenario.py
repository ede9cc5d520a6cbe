"""
Tests for scenario parsing, serialization and derived inputs
"""
import numpy as np
import pytest

from dampspde.scenario import load_scenario, parse_scenario, save_scenario, scenario_from_dict
from dampspde.exceptions import ConfigurationError, DomainError

from conftest import merge


def test_canonical_round_trip(make_scenario):
    scenario = make_scenario()
    again = parse_scenario(scenario.to_toml())
    assert again == scenario
    assert again.digest() == scenario.digest()


def test_digest_tracks_content(make_scenario):
    assert make_scenario().digest() != make_scenario(equation={'rho': 1.5}).digest()


def test_rational_q_is_kept_exact(make_scenario):
    scenario = make_scenario(equation={'kind': 'wave', 'q': '3/2'})
    assert scenario.to_dict()['equation']['q'] == '3/2'
    assert str(scenario.admissibility().theta_C_window) == '(1/3, 1/2)'


def test_missing_field_is_named(scenario_data):
    del scenario_data['equation']['rho']
    with pytest.raises(ConfigurationError) as info:
        scenario_from_dict(scenario_data)
    assert info.value.field == 'equation.rho'


def test_wrong_type_is_named(scenario_data):
    scenario_data['truncation']['cutoff'] = 'many'
    with pytest.raises(ConfigurationError, match='truncation.cutoff'):
        scenario_from_dict(scenario_data)


def test_malformed_toml():
    with pytest.raises(ConfigurationError, match='malformed TOML'):
        parse_scenario('equation = [')


def test_schema_mismatch(scenario_data):
    scenario_data['schema'] = 2
    with pytest.raises(ConfigurationError, match='schema'):
        scenario_from_dict(scenario_data)


@pytest.mark.parametrize('s0', [[0.0], [1.0]])
def test_point_on_boundary(scenario_data, s0):
    scenario_data['noise']['point']['s0'] = s0
    with pytest.raises(DomainError):
        scenario_from_dict(scenario_data)


def test_step_must_divide_horizon(scenario_data):
    scenario_data['time']['dt'] = 0.1
    with pytest.raises(ConfigurationError, match='time.dt'):
        scenario_from_dict(scenario_data)


def test_step_must_divide_output_spacing(scenario_data):
    scenario_data['output']['spacing'] = 0.005
    with pytest.raises(ConfigurationError, match='output.spacing'):
        scenario_from_dict(scenario_data)


def test_unknown_coefficient_fails_at_load(scenario_data):
    scenario_data['coefficients']['f'] = {'name': 'cubic'}
    with pytest.raises(ConfigurationError):
        scenario_from_dict(scenario_data)


def test_unknown_slot(scenario_data):
    scenario_data['coefficients']['H'] = {'name': 'zero'}
    with pytest.raises(ConfigurationError, match='coefficients.H'):
        scenario_from_dict(scenario_data)


def test_uniform_output_steps(make_scenario):
    assert make_scenario().output_steps() == [0, 16, 32, 48, 64]


def test_holder_output_steps(make_scenario):
    scenario = make_scenario(time={'T': 1.0}, output={'kind': 'holder', 'deltas': [0.0, 0.05]})
    steps = scenario.output_steps()
    assert steps[0] == 0 and steps[-1] == 256
    assert {64, 65, 66, 68, 72, 80, 96} <= set(steps)


def test_initial_profiles(make_scenario):
    scenario = make_scenario(initial={'u0': [0.5, 0.25], 'u1': {'profile': 'mode', 'index': [2], 'amplitude': 3.0}})
    state = scenario.initial_state()
    np.testing.assert_allclose(state.u[:2], [0.5, 0.25])
    assert state.v[1] == 3.0
    assert np.count_nonzero(state.v) == 1


def test_parabola_profile_is_symmetric(make_scenario):
    scenario = make_scenario(initial={'u0': {'profile': 'parabola', 'amplitude': 4.0}})
    u = scenario.initial_state().u
    assert u[0] > 0
    np.testing.assert_allclose(u[1::2], 0.0, atol=1e-12)


def test_unknown_profile(scenario_data):
    scenario_data['initial']['u0'] = 'gaussian'
    with pytest.raises(ConfigurationError, match='initial.u0'):
        scenario_from_dict(scenario_data)


def test_run_overrides(make_scenario):
    scenario = make_scenario()
    changed = scenario.with_run(seed=9, paths=2, persist_increments=False)
    assert (changed.seed, changed.paths, changed.persist_increments) == (9, 2, False)
    assert scenario.with_run() == scenario
    assert changed.digest() != scenario.digest()


def test_save_and_load(tmp_path, make_scenario):
    scenario = make_scenario(noise={'distributed': {'kind': 'compact', 'decay': 2.0}},
                             coefficients={'b': {'name': 'constant', 'value': 0.5}})
    path = save_scenario(scenario, tmp_path / 'nested' / 'scenario.toml')
    assert load_scenario(path) == scenario


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_scenario(tmp_path / 'absent.toml')


def test_scenario_files_in_repository(write_scenario, scenario_data):
    path = write_scenario(merge(scenario_data, {'exponents': {'theta_C': '3/10'}}))
    scenario = load_scenario(path)
    assert float(scenario.admissibility().lambda_max) == pytest.approx(0.2)
