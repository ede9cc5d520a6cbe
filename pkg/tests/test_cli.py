"""
Tests for the command line interface
"""
import pytest

from dampspde.cli import build_parser, main
from dampspde.cli.commands import EXIT_FAILED, EXIT_OK, EXIT_USAGE
from dampspde.database import RunRegistry

from conftest import merge

INADMISSIBLE = {
    'equation': {'q': 2.5},
    'domain': {'lengths': [1.0, 1.0]},
    'noise': {'point': {'s0': [0.5, 0.5]}},
    'initial': {'u0': 'zero'},
}


def test_check_prints_windows(write_scenario, scenario_data, capsys):
    assert main(['check', '--config', str(write_scenario(scenario_data))]) == EXIT_OK
    out = capsys.readouterr().out
    assert '(1/4, 1/2)' in out
    assert 'admissible' in out


def test_check_reports_violation(write_scenario, scenario_data, capsys):
    path = write_scenario(merge(scenario_data, INADMISSIBLE))
    assert main(['check', '--config', str(path)]) == EXIT_FAILED
    assert 'q-window (1, 2)' in capsys.readouterr().out


def test_missing_field_is_a_usage_error(write_scenario, scenario_data, capsys):
    del scenario_data['equation']['rho']
    assert main(['check', '--config', str(write_scenario(scenario_data))]) == EXIT_USAGE
    assert 'equation.rho' in capsys.readouterr().err


def test_simulate_then_verify(tmp_path, write_scenario, scenario_data, capsys):
    run_dir = tmp_path / 'run'
    scenario_data['run']['persist_increments'] = False
    path = write_scenario(scenario_data)
    code = main(['simulate', '--config', str(path), '--out', str(run_dir), '--threads', '1',
                 '--paths', '3', '--persist-increments'])
    assert code == EXIT_OK
    assert (run_dir / 'increments_p.npy').exists()

    assert main(['verify', str(run_dir)]) == EXIT_OK
    out = capsys.readouterr().out
    assert 'weak residual' in out
    assert (run_dir / 'verify' / 'report.txt').exists()
    assert (run_dir / 'verify' / 'verdicts.csv').exists()

    registry = RunRegistry()
    run_id = registry.get_recent_runs()[0]['id']
    names = [r['name'] for r in registry.get_reports(run_id)]
    assert 'admissibility' in names and 'weak residual' in names


def test_simulate_refuses_inadmissible_scenario(tmp_path, write_scenario, scenario_data):
    path = write_scenario(merge(scenario_data, INADMISSIBLE))
    assert main(['simulate', '--config', str(path), '--out', str(tmp_path / 'run')]) == EXIT_USAGE


def test_verify_missing_run(tmp_path, capsys):
    assert main(['verify', str(tmp_path / 'absent')]) == EXIT_USAGE
    assert 'error:' in capsys.readouterr().err


def test_regress_missing_run(tmp_path):
    assert main(['regress', str(tmp_path / 'absent')]) == EXIT_USAGE


def test_regress_on_holder_run(tmp_path, write_scenario, scenario_data, capsys):
    data = merge(scenario_data, {'time': {'T': 1.0}, 'output': {'kind': 'holder'},
                                 'run': {'paths': 8, 'persist_increments': False}})
    run_dir = tmp_path / 'holder'
    assert main(['simulate', '--config', str(write_scenario(data)), '--out', str(run_dir), '--threads', '1']) == EXIT_OK
    code = main(['regress', str(run_dir), '--component', 'u', '--out', str(tmp_path / 'regress')])
    assert code in (EXIT_OK, EXIT_FAILED)
    assert 'slope/2' in capsys.readouterr().out
    assert (tmp_path / 'regress' / 'regression.txt').exists()


def test_gamma_bench(tmp_path, capsys):
    code = main(['gamma', '--q', '1.5', '3', '--operators', '3', '--rank', '2', '--samples', '200',
                 '--out', str(tmp_path)])
    assert code == EXIT_OK
    assert 'K_q' in capsys.readouterr().out
    assert (tmp_path / 'gamma_bench.csv').exists()
    assert (tmp_path / 'gamma_constants.csv').exists()


def test_sector_scan(tmp_path, write_scenario, scenario_data, capsys):
    path = write_scenario(scenario_data)
    assert main(['sector', '--config', str(path), '--cutoffs', '8', '16', '32', '--out', str(tmp_path)]) == EXIT_OK
    assert 'bounded' in capsys.readouterr().out
    assert (tmp_path / 'sector.csv').exists()


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_gamma_bench_records_constants(tmp_path):
    assert main(['gamma', '--q', '1.5', '3', '--operators', '2', '--rank', '2', '--samples', '100']) == EXIT_OK
    metrics = RunRegistry().get_metrics('gamma_K_q')
    assert sorted(m['metadata']['q'] for m in metrics) == [1.5, 3.0]
    assert all(m['value'] >= 1.0 for m in metrics)
    assert RunRegistry().get_statistics()['total_metrics'] == 2


def test_verify_attaches_reports_to_its_own_directory(tmp_path, write_scenario, scenario_data):
    path = str(write_scenario(scenario_data))
    for name in ('first', 'second'):
        assert main(['simulate', '--config', path, '--out', str(tmp_path / name), '--threads', '1']) == EXIT_OK
    assert main(['verify', str(tmp_path / 'first')]) in (EXIT_OK, EXIT_FAILED)

    registry = RunRegistry()
    runs = {r['out_dir']: r['id'] for r in registry.get_recent_runs()}
    assert len({r['digest'] for r in registry.get_recent_runs()}) == 1
    assert registry.get_reports(runs[str(tmp_path / 'second')]) == []
    names = [r['name'] for r in registry.get_reports(runs[str(tmp_path / 'first')])]
    assert 'weak residual' in names
