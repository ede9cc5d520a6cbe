"""
Tests for the run registry
"""
import pytest

from dampspde.database import RunRegistry


@pytest.fixture
def registry(tmp_path):
    return RunRegistry(str(tmp_path / 'registry.db'))


def test_runs_are_listed_newest_first(registry):
    first = registry.log_run('a' * 64, 'runs/a', 1, 10, '1.0.0', 0.5)
    second = registry.log_run('b' * 64, 'runs/b', 2, 20, '1.0.0', 1.5)
    runs = registry.get_recent_runs()
    assert [r['id'] for r in runs] == [second, first]
    assert runs[0]['paths'] == 20
    assert registry.get_recent_runs(limit=1)[0]['digest'] == 'b' * 64


def test_reports_belong_to_runs(registry):
    run_id = registry.log_run('c' * 64, 'runs/c', 0, 4, '1.0.0')
    registry.log_report('weak residual', True, 3e-9, {'modes': 8}, run_id)
    registry.log_report('sector', False, 0.2, run_id=run_id)
    reports = registry.get_reports(run_id)
    assert [r['name'] for r in reports] == ['weak residual', 'sector']
    assert reports[0]['details'] == {'modes': 8}
    assert reports[1]['passed'] is False
    assert reports[1]['details'] == {}


def test_statistics(registry):
    run_id = registry.log_run('d' * 64, 'runs/d', 0, 4, '1.0.0', 2.0)
    registry.log_run('e' * 64, 'runs/e', 0, 4, '1.0.0', 4.0)
    registry.log_report('admissibility', True, run_id=run_id)
    registry.log_report('sector', False, run_id=run_id)
    registry.log_metric('gamma K_q', 1.3, {'q': 1.5})
    stats = registry.get_statistics()
    assert stats['total_runs'] == 2
    assert stats['total_reports'] == 2
    assert stats['passed_reports'] == 1
    assert stats['average_wall_clock'] == pytest.approx(3.0)
    assert stats['total_metrics'] == 1
    assert registry.get_metrics('gamma K_q') == [
        {'timestamp': registry.get_metrics()[0]['timestamp'], 'name': 'gamma K_q', 'value': 1.3, 'metadata': {'q': 1.5}}
    ]
    assert registry.get_metrics('other') == []


def test_default_path_comes_from_config(tmp_path):
    registry = RunRegistry()
    assert registry.db_path == str(tmp_path / 'registry.db')
    assert registry.get_statistics()['total_runs'] == 0
