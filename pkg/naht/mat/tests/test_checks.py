import dataclasses

import pytest

from naht.mat import checks
from naht.mat.checks import (CheckResult, check_gae, check_gradients, check_oracles,
                             check_sampler, run_checks)


def test_gradients():
    result = check_gradients(seed=1, n_coords=30)
    assert result.passed, result.detail
    assert result.name == 'gradients'


def test_sampler():
    result = check_sampler(seed=2, draws=60000)
    assert result.passed, result.detail


def test_sampler_detects_a_biased_draw(monkeypatch):
    real = checks.sample_composition

    def biased(num_agents, pool, rng):
        comp = real(num_agents, pool, rng)
        while comp.num_controlled == 1:
            comp = real(num_agents, pool, rng)
        return comp

    monkeypatch.setattr(checks, 'sample_composition', biased)
    assert not check_sampler(draws=3000).passed


def test_sampler_detects_a_favoured_instance(monkeypatch):
    real = checks.sample_composition

    def favoured(num_agents, pool, rng):
        comp = real(num_agents, pool, rng)
        if rng.random() < 0.2:
            comp = dataclasses.replace(comp, teammate_instance=pool.instances[0])
        return comp

    monkeypatch.setattr(checks, 'sample_composition', favoured)
    result = check_sampler(draws=20000)
    assert not result.passed
    assert 'p_instance=' in result.detail


def test_sampler_detects_a_favoured_slot(monkeypatch):
    real = checks.sample_composition

    def favoured(num_agents, pool, rng):
        comp = real(num_agents, pool, rng)
        if comp.num_controlled == 1 and rng.random() < 0.3:
            comp = dataclasses.replace(comp, controlled_slots=(0,))
        return comp

    monkeypatch.setattr(checks, 'sample_composition', favoured)
    result = check_sampler(draws=20000)
    assert not result.passed
    assert 'p_slots1=' in result.detail and 'p_slots3=' in result.detail


def test_gae():
    result = check_gae(seed=3, episodes=200)
    assert result.passed and result.name == 'gae'


def test_oracles():
    result = check_oracles()
    assert result.passed
    assert 'optimal=1.000000000000' in result.detail


def test_run_checks_reports_exceptions(monkeypatch):
    def exploding(seed=0):
        raise RuntimeError("boom")

    def fine(seed=0):
        return CheckResult('fine', True, 'ok')

    exploding.__name__ = 'check_exploding'
    monkeypatch.setattr(checks, 'CHECKS', (fine, exploding))
    results = run_checks(seed=5)
    assert [r.name for r in results] == ['fine', 'exploding']
    assert [r.passed for r in results] == [True, False]
    assert results[1].detail == 'RuntimeError: boom'


@pytest.mark.slow
def test_full_suite_passes():
    results = run_checks(seed=0, sampler_draws=200000)
    assert all(r.passed for r in results), [r for r in results if not r.passed]
    assert len(results) == len(checks.CHECKS)
