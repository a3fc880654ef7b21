from hypothesis import HealthCheck, given, settings, strategies as st
import numpy as np
import pytest

from naht.mat.sampler import (TeamComposition, controlled_count_histogram,
                              sample_composition)
from naht.mat.teammates import TeammatePool


@settings(max_examples=30, deadline=None,
          suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(num_agents=st.integers(2, 7), seed=st.integers(0, 2 ** 32 - 1))
def test_compositions_are_well_formed(signal_pools, num_agents, seed):
    pool = signal_pools[0]
    rng = np.random.default_rng(seed)
    for _ in range(20):
        comp = sample_composition(num_agents, pool, rng)
        assert 1 <= comp.num_controlled <= num_agents - 1
        assert len(comp.controlled_slots) == comp.num_controlled
        assert list(comp.controlled_slots) == sorted(set(comp.controlled_slots))
        assert set(comp.controlled_slots) | set(comp.uncontrolled_slots) == \
            set(range(num_agents))
        assert comp.teammate_instance in pool.instances


def test_two_agents_means_one_controlled(signal_pools, rng):
    counts = {sample_composition(2, signal_pools[0], rng).num_controlled
              for _ in range(200)}
    assert counts == {1}


def test_controlled_count_is_uniform(signal_pools, rng):
    comps = [sample_composition(4, signal_pools[0], rng) for _ in range(30000)]
    hist = controlled_count_histogram(comps)
    assert sorted(hist) == ['1', '2', '3']
    for count in hist.values():
        assert count / len(comps) == pytest.approx(1 / 3, abs=0.02)


def test_slot_sets_are_uniform_within_n(signal_pools, rng):
    seen = {}
    for _ in range(20000):
        comp = sample_composition(3, signal_pools[0], rng)
        if comp.num_controlled == 1:
            seen[comp.controlled_slots] = seen.get(comp.controlled_slots, 0) + 1
    total = sum(seen.values())
    assert sorted(seen) == [(0,), (1,), (2,)]
    for count in seen.values():
        assert count / total == pytest.approx(1 / 3, abs=0.03)


def test_sampling_is_seeded(signal_pools):
    def draw():
        rng = np.random.default_rng(5)
        return [sample_composition(3, signal_pools[0], rng) for _ in range(10)]

    a, b = draw(), draw()
    assert a == b


def test_sampler_validation(signal_pools, rng):
    with pytest.raises(ValueError):
        sample_composition(1, signal_pools[0], rng)
    with pytest.raises(ValueError):
        sample_composition(3, TeammatePool((), 'train'), rng)


def test_composition_validation(signal_pools):
    inst = signal_pools[0].instances[0]
    with pytest.raises(ValueError):
        TeamComposition(3, 3, (0, 1, 2), inst, 0)
    with pytest.raises(ValueError):
        TeamComposition(3, 2, (1, 0), inst, 0)
    comp = TeamComposition(3, 2, (0, 2), inst, 9)
    assert comp.uncontrolled_slots == (1,)
    assert TeamComposition.from_dict(comp.to_dict()) == comp
