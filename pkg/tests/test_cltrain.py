import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtnrl.cltrain import (CLPlan, ExperienceDataset, ReplayStore, TrainHistory, balanced_sample,
                           default_scenarios, fine_tune, interleave_batches, load_plan, new_network,
                           run_cl, sample_size, train_round)
from dtnrl.config import ConfigError, SimConfig
from dtnrl.features import DEFAULT_SCHEMA
from dtnrl.policy import Experience
from dtnrl.qnet import SchemaMismatch

DIM = DEFAULT_SCHEMA.dim


def fake_dataset(sid, n, rng, terminal_every=3):
    ds = ExperienceDataset(sid)
    for i in range(n):
        term = i % terminal_every == 0
        nxt = np.empty((0, DIM)) if term else rng.random((int(rng.integers(1, 4)), DIM))
        ds.append(Experience(rng.random(49), rng.random(14), -1.0, nxt, term, sid, i))
    return ds


def oracle_n(sizes, alpha):
    return min(max(math.ceil(alpha * s) for s in sizes), sizes[-1])


def test_sample_size_examples():
    assert sample_size([1000, 500, 200], 0.1) == 100
    assert sample_size([1000, 500, 50], 0.1) == 50
    assert sample_size([7], 0.1) == 1
    with pytest.raises(ValueError):
        sample_size([10], 0.0)


@settings(max_examples=50, deadline=None)
@given(sizes=st.lists(st.integers(0, 5000), min_size=1, max_size=5),
       alpha=st.floats(0.01, 1.0), seed=st.integers(0, 2**32 - 1))
def test_balanced_sample_law(sizes, alpha, seed):
    out = balanced_sample(sizes, alpha, np.random.default_rng(seed))
    if sizes[-1] == 0:
        assert out is None
        return
    n = oracle_n(sizes, alpha)
    for s, idx in zip(sizes, out):
        if s == 0:
            assert idx.size == 0
            continue
        assert idx.size == n and idx.min() >= 0 and idx.max() < s
        if n <= s:
            assert np.unique(idx).size == n


@settings(max_examples=50, deadline=None)
@given(lengths=st.lists(st.integers(0, 200), min_size=1, max_size=4),
       b=st.integers(1, 40), seed=st.integers(0, 1000))
def test_interleave_consumes_every_batch_once(lengths, b, seed):
    samples = [np.arange(n) + 1000 * k for k, n in enumerate(lengths)]
    out = interleave_batches(samples, b, np.random.default_rng(seed))
    assert len(out) == sum(math.ceil(n / b) for n in lengths)
    for k, s in enumerate(samples):
        got = [batch for j, batch in out if j == k]
        assert np.array_equal(np.concatenate(got) if got else np.empty(0, int), s)
        assert all(len(g) <= b for g in got)


def test_dataset_take_round_trips_candidates(rng):
    ds = fake_dataset("a", 20, rng)
    rows, rew, nxt, ptr, term = ds.take(np.array([2, 0, 1]))
    assert rows.shape == (3, DIM) and list(term) == [False, True, False]
    assert ptr[0] == 0 and ptr[-1] == len(nxt)
    assert ptr[2] == ptr[1]  # terminal experience carries no candidates


def test_frozen_dataset_rejects_appends_and_stays_byte_identical(rng):
    store = ReplayStore()
    first = store.open("a")
    first.extend(fake_dataset("a", 50, rng)._pending)
    store.open("b").extend(fake_dataset("b", 30, rng)._pending)
    assert first.frozen
    before = {k: v.tobytes() for k, v in first.arrays().items()}
    net = new_network(0)
    for _ in range(3):
        train_round(net, store.ordered(), 0.5, 8, rng, epochs=1)
    assert {k: v.tobytes() for k, v in first.arrays().items()} == before
    with pytest.raises(ValueError, match="frozen"):
        first.append(fake_dataset("a", 1, rng)._pending[0])


def test_dataset_save_load(tmp_path, rng):
    ds = fake_dataset("x", 25, rng).freeze()
    ds.save(tmp_path / "x.npz", {"seed": 4})
    back = ExperienceDataset.load(tmp_path / "x.npz", schema_hash=DEFAULT_SCHEMA.hash)
    for k, v in ds.arrays().items():
        assert np.array_equal(v, back.arrays()[k])
    with pytest.raises(SchemaMismatch):
        ExperienceDataset.load(tmp_path / "x.npz", schema_hash="other")


def test_round_skipped_when_current_set_empty(rng):
    net = new_network(0)
    before = net.params()[0].copy()
    assert train_round(net, [fake_dataset("a", 10, rng), ExperienceDataset("b")], 0.1, 32, rng) is None
    assert np.array_equal(net.params()[0], before)


def test_plan_validation():
    cfg = SimConfig(duration=1000, cooldown=0)
    with pytest.raises(ConfigError, match="divide"):
        CLPlan([cfg], round_len=300)
    with pytest.raises(ConfigError, match="unique"):
        CLPlan([cfg, cfg])
    with pytest.raises(ConfigError):
        CLPlan([cfg], alpha=0.0)


def test_default_sequence():
    scen = default_scenarios()
    assert [c.scenario_id for c in scen] == ["rpgm1-r50", "rwp3-r50", "rwpmix2-r20"]
    assert scen[0].duration == 100_000 and scen[0].cooldown == 40_000
    assert scen[2].tx_range == 20.0 and dict(scen[2].mobility.speed_mix) == {"slow": 12, "fast": 13}
    assert CLPlan(scen).round_len == 1000
    assert scen[0].duration // CLPlan(scen).round_len == 100


def test_load_plan(tmp_path):
    (tmp_path / "a.cfg").write_text("tx_range = 80\nduration = 400\ncooldown = 100\nscenario_id = \"a\"\n")
    (tmp_path / "plan.txt").write_text('scenarios = ["a.cfg"]\nalpha = 0.2\nround_len = 100\n')
    plan = load_plan(tmp_path / "plan.txt")
    assert plan.alpha == 0.2 and plan.scenarios[0].tx_range == 80
    (tmp_path / "bad.txt").write_text('scenarios = ["a.cfg"]\nbeta = 1\n')
    with pytest.raises(ConfigError, match="unknown key"):
        load_plan(tmp_path / "bad.txt")


def test_cl_round_counts_and_frozen_history():
    base = SimConfig(duration=300, cooldown=0, flow_arrival_rate=0.02).replace(
        node_count=10, speed_mix=(("slow", 10),))
    plan = CLPlan([base.replace(scenario_id="a", tx_range=80.0, rng_seed=1),
                   base.replace(scenario_id="b", tx_range=20.0, rng_seed=2)],
                  round_len=100, epochs=1, seed=3)
    net, store, hist = run_cl(plan)
    assert [(r.scenario, r.round) for r in hist.rounds] == [(s, i) for s in "ab" for i in range(3)]
    assert all(ds.frozen for ds in store.ordered())
    assert [len(r.dataset_sizes) for r in hist.rounds] == [1, 1, 1, 2, 2, 2]
    _, _, hist2 = run_cl(plan, replay=False)
    assert all(len(r.dataset_sizes) == 1 for r in hist2.rounds)


def test_fine_tune_round_count_and_schema():
    base = new_network(0)
    cfg = SimConfig(duration=100, cooldown=0, flow_arrival_rate=0.02, scenario_id="ft").replace(
        node_count=10, speed_mix=(("slow", 10),))
    hist = TrainHistory()
    net = fine_tune(base, cfg, 2000, 50, history=hist, epochs=1)
    assert len(hist.rounds) == 40 and net.schema_hash == base.schema_hash
    assert {r.scenario for r in hist.rounds} == {"ft-ft"}


def test_fine_tune_zero_budget_is_identity():
    base = new_network(5)
    out = fine_tune(base, SimConfig(), 0)
    x = np.random.default_rng(0).random((10, DIM))
    assert np.array_equal(out.predict(x), base.predict(x)) and out is not base


def test_fine_tune_rejects_foreign_schema():
    from dtnrl.qnet import QNetwork
    with pytest.raises(SchemaMismatch):
        fine_tune(QNetwork([DIM, 4, 1], "other"), SimConfig(), 100, 50)
