import csv
import itertools
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reward_ensemble.consistency import (QAIndex, annotate_dataset, consistent_rewards, contextual,
                                         high_value_actions, jaccard, qa_verdict, structural, temporal, vote,
                                         write_diagnostics)
from reward_ensemble.env import Observation
from reward_ensemble.estimator import EstimatorError, PersonaSpec, ScriptedEstimator, default_personas

R = (-2, -1, 0, 1, 2)
rewards = st.lists(st.sampled_from(R), min_size=1, max_size=7)


def counting_oracle(values):
    """Brute force: scan candidates from low to high, keep the first with the best count."""
    best, best_n = None, -1
    for v in R:
        n = sum(1 for x in values if x == v)
        if n > best_n:
            best, best_n = v, n
    return best


def test_vote_examples():
    assert contextual([1, 1, 1, 1, 1]) == 1
    assert contextual([2, 1, -2, -2, 2]) == -2
    assert contextual([2, 2, -2, 1, 0]) == 2
    with pytest.raises(ValueError):
        vote([])


def test_vote_matches_oracle_exhaustively():
    for n in range(1, 6):
        for ms in itertools.combinations_with_replacement(R, n):
            assert vote(ms) == counting_oracle(ms)


@given(rewards)
def test_vote_has_max_count_and_min_among_ties(values):
    out = vote(values)
    c = Counter(values)
    assert c[out] == max(c.values())
    assert out == min(v for v in c if c[v] == c[out])


def test_structural_examples():
    assert structural([2, 2, 1], [True, True, True]) == (contextual([2, 2, 1]), False)
    assert structural([2, 2, -2], [False, False, True]) == (-2, False)
    assert structural([2, 2, -2], [False, False, False]) == (2, True)
    with pytest.raises(ValueError):
        structural([1], [True, False])


def test_temporal_examples():
    resp = [2, 2, 2, -1, -1]
    # nobody fails verification
    assert temporal(resp, [True] * 5, [True] * 5) == (contextual(resp), False)
    # action outside every high-value set: verdicts are irrelevant
    assert temporal(resp, [False] * 5, [False] * 5) == (contextual(resp), False)
    # persona 3 excluded, vote over the other four
    assert temporal([2, 2, -1, -1, -1], [False, False, True, False, False], [True, True, False, True, True]) == (-1, False)
    assert temporal([1, 0], [True, True], [False, False]) == (0, True)


@given(rewards.flatmap(lambda r: st.tuples(st.just(r), st.lists(st.booleans(), min_size=len(r), max_size=len(r)),
                                           st.lists(st.booleans(), min_size=len(r), max_size=len(r)),
                                           st.lists(st.booleans(), min_size=len(r), max_size=len(r)))))
def test_filtered_votes_are_submultiset_votes(args):
    resp, qa_ok, in_h, ver = args
    tr = consistent_rewards(resp, qa_ok, in_h, ver)
    kept_s = [r for r, ok in zip(resp, qa_ok) if ok]
    kept_t = [r for r, h, v in zip(resp, in_h, ver) if not (h and not v)]
    assert tr.rs == (vote(kept_s) if kept_s else tr.rc)
    assert tr.rt == (vote(kept_t) if kept_t else tr.rc)
    assert tr.structural_fallback == (not kept_s)
    assert tr.temporal_fallback == (not kept_t)
    assert all(x in R for x in (tr.rc, tr.rs, tr.rt))


@given(st.sampled_from(R), st.integers(3, 7), st.data())
def test_majority_dominance(v, n, data):
    k = n // 2 + 1
    others = data.draw(st.lists(st.sampled_from(R), min_size=n - k, max_size=n - k))
    resp = [v] * k + others
    qa_ok = [True] * k + data.draw(st.lists(st.booleans(), min_size=n - k, max_size=n - k))
    in_h = data.draw(st.lists(st.booleans(), min_size=n, max_size=n))
    ver = [True] * k + data.draw(st.lists(st.booleans(), min_size=n - k, max_size=n - k))
    tr = consistent_rewards(resp, qa_ok, in_h, ver)
    assert tr.rc == tr.rs == tr.rt == v


def test_jaccard_and_verdict():
    assert jaccard(set(), set()) == 1.0
    assert qa_verdict(set(), set())
    assert qa_verdict({"a", "b"}, {"a", "b"})
    assert not qa_verdict({"a", "b"}, {"a", "c"})
    assert qa_verdict({"a", "b", "c"}, {"a", "b"})
    assert jaccard({"a"}, {"a", "b"}) == 0.5 and qa_verdict({"a"}, {"a", "b"})


def test_high_value_ties_lowest_id():
    assert high_value_actions([[0, 2, 2], [1, 1, 1], [-2, -2, 0]]) == (1, 0, 2)


def test_qa_index_exact_then_jaccard(qa_pairs):
    idx = QAIndex(qa_pairs)
    q = qa_pairs[5]
    assert idx.nearest(q.task_id, Observation(q.obs.visible, q.obs.held, (1, 2))) == 5
    near = idx.nearest(q.task_id, Observation(q.obs.visible + ("zzz",), q.obs.held, ()))
    assert qa_pairs[near].task_id == q.task_id
    with pytest.raises(KeyError):
        idx.nearest("task99", q.obs)


def test_clean_personas_annotate_with_rubric_truth(world, small_trajs, qa_pairs):
    hub = ScriptedEstimator(world, default_personas(5))
    res = annotate_dataset(small_trajs, hub, qa_pairs)
    assert len(res.trajectories) == len(small_trajs)
    p = hub.personas[0]
    for traj, triples in zip(res.trajectories, res.triples):
        for step, tr in zip(traj.steps, triples):
            truth = hub.rubric_truth(p, step.obs, traj.instruction)[step.action]
            assert tr.rc == tr.rs == tr.rt == truth


def test_temporal_noop_when_all_verify(world, small_trajs, qa_pairs):
    ps = default_personas(5, flip_rate=0.3, seed=5)
    hub = ScriptedEstimator(world, ps)
    hub.verify_plan = lambda persona, instruction, actions: True
    res = annotate_dataset(small_trajs[:60], hub, qa_pairs)
    for triples in res.triples:
        assert all(tr.rt == tr.rc for tr in triples)


def test_parallel_annotation_matches_serial(world, small_trajs, qa_pairs):
    ps = default_personas(5, flip_rate=0.2, qa_error_rate=0.2, verify_error_rate=0.2, seed=8)
    a = annotate_dataset(small_trajs[:50], ScriptedEstimator(world, ps), qa_pairs)
    b = annotate_dataset(small_trajs[:50], ScriptedEstimator(world, ps), qa_pairs, jobs=4)
    assert a.trajectories == b.trajectories and a.triples == b.triples


class _Flaky(ScriptedEstimator):
    def _estimate_all(self, persona, obs, instruction):
        if obs.history and obs.history[0] == 57:
            raise EstimatorError("endpoint down")
        return super()._estimate_all(persona, obs, instruction)


def test_estimator_failure_drops_trajectory(world, small_trajs, qa_pairs, caplog):
    hub = _Flaky(world, default_personas(3))
    res = annotate_dataset(small_trajs, hub, qa_pairs)
    bad = [i for i, t in enumerate(small_trajs) if len(t.steps) > 1 and t.steps[0].action == 57]
    assert bad, "fixture should contain a trajectory starting with action 57"
    assert [i for i, _ in res.dropped] == bad
    assert len(res.trajectories) == len(small_trajs) - len(bad)
    assert all(t.annotated for t in res.trajectories)
    assert "dropping trajectory" in caplog.text


def test_diagnostics_csv(world, small_trajs, qa_pairs, tmp_path):
    ps = default_personas(3)
    res = annotate_dataset(small_trajs[:5], ScriptedEstimator(world, ps), qa_pairs)
    write_diagnostics(tmp_path / "d.csv", res, ps)
    rows = list(csv.DictReader(open(tmp_path / "d.csv")))
    assert len(rows) == sum(len(t.steps) for t in small_trajs[:5])
    assert {"rc", "rs", "rt", "r_1", "qa_pass_3", "temporal_pass_2", "structural_fallback"} <= set(rows[0])


def test_one_flipping_persona_is_outvoted(world, small_trajs, qa_pairs):
    ps = default_personas(5) [:4] + [PersonaSpec(5, "cot", flip_rate=1.0, seed=1)]
    hub = ScriptedEstimator(world, ps)
    res = annotate_dataset(small_trajs, hub, qa_pairs)
    for traj, triples in zip(res.trajectories, res.triples):
        for step, tr in zip(traj.steps, triples):
            assert tr.rc == hub.rubric_truth(ps[0], step.obs, traj.instruction)[step.action]
