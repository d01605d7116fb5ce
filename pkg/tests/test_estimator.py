import json
import random

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reward_ensemble.dataset import qa_truth
from reward_ensemble.env import DomainShift, apply_shift, initial_state, observe, replay, rollout_states
from reward_ensemble.estimator import (REWARD_VALUES, EstimatorError, PersonaSpec, Rubric, ScriptedEstimator,
                                       clamp_reward, corrupt_reward, default_personas, perturb_answer)
from reward_ensemble.estimator.remote import (RemoteConfig, RemoteEstimator, WireRequest, WireResponse,
                                              default_temperature, parse_relevant, parse_score, parse_verdict)
from reward_ensemble.estimator.templates import SLOTS, TEMPLATES, render

from conftest import ids, task


def _obs_after(world, *action_keys):
    hist = ids(world, *action_keys)
    return observe(world, replay(world, hist), hist)


# -- rubric ---------------------------------------------------------------------


def test_expert_next_action_scores_two(world):
    r = Rubric(world)
    for t in world.tasks:
        for t_i, (s, _) in enumerate(rollout_states(world, t.expert)[:-1]):
            assert r.score(t, s, t.expert[t_i]) == 2, (t.id, t_i)


def test_invisible_grab_scores_minus_two(world):
    r = Rubric(world)
    assert r.score(task(world, "task04"), initial_state(world), world.action_id("grab cereal")) == -2


def test_unneeded_find_scores_minus_one(world):
    r = Rubric(world)
    assert r.score(task(world, "task07"), initial_state(world), world.action_id("find bathtub")) == -1
    assert r.score(task(world, "task01"), initial_state(world), world.action_id("find fridge")) == -1


def test_no_effect_action_scores_zero(world):
    r = Rubric(world)
    assert r.score(task(world, "task01"), initial_state(world), world.action_id("grab creamybuns")) == 0


def test_interfering_action_scores_minus_two(world):
    r = Rubric(world)
    t = task(world, "task03")  # hold apple and bananas, sit on the sofa
    s = replay(world, ids(world, "grab apple", "grab bananas", "find sofa"))
    assert r.score(t, s, world.action_id("put apple")) == -2


def test_indirect_support_scores_one(world):
    r = Rubric(world)
    t = task(world, "task10")  # toothpaste into the bathroom cabinet
    s = initial_state(world)
    assert r.score(t, s, world.action_id("find bathroom_counter")) == 1
    assert r.score(t, s, world.action_id("find bathroom_cabinet")) == 2


def test_any_find_that_reaches_the_item_scores_two(world):
    shifted = apply_shift(world, DomainShift.from_mapping({"book": "nightstand"}))
    r = Rubric(shifted)
    t = shifted.task_by_id["task07"]
    s = initial_state(shifted)
    for furniture in ("bed", "desk", "nightstand", "closet_drawer"):
        assert r.score(t, s, shifted.action_id(f"find {furniture}")) == 2


# -- scripted personas -----------------------------------------------------------


def test_clean_persona_matches_rubric(world):
    hub = ScriptedEstimator(world, default_personas(3))
    r = Rubric(world)
    t = task(world, "task23")
    instr = t.train_instructions[0]
    for s, o in rollout_states(world, t.expert):
        scores = hub.estimate_all(hub.personas[0], o, instr)
        assert scores == tuple(int(v) for v in r.score_all(t, s))
        a = t.expert[0]
        assert hub.estimate(hub.personas[1], o, a, instr) == scores[a]


def test_flip_rate_one_always_changes_value(world):
    p = PersonaSpec(1, "naive", flip_rate=1.0, seed=4)
    hub = ScriptedEstimator(world, [p])
    t = task(world, "task01")
    o = observe(world, initial_state(world))
    out = hub.estimate(p, o, t.expert[0], t.train_instructions[0])
    assert out != 2
    assert out == ScriptedEstimator(world, [p]).estimate(p, o, t.expert[0], t.train_instructions[0])


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(REWARD_VALUES), st.floats(0, 1), st.integers(-5, 5), st.integers(0, 10**6))
def test_corrupted_reward_stays_in_range(v, flip, bias, seed):
    p = PersonaSpec(1, "cot", flip_rate=flip, bias=bias)
    assert corrupt_reward(v, p, random.Random(seed)) in REWARD_VALUES


def test_clamp():
    assert [clamp_reward(v) for v in (-9, -2, 0, 2, 7)] == [-2, -2, 0, 2, 2]


def test_persona_streams_independent(world):
    ps = default_personas(2, flip_rate=0.5, seed=1)
    hub = ScriptedEstimator(world, ps)
    t = task(world, "task06")
    o = observe(world, initial_state(world))
    a = hub.estimate_all(ps[0], o, t.train_instructions[0])
    b = hub.estimate_all(ps[1], o, t.train_instructions[0])
    assert a != b


def test_qa_clean_answer_matches_truth(world, qa_pairs):
    hub = ScriptedEstimator(world, default_personas(1))
    for q in qa_pairs[:40]:
        instr = world.task_by_id[q.task_id].train_instructions[0]
        assert hub.answer_qa(hub.personas[0], q.query, q.obs, instr) == q.answer


def test_qa_answer_for_cereal_on_wallshelf(world):
    from reward_ensemble.env import Observation
    hub = ScriptedEstimator(world, default_personas(1))
    t = task(world, "task04")
    obs = Observation(("cereal", "mouse", "paper", "wallshelf"), (), ())
    assert hub.answer_qa(hub.personas[0], "", obs, t.train_instructions[0]) == {"wallshelf", "cereal"}


def test_qa_error_rate_one_differs_by_one_element(world, qa_pairs):
    p = PersonaSpec(1, "naive", qa_error_rate=1.0, seed=2)
    hub = ScriptedEstimator(world, [p])
    for q in qa_pairs[:40]:
        instr = world.task_by_id[q.task_id].train_instructions[0]
        ans = hub.answer_qa(p, q.query, q.obs, instr)
        assert len(ans ^ q.answer) == 1


@settings(max_examples=100, deadline=None)
@given(st.frozensets(st.sampled_from("abcdef")), st.frozensets(st.sampled_from("abcdefgh"), min_size=1),
       st.integers(0, 10**6))
def test_perturb_answer_changes_exactly_one(answer, visible, seed):
    out = perturb_answer(answer, sorted(visible), random.Random(seed))
    if answer or set(visible) - answer:
        assert len(out ^ answer) == 1
    assert out - answer <= set(visible)


def test_verify_expert_and_swapped(world):
    hub = ScriptedEstimator(world, default_personas(1))
    p = hub.personas[0]
    t = task(world, "task01")
    instr = t.train_instructions[0]
    assert hub.verify_plan(p, instr, t.expert)
    swapped = list(t.expert)
    swapped[0], swapped[2] = swapped[2], swapped[0]  # put before grab
    assert not hub.verify_plan(p, instr, swapped)
    liar = PersonaSpec(2, "cot", verify_error_rate=1.0)
    hub2 = ScriptedEstimator(world, [liar])
    assert not hub2.verify_plan(liar, instr, t.expert)
    assert hub2.verify_plan(liar, instr, swapped)


def test_misconception_changes_beliefs(world):
    believer = PersonaSpec(1, "naive", misconception={"book": "nightstand"})
    hub = ScriptedEstimator(world, [believer])
    t = task(world, "task07")
    o = observe(world, initial_state(world))
    scores = hub.estimate_all(believer, o, t.train_instructions[0])
    assert scores[world.action_id("grab book")] == -2
    assert scores[world.action_id("find nightstand")] == 2
    # it expects the book on the nightstand, so it does not name it in the living room
    ans = hub.answer_qa(believer, "", o, t.train_instructions[0])
    assert "book" not in ans
    assert qa_truth(world, t, o) >= {"book", "bookshelf"}


def test_unknown_instruction_raises(world):
    hub = ScriptedEstimator(world, default_personas(1))
    with pytest.raises(EstimatorError):
        hub.estimate_all(hub.personas[0], observe(world, initial_state(world)), "do a backflip")


def test_call_counter(world):
    hub = ScriptedEstimator(world, default_personas(2))
    t = task(world, "task01")
    o = observe(world, initial_state(world))
    hub.estimate(hub.personas[0], o, 0, t.train_instructions[0])
    hub.verify_plan(hub.personas[0], t.train_instructions[0], t.expert)
    assert hub.total_calls == 2


def test_persona_json_round_trip():
    p = PersonaSpec(3, "icl-2", flip_rate=0.2, bias=-1, misconception={"apple": "fridge"},
                    qa_error_rate=0.1, verify_error_rate=0.3, seed=9)
    assert PersonaSpec.from_json(json.loads(json.dumps(p.to_json()))) == p


def test_persona_validation():
    with pytest.raises(ValueError):
        PersonaSpec(1, "oracle")
    with pytest.raises(ValueError):
        PersonaSpec(1, "naive", flip_rate=1.5)
    with pytest.raises(ValueError):
        default_personas(0)


def test_default_persona_kinds():
    assert [p.kind for p in default_personas(5)] == ["naive", "icl-1", "icl-2", "icl-3", "cot"]
    assert len(default_personas(7)) == 7
    misled = default_personas(5, misconception={"book": "nightstand"}, misinformed=2)
    assert [bool(p.misconception) for p in misled] == [True, True, False, False, False]


# -- templates and remote --------------------------------------------------------


def test_templates_fill_every_slot():
    slots = {k: f"<{k}>" for k in SLOTS}
    for tid in TEMPLATES:
        text = render(tid, slots)
        assert "{" not in text and "}" not in text
    assert "<action>" in render("naive", slots)
    with pytest.raises(ValueError):
        render("nope", slots)


def test_parsers():
    assert parse_score("reasoning...\nScore: -1\nrelevant objects: a") == -1
    assert parse_score("score: 7") == 2
    assert parse_relevant("Score: 2\nrelevant objects: wall shelf, Cereal.") == {"wall_shelf", "cereal"}
    assert parse_relevant("relevant objects: none") == frozenset()
    assert parse_verdict("It is possible.") is True
    assert parse_verdict("Impossible") is False
    for bad, fn in (("no number", parse_score), ("nothing", parse_relevant), ("maybe", parse_verdict)):
        with pytest.raises(EstimatorError):
            fn(bad)


def test_temperatures():
    assert default_temperature("gemini-1.0-pro") == 0.7
    assert default_temperature("gpt-4-turbo") == 0.5
    assert RemoteConfig(temperature=0.2).effective_temperature == 0.2


def test_wire_round_trip():
    req = WireRequest(2, "cot", {k: k.upper() for k in SLOTS})
    assert WireRequest.from_json(json.loads(json.dumps(req.to_json()))) == req
    assert WireResponse.from_json({"text": "Score: 1"}).text == "Score: 1"
    with pytest.raises(EstimatorError):
        WireResponse.from_json({})


def _remote(world, handler, **cfg):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return RemoteEstimator(world, default_personas(1), RemoteConfig(backoff=0, **cfg), url="http://x", client=client)


def test_remote_wire_estimate(world):
    seen = []

    def handler(request):
        body = json.loads(request.content)
        seen.append(body)
        if body["template_id"] == "qa":
            return httpx.Response(200, json={"text": "relevant objects: apple, kitchen table"})
        if body["template_id"] == "verify":
            return httpx.Response(200, json={"text": "possible"})
        return httpx.Response(200, json={"text": "Score: 2"})

    hub = _remote(world, handler)
    t = task(world, "task01")
    o = observe(world, initial_state(world))
    p = hub.personas[0]
    assert hub.estimate(p, o, t.expert[0], t.train_instructions[0]) == 2
    assert set(seen[0]) == {"persona", "template_id", "slots"}
    assert set(seen[0]["slots"]) == set(SLOTS)
    assert seen[0]["slots"]["action"] == world.actions[t.expert[0]].text
    assert hub.answer_qa(p, "", o, t.train_instructions[0]) == {"apple", "kitchen_table"}
    assert hub.verify_plan(p, t.train_instructions[0], t.expert) is True
    hub.close()


def test_remote_retries_then_fails(world):
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(200, json={"text": "I refuse"})

    hub = _remote(world, handler, retries=2)
    with pytest.raises(EstimatorError):
        hub.estimate(hub.personas[0], observe(world, initial_state(world)), 0, "x")
    assert len(calls) == 3


def test_remote_recovers_after_error(world):
    state = {"n": 0}

    def handler(request):
        state["n"] += 1
        if state["n"] == 1:
            return httpx.Response(503)
        return httpx.Response(200, json={"text": "Score: -2"})

    hub = _remote(world, handler, retries=1)
    assert hub.estimate(hub.personas[0], observe(world, initial_state(world)), 0, "x") == -2


def test_remote_chat_protocol(world):
    def handler(request):
        body = json.loads(request.content)
        assert body["temperature"] == 0.7
        assert "Score" in body["messages"][0]["content"]
        return httpx.Response(200, json={"choices": [{"message": {"content": "Score: 1"}}]})

    hub = _remote(world, handler, protocol="chat")
    assert hub.estimate(hub.personas[0], observe(world, initial_state(world)), 0, "x") == 1


def test_remote_needs_url(world, monkeypatch):
    monkeypatch.delenv("REWARD_LLM_URL", raising=False)
    with pytest.raises(EstimatorError):
        RemoteEstimator(world, default_personas(1))
