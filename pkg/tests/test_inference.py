from __future__ import annotations

import pytest

from deem.backend import CompletionClient, MockBackend, ResponseCache
from deem.corpus import StanceLabel
from deem.encoder import HashingEncoder
from deem.expertfilter import ExpertPool, ExpertStats
from deem.expertgen import DemonstrationSpec, PromptError
from deem.inference import (
    InferenceConfig,
    InferenceError,
    Prediction,
    fixed_experts_from_pool,
    majority_vote,
    parse_inference_response,
    predict,
    predict_batch,
    render_inference_prompt,
)
from deem.repository import build_repository

from conftest import expert, make_corpus, make_instance


def _demos(d=2, with_discussion=True):
    experts = tuple(expert(x) for x in ["Political Expert", "Media Expert", "Ethics Expert"])
    specs = []
    labels = [StanceLabel.FAVOR, StanceLabel.AGAINST]
    for index in range(d):
        specs.append(
            DemonstrationSpec(
                instance=make_instance(
                    f"demo-{index}",
                    sentence=f"demo sentence {index}",
                    target="Alex Reed",
                    label=labels[index % 2],
                ),
                experts=experts,
                discussion=(
                    f"Political Expert: point {index}.\nMedia Expert: reply {index}."
                    if with_discussion
                    else None
                ),
            )
        )
    return specs


def _client():
    return CompletionClient(MockBackend(fallback=True))


def _query(id="q", sentence="query sentence about Alex Reed"):
    return make_instance(id, sentence=sentence, target="Alex Reed", split="test")


class TestConfig:
    def test_defaults(self):
        config = InferenceConfig()
        assert (config.d, config.h, config.turns, config.temperature) == (2, 3, 1, 0.0)
        assert config.mode == "deem"

    def test_unknown_mode(self):
        with pytest.raises(InferenceError):
            InferenceConfig(mode="telepathy")

    def test_nonzero_temperature_rejected_outside_sc(self):
        with pytest.raises(InferenceError):
            InferenceConfig(mode="deem", temperature=0.5)

    def test_sc_needs_positive_temperature_for_multiple_samples(self):
        with pytest.raises(InferenceError):
            InferenceConfig(mode="self_consistency", sc_samples=3, sc_temperature=0.0)
        config = InferenceConfig(mode="self_consistency", sc_samples=3, sc_temperature=0.7)
        assert config.sc_samples == 3

    def test_sc_single_sample_degenerate_allowed(self):
        config = InferenceConfig(mode="self_consistency", sc_samples=1, sc_temperature=0.0)
        assert config.sc_samples == 1


class TestRenderPrompt:
    def test_deem_structure(self):
        experts = [expert(x) for x in ["Political Expert", "Media Expert", "Social Media Expert"]]
        prompt = render_inference_prompt(_demos(), _query(), experts, turns=1, d=2)
        assert prompt.count("Final Stance:") == 2  # one per demo, query slot open
        assert prompt.endswith("Discussion (1 round):")
        assert "Political Expert; Media Expert; Social Media Expert" in prompt

    def test_turns_marker_pluralized(self):
        experts = [expert("Political Expert")]
        prompt = render_inference_prompt(_demos(), _query(), experts, turns=3, d=2)
        assert prompt.endswith("Discussion (3 rounds):")

    def test_few_shot_has_no_expert_machinery(self):
        prompt = render_inference_prompt(_demos(), _query(), [], d=2, few_shot=True)
        assert "Experts" not in prompt
        assert "Discussion" not in prompt
        assert prompt.endswith("Stance:")

    def test_expert_mode_requires_experts(self):
        with pytest.raises(PromptError):
            render_inference_prompt(_demos(), _query(), [], turns=1, d=2)

    def test_demo_count_checked(self):
        with pytest.raises(PromptError):
            render_inference_prompt(_demos(d=1), _query(), [expert("A Expert")], d=2)

    def test_golden_prompt(self):
        # Frozen from the first verified rendering of the template contract.
        demos = _demos(d=1)
        prompt = render_inference_prompt(
            demos, _query(), [expert("Polling Expert"), expert("Legal Expert")], turns=1, d=1
        )
        expected = (
            "Sentence: demo sentence 0\n"
            "Target: Alex Reed\n"
            "Experts: Political Expert; Media Expert; Ethics Expert\n"
            "Discussion (1 round):\n"
            "Political Expert: point 0.\n"
            "Media Expert: reply 0.\n"
            "Final Stance: FAVOR\n"
            "\n"
            "Sentence: query sentence about Alex Reed\n"
            "Target: Alex Reed\n"
            "Experts: Polling Expert; Legal Expert\n"
            "Discussion (1 round):"
        )
        assert prompt == expected

    def test_multi_target_final_stance_per_target(self):
        demo = DemonstrationSpec(
            instance=make_instance(
                "demo-m",
                sentence="both candidates spoke",
                stances=(("Trump", StanceLabel.FAVOR), ("Clinton", StanceLabel.AGAINST)),
            ),
            experts=(expert("Political Expert"),),
            discussion="Political Expert: split take.",
        )
        query = make_instance(
            "q-m",
            sentence="rally coverage",
            stances=(("Trump", StanceLabel.NONE), ("Clinton", StanceLabel.NONE)),
            split="test",
        )
        prompt = render_inference_prompt([demo], query, [expert("Media Expert")], turns=1, d=1)
        demo_block = prompt.split("\n\n")[0]
        assert demo_block.count("Final Stance:") == 2


class TestParseResponse:
    def test_final_stance_primary(self):
        labels, discussion, ok = parse_inference_response(
            "Political Expert: looks supportive.\nFinal Stance: FAVOR", 1
        )
        assert ok and labels == [StanceLabel.FAVOR]
        assert discussion == "Political Expert: looks supportive."

    def test_bare_stance_secondary(self):
        labels, _, ok = parse_inference_response("Stance: AGAINST", 1)
        assert ok and labels == [StanceLabel.AGAINST]

    def test_fallback_last_synonym(self):
        labels, _, ok = parse_inference_response(
            "the earlier favor reading is wrong; this is against the target", 1
        )
        assert ok and labels == [StanceLabel.AGAINST]

    def test_unparseable(self):
        labels, discussion, ok = parse_inference_response("no stance words here", 1)
        assert not ok and labels == []
        assert discussion == "no stance words here"

    def test_multi_target(self):
        labels, _, ok = parse_inference_response(
            "Final Stance: FAVOR\nFinal Stance: NEUTRAL", 2
        )
        assert ok and labels == [StanceLabel.FAVOR, StanceLabel.NEUTRAL]


class TestMajorityVote:
    def test_majority(self):
        votes = [StanceLabel.FAVOR, StanceLabel.FAVOR, StanceLabel.AGAINST]
        assert majority_vote(votes) is StanceLabel.FAVOR

    def test_tie_breaks_against_first(self):
        assert majority_vote([StanceLabel.FAVOR, StanceLabel.AGAINST]) is StanceLabel.AGAINST

    def test_tie_table(self):
        # Documented priority: against > favor > neutral > none.
        assert majority_vote([StanceLabel.NEUTRAL, StanceLabel.NONE]) is StanceLabel.NEUTRAL
        assert majority_vote([StanceLabel.FAVOR, StanceLabel.NEUTRAL]) is StanceLabel.FAVOR

    def test_single_vote(self):
        assert majority_vote([StanceLabel.NONE]) is StanceLabel.NONE


def _pool():
    rows = [
        ("Political Expert", 50, 40),
        ("Media Expert", 30, 15),
        ("Ethics Expert", 20, 19),
        ("Economic Expert", 10, 9),
        ("Polling Expert", 5, 1),
    ]
    stats = [ExpertStats(expert(name), count, correct) for name, count, correct in rows]
    return ExpertPool(
        experts=stats,
        acc_threshold=0.0,
        top_k=20,
        per_sentence={},
    )


class TestFixedExperts:
    def test_top3_by_frequency(self):
        names = [e.canonical for e in fixed_experts_from_pool(_pool(), "top3", "frequency")]
        assert names == ["political", "media", "ethics"]

    def test_bottom3_by_frequency(self):
        names = [e.canonical for e in fixed_experts_from_pool(_pool(), "bottom3", "frequency")]
        assert names == ["polling", "economic", "ethics"]

    def test_top3_by_accuracy(self):
        names = [e.canonical for e in fixed_experts_from_pool(_pool(), "top3", "accuracy")]
        assert names == ["ethics", "economic", "political"]

    def test_bottom3_by_accuracy(self):
        names = [e.canonical for e in fixed_experts_from_pool(_pool(), "bottom3", "accuracy")]
        assert names == ["polling", "media", "political"]


def _mini_repo_and_corpus():
    instances = [
        make_instance("tr-0", sentence="the tunnel project creates jobs", label=StanceLabel.FAVOR),
        make_instance("tr-1", sentence="the library budget was cut", label=StanceLabel.AGAINST),
        make_instance("tr-2", sentence="the stadium subsidy wastes taxes", label=StanceLabel.AGAINST),
        make_instance("q-0", sentence="tunnel jobs for the harbor", split="test"),
        make_instance("q-1", sentence="library cuts hurt children", split="test"),
    ]
    corpus = make_corpus(instances)
    pool = ExpertPool(
        experts=[
            ExpertStats(expert("Political Expert"), 3, 3),
            ExpertStats(expert("Economic Expert"), 2, 2),
            ExpertStats(expert("Media Expert"), 1, 1),
        ],
        acc_threshold=0.5,
        top_k=20,
        per_sentence={
            "tr-0": [expert("Economic Expert"), expert("Political Expert")],
            "tr-1": [expert("Political Expert")],
            "tr-2": [expert("Media Expert")],
        },
    )
    encoder = HashingEncoder()
    repo = build_repository(pool, corpus, encoder)
    return corpus, pool, repo


class TestPredict:
    def test_deem_mode_uses_retrieved_experts(self):
        corpus, pool, repo = _mini_repo_and_corpus()
        config = InferenceConfig(mode="deem", h=3)
        query = [inst for inst in corpus.instances if inst.split == "test"][0]
        prediction = predict(
            query, repo, pool, _client(), config, _demos(), model_id="mock-chat"
        )
        assert prediction.parse_ok
        assert len(prediction.labels) == 1
        assert prediction.experts_used  # retrieved, non-empty
        assert prediction.samples

    def test_few_shot_mode_never_touches_encoder_or_repo(self):
        corpus, pool, repo = _mini_repo_and_corpus()
        encoder_calls_before = repo.encoder.calls
        config = InferenceConfig(mode="few_shot")
        queries = [inst for inst in corpus.instances if inst.split == "test"]
        predictions = predict_batch(
            queries, None, None, _client(), config, _demos(), model_id="mock-chat"
        )
        assert len(predictions) == 2
        assert all(p.experts_used == [] for p in predictions)
        assert repo.encoder.calls == encoder_calls_before

    def test_fixed_experts_mode_skips_retrieval(self):
        corpus, pool, repo = _mini_repo_and_corpus()
        encoder_calls_before = repo.encoder.calls
        config = InferenceConfig(mode="fixed_experts", fixed_rank="top3", fixed_by="frequency")
        query = [inst for inst in corpus.instances if inst.split == "test"][0]
        prediction = predict(query, None, pool, _client(), config, _demos(), model_id="mock-chat")
        assert [e.canonical for e in prediction.experts_used] == ["political", "economic", "media"]
        assert repo.encoder.calls == encoder_calls_before

    def test_anonymized_mode_renames_roles(self):
        corpus, pool, repo = _mini_repo_and_corpus()
        config = InferenceConfig(mode="anonymized", anonymized_style="expert_abc")
        query = [inst for inst in corpus.instances if inst.split == "test"][0]
        prediction = predict(query, repo, pool, _client(), config, _demos(), model_id="mock-chat")
        displays = [e.display for e in prediction.experts_used]
        assert displays == [f"Expert {letter}" for letter in "ABC"[: len(displays)]]

    def test_anonymized_prompt_differs_only_in_role_tokens(self):
        corpus, pool, repo = _mini_repo_and_corpus()
        from deem.inference import _prepare

        query = [inst for inst in corpus.instances if inst.split == "test"][0]
        demos = _demos()
        base = _prepare(query, repo, pool, InferenceConfig(mode="deem"), demos)
        anon = _prepare(query, repo, pool, InferenceConfig(mode="anonymized"), demos)
        rebuilt = anon.prompt
        for role, original in zip(anon.experts_used, base.experts_used):
            rebuilt = rebuilt.replace(role.display, original.display, 1)
        assert rebuilt == base.prompt

    def test_self_consistency_votes_majority(self):
        corpus, pool, repo = _mini_repo_and_corpus()

        class ScriptedSC(MockBackend):
            responses = {0: "Stance: FAVOR", 1: "Stance: FAVOR", 2: "Stance: AGAINST"}

            def complete(self, req):
                self.calls += 1
                return self.responses[req.sample_index]

        config = InferenceConfig(mode="self_consistency", sc_samples=3, sc_temperature=0.7)
        query = [inst for inst in corpus.instances if inst.split == "test"][0]
        prediction = predict(
            query, None, None, CompletionClient(ScriptedSC()), config, _demos(),
            model_id="mock-chat",
        )
        assert prediction.labels == [StanceLabel.FAVOR]
        assert len(prediction.samples) == 3

    def test_self_consistency_tie_goes_against(self):
        class ScriptedSC(MockBackend):
            responses = {0: "Stance: FAVOR", 1: "Stance: AGAINST"}

            def complete(self, req):
                self.calls += 1
                return self.responses[req.sample_index]

        config = InferenceConfig(mode="self_consistency", sc_samples=2, sc_temperature=0.7)
        prediction = predict(
            _query(), None, None, CompletionClient(ScriptedSC()), config, _demos(),
            model_id="mock-chat",
        )
        assert prediction.labels == [StanceLabel.AGAINST]

    def test_self_consistency_n1_reduces_to_single_sample(self):
        config = InferenceConfig(mode="self_consistency", sc_samples=1)
        baseline = InferenceConfig(mode="few_shot")
        client_a, client_b = _client(), _client()
        sc = predict(_query(), None, None, client_a, config, _demos(), model_id="mock-chat")
        single = predict(_query(), None, None, client_b, baseline, _demos(), model_id="mock-chat")
        assert sc.labels == single.labels
        assert sc.samples == single.samples

    def test_parse_failure_becomes_sentinel(self):
        class Garbled(MockBackend):
            def complete(self, req):
                self.calls += 1
                return "completely unusable output"

        prediction = predict(
            _query(), None, None, CompletionClient(Garbled()),
            InferenceConfig(mode="few_shot"), _demos(), model_id="mock-chat",
        )
        assert not prediction.parse_ok
        assert prediction.labels == [None]

    def test_backend_error_becomes_sentinel(self):
        prediction = predict(
            _query(), None, None, CompletionClient(MockBackend(fallback=False)),
            InferenceConfig(mode="few_shot"), _demos(), model_id="mock-chat",
        )
        assert not prediction.parse_ok
        assert prediction.labels == [None]
        assert prediction.error


class TestPredictBatch:
    def test_empty_input(self):
        assert predict_batch(
            [], None, None, _client(), InferenceConfig(mode="few_shot"), _demos(),
            model_id="mock-chat",
        ) == []

    def test_order_preserved_and_cache_replay(self, tmp_path):
        corpus, pool, repo = _mini_repo_and_corpus()
        queries = [inst for inst in corpus.instances if inst.split == "test"]
        cache = ResponseCache(tmp_path / "cache")
        config = InferenceConfig(mode="deem")
        warm = predict_batch(
            queries, repo, pool,
            CompletionClient(MockBackend(fallback=True), cache),
            config, _demos(), model_id="mock-chat", parallelism=2,
        )
        replay_client = CompletionClient(MockBackend(fallback=False), cache)
        replay = predict_batch(
            queries, repo, pool, replay_client, config, _demos(),
            model_id="mock-chat", parallelism=2,
        )
        assert replay_client.provider_calls == 0
        assert [p.to_dict() for p in warm] == [p.to_dict() for p in replay]
        assert [p.instance_id for p in replay] == [q.id for q in queries]

    def test_one_bad_item_among_many(self):
        corpus, pool, repo = _mini_repo_and_corpus()
        queries = [inst for inst in corpus.instances if inst.split == "test"]

        class OneGap(MockBackend):
            def complete(self, req):
                if "library cuts" in req.prompt:
                    self.calls += 1
                    from deem.backend import MockMissError

                    raise MockMissError("gap")
                return super().complete(req)

        predictions = predict_batch(
            queries, repo, pool, CompletionClient(OneGap(fallback=True)),
            InferenceConfig(mode="deem"), _demos(), model_id="mock-chat",
        )
        assert [p.parse_ok for p in predictions] == [True, False]

    def test_determinism_at_temperature_zero(self):
        corpus, pool, repo = _mini_repo_and_corpus()
        queries = [inst for inst in corpus.instances if inst.split == "test"]
        config = InferenceConfig(mode="deem")
        a = predict_batch(
            queries, repo, pool, _client(), config, _demos(), model_id="mock-chat"
        )
        b = predict_batch(
            queries, repo, pool, _client(), config, _demos(), model_id="mock-chat"
        )
        assert [p.to_dict() for p in a] == [p.to_dict() for p in b]


def test_prediction_roundtrip_dict():
    prediction = Prediction(
        instance_id="x",
        labels=[StanceLabel.FAVOR, None],
        discussion="talk",
        experts_used=[expert("Political Expert")],
        samples=["raw"],
        parse_ok=False,
    )
    assert Prediction.from_dict(prediction.to_dict()).to_dict() == prediction.to_dict()
