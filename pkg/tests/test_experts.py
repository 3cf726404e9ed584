from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given
from hypothesis import strategies as st

from der.experts import (
    BENCHMARK_PROFILES,
    ExpertPool,
    ExpertProfile,
    RemoteExpert,
    RemoteNetworkError,
    RemoteProtocolError,
    RemoteStatusError,
    RemoteTimeoutError,
    generate_questions,
    remote_answer,
    synthetic_answer,
)
from der.rewards import overlap_score
from der.types import Question


def make_question(topic=0, difficulty=0.0, reference="ref tokens one two three four five six seven eight"):
    return Question(id="q", text="some question", reference_answer=reference,
                    topic=topic, difficulty=difficulty)


class TestSyntheticAnswer:
    def test_solo_quality_from_skill_and_difficulty(self):
        profile = ExpertProfile("e", skills=(0.8,), transfer_efficiency=0.5, cost=1.0)
        answer = synthetic_answer(profile, make_question(), None, None)
        assert answer.latent_quality == pytest.approx(0.8)

    def test_transfer_lifts_quality(self):
        profile = ExpertProfile("e", skills=(0.5,), transfer_efficiency=0.5, cost=1.0)
        answer = synthetic_answer(profile, make_question(), 0.8, None)
        assert answer.latent_quality == pytest.approx(0.5 + 0.5 * 0.8 * 0.5)

    def test_zero_previous_quality_is_identity(self):
        profile = ExpertProfile("e", skills=(0.6,), transfer_efficiency=0.9, cost=1.0)
        answer = synthetic_answer(profile, make_question(), 0.0, None)
        assert answer.latent_quality == pytest.approx(0.6)

    def test_missing_topic_rejected(self):
        profile = ExpertProfile("e", skills=(0.5,), transfer_efficiency=0.5, cost=1.0)
        question = Question(id="q", text="x")
        with pytest.raises(ValueError):
            synthetic_answer(profile, question, None, None)

    def test_topic_outside_skills_rejected(self):
        profile = ExpertProfile("e", skills=(0.5,), transfer_efficiency=0.5, cost=1.0)
        with pytest.raises(ValueError):
            synthetic_answer(profile, make_question(topic=3), None, None)

    def test_noise_free_calls_are_bitwise_identical(self):
        profile = ExpertProfile("e", skills=(0.7,), transfer_efficiency=0.5, cost=1.0)
        question = make_question(difficulty=0.3)
        first = synthetic_answer(profile, question, 0.5, None)
        second = synthetic_answer(profile, question, 0.5, None)
        assert first == second

    def test_noisy_profile_requires_rng(self):
        profile = ExpertProfile("e", skills=(0.7,), transfer_efficiency=0.5,
                                cost=1.0, noise_sigma=0.1)
        with pytest.raises(ValueError):
            synthetic_answer(profile, make_question(), None, None)

    skill_floats = st.floats(0.0, 1.0)

    @given(skill=skill_floats, eta=skill_floats, prev=skill_floats,
           difficulty=skill_floats)
    def test_transfer_bounds_and_monotonicity(self, skill, eta, prev, difficulty):
        profile = ExpertProfile("e", skills=(skill,), transfer_efficiency=eta, cost=1.0)
        question = make_question(difficulty=difficulty)
        solo = synthetic_answer(profile, question, None, None).latent_quality
        lifted = synthetic_answer(profile, question, prev, None).latent_quality
        assert 0.0 <= lifted <= 1.0
        assert lifted >= solo - 1e-12
        higher = synthetic_answer(profile, question, min(1.0, prev + 0.1), None).latent_quality
        assert higher >= lifted - 1e-12

    def test_overlap_score_monotone_in_latent_quality(self):
        question = make_question()
        qualities, overlaps = [], []
        for k in range(21):
            profile = ExpertProfile("e", skills=(k / 20,), transfer_efficiency=0.0, cost=1.0)
            answer = synthetic_answer(profile, question, None, None)
            qualities.append(answer.latent_quality)
            overlaps.append(overlap_score(answer.text, question.reference_answer))
        assert qualities == sorted(qualities)
        assert overlaps == sorted(overlaps)


class _StubHandler(BaseHTTPRequestHandler):
    behavior = "ok"
    fail_times = 0
    calls = 0
    auth_headers: list = []
    bodies: list = []

    def do_POST(self):
        cls = type(self)
        cls.calls += 1
        cls.auth_headers.append(self.headers.get("Authorization"))
        length = int(self.headers.get("Content-Length", 0))
        cls.bodies.append(json.loads(self.rfile.read(length) or b"{}"))
        if cls.behavior == "flaky" and cls.calls <= cls.fail_times:
            self.send_response(500)
            self.end_headers()
            self.wfile.write(b"boom")
            return
        if cls.behavior == "error500":
            self.send_response(500)
            self.end_headers()
            self.wfile.write(b"server exploded")
            return
        if cls.behavior == "error401":
            self.send_response(401)
            self.end_headers()
            self.wfile.write(b"bad token")
            return
        if cls.behavior == "malformed":
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.end_headers()
            self.wfile.write(json.dumps({"choices": []}).encode())
            return
        if cls.behavior == "slow":
            time.sleep(1.0)
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        body = {"choices": [{"message": {"role": "assistant", "content": "ok"}}]}
        self.wfile.write(json.dumps(body).encode())

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.behavior = "ok"
    _StubHandler.fail_times = 0
    _StubHandler.calls = 0
    _StubHandler.auth_headers = []
    _StubHandler.bodies = []
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()


def stub_expert(url, **kwargs):
    defaults = dict(name="stub", endpoint=url, model="m", cost=1.0, timeout=5.0)
    defaults.update(kwargs)
    return RemoteExpert(**defaults)


class TestRemoteAnswer:
    def test_echo_roundtrip(self, stub_server):
        assert remote_answer(stub_expert(stub_server), "hello") == "ok"

    def test_server_error_carries_status_and_name(self, stub_server):
        _StubHandler.behavior = "error500"
        with pytest.raises(RemoteStatusError) as excinfo:
            remote_answer(stub_expert(stub_server), "hello")
        assert excinfo.value.status == 500
        assert "stub" in str(excinfo.value)

    def test_timeout_distinguished(self, stub_server):
        _StubHandler.behavior = "slow"
        with pytest.raises(RemoteTimeoutError):
            remote_answer(stub_expert(stub_server, timeout=0.1), "hello")

    def test_malformed_response_distinguished(self, stub_server):
        _StubHandler.behavior = "malformed"
        with pytest.raises(RemoteProtocolError):
            remote_answer(stub_expert(stub_server), "hello")

    def test_unreachable_host_is_network_error(self):
        expert = stub_expert("http://127.0.0.1:9/v1/chat", timeout=0.5)
        with pytest.raises(RemoteNetworkError):
            remote_answer(expert, "hello")

    def test_malformed_endpoint_rejected_at_construction(self):
        with pytest.raises(ValueError):
            stub_expert("ftp://example.com")

    def test_request_shape_and_credentials(self, stub_server):
        expert = stub_expert(stub_server, model="big", max_tokens=64, temperature=0.5)
        remote_answer(expert, "the prompt", credentials="sekrit")
        assert _StubHandler.auth_headers[-1] == "Bearer sekrit"
        body = _StubHandler.bodies[-1]
        assert body == {
            "model": "big",
            "messages": [{"role": "user", "content": "the prompt"}],
            "temperature": 0.5,
            "max_tokens": 64,
        }

    def test_pool_reads_api_key_from_environment(self, stub_server, monkeypatch):
        monkeypatch.setenv("DER_API_KEY", "env-token")
        pool = ExpertPool([stub_expert(stub_server)])
        pool.invoke(0, "prompt", make_question(), None)
        assert _StubHandler.auth_headers[-1] == "Bearer env-token"


class TestExpertPool:
    def test_retries_transient_failures(self, stub_server):
        _StubHandler.behavior = "flaky"
        _StubHandler.fail_times = 2
        pool = ExpertPool([stub_expert(stub_server)], retries=2, backoff=0.01)
        answer = pool.invoke(0, "prompt", make_question(), None)
        assert answer.text == "ok"
        assert _StubHandler.calls == 3

    def test_exhausted_retries_raise(self, stub_server):
        _StubHandler.behavior = "error500"
        pool = ExpertPool([stub_expert(stub_server)], retries=1, backoff=0.01)
        with pytest.raises(RemoteStatusError):
            pool.invoke(0, "prompt", make_question(), None)
        assert _StubHandler.calls == 2

    def test_client_errors_not_retried(self, stub_server):
        _StubHandler.behavior = "error401"
        pool = ExpertPool([stub_expert(stub_server)], retries=2, backoff=0.01)
        with pytest.raises(RemoteStatusError):
            pool.invoke(0, "prompt", make_question(), None)
        assert _StubHandler.calls == 1

    def test_synthetic_invoke_sets_producer(self):
        pool = ExpertPool(list(BENCHMARK_PROFILES))
        question = make_question(topic=1, difficulty=0.1)
        answer = pool.invoke(2, "prompt", question, None)
        assert answer.producer == 2

    def test_invalid_index_rejected(self):
        pool = ExpertPool(list(BENCHMARK_PROFILES))
        with pytest.raises(IndexError):
            pool.invoke(9, "prompt", make_question(), None)

    def test_cost_model_matches_profiles(self):
        pool = ExpertPool(list(BENCHMARK_PROFILES))
        model = pool.cost_model()
        for i, profile in enumerate(BENCHMARK_PROFILES):
            assert model.cost(i) == profile.cost

    def test_determinism_flags(self, stub_server):
        assert ExpertPool(list(BENCHMARK_PROFILES)).is_deterministic()
        noisy = ExpertProfile("n", skills=(0.5,), transfer_efficiency=0.1,
                              cost=1.0, noise_sigma=0.2)
        assert not ExpertPool([noisy]).is_deterministic()
        assert not ExpertPool([stub_expert(stub_server)]).is_synthetic()

    def test_empty_pool_rejected(self):
        with pytest.raises(ValueError):
            ExpertPool([])


class TestGenerateQuestions:
    def test_deterministic_given_seed(self):
        assert generate_questions(10, seed=3) == generate_questions(10, seed=3)

    def test_all_fields_populated(self):
        for q in generate_questions(30, seed=1):
            assert q.text and q.reference_answer
            assert q.topic is not None and 0 <= q.topic < 3
            assert q.difficulty is not None and 0.0 <= q.difficulty <= 1.0

    def test_benchmark_profiles_have_no_universal_winner(self):
        n_topics = len(BENCHMARK_PROFILES[0].skills)
        best_per_topic = {
            t: max(range(len(BENCHMARK_PROFILES)),
                   key=lambda i: BENCHMARK_PROFILES[i].skills[t])
            for t in range(n_topics)
        }
        assert len(set(best_per_topic.values())) > 1
