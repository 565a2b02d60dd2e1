from __future__ import annotations

import threading

import pytest

from autorl.errors import DuplicateFixture, FixtureMiss, ProviderRefusal, ProviderTimeout
from autorl.gateway import (
    FixtureStore,
    Gateway,
    InferenceSettings,
    Prompt,
    ProviderTransportError,
    ScriptedProvider,
    fingerprint,
    record_fixture,
)

PROMPT = Prompt("system text", "user text", "analysis")


class FlakyProvider:
    provider_id = "flaky"

    def __init__(self, failures: int, reply: str = "ok"):
        self.failures = failures
        self.reply = reply
        self.calls = 0

    def complete(self, prompt, settings):
        self.calls += 1
        if self.calls <= self.failures:
            raise ProviderTransportError("connection reset")
        return self.reply


def test_default_settings():
    s = InferenceSettings()
    assert (s.context_length_tokens, s.max_tokens, s.temperature, s.top_p, s.top_k) == (128000, 1024, 0.6, 0.7, 50)


@pytest.mark.parametrize("kw", [{"max_tokens": 0}, {"temperature": -1}, {"top_p": 0}, {"top_p": 1.5}, {"top_k": 0}])
def test_invalid_settings(kw):
    with pytest.raises(ValueError):
        InferenceSettings(**kw)


def test_fingerprint_depends_on_settings_and_text():
    base = fingerprint(PROMPT, InferenceSettings())
    assert base == fingerprint(Prompt("system text", "user text", "other"), InferenceSettings())
    assert base != fingerprint(PROMPT, InferenceSettings(temperature=0.5))
    assert base != fingerprint(Prompt("system text", "user text!", "analysis"), InferenceSettings())


def test_record_then_replay(tmp_path):
    store = FixtureStore(tmp_path)
    rec = Gateway(ScriptedProvider({"analysis": ["hello"]}), "record", store)
    assert rec.infer(PROMPT).text == "hello"
    replay = Gateway(None, "replay", store)
    out = replay.infer(PROMPT)
    assert out.text == "hello"
    assert out.provider_id == "replay"
    assert replay.provider_calls == 0


def test_replay_miss_names_fingerprint(tmp_path):
    gw = Gateway(None, "replay", FixtureStore(tmp_path))
    with pytest.raises(FixtureMiss) as err:
        gw.infer(PROMPT)
    assert err.value.fingerprint == fingerprint(PROMPT, InferenceSettings())
    assert err.value.fingerprint in str(err.value)


def test_record_idempotent_and_duplicate(tmp_path):
    store = FixtureStore(tmp_path)
    settings = InferenceSettings()
    a = record_fixture(store, PROMPT, settings, "reply")
    assert record_fixture(store, PROMPT, settings, "reply") == a
    with pytest.raises(DuplicateFixture):
        record_fixture(store, PROMPT, settings, "different reply")
    assert len(store.list()) == 1


def test_concurrent_records_single_winner(tmp_path):
    store = FixtureStore(tmp_path)
    settings = InferenceSettings()
    outcomes = []

    def worker(k):
        try:
            record_fixture(store, PROMPT, settings, f"reply {k}")
            outcomes.append("ok")
        except DuplicateFixture:
            outcomes.append("dup")

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert outcomes.count("ok") == 1
    assert len(store.list()) == 1


def test_one_retry_then_success():
    p = FlakyProvider(1)
    gw = Gateway(p, "live", backoff=0)
    assert gw.infer(PROMPT).text == "ok"
    assert p.calls == 2


def test_two_failures_timeout():
    p = FlakyProvider(5)
    gw = Gateway(p, "live", backoff=0)
    with pytest.raises(ProviderTimeout):
        gw.infer(PROMPT)
    assert p.calls == 2


def test_empty_reply_is_refusal():
    gw = Gateway(ScriptedProvider({"analysis": ["   "]}), "live")
    with pytest.raises(ProviderRefusal):
        gw.infer(PROMPT)


def test_mode_requirements(tmp_path):
    with pytest.raises(ValueError):
        Gateway(None, "live")
    with pytest.raises(ValueError):
        Gateway(None, "replay")
    with pytest.raises(ValueError):
        Gateway(ScriptedProvider({}), "bogus")


def test_appendix_extends_user_text():
    p = PROMPT.with_appendix("A").with_appendix("B")
    assert p.user_text == "user text\n\nA\n\nB"
    assert p.appendix == "A\n\nB"
