import json

import pytest

from dialogic.backend import (
    BackendError,
    BackendTimeout,
    CompletionRequest,
    ContextLengthExceeded,
    HttpBackendConfig,
    HttpCompletionBackend,
    MockBackend,
    RateLimitedError,
    ReplayBackend,
    UnknownPromptError,
    apply_stop,
    prompt_digest,
    record_transcript,
)


def req(prompt="hello", stop=()):
    return CompletionRequest(prompt=prompt, stop=tuple(stop))


def test_mock_echo():
    backend = MockBackend("X")
    assert backend.complete(req()) == "X"


def test_mock_sequence_exhausts():
    backend = MockBackend(["a", "b"])
    assert backend.complete(req()) == "a"
    assert backend.complete(req()) == "b"
    with pytest.raises(BackendError):
        backend.complete(req())


def test_request_param_bounds():
    with pytest.raises(ValueError):
        CompletionRequest(prompt="x", temperature=3.0)


def test_apply_stop_truncates_and_trims():
    text = "first line\nUser next line"
    assert apply_stop(text, ["\nUser"]) == "first line"
    assert apply_stop("abc  ", []) == "abc"
    assert apply_stop("a\nAssistant b\nUser c", ["\nUser", "\nAssistant"]) == "a"


def test_mock_honours_stop():
    backend = MockBackend("keep this\nUser(should vanish")
    assert backend.complete(req(stop=["\nUser"])) == "keep this"


def test_record_then_replay(tmp_path):
    sink = tmp_path / "t.jsonl"
    recorder = record_transcript(MockBackend(["one", "two"]), sink)
    assert recorder.complete(req("p1")) == "one"
    assert recorder.complete(req("p2")) == "two"
    records = [json.loads(line) for line in sink.read_text().splitlines()]
    assert len(records) == 2
    assert records[0]["sha256"] == prompt_digest("p1")
    assert records[0]["completion"] == "one"
    assert records[0]["params"]["temperature"] == 0.7

    replay = ReplayBackend(sink)
    assert replay.complete(req("p2")) == "two"
    assert replay.complete(req("p1")) == "one"
    assert replay.complete(req("p1")) == "one"


def test_replay_unknown_prompt(tmp_path):
    sink = tmp_path / "empty.jsonl"
    sink.write_text("")
    replay = ReplayBackend(sink)
    with pytest.raises(UnknownPromptError):
        replay.complete(req("never seen"))


def test_replay_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        ReplayBackend(tmp_path / "nope.jsonl")


class _FakeResponse:
    def __init__(self, status_code=200, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload
        self.text = text or (json.dumps(payload) if payload else "")

    def json(self):
        if self._payload is None:
            raise ValueError("no json")
        return self._payload


class _FakeSession:
    """Stand-in for requests.Session; returns queued responses."""

    def __init__(self, responses):
        self.responses = responses  # shared with the test for consumption checks
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "body": json, "headers": headers})
        action = self.responses.pop(0)
        if isinstance(action, Exception):
            raise action
        return action


def _live(responses, retries=2):
    config = HttpBackendConfig(
        endpoint="https://api.example/v1/completions", model="m", api_key="k",
        retries=retries, requests_per_second=10000.0)
    return HttpCompletionBackend(config, session=_FakeSession(responses)), responses


def test_live_success_and_wire_format():
    backend, _ = _live([_FakeResponse(payload={"choices": [{"text": " done \nUser x"}]})])
    out = backend.complete(req("p", stop=["\nUser"]))
    assert out == " done"  # only trailing whitespace is trimmed
    call = backend._session.calls[0]
    assert call["body"]["model"] == "m"
    assert call["body"]["prompt"] == "p"
    assert call["body"]["stop"] == ["\nUser"]
    assert call["headers"]["Authorization"] == "Bearer k"


def test_live_retries_on_rate_limit(monkeypatch):
    monkeypatch.setattr("time.sleep", lambda s: None)
    backend, _ = _live([
        _FakeResponse(status_code=429),
        _FakeResponse(status_code=503),
        _FakeResponse(payload={"choices": [{"text": "ok"}]}),
    ])
    assert backend.complete(req()) == "ok"


def test_live_rate_limit_exhausts(monkeypatch):
    monkeypatch.setattr("time.sleep", lambda s: None)
    backend, _ = _live([_FakeResponse(status_code=429)] * 3, retries=2)
    with pytest.raises(RateLimitedError):
        backend.complete(req())


def test_live_context_length_not_retried():
    backend, responses = _live([
        _FakeResponse(status_code=400, text="This model's maximum context length ..."),
        _FakeResponse(payload={"choices": [{"text": "never"}]}),
    ])
    with pytest.raises(ContextLengthExceeded):
        backend.complete(req())
    assert len(responses) == 1  # second response never consumed


def test_live_non_2xx_surfaces_body():
    backend, _ = _live([_FakeResponse(status_code=404, text="no such model")])
    with pytest.raises(BackendError, match="no such model"):
        backend.complete(req())


def test_live_timeout_retried(monkeypatch):
    import requests

    monkeypatch.setattr("time.sleep", lambda s: None)
    backend, _ = _live([
        requests.Timeout("slow"),
        _FakeResponse(payload={"choices": [{"text": "ok"}]}),
    ])
    assert backend.complete(req()) == "ok"


def test_live_timeout_exhausts(monkeypatch):
    import requests

    monkeypatch.setattr("time.sleep", lambda s: None)
    backend, _ = _live([requests.Timeout("slow")] * 3, retries=2)
    with pytest.raises(BackendTimeout):
        backend.complete(req())


def test_record_of_live_pipeline_replays(tmp_path):
    backend, _ = _live([_FakeResponse(payload={"choices": [{"text": "recorded"}]})])
    sink = tmp_path / "live.jsonl"
    recorded = record_transcript(backend, sink)
    assert recorded.complete(req("the prompt")) == "recorded"
    replay = ReplayBackend(sink)
    assert replay.complete(req("the prompt")) == "recorded"
