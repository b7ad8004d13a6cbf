import json
import socket
import sys
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ser_engine.errors import ProtocolError, StageBindingError, StageError
from ser_engine.pipeline import (
    MockTransport, PipelineError, SessionRecord, StageBinding, StageRequest, StageResponse,
    Transport, TransportFailure, bind_stage, load_bindings, run_pipeline,
)

from helpers import memorization_checkpoint

TRANSCRIPT = "kids are talking by the door"
TRANSLATION = "الأطفال يتحدثون عند الباب"


@pytest.fixture(scope="module")
def memorized(tmp_path_factory):
    return memorization_checkpoint(tmp_path_factory.mktemp("memo"))


def mock_bindings(asr=None):
    return {
        "asr": bind_stage("asr", "mock", responses=asr or {"*": TRANSCRIPT}),
        "mt": bind_stage("mt", "mock", responses={TRANSCRIPT: TRANSLATION}),
        "tts": bind_stage("tts", "mock", responses={"*": "/tmp/out.wav"}),
    }


# -- stage bindings -----------------------------------------------------------------

def test_mock_fixture_file(tmp_path):
    fixture = tmp_path / "asr.json"
    fixture.write_text(json.dumps({"hello.wav": TRANSCRIPT}))
    binding = bind_stage("asr", "mock", fixture=str(fixture))
    assert binding.call("hello.wav") == TRANSCRIPT
    assert binding.call("/some/dir/hello.wav") == TRANSCRIPT
    with pytest.raises(StageError, match="no fixture"):
        binding.call("other.wav")


def test_load_bindings_resolves_relative_fixtures(tmp_path):
    (tmp_path / "f.json").write_text(json.dumps({"responses": {"*": "x"}}))
    (tmp_path / "stages.json").write_text(json.dumps({"mt": {"transport": "mock", "fixture": "f.json"}}))
    bindings = load_bindings(tmp_path / "stages.json")
    assert bindings["mt"].call("anything") == "x"


def test_bind_stage_rejects_bad_options():
    with pytest.raises(ValueError):
        bind_stage("asr", "carrier-pigeon")
    with pytest.raises(ValueError):
        bind_stage("vision", "mock", responses={})
    with pytest.raises(ValueError):
        bind_stage("asr", "mock", responses={}, colour="blue")


STAGE_SCRIPT = r"""
import json, sys
req = json.loads(sys.stdin.readline())
mode = sys.argv[1]
if mode == "fail":
    sys.stderr.write("model weights missing\n")
    sys.exit(3)
if mode == "garbage":
    print("not json at all")
else:
    print(json.dumps({"id": req["id"], "status": "ok",
                      "output": req["payload"].upper() + "|" + req["params"].get("emotion", "")}))
"""


def test_subprocess_transport(tmp_path):
    script = tmp_path / "stage.py"
    script.write_text(STAGE_SCRIPT)
    ok = bind_stage("tts", "subprocess", command=[sys.executable, str(script), "ok"])
    assert ok.call("salam", {"emotion": "sad"}) == "SALAM|sad"
    bad = bind_stage("asr", "subprocess", command=[sys.executable, str(script), "fail"])
    with pytest.raises(StageError, match="model weights missing") as info:
        bad.call("a.wav")
    assert "status 3" in str(info.value)
    assert bad.attempts == 2
    garbled = bind_stage("mt", "subprocess", command=[sys.executable, str(script), "garbage"])
    with pytest.raises(ProtocolError):
        garbled.call("x")
    missing = bind_stage("mt", "subprocess", command=[str(tmp_path / "no-such-binary")])
    with pytest.raises(StageBindingError):
        missing.call("x")


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if self.path.endswith("/broken"):
            self.send_response(500)
            self.end_headers()
            return
        reply = json.dumps({"id": body["id"], "status": "ok", "output": body["payload"][::-1]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(reply)))
        self.end_headers()
        self.wfile.write(reply)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    server.server_close()


def test_http_transport(http_server):
    assert bind_stage("mt", "http", url=http_server + "/stage").call("abc") == "cba"
    broken = bind_stage("mt", "http", url=http_server + "/broken")
    with pytest.raises(StageError, match="500"):
        broken.call("abc")
    assert broken.attempts == 2


def test_unreachable_endpoint_is_binding_error():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    binding = bind_stage("asr", "http", url=f"http://127.0.0.1:{port}/stage", timeout=2)
    with pytest.raises(StageBindingError):
        binding.call("a.wav")


class Flaky(Transport):
    def __init__(self, failures, reply=None):
        self.failures = failures
        self.reply = reply
        self.calls = 0

    def exchange(self, request, timeout):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransportFailure("connection reset")
        return self.reply or {"id": request.id, "status": "ok", "output": "fine"}


def test_retry_once_on_transport_failure():
    t = Flaky(1)
    assert StageBinding("asr", t).call("x") == "fine"
    assert t.calls == 2
    t = Flaky(5)
    with pytest.raises(StageError, match="connection reset"):
        StageBinding("asr", t).call("x")
    assert t.calls == 2


def test_no_retry_on_error_status():
    class Refuses(Transport):
        calls = 0

        def exchange(self, request, timeout):
            Refuses.calls += 1
            return {"id": request.id, "status": "error", "error_message": "cannot hear"}

    with pytest.raises(StageError, match="cannot hear"):
        StageBinding("asr", Refuses()).call("x")
    assert Refuses.calls == 1


@pytest.mark.parametrize("raw", [
    "{not json",
    "[1, 2]",
    {"id": "other", "status": "ok", "output": "x"},
    {"id": "r1", "status": "ok"},
    {"id": "r1", "status": "ok", "output": "x", "error_message": "y"},
    {"id": "r1", "status": "error"},
    {"id": "r1", "status": "maybe", "output": "x"},
])
def test_protocol_errors(raw):
    with pytest.raises(ProtocolError):
        StageResponse.parse(raw, "mt", "r1")


def test_request_wire_format():
    req = StageRequest("r1", "tts", "نص", {"emotion": "calm"})
    assert json.loads(req.to_json()) == {"id": "r1", "stage": "tts", "payload": "نص", "params": {"emotion": "calm"}}
    assert StageResponse.parse(json.dumps({"id": "r1", "status": "ok", "output": "a"}), "tts", "r1").output == "a"


# -- sessions -------------------------------------------------------------------------

def test_pipeline_with_mock_stages(memorized, tmp_path):
    ckpt, paths, labels, _ = memorized
    log = tmp_path / "sessions.jsonl"
    seen = {}

    class Recording(MockTransport):
        def exchange(self, request, timeout):
            seen[request.stage] = request
            return super().exchange(request, timeout)

    bindings = mock_bindings()
    bindings["tts"] = StageBinding("tts", Recording({"*": "/tmp/out.wav"}))
    record = run_pipeline(paths[5], ckpt, bindings, session_log=log)
    assert record.emotion == labels[5]
    assert record.transcript_en == TRANSCRIPT
    assert record.translation_ar == TRANSLATION
    assert record.tts_audio == "/tmp/out.wav"
    assert 0.0 < record.emotion_confidence <= 1.0
    assert record.emotion_confidence == max(record.probabilities.values())
    assert seen["tts"].params == {"emotion": labels[5]}
    assert list(record.stage_timings_ms) == ["emotion", "asr", "mt", "tts"]
    logged = [json.loads(line) for line in log.read_text(encoding="utf-8").splitlines()]
    assert SessionRecord.from_dict(logged[0]) == record


def test_memorized_model_recovers_every_training_label(memorized):
    ckpt, paths, labels, history = memorized
    assert history.train_accuracy[-1] == 1.0
    for path, label in zip(paths, labels):
        assert run_pipeline(path, ckpt, emotion_only=True).emotion == label


def test_asr_error_leaves_partial_record(memorized, tmp_path):
    ckpt, paths, labels, _ = memorized
    log = tmp_path / "log.jsonl"
    bindings = mock_bindings(asr={"*": {"status": "error", "error_message": "audio unintelligible"}})
    with pytest.raises(PipelineError) as info:
        run_pipeline(paths[0], ckpt, bindings, session_log=log)
    record = info.value.record
    assert info.value.stage == "asr" and record.failed_stage == "asr"
    assert record.emotion == labels[0]
    assert record.transcript_en is None and "transcript_en" not in record.to_dict()
    assert "audio unintelligible" in record.error
    assert json.loads(log.read_text(encoding="utf-8"))["failed_stage"] == "asr"


def test_unbound_stage_fails_unless_emotion_only(memorized):
    ckpt, paths, labels, _ = memorized
    record = run_pipeline(paths[9], ckpt, stage_bindings=None, emotion_only=True)
    assert record.emotion == labels[9] and record.transcript_en is None
    with pytest.raises(PipelineError) as info:
        run_pipeline(paths[9], ckpt, {"asr": mock_bindings()["asr"]})
    assert info.value.stage == "mt"
    assert info.value.record.transcript_en is None


def test_missing_checkpoint_fails_in_emotion_stage(tmp_path, memorized):
    _, paths, _, _ = memorized
    with pytest.raises(PipelineError) as info:
        run_pipeline(paths[0], tmp_path / "nope.serm", emotion_only=True)
    assert info.value.stage == "emotion"


text = st.text(max_size=30)


@given(st.builds(
    SessionRecord, input_audio=text, emotion=st.none() | text,
    emotion_confidence=st.none() | st.floats(0, 1),
    probabilities=st.none() | st.dictionaries(text, st.floats(0, 1), max_size=8),
    transcript_en=st.none() | text, translation_ar=st.none() | text, tts_audio=st.none() | text,
    stage_timings_ms=st.dictionaries(st.sampled_from(["emotion", "asr", "mt", "tts"]), st.floats(0, 1e6)),
    failed_stage=st.none() | st.sampled_from(["emotion", "asr", "mt", "tts"]), error=st.none() | text,
))
def test_session_record_round_trip(record):
    assert SessionRecord.from_dict(json.loads(record.to_json())) == record
