"""Emotion detection followed by external ASR, MT and TTS stages.

The emotion model runs in-process. The other three stages live behind a
small JSON contract:

request   ``{"id", "stage", "payload", "params"}``
response  ``{"id", "status": "ok" | "error", "output" | "error_message"}``

carried over one of three transports: a subprocess (one JSON object per
line on stdin/stdout), HTTP (``POST /stage``), or a mock fixture file.
"""

from __future__ import annotations

import json
import logging
import subprocess
import time
import urllib.error
import urllib.request
import uuid
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .audio import CANONICAL_DURATION, CANONICAL_RATE, decode_wav, fix_duration, resample
from .errors import ProtocolError, SerError, StageBindingError, StageError
from .features import FrameConfig, MelConfig, apply_scaler, extract_features
from .nn import load_checkpoint, predict

log = logging.getLogger(__name__)

STAGES = ("asr", "mt", "tts")
DEFAULT_TIMEOUT = 60.0


@dataclass
class StageRequest:
    id: str
    stage: str
    payload: str
    params: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), ensure_ascii=False)


@dataclass
class StageResponse:
    id: str
    status: str
    output: str | None = None
    error_message: str | None = None

    def to_dict(self):
        d = {"id": self.id, "status": self.status}
        if self.status == "ok":
            d["output"] = self.output
        else:
            d["error_message"] = self.error_message
        return d

    @classmethod
    def parse(cls, raw, stage, expected_id):
        """Validate a decoded response object; raises ProtocolError."""
        if isinstance(raw, (str, bytes)):
            try:
                raw = json.loads(raw)
            except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                raise ProtocolError(stage, f"response is not JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ProtocolError(stage, "response is not a JSON object")
        if raw.get("id") != expected_id:
            raise ProtocolError(stage, f"response id {raw.get('id')!r} does not match request {expected_id!r}")
        status = raw.get("status")
        output, message = raw.get("output"), raw.get("error_message")
        if status == "ok":
            if not isinstance(output, str) or message is not None:
                raise ProtocolError(stage, "ok response must carry a string output and no error_message")
        elif status == "error":
            if not isinstance(message, str) or output is not None:
                raise ProtocolError(stage, "error response must carry an error_message and no output")
        else:
            raise ProtocolError(stage, f"unknown status {status!r}")
        return cls(expected_id, status, output, message)


class TransportFailure(Exception):
    """Infrastructure trouble (spawn, connect, timeout, non-zero exit, HTTP status)."""


class Transport:
    def exchange(self, request: StageRequest, timeout: float) -> str | dict:
        raise NotImplementedError


class SubprocessTransport(Transport):
    """Spawns ``command`` per request: one JSON line in, one JSON line out."""

    def __init__(self, command, cwd=None, env=None):
        self.command = list(command)
        self.cwd = cwd
        self.env = env

    def exchange(self, request, timeout):
        try:
            proc = subprocess.run(
                self.command, input=request.to_json() + "\n", capture_output=True,
                text=True, encoding="utf-8", timeout=timeout, cwd=self.cwd, env=self.env,
            )
        except subprocess.TimeoutExpired:
            raise TransportFailure(f"timed out after {timeout:g} s") from None
        except OSError as exc:
            raise StageBindingError(request.stage, f"cannot start {self.command[0]!r}: {exc}") from None
        if proc.returncode != 0:
            raise TransportFailure(f"exited with status {proc.returncode}: {proc.stderr.strip()}")
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if not lines:
            raise ProtocolError(request.stage, "no response line on stdout")
        return lines[0]


class HttpTransport(Transport):
    """``POST`` the request as JSON to ``url``; expects 200 and a JSON body."""

    def __init__(self, url):
        self.url = url

    def exchange(self, request, timeout):
        body = request.to_json().encode("utf-8")
        req = urllib.request.Request(self.url, data=body, method="POST",
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                payload = resp.read()
                status = resp.status
        except urllib.error.HTTPError as exc:
            raise TransportFailure(f"HTTP {exc.code}") from None
        except (urllib.error.URLError, ConnectionError) as exc:
            reason = getattr(exc, "reason", exc)
            if isinstance(reason, TimeoutError) or "timed out" in str(reason):
                raise TransportFailure(f"timed out after {timeout:g} s") from None
            raise _Unreachable(str(reason)) from None
        except TimeoutError:
            raise TransportFailure(f"timed out after {timeout:g} s") from None
        if status != 200:
            raise TransportFailure(f"HTTP {status}")
        return payload.decode("utf-8")


class _Unreachable(TransportFailure):
    pass


class MockTransport(Transport):
    """Answers from a fixture mapping payload to output.

    A fixture value is either the output string or a full response object
    without the id (e.g. ``{"status": "error", "error_message": "..."}``).
    Audio-path payloads also match on their basename; a ``"*"`` key is the
    fallback.
    """

    def __init__(self, responses):
        self.responses = dict(responses)

    @classmethod
    def from_file(cls, path):
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data.get("responses", data))

    def exchange(self, request, timeout):
        for key in (request.payload, Path(request.payload).name, "*"):
            if key in self.responses:
                value = self.responses[key]
                break
        else:
            return {"id": request.id, "status": "error",
                    "error_message": f"no fixture for {request.payload!r}"}
        if isinstance(value, str):
            return {"id": request.id, "status": "ok", "output": value}
        return {"id": request.id, **value}


class StageBinding:
    """One stage kind bound to a transport, with a timeout and one retry."""

    def __init__(self, kind, transport: Transport, timeout=DEFAULT_TIMEOUT, params=None):
        if kind not in STAGES:
            raise ValueError(f"unknown stage {kind!r}")
        self.kind = kind
        self.transport = transport
        self.timeout = timeout
        self.params = dict(params or {})
        self.attempts = 0

    def call(self, payload, params=None) -> str:
        """Return the stage output or raise :class:`StageError`.

        Transport failures are retried exactly once; an ``error`` response is
        final.
        """
        request = StageRequest(uuid.uuid4().hex, self.kind, payload, {**self.params, **(params or {})})
        last = None
        for _attempt in range(2):
            self.attempts += 1
            try:
                raw = self.transport.exchange(request, self.timeout)
            except TransportFailure as exc:
                last = exc
                log.warning("%s stage transport failure: %s", self.kind, exc)
                continue
            response = StageResponse.parse(raw, self.kind, request.id)
            if response.status == "error":
                raise StageError(self.kind, response.error_message)
            return response.output
        if isinstance(last, _Unreachable):
            raise StageBindingError(self.kind, f"endpoint unreachable: {last}")
        raise StageError(self.kind, str(last))


def bind_stage(kind, transport, **options) -> StageBinding:
    """Build a binding from a transport name and its options.

    ``subprocess`` needs ``command``; ``http`` needs ``url``; ``mock`` needs
    ``fixture`` (a path) or ``responses`` (a mapping).
    """
    timeout = float(options.pop("timeout", DEFAULT_TIMEOUT))
    params = options.pop("params", None)
    if isinstance(transport, Transport):
        impl = transport
    elif transport == "subprocess":
        command = options.pop("command")
        impl = SubprocessTransport([command] if isinstance(command, str) else command,
                                   cwd=options.pop("cwd", None))
    elif transport == "http":
        impl = HttpTransport(options.pop("url"))
    elif transport == "mock":
        if "fixture" in options:
            impl = MockTransport.from_file(options.pop("fixture"))
        else:
            impl = MockTransport(options.pop("responses"))
    else:
        raise ValueError(f"unknown transport {transport!r}")
    if options:
        raise ValueError(f"unexpected options for {kind} stage: {sorted(options)}")
    return StageBinding(kind, impl, timeout, params)


def load_bindings(path):
    """Read ``{"asr": {"transport": ..., ...}, "mt": ..., "tts": ...}``.

    Relative ``fixture`` and ``cwd`` paths resolve against the file's directory.
    """
    path = Path(path)
    spec = json.loads(path.read_text(encoding="utf-8"))
    bindings = {}
    for kind, opts in spec.items():
        opts = dict(opts)
        for key in ("fixture", "cwd"):
            if key in opts and not Path(opts[key]).is_absolute():
                opts[key] = str(path.parent / opts[key])
        bindings[kind] = bind_stage(kind, opts.pop("transport"), **opts)
    return bindings


# ---------------------------------------------------------------------------
# Sessions
# ---------------------------------------------------------------------------

@dataclass
class SessionRecord:
    input_audio: str
    emotion: str | None = None
    emotion_confidence: float | None = None
    probabilities: dict | None = None
    transcript_en: str | None = None
    translation_ar: str | None = None
    tts_audio: str | None = None
    stage_timings_ms: dict = field(default_factory=dict)
    failed_stage: str | None = None
    error: str | None = None

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    def to_json(self):
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class PipelineError(SerError):
    def __init__(self, record: SessionRecord, stage, message):
        self.record = record
        self.stage = stage
        super().__init__(f"{stage}: {message}")


def detect_emotion(audio_path, model, scaler, class_order, frame_config=FrameConfig(),
                   mel_config=MelConfig(), rate=CANONICAL_RATE, duration=CANONICAL_DURATION):
    """``(label, confidence, probabilities)`` for one WAV file, fully local."""
    clip = fix_duration(resample(decode_wav(audio_path), rate), duration)
    feats = extract_features(clip, frame_config, mel_config).astype(np.float32)
    if scaler is not None:
        feats = apply_scaler(feats[None, :], scaler)[0]
    index, probs = predict(model, feats)
    names = list(class_order)
    return names[index], float(probs[index]), {n: float(p) for n, p in zip(names, probs)}


def run_pipeline(audio_path, model_checkpoint, stage_bindings=None, emotion_only=False,
                 session_log=None, feature_options=None):
    """Run one session and return its :class:`SessionRecord`.

    ``model_checkpoint`` is a path or an already loaded
    ``(model, scaler, class_order, extra)`` tuple. Stages run strictly in
    order; a failure raises :class:`PipelineError` carrying the partial
    record and the failing stage's name.
    """
    record = SessionRecord(input_audio=str(audio_path))
    timings = record.stage_timings_ms

    def fail(stage, exc):
        record.failed_stage = stage
        record.error = str(exc)
        _append_log(session_log, record)
        raise PipelineError(record, stage, exc) from exc

    t0 = time.perf_counter()
    try:
        if isinstance(model_checkpoint, tuple):
            model, scaler, class_order, extra = model_checkpoint
        else:
            model, scaler, class_order, extra = load_checkpoint(model_checkpoint)
        opts = dict(feature_options or extra.get("features") or {})
        frame_config = FrameConfig(**opts.get("frame", {}))
        mel_config = MelConfig(**opts.get("mel", {}))
        audio_opts = opts.get("audio", {})
        label, conf, probs = detect_emotion(
            audio_path, model, scaler, class_order or _default_classes(model), frame_config, mel_config,
            audio_opts.get("sample_rate", CANONICAL_RATE), audio_opts.get("duration", CANONICAL_DURATION),
        )
    except (SerError, OSError) as exc:
        timings["emotion"] = _ms(t0)
        fail("emotion", exc)
    timings["emotion"] = _ms(t0)
    record.emotion, record.emotion_confidence, record.probabilities = label, conf, probs

    if not emotion_only:
        bindings = stage_bindings or {}
        missing = [s for s in STAGES if s not in bindings]
        if missing:
            fail(missing[0], StageBindingError(missing[0], "stage not bound"))
        steps = (
            ("asr", lambda: bindings["asr"].call(str(audio_path)), "transcript_en"),
            ("mt", lambda: bindings["mt"].call(record.transcript_en), "translation_ar"),
            ("tts", lambda: bindings["tts"].call(record.translation_ar, {"emotion": record.emotion}),
             "tts_audio"),
        )
        for stage, run, attr in steps:
            t0 = time.perf_counter()
            try:
                value = run()
            except StageError as exc:
                timings[stage] = _ms(t0)
                fail(stage, exc)
            timings[stage] = _ms(t0)
            setattr(record, attr, value)
    _append_log(session_log, record)
    return record


def _default_classes(model):
    from .audio import EMOTIONS
    return EMOTIONS if model.config.n_classes == len(EMOTIONS) else tuple(
        str(i) for i in range(model.config.n_classes))


def _ms(t0):
    return round((time.perf_counter() - t0) * 1000.0, 3)


def _append_log(path, record):
    if path is None:
        return
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
