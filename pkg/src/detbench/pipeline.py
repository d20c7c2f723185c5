"""Three-stage streaming inference harness and latency benchmark.

    source ──▶ [latest-wins queue] ──▶ detector ──▶ [latest-wins queue] ──▶ sink
       └────────────── frames (sync buffer) ─────────────────────────────────┘

The sink plays the role of a debug node: it receives detection messages and
pairs each with the frame of the same sequence id.  Queues hold at most
``capacity`` items; a newer item evicts the oldest one and the eviction is
counted as a drop.
"""

from __future__ import annotations

import logging
import math
import shlex
import statistics
import subprocess
import tempfile
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from PIL import Image

from .annotations import Detection, parse_detection_file
from .errors import BackendError, BenchError, ParseError
from .seeding import rng_for

log = logging.getLogger(__name__)

DEFAULT_INPUT_SIZE = (320, 320)


@dataclass(frozen=True)
class Frame:
    seq: int
    timestamp_ns: int
    image: np.ndarray


@dataclass(frozen=True)
class StageTimings:
    preprocess_ms: float = 0.0
    inference_ms: float = 0.0
    postprocess_ms: float = 0.0

    def __post_init__(self):
        for v in (self.preprocess_ms, self.inference_ms, self.postprocess_ms):
            if not v >= 0:
                raise ValueError(f"stage timings must be >= 0, got {self}")

    @property
    def total_ms(self) -> float:
        return self.preprocess_ms + self.inference_ms + self.postprocess_ms

    @classmethod
    def parse(cls, text: str) -> "StageTimings":
        parts = text.split()
        if len(parts) != 3:
            raise ParseError(f"timing line needs 3 numbers, got {text.strip()!r}")
        try:
            return cls(*(float(p) for p in parts))
        except ValueError as exc:
            raise ParseError(f"bad timing line {text.strip()!r}: {exc}") from None


@dataclass
class DetectionMessage:
    seq: int
    detections: List[Detection]
    timings: StageTimings
    failed: bool = False
    error: str = ""


class DetectorBackend(Protocol):
    input_size: Tuple[int, int]

    def detect(self, frame: Frame) -> Tuple[List[Detection], StageTimings]:
        ...


class StubBackend:
    """Scripted backend: returns canned detections and timings per sequence id.

    Unscripted ids get ``default`` (empty detections, zero timings unless
    overridden).  ``delay_s`` makes each call sleep, to emulate a slow model.
    """

    def __init__(self, script: Optional[Dict[int, Tuple[Sequence[Detection], StageTimings]]] = None,
                 default: Optional[Tuple[Sequence[Detection], StageTimings]] = None,
                 delay_s: float = 0.0, fail_on: Iterable[int] = (), input_size=DEFAULT_INPUT_SIZE):
        self.script = dict(script or {})
        self.default = default or ((), StageTimings())
        self.delay_s = delay_s
        self.fail_on = set(fail_on)
        self.input_size = tuple(input_size)

    def detect(self, frame: Frame):
        if self.delay_s:
            time.sleep(self.delay_s)
        if frame.seq in self.fail_on:
            raise BackendError(f"scripted failure on frame {frame.seq}")
        dets, timings = self.script.get(frame.seq, self.default)
        return list(dets), timings


class CallableBackend:
    """Wrap in-process ``preprocess -> infer -> postprocess`` callables.

    Each phase is timed separately with the monotonic clock.
    """

    def __init__(self, preprocess: Callable, infer: Callable, postprocess: Callable, input_size=DEFAULT_INPUT_SIZE):
        self.preprocess, self.infer, self.postprocess = preprocess, infer, postprocess
        self.input_size = tuple(input_size)

    def detect(self, frame: Frame):
        t0 = time.perf_counter_ns()
        x = self.preprocess(frame.image, self.input_size)
        t1 = time.perf_counter_ns()
        y = self.infer(x)
        t2 = time.perf_counter_ns()
        dets = list(self.postprocess(y, frame.image.shape[:2]))
        t3 = time.perf_counter_ns()
        return dets, StageTimings((t1 - t0) / 1e6, (t2 - t1) / 1e6, (t3 - t2) / 1e6)


class ExternalBackend:
    """Run a command per frame through a file protocol.

    The command template may use ``{image}``, ``{detections}``, ``{timings}``
    and ``{size}`` placeholders.  The command must write the detection file
    (``class cx cy w h conf`` lines) and a one-line timing file
    ``pre_ms inf_ms post_ms``.
    """

    def __init__(self, command: str, timeout_s: float = 30.0, input_size=DEFAULT_INPUT_SIZE):
        self.command = command
        self.timeout_s = timeout_s
        self.input_size = tuple(input_size)

    def detect(self, frame: Frame):
        with tempfile.TemporaryDirectory(prefix="detbench-") as tmp:
            tmp = Path(tmp)
            image_path = tmp / f"frame_{frame.seq:08d}.png"
            det_path = tmp / "detections.txt"
            timing_path = tmp / "timings.txt"
            Image.fromarray(frame.image).save(image_path)
            argv = [
                a.format(image=image_path, detections=det_path, timings=timing_path,
                         size=f"{self.input_size[0]}x{self.input_size[1]}")
                for a in shlex.split(self.command)
            ]
            try:
                proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout_s)
            except subprocess.TimeoutExpired:
                raise BackendError(f"backend timed out after {self.timeout_s:g} s on frame {frame.seq}") from None
            except OSError as exc:
                raise BackendError(f"cannot run backend: {exc}") from None
            if proc.returncode != 0:
                raise BackendError(f"backend exited {proc.returncode} on frame {frame.seq}: {proc.stderr.strip()[:200]}")
            try:
                dets = parse_detection_file(det_path.read_text(encoding="utf-8"))
                timings = StageTimings.parse(timing_path.read_text(encoding="ascii"))
            except (OSError, ParseError, ValueError) as exc:
                raise BackendError(f"bad backend output on frame {frame.seq}: {exc}") from None
        return dets, timings


def external_backend(command: str, timeout_s: float = 30.0) -> ExternalBackend:
    return ExternalBackend(command, timeout_s)


def stub_backend(script=None, **kwargs) -> StubBackend:
    return StubBackend(script, **kwargs)


# --- sources -------------------------------------------------------------

def directory_images(root) -> List[np.ndarray]:
    root = Path(root)
    paths = sorted(p for p in root.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))
    images = []
    for p in paths:
        with Image.open(p) as im:
            images.append(np.asarray(im.convert("RGB")))
    return images


def synthetic_images(n: int, size=(64, 48), seed: int = 0) -> List[np.ndarray]:
    w, h = size
    return [rng_for(seed, i).integers(0, 256, size=(h, w, 3), dtype=np.uint8) for i in range(n)]


# --- queues --------------------------------------------------------------

class LatestQueue:
    """Bounded queue where a put on a full queue evicts the oldest item."""

    def __init__(self, capacity: int = 1, on_drop: Optional[Callable] = None):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self._items = deque()
        self._capacity = capacity
        self._cond = threading.Condition()
        self._closed = False
        self._on_drop = on_drop
        self.dropped: List = []

    def put(self, item) -> None:
        with self._cond:
            evicted = self._items.popleft() if len(self._items) >= self._capacity else None
            if evicted is not None:
                self.dropped.append(evicted)
            self._items.append(item)
            self._cond.notify()
        if evicted is not None and self._on_drop is not None:
            self._on_drop(evicted)

    def get(self):
        """Block for the next item; ``None`` once closed and drained."""
        with self._cond:
            while not self._items and not self._closed:
                self._cond.wait()
            return self._items.popleft() if self._items else None

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()


class FrameBuffer:
    """In-flight frames by sequence id, for pairing with detection messages."""

    def __init__(self):
        self._frames: Dict[int, Frame] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._frames)

    def add(self, frame: Frame) -> None:
        with self._lock:
            self._frames[frame.seq] = frame

    def take(self, seq: int) -> Optional[Frame]:
        with self._lock:
            return self._frames.pop(seq, None)


@dataclass
class PipelineOptions:
    capacity: int = 1
    frame_interval_s: float = 0.0
    threaded: bool = True


@dataclass
class RunSummary:
    frames_in: int = 0
    processed: int = 0
    dropped: int = 0
    failed: int = 0
    delivered_seqs: List[int] = field(default_factory=list)
    timings: List[StageTimings] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {"frames_in": self.frames_in, "processed": self.processed, "dropped": self.dropped, "failed": self.failed}
        if self.timings:
            d["latency"] = latency_report(self.timings).to_dict()
        return d


def _frames(images: Iterable[np.ndarray]) -> Iterator[Frame]:
    for seq, img in enumerate(images):
        yield Frame(seq, time.monotonic_ns(), img)


def _detect(backend, frame: Frame) -> DetectionMessage:
    try:
        dets, timings = backend.detect(frame)
    except Exception as exc:  # any backend fault fails only this frame
        log.warning("frame %d failed: %s", frame.seq, exc)
        return DetectionMessage(frame.seq, [], StageTimings(), failed=True, error=str(exc))
    return DetectionMessage(frame.seq, list(dets), timings)


def run_pipeline(source: Iterable[np.ndarray], backend, sink: Callable[[Frame, DetectionMessage], None],
                 options: PipelineOptions = PipelineOptions()) -> RunSummary:
    """Stream ``source`` images through ``backend`` into ``sink``.

    Every emitted frame ends up exactly once as processed (delivered to the
    sink), dropped (evicted from a queue) or failed (backend error).
    """
    if not options.threaded:
        return _run_sync(source, backend, sink)

    summary = RunSummary()
    frames = FrameBuffer()
    # evicted items will never reach the sink, so release their frames
    to_detector = LatestQueue(options.capacity, on_drop=lambda f: frames.take(f.seq))
    to_sink = LatestQueue(options.capacity, on_drop=lambda m: frames.take(m.seq))
    failed: List[int] = []

    def source_stage():
        next_t = time.monotonic()
        for frame in _frames(source):
            frames.add(frame)
            summary.frames_in += 1
            to_detector.put(frame)
            if options.frame_interval_s > 0:
                next_t += options.frame_interval_s
                time.sleep(max(0.0, next_t - time.monotonic()))
        to_detector.close()

    def detector_stage():
        while (frame := to_detector.get()) is not None:
            msg = _detect(backend, frame)
            if msg.failed:
                frames.take(msg.seq)
                failed.append(msg.seq)
            else:
                to_sink.put(msg)
        to_sink.close()

    def sink_stage():
        while (msg := to_sink.get()) is not None:
            frame = frames.take(msg.seq)
            if frame is None:
                log.error("no frame for detection message %d", msg.seq)
                failed.append(msg.seq)
                continue
            sink(frame, msg)
            summary.delivered_seqs.append(msg.seq)
            summary.timings.append(msg.timings)

    threads = [threading.Thread(target=t, name=t.__name__, daemon=True) for t in (source_stage, detector_stage, sink_stage)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    summary.processed = len(summary.delivered_seqs)
    summary.failed = len(failed)
    summary.dropped = len(to_detector.dropped) + len(to_sink.dropped)
    return summary


def _run_sync(source, backend, sink) -> RunSummary:
    """Step source, detector and sink in order; nothing is ever dropped."""
    summary = RunSummary()
    for frame in _frames(source):
        summary.frames_in += 1
        msg = _detect(backend, frame)
        if msg.failed:
            summary.failed += 1
            continue
        sink(frame, msg)
        summary.delivered_seqs.append(msg.seq)
        summary.timings.append(msg.timings)
    summary.processed = len(summary.delivered_seqs)
    return summary


class CollectingSink:
    def __init__(self):
        self.pairs: List[Tuple[Frame, DetectionMessage]] = []

    def __call__(self, frame: Frame, msg: DetectionMessage) -> None:
        self.pairs.append((frame, msg))


# --- latency accounting --------------------------------------------------

@dataclass(frozen=True)
class StageStats:
    mean: float
    median: float
    min: float
    max: float

    @classmethod
    def of(cls, values: Sequence[float]) -> "StageStats":
        return cls(statistics.fmean(values), statistics.median(values), min(values), max(values))


@dataclass
class LatencyReport:
    preprocess: StageStats
    inference: StageStats
    postprocess: StageStats
    total: StageStats
    frames: int
    warmup: int = 0
    failed: int = 0

    @property
    def fps(self) -> float:
        """Possible frame rate, 1000 / mean total latency in ms."""
        if self.total.mean <= 0:
            return math.inf
        return 1000.0 / self.total.mean

    def to_dict(self) -> dict:
        fps = self.fps
        stages = {name: vars(getattr(self, name)).copy() for name in ("preprocess", "inference", "postprocess", "total")}
        return {
            "frames": self.frames,
            "warmup": self.warmup,
            "failed": self.failed,
            "stages_ms": stages,
            "total_ms": self.total.mean,
            "fps": round(fps, 3) if math.isfinite(fps) else "inf",
            "fps_exact": fps if math.isfinite(fps) else "inf",
        }


def latency_report(timings: Sequence[StageTimings], warmup: int = 0, failed: int = 0) -> LatencyReport:
    if not timings:
        raise BenchError("no successful timings to report")
    report = LatencyReport(
        StageStats.of([t.preprocess_ms for t in timings]),
        StageStats.of([t.inference_ms for t in timings]),
        StageStats.of([t.postprocess_ms for t in timings]),
        StageStats.of([t.total_ms for t in timings]),
        len(timings), warmup, failed,
    )
    if not math.isfinite(report.fps):
        log.warning("mean total latency is zero; possible FPS is unbounded")
    return report


def bench(backend, images: Sequence[np.ndarray], warmup_n: int = 0, iterations: int = 10) -> LatencyReport:
    """Call the backend ``warmup_n`` times unrecorded, then ``iterations`` times recorded.

    Images are cycled in order.  Failed calls are counted, not timed.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not images:
        raise ValueError("bench needs at least one image")
    timings, failed = [], 0
    for k in range(warmup_n + iterations):
        frame = Frame(k, time.monotonic_ns(), images[k % len(images)])
        try:
            _, t = backend.detect(frame)
        except Exception as exc:
            if k >= warmup_n:
                failed += 1
            log.warning("bench call %d failed: %s", k, exc)
            continue
        if k >= warmup_n:
            timings.append(t)
    if not timings:
        raise BenchError(f"all {iterations} benchmark iterations failed")
    return latency_report(timings, warmup_n, failed)
