"""Schema checks, conversation packing and corpus statistics for long-video
instruction data stored as JSON lines.

Two record kinds share one stream, told apart by ``"type"``::

    {"type": "video", "video_id": str, "duration_s": number,
     "events": [{"start_s", "end_s", "text"}, ...],
     "clips":  [{"start_s", "end_s", "aspects": {temporality, spatiality,
                 object, action, scene, summary}}, ...]}

    {"type": "qa", "video_id": str, "topic": str, "task": str,
     "format": "OE" | "MC", "question": str, "answer": str,
     "options": [str, str, str, str]}      # options only for MC

Rejection reason codes are listed in ``REASONS``.  Malformed lines are
counted like any other rejection; the stream is never aborted.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

ASPECTS = ("temporality", "spatiality", "object", "action", "scene", "summary")

TAXONOMY: dict[str, tuple[str, ...]] = {
    "temporality": ("temporal_order", "temporal_localization", "duration_estimation", "temporal_counting"),
    "spatiality": ("spatial_relation", "spatial_localization", "spatial_change"),
    "object": ("object_recognition", "object_counting", "object_attribute", "object_tracking"),
    "action": ("action_recognition", "action_sequence", "action_prediction", "action_counting"),
    "scene": ("scene_recognition", "scene_transition", "scene_context"),
    "event": ("event_localization", "event_causality", "event_summary", "overall_summarization"),
}
TASK_TOPIC = {task: topic for topic, tasks in TAXONOMY.items() for task in tasks}
FORMATS = ("OE", "MC")

MIN_DURATION_S = 180.0
MAX_DURATION_S = 3600.0
MIN_EVENTS = 3
MAX_TURNS = 5
DURATION_BUCKET_S = 180

REASONS = (
    "malformed",
    "unknown_type",
    "missing_field",
    "missing_aspects",
    "bad_span",
    "event_count<3",
    "duration_out_of_range",
    "unknown_topic",
    "unknown_task",
    "topic_task_mismatch",
    "unknown_format",
    "mc_options!=4",
    "mc_answer_not_in_options",
    "oe_has_options",
)


@dataclass(frozen=True)
class ClipCaption:
    video_id: str
    clip_span: tuple[float, float]
    aspects: dict


@dataclass(frozen=True)
class EventCaption:
    video_id: str
    boundary: tuple[float, float]
    text: str


@dataclass(frozen=True)
class QARecord:
    video_id: str
    topic: str
    task: str
    format: str
    question: str
    answer: str
    options: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        out = {"type": "qa", "video_id": self.video_id, "topic": self.topic, "task": self.task,
               "format": self.format, "question": self.question, "answer": self.answer}
        if self.format == "MC":
            out["options"] = list(self.options)
        return out


@dataclass(frozen=True)
class ConversationRecord:
    video_id: str
    turns: tuple[QARecord, ...]

    def __post_init__(self):
        if not 1 <= len(self.turns) <= MAX_TURNS:
            raise ValueError(f"a conversation holds 1..{MAX_TURNS} turns, got {len(self.turns)}")
        if any(t.video_id != self.video_id for t in self.turns):
            raise ValueError("all turns must share the conversation's video_id")

    def to_dict(self) -> dict:
        return {"video_id": self.video_id, "turns": [t.to_dict() for t in self.turns]}


@dataclass
class ValidationReport:
    accepted: list[dict] = field(default_factory=list)
    rejected: list[tuple[int, str]] = field(default_factory=list)   # (line number, reason)

    @property
    def reasons(self) -> Counter:
        return Counter(reason for _, reason in self.rejected)

    def summary(self) -> dict:
        return {"accepted": len(self.accepted), "rejected": len(self.rejected), "reasons": dict(self.reasons)}


class _Reject(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def _text(rec: dict, key: str) -> str:
    value = rec.get(key)
    if not isinstance(value, str) or not value.strip():
        raise _Reject("missing_field")
    return value.strip()


def _span(item: dict) -> tuple[float, float]:
    try:
        start, end = float(item["start_s"]), float(item["end_s"])
    except (KeyError, TypeError, ValueError):
        raise _Reject("missing_field") from None
    if not 0 <= start < end:
        raise _Reject("bad_span")
    return start, end


def _canonical_video(rec: dict) -> dict:
    vid = _text(rec, "video_id")
    try:
        duration = float(rec["duration_s"])
    except (KeyError, TypeError, ValueError):
        raise _Reject("missing_field") from None
    if not MIN_DURATION_S <= duration <= MAX_DURATION_S:
        raise _Reject("duration_out_of_range")

    events = rec.get("events")
    if not isinstance(events, list):
        raise _Reject("missing_field")
    if len(events) < MIN_EVENTS:
        raise _Reject("event_count<3")
    out_events = []
    for ev in events:
        if not isinstance(ev, dict):
            raise _Reject("malformed")
        start, end = _span(ev)
        if end > duration:
            raise _Reject("bad_span")
        out_events.append({"start_s": start, "end_s": end, "text": _text(ev, "text")})

    out_clips = []
    for clip in rec.get("clips", []):
        if not isinstance(clip, dict):
            raise _Reject("malformed")
        start, end = _span(clip)
        aspects = clip.get("aspects")
        if not isinstance(aspects, dict):
            raise _Reject("missing_aspects")
        texts = {}
        for name in ASPECTS:
            value = aspects.get(name)
            if not isinstance(value, str) or not value.strip():
                raise _Reject("missing_aspects")
            texts[name] = value.strip()
        out_clips.append({"start_s": start, "end_s": end, "aspects": texts})

    return {"type": "video", "video_id": vid, "duration_s": duration,
            "events": sorted(out_events, key=lambda e: (e["start_s"], e["end_s"])),
            "clips": sorted(out_clips, key=lambda c: (c["start_s"], c["end_s"]))}


def _canonical_qa(rec: dict) -> dict:
    vid = _text(rec, "video_id")
    topic = rec.get("topic")
    task = rec.get("task")
    if task not in TASK_TOPIC:
        raise _Reject("unknown_task")
    if topic not in TAXONOMY:
        raise _Reject("unknown_topic")
    if TASK_TOPIC[task] != topic:
        raise _Reject("topic_task_mismatch")
    fmt = rec.get("format")
    if fmt not in FORMATS:
        raise _Reject("unknown_format")
    question, answer = _text(rec, "question"), _text(rec, "answer")
    options = rec.get("options")
    if fmt == "MC":
        if not isinstance(options, list) or len(options) != 4 or not all(isinstance(o, str) for o in options):
            raise _Reject("mc_options!=4")
        options = [o.strip() for o in options]
        if options.count(answer) != 1:
            raise _Reject("mc_answer_not_in_options")
    elif options:
        raise _Reject("oe_has_options")
    return QARecord(vid, topic, task, fmt, question, answer, tuple(options or ())).to_dict()


def canonicalize(rec) -> dict:
    """Canonical form of one record, or raise ``_Reject`` with a reason code."""
    if not isinstance(rec, dict):
        raise _Reject("malformed")
    kind = rec.get("type")
    if kind == "video":
        return _canonical_video(rec)
    if kind == "qa":
        return _canonical_qa(rec)
    raise _Reject("unknown_type")


def rejection_reason(rec) -> str | None:
    try:
        canonicalize(rec)
    except _Reject as exc:
        return exc.reason
    return None


def validate_records(lines: Iterable[str | dict]) -> ValidationReport:
    """Validate a stream of JSON lines (or already-parsed dicts)."""
    report = ValidationReport()
    for lineno, line in enumerate(lines, 1):
        if isinstance(line, str):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                report.rejected.append((lineno, "malformed"))
                continue
        else:
            rec = line
        try:
            report.accepted.append(canonicalize(rec))
        except _Reject as exc:
            report.rejected.append((lineno, exc.reason))
    return report


def qa_from_dict(rec: dict) -> QARecord:
    return QARecord(rec["video_id"], rec["topic"], rec["task"], rec["format"], rec["question"],
                    rec["answer"], tuple(rec.get("options", ())))


def _video_seed(seed: int, video_id: str) -> np.random.Generator:
    # per-video stream so packing one video never depends on the others
    return np.random.default_rng([seed, *video_id.encode("utf-8")])


def pack_conversations(records: Iterable[QARecord | dict], max_turns: int = MAX_TURNS,
                       seed: int = 0) -> list[ConversationRecord]:
    """Group QA pairs by video, shuffle each group by ``seed`` and chunk into conversations."""
    if not 1 <= max_turns <= MAX_TURNS:
        raise ValueError(f"max_turns must lie in 1..{MAX_TURNS}")
    by_video: dict[str, list[QARecord]] = defaultdict(list)
    for rec in records:
        qa = rec if isinstance(rec, QARecord) else qa_from_dict(rec)
        by_video[qa.video_id].append(qa)
    out = []
    for vid in sorted(by_video):
        group = by_video[vid]
        order = _video_seed(seed, vid).permutation(len(group))
        for start in range(0, len(group), max_turns):
            out.append(ConversationRecord(vid, tuple(group[i] for i in order[start:start + max_turns])))
    return out


def duration_edges() -> np.ndarray:
    return np.arange(MIN_DURATION_S, MAX_DURATION_S + DURATION_BUCKET_S, DURATION_BUCKET_S)


def dataset_stats(records: Iterable[dict]) -> dict:
    """Histograms and counts over canonical records.

    Duration buckets are 3-minute bins ``[180, 360), ..., [3420, 3600]`` (the
    last bin closed); event-count buckets are unit bins keyed by the count.
    """
    durations, events = [], Counter()
    topics, tasks, formats = Counter(), Counter(), Counter()
    n_video = n_qa = 0
    for rec in records:
        if rec.get("type") == "video":
            n_video += 1
            durations.append(rec["duration_s"])
            events[len(rec["events"])] += 1
        elif rec.get("type") == "qa":
            n_qa += 1
            topics[rec["topic"]] += 1
            tasks[rec["task"]] += 1
            formats[rec["format"]] += 1
    edges = duration_edges()
    counts, _ = np.histogram(np.asarray(durations, dtype=float), bins=edges)
    return {
        "videos": n_video,
        "qa": n_qa,
        "duration_edges_s": edges.tolist(),
        "duration_counts": counts.tolist(),
        "event_counts": dict(sorted(events.items())),
        "topic_counts": {t: topics.get(t, 0) for t in TAXONOMY},
        "task_counts": {t: tasks.get(t, 0) for t in TASK_TOPIC},
        "format_counts": {f: formats.get(f, 0) for f in FORMATS},
    }


def read_jsonl(path) -> Iterator[str]:
    with open(path, encoding="utf-8") as fh:
        yield from fh


def write_jsonl(path, rows: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
            n += 1
    return n


def synthetic_qa(n: int, num_videos: int = 100, seed: int = 0, mc_fraction: float = 0.5) -> list[QARecord]:
    """Random well-formed QA records for tests and demos."""
    rng = np.random.default_rng(seed)
    tasks = list(TASK_TOPIC)
    out = []
    for i in range(n):
        task = tasks[int(rng.integers(len(tasks)))]
        vid = f"v{int(rng.integers(num_videos)):05d}"
        answer = f"answer {i}"
        if rng.random() < mc_fraction:
            options = [answer, f"distractor {i}a", f"distractor {i}b", f"distractor {i}c"]
            perm = rng.permutation(4)
            out.append(QARecord(vid, TASK_TOPIC[task], task, "MC", f"question {i}?", answer,
                                tuple(options[j] for j in perm)))
        else:
            out.append(QARecord(vid, TASK_TOPIC[task], task, "OE", f"question {i}?", answer))
    return out


def synthetic_video(video_id: str, duration_s: float = 600.0, num_events: int = 3, num_clips: int = 2) -> dict:
    events = [{"start_s": duration_s * i / num_events, "end_s": duration_s * (i + 1) / num_events,
               "text": f"event {i}"} for i in range(num_events)]
    clips = [{"start_s": 10.0 * i, "end_s": 10.0 * (i + 1),
              "aspects": {a: f"{a} of clip {i}" for a in ASPECTS}} for i in range(num_clips)]
    return {"type": "video", "video_id": video_id, "duration_s": duration_s, "events": events, "clips": clips}
