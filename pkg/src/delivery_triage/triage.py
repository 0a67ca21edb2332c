"""Decision fusion and case lifecycle.

Text and image verdicts are combined by a six-rule cascade (first match
wins) into an auto-resolved or escalated case.  Every case lives in an
append-only JSONL journal; current state is a fold over its events, so
reopening a journal reconstructs the store exactly.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cnn import CnnModel, predict_image
from .datasets import FeedbackRecord, LabelTaxonomy, record_from_dict, record_to_dict
from .explain import grad_cam, overlay
from .imageops import resize_bilinear
from .ppm import read_ppm, write_ppm
from .text_model import TextModel, predict_text

STATES = ("new", "auto_resolved", "escalated", "analyst_resolved")
RESOLVED_STATES = ("auto_resolved", "analyst_resolved")
DECISIONS = ("approve_refund", "reject", "reassign")
SYSTEM_ACTOR = "system"

# Image outcomes the fusion rules accept.  "unreadable" behaves exactly
# like "none": a file we could not decode contributes no image signal.
OUTCOME_KINDS = ("none", "irrelevant", "unreadable", "damaged", "not_damaged")
_NEUTRAL_KINDS = ("none", "irrelevant", "unreadable")

REASON_LOW_TEXT = "low text confidence"
REASON_AGREE = "text and image agree"
REASON_CONFLICT = "text/image conflict"
REASON_CONTRADICTS = "image contradicts text class"
REASON_LOW_IMAGE = "low image confidence"
REASON_TEXT_ONLY = "text-only confident"
REASON_NO_SIGNAL = "no signal"

JOURNAL_EVENTS = ("case_created", "auto_resolved", "escalated", "analyst_resolved")


@dataclass(frozen=True)
class TriageConfig:
    """Fusion thresholds; both must sit strictly between chance and certainty."""

    tau_text: float = 0.7
    tau_image: float = 0.7
    verifiable_classes: frozenset[str] = frozenset({"Poor Packaging/Handling/Damaged"})

    def __post_init__(self) -> None:
        for name, value in (("tau_text", self.tau_text), ("tau_image", self.tau_image)):
            if not 0.5 < value < 1.0:
                raise ValueError(f"{name} must lie in (0.5, 1.0), got {value}")
        object.__setattr__(self, "verifiable_classes", frozenset(self.verifiable_classes))

    def validate_against(self, taxonomy: LabelTaxonomy) -> None:
        unknown = self.verifiable_classes - set(taxonomy.classes)
        if unknown:
            raise ValueError(f"verifiable classes not in taxonomy: {sorted(unknown)}")


@dataclass(frozen=True)
class ImageOutcome:
    """What the image stage concluded, as seen by the fusion rules."""

    kind: str
    confidence: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in OUTCOME_KINDS:
            raise ValueError(f"unknown image outcome kind {self.kind!r}")
        if self.kind in ("damaged", "not_damaged"):
            if self.confidence is None:
                raise ValueError(f"outcome {self.kind!r} requires a confidence")
            if not 0.0 <= self.confidence <= 1.0:
                raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        elif self.confidence is not None:
            raise ValueError(f"outcome {self.kind!r} carries no confidence")


@dataclass(frozen=True)
class FusionDecision:
    state: str
    reason: str


def decide(
    text_class: str,
    text_confidence: float,
    image_outcome: ImageOutcome,
    config: TriageConfig,
) -> FusionDecision:
    """Apply rules R1..R6 in order; the first matching rule decides.

    R6 is the catch-all for confident text: a neutral image (none,
    irrelevant, unreadable) or a confident not-damaged verdict on a
    claim that no photo could verify both leave the text as the only
    usable signal, so the table stays total.
    """
    if not 0.0 <= text_confidence <= 1.0:
        raise ValueError(f"text confidence must lie in [0, 1], got {text_confidence}")
    if text_confidence < config.tau_text:
        return FusionDecision("escalated", REASON_LOW_TEXT)
    verifiable = text_class in config.verifiable_classes
    kind = image_outcome.kind
    if kind in ("damaged", "not_damaged"):
        if image_outcome.confidence >= config.tau_image:
            if kind == "damaged":
                if verifiable:
                    return FusionDecision("auto_resolved", REASON_AGREE)
                return FusionDecision("escalated", REASON_CONTRADICTS)
            if verifiable:
                return FusionDecision("escalated", REASON_CONFLICT)
        else:
            return FusionDecision("escalated", REASON_LOW_IMAGE)
    return FusionDecision("auto_resolved", REASON_TEXT_ONLY)


@dataclass(frozen=True)
class ImageVerdict:
    """One classifier's answer for the attached photo."""

    verdict: str
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")

    def as_dict(self) -> dict:
        return {"verdict": self.verdict, "confidence": self.confidence}


@dataclass
class TriageCase:
    """One piece of feedback moving through the lifecycle.

    new -> auto_resolved | escalated -> analyst_resolved, no way back
    and no exit from analyst_resolved.  A heatmap exists only for a
    damaged verdict; a decision exists exactly in resolved states.
    """

    id: str
    record: FeedbackRecord
    created_at: float
    state: str = "new"
    text_class: str | None = None
    text_confidence: float | None = None
    text_probabilities: list[float] | None = None
    image_relevance: ImageVerdict | None = None
    image_damage: ImageVerdict | None = None
    heatmap_path: str | None = None
    reason: str | None = None
    decision: str | None = None
    reassign_label: str | None = None
    decided_by: str | None = None
    resolved_at: float | None = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._validate()

    def _validate(self) -> None:
        if self.state not in STATES:
            raise ValueError(f"unknown state {self.state!r}")
        if self.heatmap_path is not None:
            if self.image_damage is None or self.image_damage.verdict != "damaged":
                raise ValueError("heatmap requires a damaged verdict")
        if self.image_damage is not None and self.image_relevance is None:
            raise ValueError("damage verdict requires a relevance verdict")
        if (self.decision is not None) != (self.state in RESOLVED_STATES):
            raise ValueError("decision must be present exactly in resolved states")
        if self.decision is not None and self.decision not in DECISIONS:
            raise ValueError(f"unknown decision {self.decision!r}")
        if (self.reassign_label is not None) != (self.decision == "reassign"):
            raise ValueError("reassign_label accompanies exactly the reassign decision")
        if self.text_confidence is not None and not 0.0 <= self.text_confidence <= 1.0:
            raise ValueError("text confidence must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "created_at": self.created_at,
            "state": self.state,
            "record": record_to_dict(self.record),
            "text_class": self.text_class,
            "text_confidence": self.text_confidence,
            "text_probabilities": self.text_probabilities,
            "image_relevance": self.image_relevance.as_dict() if self.image_relevance else None,
            "image_damage": self.image_damage.as_dict() if self.image_damage else None,
            "heatmap_path": self.heatmap_path,
            "reason": self.reason,
            "decision": self.decision,
            "reassign_label": self.reassign_label,
            "decided_by": self.decided_by,
            "resolved_at": self.resolved_at,
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class CaseSummary:
    """Queue row: enough to pick a case without loading the full record."""

    id: str
    created_at: float
    state: str
    text_class: str | None
    text_confidence: float | None
    reason: str | None

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "created_at": self.created_at,
            "state": self.state,
            "text_class": self.text_class,
            "text_confidence": self.text_confidence,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class QueuePage:
    items: list[CaseSummary]
    page: int
    page_size: int
    total_cases: int
    total_pages: int


class LogicalClock:
    """Monotonic integer ticks so batch runs journal identically every time."""

    def __init__(self, start: int = 0):
        self._next = int(start)
        self._lock = threading.Lock()

    def now(self) -> int:
        with self._lock:
            tick = self._next
            self._next += 1
            return tick

    def advance_to(self, floor: int) -> None:
        with self._lock:
            self._next = max(self._next, int(floor))


class SystemClock:
    def now(self) -> float:
        return time.time()


def _case_payload(case: TriageCase) -> dict:
    """The immutable creation-time part of a case (no lifecycle fields)."""
    payload = case.to_dict()
    for key in ("state", "reason", "decision", "reassign_label", "decided_by", "resolved_at"):
        del payload[key]
    return payload


def _case_from_payload(payload: dict) -> TriageCase:
    relevance = payload.get("image_relevance")
    damage = payload.get("image_damage")
    return TriageCase(
        id=payload["id"],
        record=record_from_dict(payload["record"]),
        created_at=payload["created_at"],
        state="new",
        text_class=payload.get("text_class"),
        text_confidence=payload.get("text_confidence"),
        text_probabilities=payload.get("text_probabilities"),
        image_relevance=ImageVerdict(**relevance) if relevance else None,
        image_damage=ImageVerdict(**damage) if damage else None,
        heatmap_path=payload.get("heatmap_path"),
        warnings=list(payload.get("warnings", [])),
    )


class CaseStore:
    """Append-only journal plus an in-memory fold of it.

    A single lock serializes writers; every mutation appends one line
    and then updates the fold, so the file is always the source of
    truth and concurrent feedback posts cannot drop or merge cases.
    """

    def __init__(self, path, clock=None):
        self.path = Path(path)
        self.data_dir = self.path.parent
        self.heatmap_dir = self.data_dir / "heatmaps"
        self.clock = clock if clock is not None else LogicalClock()
        self._lock = threading.Lock()
        self._cases: dict[str, TriageCase] = {}
        self._order: list[str] = []
        self._seq = 0
        self._case_counter = 1
        self.data_dir.mkdir(parents=True, exist_ok=True)
        if self.path.exists():
            self._replay()

    def _replay(self) -> None:
        max_at = 0
        text = self.path.read_text(encoding="utf-8")
        # newline-delimited only; comments may contain \x85/
        for lineno, line in enumerate(text.split("\n"), start=1):
            if not line.strip():
                continue
            try:
                event = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{self.path}:{lineno}: malformed event: {exc}") from exc
            try:
                self._fold(event)
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{self.path}:{lineno}: {exc}") from exc
            self._seq += 1
            at = event.get("at", 0)
            if isinstance(at, (int, float)):
                max_at = max(max_at, int(at) + 1)
        if isinstance(self.clock, LogicalClock):
            self.clock.advance_to(max_at)

    def _fold(self, event: dict) -> None:
        name = event["event"]
        if name == "case_created":
            case = _case_from_payload(event["case"])
            if case.id in self._cases:
                raise ValueError(f"duplicate case id {case.id!r}")
            self._cases[case.id] = case
            self._order.append(case.id)
            suffix = case.id.rsplit("-", 1)[-1]
            if suffix.isdigit():
                self._case_counter = max(self._case_counter, int(suffix) + 1)
            return
        case = self._cases.get(event["case_id"])
        if case is None:
            raise ValueError(f"event for unknown case {event['case_id']!r}")
        if name == "auto_resolved":
            if case.state != "new":
                raise ValueError(f"cannot auto-resolve case in state {case.state!r}")
            case.state = "auto_resolved"
            case.reason = event["reason"]
            case.decision = event["decision"]
            case.decided_by = event["decided_by"]
            case.resolved_at = event["at"]
        elif name == "escalated":
            if case.state != "new":
                raise ValueError(f"cannot escalate case in state {case.state!r}")
            case.state = "escalated"
            case.reason = event["reason"]
        elif name == "analyst_resolved":
            if case.state != "escalated":
                raise ValueError(f"case {case.id!r} is not escalated")
            case.state = "analyst_resolved"
            case.decision = event["action"]
            case.reassign_label = event.get("label")
            case.decided_by = event["analyst_id"]
            case.resolved_at = event["at"]
        else:
            raise ValueError(f"unknown event {name!r}")
        case._validate()

    def _append(self, event: dict) -> None:
        event = {"seq": self._seq, **event}
        line = json.dumps(event, ensure_ascii=False, separators=(",", ":"))
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
        self._fold(event)
        self._seq += 1

    def reserve_id(self) -> str:
        with self._lock:
            case_id = f"case-{self._case_counter:06d}"
            self._case_counter += 1
            return case_id

    def add_case(self, case: TriageCase) -> TriageCase:
        """Journal a freshly triaged case: creation plus its first transition."""
        if case.state not in ("auto_resolved", "escalated"):
            raise ValueError(f"new cases must be auto_resolved or escalated, got {case.state!r}")
        with self._lock:
            self._append({"event": "case_created", "at": case.created_at, "case": _case_payload(case)})
            if case.state == "auto_resolved":
                self._append(
                    {
                        "event": "auto_resolved",
                        "at": case.resolved_at,
                        "case_id": case.id,
                        "reason": case.reason,
                        "decision": case.decision,
                        "decided_by": case.decided_by,
                    }
                )
            else:
                self._append(
                    {
                        "event": "escalated",
                        "at": case.created_at,
                        "case_id": case.id,
                        "reason": case.reason,
                    }
                )
            return self._cases[case.id]

    def resolve(self, case_id: str, action: str, analyst_id: str, label: str | None = None) -> TriageCase:
        with self._lock:
            case = self._cases.get(case_id)
            if case is None:
                raise KeyError(f"unknown case {case_id!r}")
            if case.state != "escalated":
                raise ValueError(f"case {case_id!r} is not escalated (state {case.state!r})")
            event = {
                "event": "analyst_resolved",
                "at": self.clock.now(),
                "case_id": case_id,
                "action": action,
                "analyst_id": analyst_id,
            }
            if label is not None:
                event["label"] = label
            self._append(event)
            return case

    def get(self, case_id: str) -> TriageCase:
        with self._lock:
            case = self._cases.get(case_id)
            if case is None:
                raise KeyError(f"unknown case {case_id!r}")
            return case

    def cases(self, state: str | None = None) -> list[TriageCase]:
        """All cases oldest first (creation time, then id breaks ties)."""
        if state is not None and state not in STATES:
            raise ValueError(f"unknown state {state!r}")
        with self._lock:
            selected = [self._cases[cid] for cid in self._order]
        selected.sort(key=lambda c: (c.created_at, c.id))
        if state is not None:
            selected = [c for c in selected if c.state == state]
        return selected

    def stats(self) -> dict:
        with self._lock:
            cases = [self._cases[cid] for cid in self._order]
        by_state = {name: 0 for name in STATES[1:]}
        by_class: dict[str, int] = {}
        for case in cases:
            by_state[case.state] = by_state.get(case.state, 0) + 1
            key = case.text_class if case.text_class is not None else "(none)"
            by_class[key] = by_class.get(key, 0) + 1
        return {
            "total_cases": len(cases),
            "by_state": by_state,
            "by_text_class": dict(sorted(by_class.items())),
        }


def queue(store: CaseStore, state: str | None = None, page: int = 1, page_size: int = 20) -> QueuePage:
    """Oldest-first work queue, optionally filtered by state, 1-based pages."""
    if page < 1:
        raise ValueError(f"page must be >= 1, got {page}")
    if page_size < 1:
        raise ValueError(f"page size must be >= 1, got {page_size}")
    cases = store.cases(state=state)
    total = len(cases)
    total_pages = max(1, -(-total // page_size))
    start = (page - 1) * page_size
    rows = [
        CaseSummary(c.id, c.created_at, c.state, c.text_class, c.text_confidence, c.reason)
        for c in cases[start : start + page_size]
    ]
    return QueuePage(items=rows, page=page, page_size=page_size, total_cases=total, total_pages=total_pages)


def analyst_resolve(
    store: CaseStore,
    case_id: str,
    action: str,
    analyst_id: str,
    label: str | None = None,
    taxonomy: LabelTaxonomy | None = None,
) -> TriageCase:
    """Record an analyst's decision on an escalated case.

    Only escalated cases accept decisions; reassignment must name a
    model class.  The journal keeps the full audit trail (who, what,
    when) and the case never leaves analyst_resolved afterwards.
    """
    if action not in DECISIONS:
        raise ValueError(f"unknown action {action!r}")
    if not analyst_id or not analyst_id.strip():
        raise ValueError("analyst id required")
    if analyst_id == SYSTEM_ACTOR:
        raise ValueError(f"analyst id {SYSTEM_ACTOR!r} is reserved")
    if action == "reassign":
        taxonomy = taxonomy or LabelTaxonomy()
        if label is None:
            raise ValueError("reassign requires a label")
        label = taxonomy.resolve(label)
        if not taxonomy.is_model_class(label):
            raise ValueError(f"unknown reassign label {label!r}")
    elif label is not None:
        raise ValueError(f"action {action!r} does not take a label")
    return store.resolve(case_id, action, analyst_id, label=label)


def _load_image(path: Path) -> np.ndarray:
    image = read_ppm(path)
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    return image


def _fit_to_model(image: np.ndarray, model: CnnModel) -> np.ndarray:
    size = model.input_size
    if image.shape[:2] != (size, size):
        image = resize_bilinear(image, size, size)
    return image


def run_pipeline(
    record: FeedbackRecord,
    text_model: TextModel,
    relevance_model: CnnModel,
    damage_model: CnnModel,
    config: TriageConfig,
    store: CaseStore,
    image_root=None,
) -> TriageCase:
    """Triage one feedback record end to end and journal the outcome.

    An unreadable image is treated as absent (with a warning on the
    case); an irrelevant image contributes nothing; a damaged verdict
    gets a heatmap written next to the journal.  A record with neither
    usable comment nor usable image escalates as pure noise.
    """
    config.validate_against(text_model.taxonomy)
    image_root = Path(image_root) if image_root is not None else store.data_dir
    case_id = store.reserve_id()
    created_at = store.clock.now()
    warnings: list[str] = []

    image = None
    if record.image_path is not None:
        full_path = image_root / record.image_path
        try:
            image = _load_image(full_path)
        except (OSError, ValueError) as exc:
            warnings.append(f"image unreadable: {exc}")

    has_comment = bool(record.comment.strip())
    if not has_comment and image is None:
        case = TriageCase(
            id=case_id,
            record=record,
            created_at=created_at,
            state="escalated",
            reason=REASON_NO_SIGNAL,
            warnings=warnings,
        )
        return store.add_case(case)

    text_class, probs = predict_text(text_model, record.comment)
    text_confidence = float(np.max(probs))

    relevance = None
    damage = None
    heatmap_path = None
    if image is None:
        outcome = ImageOutcome("unreadable" if warnings else "none")
    else:
        rel_input = _fit_to_model(image, relevance_model)
        rel_label, rel_probs = predict_image(relevance_model, rel_input)
        relevance = ImageVerdict(rel_label, float(np.max(rel_probs)))
        if rel_label == "irrelevant":
            outcome = ImageOutcome("irrelevant")
        else:
            dmg_input = _fit_to_model(image, damage_model)
            dmg_label, dmg_probs = predict_image(damage_model, dmg_input)
            damage = ImageVerdict(dmg_label, float(np.max(dmg_probs)))
            outcome = ImageOutcome(dmg_label, damage.confidence)
            if dmg_label == "damaged":
                target = damage_model.classes.index("damaged")
                heatmap = grad_cam(damage_model, dmg_input, target)
                blended = overlay(dmg_input, heatmap)
                store.heatmap_dir.mkdir(parents=True, exist_ok=True)
                write_ppm(blended, store.heatmap_dir / f"{case_id}.ppm")
                heatmap_path = f"heatmaps/{case_id}.ppm"

    verdict = decide(text_class, text_confidence, outcome, config)
    resolved_at = None
    decision = None
    decided_by = None
    if verdict.state == "auto_resolved":
        resolved_at = store.clock.now()
        decision = "approve_refund"
        decided_by = SYSTEM_ACTOR

    case = TriageCase(
        id=case_id,
        record=record,
        created_at=created_at,
        state=verdict.state,
        text_class=text_class,
        text_confidence=text_confidence,
        text_probabilities=[float(p) for p in probs],
        image_relevance=relevance,
        image_damage=damage,
        heatmap_path=heatmap_path,
        reason=verdict.reason,
        decision=decision,
        decided_by=decided_by,
        resolved_at=resolved_at,
        warnings=warnings,
    )
    return store.add_case(case)


__all__ = [
    "CaseStore",
    "CaseSummary",
    "FusionDecision",
    "ImageOutcome",
    "ImageVerdict",
    "LogicalClock",
    "QueuePage",
    "SystemClock",
    "TriageCase",
    "TriageConfig",
    "analyst_resolve",
    "decide",
    "queue",
    "run_pipeline",
]
