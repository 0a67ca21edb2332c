"""Label taxonomy, feedback records, dataset file IO, and stratified splitting.

Dataset files are line-delimited JSON (UTF-8), one record per line with keys
id, comment, label, image_path, image_label, damage_box. Absent optional
fields are omitted on save.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_CLASSES = (
    "Dropped Outside (No notification)",
    "Incorrect item",
    "Late Delivery",
    "Not Received",
    "Partial/Split Delivery",
    "Poor Packaging/Handling/Damaged",
    "Shipping Charges",
    "Wrong Address",
)

# Tags that appear in files but are never model classes.
UNKNOWN_LABEL = "Unknown"
OTHERS_LABEL = "Others"
NON_MODEL_LABELS = (UNKNOWN_LABEL, OTHERS_LABEL)

IMAGE_LABELS = ("relevant", "irrelevant", "damaged", "not_damaged")


@dataclass(frozen=True)
class LabelTaxonomy:
    """Ordered model classes plus aliases left behind by class merges."""

    classes: tuple[str, ...] = DEFAULT_CLASSES
    merged_aliases: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("class names must be unique")
        for old, new in self.merged_aliases.items():
            if new in self.merged_aliases:
                raise ValueError(f"alias {old!r} maps to another alias {new!r}")
            if new not in self.classes:
                raise ValueError(f"alias {old!r} maps to unknown class {new!r}")

    def resolve(self, label: str) -> str:
        """Follow a merged-away name to its surviving class."""
        return self.merged_aliases.get(label, label)

    def index_of(self, label: str) -> int:
        return self.classes.index(self.resolve(label))

    def is_model_class(self, label: str | None) -> bool:
        return label is not None and self.resolve(label) in self.classes

    def valid_file_labels(self) -> set[str]:
        return set(self.classes) | set(self.merged_aliases) | set(NON_MODEL_LABELS)


@dataclass(frozen=True)
class DamageBox:
    """Pixel-space rectangle; synthetic ground truth for damaged renders."""

    x: int
    y: int
    width: int
    height: int

    def as_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "width": self.width, "height": self.height}


@dataclass
class FeedbackRecord:
    """One customer claim: comment text plus optional image and gold labels."""

    id: str
    comment: str = ""
    label: str | None = None
    image_path: str | None = None
    image_label: str | None = None
    damage_box: DamageBox | None = None

    def __post_init__(self):
        if self.label == UNKNOWN_LABEL and self.comment.strip():
            raise ValueError(f"record {self.id}: Unknown label requires an empty comment")
        if self.damage_box is not None and self.image_label != "damaged":
            raise ValueError(f"record {self.id}: damage_box only valid when image_label is damaged")
        if self.image_label is not None and self.image_label not in IMAGE_LABELS:
            raise ValueError(f"record {self.id}: invalid image_label {self.image_label!r}")


@dataclass
class DatasetSummary:
    """Per-label counts/percentages and a whitespace-token length histogram."""

    total: int
    counts: dict[str, int]
    percentages: dict[str, float]
    token_length_histogram: dict[int, int]


def record_to_dict(record: FeedbackRecord) -> dict:
    """Plain-dict form with absent optional fields omitted."""
    obj: dict = {"id": record.id, "comment": record.comment}
    if record.label is not None:
        obj["label"] = record.label
    if record.image_path is not None:
        obj["image_path"] = record.image_path
    if record.image_label is not None:
        obj["image_label"] = record.image_label
    if record.damage_box is not None:
        obj["damage_box"] = record.damage_box.as_dict()
    return obj


def record_from_dict(obj: dict) -> FeedbackRecord:
    box = obj.get("damage_box")
    return FeedbackRecord(
        id=str(obj["id"]),
        comment=obj.get("comment", ""),
        label=obj.get("label"),
        image_path=obj.get("image_path"),
        image_label=obj.get("image_label"),
        damage_box=DamageBox(**box) if box is not None else None,
    )


def _record_to_json(record: FeedbackRecord) -> str:
    return json.dumps(record_to_dict(record), ensure_ascii=False, separators=(",", ":"))


def save_dataset(records: list[FeedbackRecord], path) -> None:
    lines = [_record_to_json(r) for r in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_dataset(path, taxonomy: LabelTaxonomy | None = None) -> list[FeedbackRecord]:
    """Parse a dataset file, rejecting malformed lines and duplicate ids."""
    taxonomy = taxonomy or LabelTaxonomy()
    valid_labels = taxonomy.valid_file_labels()
    records: list[FeedbackRecord] = []
    seen_ids: set[str] = set()
    text = Path(path).read_text(encoding="utf-8")
    # split on newlines only: comments may legally contain \x85/ ,
    # which str.splitlines would treat as record boundaries
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: malformed record: {exc}") from exc
        if not isinstance(obj, dict) or "id" not in obj:
            raise ValueError(f"{path}:{lineno}: record must be an object with an 'id'")
        label = obj.get("label")
        if label is not None and label not in valid_labels:
            raise ValueError(f"{path}:{lineno}: unknown label {label!r}")
        try:
            record = record_from_dict(obj)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
        if record.id in seen_ids:
            raise ValueError(f"{path}:{lineno}: duplicate id {record.id!r}")
        seen_ids.add(record.id)
        records.append(record)
    return records


def filter_for_training(
    records: list[FeedbackRecord], taxonomy: LabelTaxonomy | None = None
) -> list[FeedbackRecord]:
    """Drop Unknown/Others/unlabeled records; survivors carry model classes.

    Merged-away labels are resolved to their surviving class in place of the
    original, so a merged taxonomy can be applied to an existing corpus.
    """
    taxonomy = taxonomy or LabelTaxonomy()
    out = []
    for r in records:
        if r.label is None or r.label in NON_MODEL_LABELS:
            continue
        resolved = taxonomy.resolve(r.label)
        if resolved not in taxonomy.classes:
            continue
        if resolved != r.label:
            r = FeedbackRecord(r.id, r.comment, resolved, r.image_path, r.image_label, r.damage_box)
        out.append(r)
    return out


def stratified_split(
    records: list[FeedbackRecord],
    test_fraction: float,
    seed: int,
    taxonomy: LabelTaxonomy | None = None,
) -> tuple[list[FeedbackRecord], list[FeedbackRecord]]:
    """Per-class partition: test count = round-half-up(n * fraction), >=1 when n >= 2.

    Deterministic per seed; input order is preserved within each half.
    """
    from .numerics import seeded_rng

    taxonomy = taxonomy or LabelTaxonomy()
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    by_class: dict[str, list[int]] = {}
    for i, r in enumerate(records):
        if not taxonomy.is_model_class(r.label):
            raise ValueError(f"record {r.id} has no model-class label ({r.label!r})")
        by_class.setdefault(taxonomy.resolve(r.label), []).append(i)

    rng = seeded_rng(seed)
    test_idx: set[int] = set()
    for cls in taxonomy.classes:
        members = by_class.get(cls, [])
        n = len(members)
        if n == 0:
            continue
        if n == 1:
            warnings.warn(f"class {cls!r} has a single record; keeping it in train")
            continue
        n_test = max(1, int(math.floor(n * test_fraction + 0.5)))
        order = rng.permutation(n)
        test_idx.update(members[j] for j in order[:n_test])

    train = [r for i, r in enumerate(records) if i not in test_idx]
    test = [r for i, r in enumerate(records) if i in test_idx]
    return train, test


def summarize(records: list[FeedbackRecord]) -> DatasetSummary:
    """Counts and percentages per label (Unknown/Others included) plus a
    whitespace-token comment-length histogram."""
    counts: dict[str, int] = {}
    histogram: dict[int, int] = {}
    for r in records:
        key = r.label if r.label is not None else "(unlabeled)"
        counts[key] = counts.get(key, 0) + 1
        n_tokens = len(r.comment.split())
        histogram[n_tokens] = histogram.get(n_tokens, 0) + 1
    total = len(records)
    percentages = {k: 100.0 * v / total for k, v in counts.items()} if total else {}
    return DatasetSummary(total, counts, percentages, histogram)
