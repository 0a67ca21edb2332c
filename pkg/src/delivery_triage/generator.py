"""Synthetic feedback corpus: templated comments per issue class and
procedurally rendered 64x64 package photos.

The corpus stands in for proprietary survey data. Classes are separable by
construction (disjoint keyword lexicons, checked at build time), which is
what makes downstream accuracy floors meaningful. Everything is driven by a
single seeded generator, so runs are byte-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import (
    DEFAULT_CLASSES,
    OTHERS_LABEL,
    UNKNOWN_LABEL,
    DamageBox,
    FeedbackRecord,
)
from .numerics import seeded_rng
from .ppm import write_ppm

DAMAGE_CLASS = "Poor Packaging/Handling/Damaged"
LATE_CLASS = "Late Delivery"
NOT_RECEIVED_CLASS = "Not Received"

# Observed label distribution of the production survey data, in percent.
TABLE_WEIGHTS = {
    "Poor Packaging/Handling/Damaged": 36.48,
    "Late Delivery": 16.20,
    "Partial/Split Delivery": 9.24,
    "Not Received": 9.01,
    OTHERS_LABEL: 8.37,
    UNKNOWN_LABEL: 7.16,
    "Dropped Outside (No notification)": 4.97,
    "Incorrect item": 4.55,
    "Wrong Address": 2.52,
    "Shipping Charges": 1.50,
}

TYPO_RATE = 0.02

_LEXICONS = {
    "Poor Packaging/Handling/Damaged": ["crushed", "ripped", "dented", "destroyed", "torn", "smashed", "shattered"],
    "Late Delivery": ["late", "delayed", "overdue", "slow", "postponed"],
    "Not Received": ["missing", "lost", "undelivered", "vanished"],
    "Dropped Outside (No notification)": ["porch", "doorstep", "driveway", "curb", "unattended"],
    "Incorrect item": ["incorrect", "swapped", "substituted", "mislabeled"],
    "Wrong Address": ["address", "neighbor", "street", "apartment"],
    "Partial/Split Delivery": ["partial", "split", "separately", "half", "incomplete"],
    "Shipping Charges": ["charged", "fee", "surcharge", "overcharged", "billed"],
}

_CLAUSES = {
    "Poor Packaging/Handling/Damaged": [
        "the box arrived {kw} and {kw2}",
        "package was completely {kw}",
        "item inside was {kw} and the carton {kw2}",
        "everything showed up {kw}",
    ],
    "Late Delivery": [
        "the order is {kw} again",
        "shipment was {kw} and then {kw2} twice",
        "it arrived days {kw}",
        "still {kw} after a week",
    ],
    "Not Received": [
        "my parcel is {kw}",
        "the order went {kw} and {kw2}",
        "package {kw} with no trace",
        "it never came and is {kw}",
    ],
    "Dropped Outside (No notification)": [
        "it was left on the {kw} with no warning",
        "found the parcel by the {kw} near the {kw2}",
        "driver dumped it on the {kw}",
        "left {kw} in the rain without a knock",
    ],
    "Incorrect item": [
        "received an {kw} product",
        "the model was {kw} with another one",
        "items were {kw} and {kw2}",
        "got something {kw} from what i picked",
    ],
    "Wrong Address": [
        "it went to the wrong {kw}",
        "delivered to my {kw} by mistake",
        "the {kw} on the slip was not mine",
        "ended up at another {kw} entirely",
    ],
    "Partial/Split Delivery": [
        "only {kw} of the order showed up",
        "boxes came {kw} over several days",
        "the shipment was {kw} and {kw2}",
        "got a {kw} delivery with items on backorder",
    ],
    "Shipping Charges": [
        "i was {kw} for delivery that should be free",
        "there is an extra {kw} on my invoice",
        "the {kw} was doubled at checkout",
        "got {kw} twice for one shipment",
    ],
}

# Lexicon and clauses shared by Late Delivery and Not Received when the
# deliberately confusable corpus is requested.
_OVERLAP_LEXICON = ["waiting", "stuck", "nowhere", "unfulfilled"]
_OVERLAP_CLAUSES = [
    "i am still {kw} on this order",
    "the package is {kw} somewhere",
    "tracking has been {kw} since friday",
    "order {kw} and {kw2} for days",
]

_FILLERS = [
    "ordered this last week",
    "i reached out to support already",
    "this keeps happening",
    "please look into it",
    "very disappointing experience",
    "first time buying from you",
    "tracking showed no updates",
    "hoping for a quick resolution",
    "the courier never responded",
    "same thing on my previous order",
    "not happy at all",
    "expected better service",
]

_OTHERS_COMMENTS = [
    "i have a question about my account settings",
    "the app kept logging me out during checkout",
    "my coupon code would not apply at all",
    "please update my payment method on file",
    "the website showed another picture entirely",
    "can someone call me back about my membership",
]

_LETTERS = "abcdefghijklmnopqrstuvwxyz"


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for the synthetic corpus; defaults mirror the observed label mix."""

    n_text: int = 0
    n_images: int = 0
    seed: int = 0
    out_dir: str = "."
    class_weights: dict[str, float] | None = None
    overlap_late_not_received: bool = False
    image_size: int = 64
    # damaged / not_damaged / irrelevant shares; balanced per downstream task
    image_family_weights: tuple[float, float, float] = (0.25, 0.25, 0.5)

    def __post_init__(self) -> None:
        # the largest box (44 px) plus its 4 px frame margin must fit
        if self.image_size < 52:
            raise ValueError(f"image_size must be >= 52, got {self.image_size}")
        if self.n_text < 0 or self.n_images < 0:
            raise ValueError("record counts must be non-negative")


def _build_text_spec(overlap: bool) -> tuple[dict, dict]:
    lexicons = {k: list(v) for k, v in _LEXICONS.items()}
    clauses = {k: list(v) for k, v in _CLAUSES.items()}
    if overlap:
        lexicons[LATE_CLASS] = list(_OVERLAP_LEXICON)
        lexicons[NOT_RECEIVED_CLASS] = list(_OVERLAP_LEXICON)
        clauses[LATE_CLASS] = list(_OVERLAP_CLAUSES)
        clauses[NOT_RECEIVED_CLASS] = list(_OVERLAP_CLAUSES)

    # Separability-by-construction check: no keyword may serve two classes
    # (outside the intentionally confusable pair) or leak into the fillers.
    allowed_overlap = {LATE_CLASS, NOT_RECEIVED_CLASS} if overlap else set()
    filler_words = {w for phrase in _FILLERS for w in phrase.split()}
    for a in DEFAULT_CLASSES:
        if set(lexicons[a]) & filler_words:
            raise AssertionError(f"lexicon of {a!r} leaks into filler phrases")
        for b in DEFAULT_CLASSES:
            if a >= b or {a, b} == allowed_overlap:
                continue
            shared = set(lexicons[a]) & set(lexicons[b])
            if shared:
                raise AssertionError(f"lexicons of {a!r} and {b!r} share {sorted(shared)}")
    return lexicons, clauses


def _apply_typos(text: str, rng: np.random.Generator) -> str:
    out = []
    for ch in text:
        if rng.random() < TYPO_RATE:
            op = rng.integers(0, 3)
            if op == 0:  # substitute
                out.append(_LETTERS[rng.integers(0, 26)])
            elif op == 1:  # delete
                continue
            else:  # duplicate
                out.append(ch)
                out.append(ch)
        else:
            out.append(ch)
    return "".join(out)


def _make_comment(label: str, lexicons: dict, clauses: dict, rng: np.random.Generator) -> str:
    if label == OTHERS_LABEL:
        body = _OTHERS_COMMENTS[rng.integers(0, len(_OTHERS_COMMENTS))]
        return _apply_typos(body, rng)
    lex = lexicons[label]
    kw = lex[rng.integers(0, len(lex))]
    kw2 = lex[rng.integers(0, len(lex))]
    clause_list = clauses[label]
    clause = clause_list[rng.integers(0, len(clause_list))].format(kw=kw, kw2=kw2)
    # a second keyword mention keeps the class signal robust to typo noise
    reinforce = f"{kw} basically" if rng.random() < 0.6 else None

    parts = []
    if rng.random() < 0.6:
        parts.append(_FILLERS[rng.integers(0, len(_FILLERS))])
    parts.append(clause)
    if reinforce:
        parts.append(reinforce)
    if rng.random() < 0.7:
        parts.append(_FILLERS[rng.integers(0, len(_FILLERS))])
    sep = [". ", ", ", "... ", " "][rng.integers(0, 4)]
    body = sep.join(parts)
    if rng.random() < 0.3:
        body += "!!!"
    return _apply_typos(body, rng)


def _fill_polygon(mask: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> None:
    """Even-odd rasterization of one polygon into a boolean mask (in place)."""
    h, w = mask.shape
    gy, gx = np.mgrid[0:h, 0:w]
    inside = np.zeros((h, w), dtype=bool)
    n = len(xs)
    j = n - 1
    for i in range(n):
        x1, y1, x2, y2 = xs[i], ys[i], xs[j], ys[j]
        cond = (y1 > gy) != (y2 > gy)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = (x2 - x1) * (gy - y1) / (y2 - y1) + x1
        inside ^= cond & (gx < xcross)
        j = i
    mask |= inside


def _render_package(rng: np.random.Generator, size: int, damaged: bool):
    """Axis-aligned box with a tape stripe; optional jagged dark tears."""
    bg = rng.integers(150, 231, size=3)
    img = np.ones((size, size, 3), dtype=np.int64) * bg
    # mild texture ripple so surfaces are not perfectly flat
    img += rng.integers(-4, 5, size=(size, size, 1))

    bw = int(rng.integers(26, 45))
    bh = int(rng.integers(26, 45))
    x0 = int(rng.integers(4, size - 4 - bw + 1))
    y0 = int(rng.integers(4, size - 4 - bh + 1))
    box_color = np.array([rng.integers(150, 191), rng.integers(105, 146), rng.integers(60, 101)])
    img[y0 : y0 + bh, x0 : x0 + bw] = box_color + rng.integers(-4, 5, size=(bh, bw, 1))
    border = (box_color * 0.6).astype(np.int64)
    img[y0 : y0 + 2, x0 : x0 + bw] = border
    img[y0 + bh - 2 : y0 + bh, x0 : x0 + bw] = border
    img[y0 : y0 + bh, x0 : x0 + 2] = border
    img[y0 : y0 + bh, x0 + bw - 2 : x0 + bw] = border

    tape_color = np.array([rng.integers(225, 251), rng.integers(215, 246), rng.integers(170, 211)])
    tape_w = int(rng.integers(3, 7))
    if rng.random() < 0.5:
        ty = y0 + bh // 2 - tape_w // 2 + int(rng.integers(-3, 4))
        img[ty : ty + tape_w, x0 : x0 + bw] = tape_color
    else:
        tx = x0 + bw // 2 - tape_w // 2 + int(rng.integers(-3, 4))
        img[y0 : y0 + bh, tx : tx + tape_w] = tape_color

    box = None
    if damaged:
        mask = np.zeros((size, size), dtype=bool)
        for _ in range(int(rng.integers(1, 4))):
            cx = float(rng.integers(x0 + 8, x0 + bw - 8 + 1))
            cy = float(rng.integers(y0 + 8, y0 + bh - 8 + 1))
            base_r = float(rng.integers(3, 8))
            k = int(rng.integers(5, 10))
            angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, size=k))
            radii = base_r * rng.uniform(0.5, 1.3, size=k)
            xs = cx + radii * np.cos(angles)
            ys = cy + radii * np.sin(angles)
            tear_mask = np.zeros((size, size), dtype=bool)
            _fill_polygon(tear_mask, xs, ys)
            tear_color = rng.integers(8, 61, size=3)
            img[tear_mask] = tear_color
            mask |= tear_mask
        ys_idx, xs_idx = np.nonzero(mask)
        box = DamageBox(
            x=int(xs_idx.min()),
            y=int(ys_idx.min()),
            width=int(xs_idx.max() - xs_idx.min() + 1),
            height=int(ys_idx.max() - ys_idx.min() + 1),
        )
    return np.clip(img, 0, 255).astype(np.uint8), box


def _render_irrelevant(rng: np.random.Generator, size: int) -> np.ndarray:
    """Gradient, noise field, or screenshot-like bar layout."""
    kind = int(rng.integers(0, 3))
    if kind == 0:
        c0 = rng.integers(0, 256, size=3).astype(np.float64)
        c1 = rng.integers(0, 256, size=3).astype(np.float64)
        theta = rng.uniform(0.0, 2.0 * np.pi)
        gy, gx = np.mgrid[0:size, 0:size]
        proj = gx * np.cos(theta) + gy * np.sin(theta)
        t = (proj - proj.min()) / max(proj.max() - proj.min(), 1e-9)
        img = c0 + (c1 - c0) * t[..., None]
        return np.clip(np.rint(img), 0, 255).astype(np.uint8)
    if kind == 1:
        return rng.integers(0, 256, size=(size, size, 3)).astype(np.uint8)
    img = np.zeros((size, size, 3), dtype=np.uint8)
    cuts = np.sort(rng.choice(np.arange(4, size - 4), size=int(rng.integers(3, 9)), replace=False))
    edges = [0, *cuts.tolist(), size]
    for a, b in zip(edges[:-1], edges[1:]):
        img[a:b] = rng.integers(20, 236, size=3)
        img[b - 1 : b] = 10  # thin separator line
    return img


def _draw_label(rng: np.random.Generator, labels: list[str], cum: np.ndarray) -> str:
    return labels[int(np.searchsorted(cum, rng.random(), side="right"))]


def generate_synthetic(config: GeneratorConfig) -> list[FeedbackRecord]:
    """Produce text and image records, writing pixmap files under out_dir.

    Image paths in the returned records are relative to out_dir. Call
    :func:`delivery_triage.datasets.save_dataset` to persist the records.
    """
    lexicons, clauses = _build_text_spec(config.overlap_late_not_received)
    rng = seeded_rng(config.seed)

    weights = config.class_weights or TABLE_WEIGHTS
    labels = list(weights)
    probs = np.asarray([weights[k] for k in labels], dtype=np.float64)
    cum = np.cumsum(probs / probs.sum())

    model_labels = [c for c in labels if c not in (UNKNOWN_LABEL, OTHERS_LABEL)]
    model_probs = np.asarray([weights[k] for k in model_labels], dtype=np.float64)
    model_cum = np.cumsum(model_probs / model_probs.sum())

    out_dir = Path(config.out_dir)
    probe_dir = out_dir / "images" if config.n_images > 0 else out_dir
    try:
        probe_dir.mkdir(parents=True, exist_ok=True)
        probe = probe_dir / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory not writable: {out_dir}: {exc}") from exc

    records: list[FeedbackRecord] = []
    for i in range(config.n_text):
        label = _draw_label(rng, labels, cum)
        comment = "" if label == UNKNOWN_LABEL else _make_comment(label, lexicons, clauses, rng)
        records.append(FeedbackRecord(id=f"text-{i:05d}", comment=comment, label=label))

    fam_cum = np.cumsum(np.asarray(config.image_family_weights) / sum(config.image_family_weights))
    for j in range(config.n_images):
        fam = int(np.searchsorted(fam_cum, rng.random(), side="right"))
        rel_path = f"images/img-{j:05d}.ppm"
        if fam == 0:  # damaged package photo
            pixels, box = _render_package(rng, config.image_size, damaged=True)
            image_label, text_label = "damaged", DAMAGE_CLASS
        elif fam == 1:  # intact package photo
            pixels, box = _render_package(rng, config.image_size, damaged=False)
            image_label, text_label = "not_damaged", _draw_label(rng, model_labels, model_cum)
        else:
            pixels, box = _render_irrelevant(rng, config.image_size), None
            image_label, text_label = "irrelevant", _draw_label(rng, model_labels, model_cum)
        write_ppm(pixels.astype(np.float64) / 255.0, out_dir / rel_path)
        comment = _make_comment(text_label, lexicons, clauses, rng)
        records.append(
            FeedbackRecord(
                id=f"img-{j:05d}",
                comment=comment,
                label=text_label,
                image_path=rel_path,
                image_label=image_label,
                damage_box=box,
            )
        )
    return records
