"""Screenshot geometry: match OCR paragraphs to detected SMS text cells.

Boxes use integer pixel coordinates with the origin at the image's top-left
corner and y growing downward. All area arithmetic stays in integers until
the final division, so results can be checked exactly against a
pixel-lattice counter.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Sequence

from .corpus import ImageRef

logger = logging.getLogger(__name__)

DEFAULT_OVERLAP_THRESHOLD = 0.75
DEFAULT_IOU_MATCH = 0.5

# Candidate sender lines that are really clock or date strings are skipped.
_TIME_RE = re.compile(r":")
_DATE_WORDS = frozenset(
    {
        "mon", "tue", "wed", "thu", "fri", "sat", "sun",
        "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday",
        "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
        "january", "february", "march", "april", "june", "july", "august",
        "september", "october", "november", "december",
    }
)
_PHONE_SENDER_RE = re.compile(r"\+?[0-9](?:[0-9 \-]*[0-9])?")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box: top-left corner (x, y), width w, height h, all px."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive extent, got {self}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"box origin must be non-negative, got {self}")

    @property
    def right(self) -> int:
        return self.x + self.w

    @property
    def bottom(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h


@dataclass(frozen=True)
class DetectedCell:
    bbox: BoundingBox
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of [0,1]: {self.confidence}")


@dataclass(frozen=True)
class OcrParagraph:
    text: str
    bbox: BoundingBox

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("paragraph text is empty after trimming")


@dataclass
class ScreenshotAnalysis:
    """Per-image result: detected cells, paragraphs, assembled messages."""

    image_id: str
    cells: list[DetectedCell]
    paragraphs: list[OcrParagraph]
    messages: list[tuple[int, str]]
    sender_raw: Optional[str] = None


def intersection_area(a: BoundingBox, b: BoundingBox) -> int:
    """Exact integer area of the overlap, 0 when disjoint."""
    dx = min(a.right, b.right) - max(a.x, b.x)
    dy = min(a.bottom, b.bottom) - max(a.y, b.y)
    if dx <= 0 or dy <= 0:
        return 0
    return dx * dy


def union_area(a: BoundingBox, b: BoundingBox) -> int:
    return a.area + b.area - intersection_area(a, b)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0.0 for disjoint boxes."""
    inter = intersection_area(a, b)
    if inter == 0:
        return 0.0
    return inter / union_area(a, b)


def overlap_ratio(paragraph: BoundingBox, cell: BoundingBox) -> float:
    """Overlap relative to the paragraph's own area (asymmetric)."""
    return intersection_area(paragraph, cell) / paragraph.area


def assemble_messages(
    cells: Sequence[DetectedCell],
    paragraphs: Sequence[OcrParagraph],
    threshold: float = DEFAULT_OVERLAP_THRESHOLD,
) -> list[tuple[int, str]]:
    """Assign paragraphs to cells and join each cell's text in reading order.

    A paragraph belongs to the cell where its overlap ratio is highest,
    provided that ratio reaches ``threshold`` (inclusive); ratio ties go to
    the lower cell index. Selected paragraphs are ordered top-to-bottom then
    left-to-right and joined with single spaces. Cells that attract no
    paragraph produce no entry.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    assigned: dict[int, list[OcrParagraph]] = {}
    for paragraph in paragraphs:
        best_cell = -1
        best_ratio = 0.0
        for cell_index, cell in enumerate(cells):
            ratio = overlap_ratio(paragraph.bbox, cell.bbox)
            if ratio >= threshold and ratio > best_ratio:
                best_cell = cell_index
                best_ratio = ratio
        if best_cell >= 0:
            assigned.setdefault(best_cell, []).append(paragraph)
    messages: list[tuple[int, str]] = []
    for cell_index in sorted(assigned):
        ordered = sorted(assigned[cell_index], key=lambda p: (p.bbox.y, p.bbox.x))
        messages.append((cell_index, " ".join(p.text for p in ordered)))
    return messages


def looks_like_timestamp(text: str) -> bool:
    if _TIME_RE.search(text):
        return True
    return any(t in _DATE_WORDS for t in re.split(r"[\W_]+", text.lower()) if t)


def matches_sender_pattern(text: str) -> bool:
    """True for phone-number-shaped strings or short alphanumeric sender IDs."""
    trimmed = text.strip()
    if not trimmed or looks_like_timestamp(trimmed):
        return False
    if _PHONE_SENDER_RE.fullmatch(trimmed):
        return sum(c.isdigit() for c in trimmed) >= 3
    return (
        2 <= len(trimmed) <= 16
        and trimmed.isalnum()
        and any(c.isalpha() for c in trimmed)
    )


def extract_sender(
    paragraphs: Sequence[OcrParagraph], cells: Sequence[DetectedCell]
) -> Optional[str]:
    """Pick the sender line from the text strictly above the topmost cell.

    Candidates are paragraphs whose bottom edge lies above the topmost
    cell's top edge, scanned top-down; the first one matching the sender
    pattern wins. Returns None when there is no cell or no match.
    """
    if not cells:
        return None
    top = min(cell.bbox.y for cell in cells)
    candidates = [p for p in paragraphs if p.bbox.bottom < top]
    candidates.sort(key=lambda p: (p.bbox.y, p.bbox.x))
    for paragraph in candidates:
        if matches_sender_pattern(paragraph.text):
            return paragraph.text.strip()
    return None


def analyze_screenshot(
    image_id: str,
    cells: Sequence[DetectedCell],
    paragraphs: Sequence[OcrParagraph],
    threshold: float = DEFAULT_OVERLAP_THRESHOLD,
) -> ScreenshotAnalysis:
    return ScreenshotAnalysis(
        image_id=image_id,
        cells=list(cells),
        paragraphs=list(paragraphs),
        messages=assemble_messages(cells, paragraphs, threshold),
        sender_raw=extract_sender(paragraphs, cells),
    )


@dataclass
class DetectionMetrics:
    tp: int
    fp: int
    fn: int
    mean_iou: float

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0


def evaluate_detections(
    predicted: Sequence[DetectedCell],
    truth: Sequence[BoundingBox],
    iou_match: float = DEFAULT_IOU_MATCH,
) -> DetectionMetrics:
    """Greedy one-to-one matching of predictions against ground truth.

    Predictions are taken in descending confidence order (input order breaks
    ties) and matched to the unclaimed truth box of highest IoU, provided the
    IoU reaches ``iou_match``. Matched pairs count as TP, leftover
    predictions as FP, leftover truth boxes as FN; mean_iou averages over
    matched pairs only.
    """
    if not 0.0 < iou_match <= 1.0:
        raise ValueError(f"iou_match must be in (0, 1], got {iou_match}")
    order = sorted(range(len(predicted)), key=lambda i: (-predicted[i].confidence, i))
    claimed: set[int] = set()
    matched_ious: list[float] = []
    for pred_index in order:
        best_truth = -1
        best_iou = 0.0
        for truth_index, truth_box in enumerate(truth):
            if truth_index in claimed:
                continue
            value = iou(predicted[pred_index].bbox, truth_box)
            if value >= iou_match and value > best_iou:
                best_truth = truth_index
                best_iou = value
        if best_truth >= 0:
            claimed.add(best_truth)
            matched_ious.append(best_iou)
    tp = len(matched_ious)
    mean_iou = sum(matched_ious) / tp if tp else 0.0
    return DetectionMetrics(
        tp=tp, fp=len(predicted) - tp, fn=len(truth) - tp, mean_iou=mean_iou
    )


def _lcs_length(a: Sequence, b: Sequence) -> int:
    # Classic two-row DP; inputs are short (message-sized).
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for item_a in a:
        current = [0]
        for j, item_b in enumerate(b, start=1):
            if item_a == item_b:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def _sequence_accuracy(expected: Sequence, actual: Sequence) -> float:
    """LCS overlap relative to the recognized (actual) sequence."""
    if not expected and not actual:
        return 1.0
    if not actual:
        return 0.0
    return _lcs_length(expected, actual) / len(actual)


def _sequence_recall(expected: Sequence, actual: Sequence) -> float:
    """LCS overlap relative to the expected sequence; exposes omissions."""
    if not expected and not actual:
        return 1.0
    if not expected:
        return 0.0
    return _lcs_length(expected, actual) / len(expected)


def word_accuracy(expected: str, actual: str) -> float:
    return _sequence_accuracy(expected.split(), actual.split())


def word_recall(expected: str, actual: str) -> float:
    return _sequence_recall(expected.split(), actual.split())


def char_accuracy(expected: str, actual: str) -> float:
    return _sequence_accuracy(expected, actual)


def char_recall(expected: str, actual: str) -> float:
    return _sequence_recall(expected, actual)


class Detector(Protocol):
    """SMS text-cell detector; live adapters may call remote inference."""

    def detect(self, image: ImageRef) -> list[DetectedCell]: ...


class OcrEngine(Protocol):
    """Paragraph-level OCR; live adapters may call remote vision services."""

    def ocr(self, image: ImageRef) -> list[OcrParagraph]: ...


def _bbox_from_array(values: Sequence[int]) -> BoundingBox:
    x, y, w, h = values
    return BoundingBox(x=int(x), y=int(y), w=int(w), h=int(h))


def _load_keyed_objects(path: str | Path) -> dict[str, dict]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    objects = data if isinstance(data, list) else [data]
    return {str(obj["image_id"]): obj for obj in objects}


class FixtureDetector:
    """Detector backed by a precomputed JSON file keyed by image_id.

    File shape: one object or a list of objects, each
    ``{"image_id": str, "cells": [{"bbox": [x, y, w, h], "confidence": f}]}``.
    Unknown images yield no cells.
    """

    def __init__(self, path: str | Path):
        self._by_image = _load_keyed_objects(path)

    def detect(self, image: ImageRef) -> list[DetectedCell]:
        entry = self._by_image.get(image.image_id)
        if entry is None:
            return []
        return [
            DetectedCell(
                bbox=_bbox_from_array(cell["bbox"]),
                confidence=float(cell["confidence"]),
            )
            for cell in entry.get("cells", [])
        ]


class FixtureOcr:
    """OCR engine backed by a precomputed JSON file keyed by image_id.

    File shape mirrors FixtureDetector with
    ``{"image_id": str, "paragraphs": [{"text": str, "bbox": [x, y, w, h]}]}``.
    """

    def __init__(self, path: str | Path):
        self._by_image = _load_keyed_objects(path)

    def ocr(self, image: ImageRef) -> list[OcrParagraph]:
        entry = self._by_image.get(image.image_id)
        if entry is None:
            return []
        return [
            OcrParagraph(text=str(p["text"]), bbox=_bbox_from_array(p["bbox"]))
            for p in entry.get("paragraphs", [])
        ]


def load_truth_boxes(path: str | Path) -> dict[str, list[BoundingBox]]:
    """Ground-truth cell boxes per image, same bbox array shape as fixtures."""
    by_image = _load_keyed_objects(path)
    return {
        image_id: [_bbox_from_array(box["bbox"]) for box in entry.get("cells", [])]
        for image_id, entry in by_image.items()
    }
