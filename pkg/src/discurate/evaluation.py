"""Scoring predictions against generated ground truth.

Metrics: exact match (EM) after normalization, a relaxed variant (EM-R)
defined as bidirectional token-subsequence containment (a nonstandard
definition, flagged in the report header), mean relative accuracy (MRA)
for numeric answers, and extraction-based accuracy for A/B and yes/no
items.  Caption and grounding tasks are excluded from scoring.
"""

from __future__ import annotations

import re
from typing import Iterable, Mapping

from .oracle import validate_yes_no

MRA_THRESHOLDS = tuple(i / 100 for i in range(50, 100, 5))
EM_R_NOTE = ("EM-R is nonstandard: bidirectional token-subsequence "
             "containment after normalization")
EXCLUDED_TASKS = frozenset({
    "scene_caption", "view_caption", "object_caption", "visual_grounding",
})

_ARTICLES = ("a", "an", "the")
_UNIT_FACTORS_M = {"m": 1.0, "cm": 0.01, "mm": 0.001}
_NUMBER_RE = re.compile(
    r"(-?\d+(?:\.\d+)?)\s*(millimeters?|centimeters?|meters?|mm|cm|m)?\b",
    re.IGNORECASE)
_CHOICE_RE = re.compile(r"(?<![A-Za-z])([AB])(?![A-Za-z])")


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation except decimal points, collapse
    whitespace, drop leading articles."""
    lowered = text.lower()
    kept = []
    for i, ch in enumerate(lowered):
        if ch.isalnum() or ch.isspace():
            kept.append(ch)
        elif (ch == "." and 0 < i < len(lowered) - 1
                and lowered[i - 1].isdigit() and lowered[i + 1].isdigit()):
            kept.append(ch)
        else:
            kept.append(" ")
    tokens = "".join(kept).split()
    while tokens and tokens[0] in _ARTICLES:
        tokens.pop(0)
    return " ".join(tokens)


def exact_match(pred: str, gt: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gt))


def _is_token_subsequence(needle: list[str], hay: list[str]) -> bool:
    i = 0
    for token in hay:
        if i < len(needle) and needle[i] == token:
            i += 1
    return i == len(needle)


def exact_match_relaxed(pred: str, gt: str) -> int:
    p = normalize_answer(pred).split()
    g = normalize_answer(gt).split()
    if not p or not g:
        return int(p == g)
    return int(_is_token_subsequence(p, g) or _is_token_subsequence(g, p))


def mra(pred: float, gt: float) -> float:
    """Mean over thresholds of 1[|pred - gt| / gt < 1 - threshold]."""
    if gt <= 0:
        raise ValueError(f"mra requires positive ground truth, got {gt}")
    relative_error = abs(pred - gt) / gt
    hits = sum(1 for theta in MRA_THRESHOLDS if relative_error < 1 - theta)
    return hits / len(MRA_THRESHOLDS)


def _canonical_unit(raw: str | None) -> str | None:
    if raw is None:
        return None
    unit = raw.lower()
    if unit.startswith("milli") or unit == "mm":
        return "mm"
    if unit.startswith("centi") or unit == "cm":
        return "cm"
    return "m"


def _convert(value: float, unit: str | None, target_unit: str | None) -> float:
    if unit is None or target_unit is None:
        return value
    return value * _UNIT_FACTORS_M[unit] / _UNIT_FACTORS_M[target_unit]


def extract_number(text: str, *, target_unit: str | None = None
                   ) -> float | None:
    """First decimal number; converted when its unit and the target differ."""
    match = _NUMBER_RE.search(text)
    if match is None:
        return None
    value = float(match.group(1))
    return _convert(value, _canonical_unit(match.group(2)), target_unit)


def extract_dimensions(text: str, *, count: int = 3,
                       target_unit: str = "cm") -> list[float]:
    """Up to ``count`` leading numbers; a single explicit unit anywhere in
    the text applies to unitless entries."""
    matches = list(_NUMBER_RE.finditer(text))
    default_unit = None
    for match in matches:
        unit = _canonical_unit(match.group(2))
        if unit is not None:
            default_unit = unit
            break
    values = []
    for match in matches[:count]:
        unit = _canonical_unit(match.group(2)) or default_unit
        values.append(_convert(float(match.group(1)), unit, target_unit))
    return values


def extract_choice(text: str) -> str | None:
    """First standalone uppercase A or B."""
    match = _CHOICE_RE.search(text)
    return match.group(1) if match else None


def _score_size(pred: str, gt: str) -> float:
    gt_dims = extract_dimensions(gt)
    pred_dims = extract_dimensions(pred)
    if not gt_dims:
        return 0.0
    scores = []
    for i, gt_dim in enumerate(gt_dims):
        pred_dim = pred_dims[i] if i < len(pred_dims) else None
        if gt_dim <= 0:
            scores.append(1.0 if pred_dim == gt_dim else 0.0)
        elif pred_dim is None:
            scores.append(0.0)
        else:
            scores.append(mra(pred_dim, gt_dim))
    return sum(scores) / len(scores)


def _score_distance(pred: str, gt: str) -> float:
    gt_value = extract_number(gt, target_unit="m")
    if gt_value is None or gt_value <= 0:
        return 0.0
    pred_value = extract_number(pred, target_unit="m")
    if pred_value is None:
        return 0.0
    return mra(pred_value, gt_value)


def _score_true_false(pred: str, gt: str) -> float:
    extracted = validate_yes_no(pred)
    if extracted is None:
        return 0.0
    return float(extracted == normalize_answer(gt))


def score_sample(sample: Mapping, pred: str) -> tuple[str, float]:
    """Score one sample; returns (metric name, score in [0, 1])."""
    task = sample["task"]
    gt = sample["answer"]
    if task == "object_size":
        return "mra", _score_size(pred, gt)
    if task == "absolute_distance":
        return "mra", _score_distance(pred, gt)
    if task == "relative_distance":
        return "accuracy", float(extract_choice(pred) == gt)
    if task == "attribute_recognition":
        if sample.get("options"):
            return "accuracy", _score_true_false(pred, gt)
        return "em", float(exact_match(pred, gt))
    if task == "object_count":
        return "em", float(exact_match(pred, gt))
    return "em", float(exact_match(pred, gt))


def score_dataset(samples: Iterable[Mapping],
                  predictions: Iterable[Mapping]) -> dict:
    """Per-task report over scoreable tasks.

    Missing predictions score 0 and are counted; caption and grounding
    samples are listed under ``excluded`` with counts only.
    """
    pred_by_id = {p["sample_id"]: p.get("text", "") for p in predictions}
    tasks: dict[str, dict] = {}
    excluded: dict[str, int] = {}
    missing = 0
    for sample in samples:
        task = sample["task"]
        if task in EXCLUDED_TASKS:
            excluded[task] = excluded.get(task, 0) + 1
            continue
        pred = pred_by_id.get(sample["sample_id"])
        if pred is None:
            missing += 1
            pred = ""
        metric, score = score_sample(sample, pred)
        entry = tasks.setdefault(task, {"count": 0, "metric": metric,
                                        "total": 0.0})
        entry["count"] += 1
        entry["total"] += score
    for entry in tasks.values():
        entry["score"] = entry["total"] / entry["count"]
        del entry["total"]
    return {
        "header": {"em_r": EM_R_NOTE},
        "tasks": {task: tasks[task] for task in sorted(tasks)},
        "excluded": {task: excluded[task] for task in sorted(excluded)},
        "missing_predictions": missing,
    }


def format_report(report: Mapping) -> str:
    lines = [report["header"]["em_r"], ""]
    lines.append(f"{'task':<24} {'metric':<10} {'count':>6} {'score':>8}")
    for task, entry in report["tasks"].items():
        lines.append(f"{task:<24} {entry['metric']:<10} "
                     f"{entry['count']:>6} {entry['score']:>8.4f}")
    for task, count in report.get("excluded", {}).items():
        lines.append(f"{task:<24} {'excluded':<10} {count:>6} {'-':>8}")
    if report.get("missing_predictions"):
        lines.append(f"missing predictions: {report['missing_predictions']}")
    return "\n".join(lines)
