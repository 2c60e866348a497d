"""Task-level metrics, corpus aggregation, and report rendering.

Tuple tasks score as micro-F1 over de-duplicated exact-match keys; grounding
tasks score as matched-set means (image mIoU, per-frame video Jaccard, 1D
audio span IoU). Aggregation sums TP/FP/FN for F1 cells and macro-averages
per-instance values for grounding cells.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .assignment import match_mask_sets, match_span_sets, match_tracklet_sets
from .geometry import (
    DEFAULT_BCE_EPSILON,
    mask_iou,
    rle_decode,
    span_iou_1d,
    tracklet_iou_profile,
)
from .jsonutil import canonical_bytes
from .model import (
    Alignment,
    AudioSegment,
    EntityMention,
    EventRecord,
    GoldAnnotation,
    ImageMask,
    Modality,
    ModelError,
    PredictionSet,
    RelationTriple,
    Task,
    Tracklet,
    normalize_mention,
)

REPORT_FORMAT_VERSION = 1

METRIC_ORDER = ["ner_f1", "re_f1", "et_f1", "ea_f1", "image_miou", "audio_miou", "video_jaccard"]
METRIC_HEADERS = {
    "ner_f1": "NER",
    "re_f1": "RE",
    "et_f1": "ET",
    "ea_f1": "EA",
    "image_miou": "I-Seg",
    "audio_miou": "A-Seg",
    "video_jaccard": "V-Trck",
}
F1_METRICS = {"ner_f1", "re_f1", "et_f1", "ea_f1"}

VALID_SPLITS = ("all", "shared", "specific", "entity-buckets")


@dataclass(frozen=True)
class PRF:
    tp: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise ModelError("NEGATIVE_COUNT", "tp/fp/fn must be non-negative")

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: "PRF") -> "PRF":
        return PRF(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class GroundingScore:
    kind: str
    value: float
    matched_pairs: int
    unmatched_gold: int
    unmatched_pred: int
    vacuous: bool = False

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0 + 1e-12):
            raise ModelError("VALUE_OUT_OF_RANGE", f"grounding score {self.value} outside [0,1]")


def _fold(s: str, case_insensitive: bool) -> str:
    s = normalize_mention(s)
    return s.lower() if case_insensitive else s


def _count_sets(gold_keys: set, pred_keys: set) -> PRF:
    tp = len(gold_keys & pred_keys)
    return PRF(tp=tp, fp=len(pred_keys) - tp, fn=len(gold_keys) - tp)


def score_ner(gold, pred, case_insensitive: bool = False) -> PRF:
    """A prediction counts iff (normalized surface, label) exactly matches gold."""
    def keys(mentions) -> set:
        return {(_fold(m.surface, case_insensitive), _fold(m.label, case_insensitive)) for m in mentions}

    return _count_sets(keys(gold), keys(pred))


def score_re(gold, pred, strict: bool = False, case_insensitive: bool = False) -> PRF:
    """Subject/object boundaries plus the relation label must match; entity
    labels participate only in strict mode."""
    def keys(triples) -> set:
        out = set()
        for t in triples:
            key = (
                _fold(t.subject.surface, case_insensitive),
                _fold(t.relation, case_insensitive),
                _fold(t.object.surface, case_insensitive),
            )
            if strict:
                key += (_fold(t.subject.label, case_insensitive), _fold(t.object.label, case_insensitive))
            out.add(key)
        return out

    return _count_sets(keys(gold), keys(pred))


def score_event_trigger(gold, pred, case_insensitive: bool = False) -> PRF:
    """(trigger word, event type) pairs."""
    def keys(events) -> set:
        return {(_fold(e.trigger, case_insensitive), _fold(e.event_type, case_insensitive)) for e in events}

    return _count_sets(keys(gold), keys(pred))


def score_event_argument(gold, pred, case_insensitive: bool = False) -> PRF:
    """(event type, argument mention, role) triples; the event type gates the match."""
    def keys(events) -> set:
        out = set()
        for e in events:
            for a in e.arguments:
                out.add((
                    _fold(e.event_type, case_insensitive),
                    _fold(a.mention, case_insensitive),
                    _fold(a.role, case_insensitive),
                ))
        return out

    return _count_sets(keys(gold), keys(pred))


def _grounding_score(kind: str, n_gold: int, n_pred: int, pair_values: list[float]) -> GroundingScore:
    if n_gold == 0 and n_pred == 0:
        return GroundingScore(kind, 1.0, 0, 0, 0, vacuous=True)
    matched = len(pair_values)
    value = sum(pair_values) / max(n_gold, n_pred)
    return GroundingScore(
        kind=kind,
        value=value,
        matched_pairs=matched,
        unmatched_gold=n_gold - matched,
        unmatched_pred=n_pred - matched,
    )


def score_image_grounding(
    gold: list[ImageMask], pred: list[ImageMask], epsilon: float = DEFAULT_BCE_EPSILON
) -> GroundingScore:
    """Hungarian-match the mask sets, then mIoU = sum of matched IoU / max(G, K)."""
    gold_dense = [rle_decode(m) for m in gold]
    pred_dense = [rle_decode(m) for m in pred]
    matching = match_mask_sets(gold_dense, pred_dense, epsilon)
    ious = [mask_iou(gold_dense[p.gold], pred_dense[p.pred]) for p in matching.real_pairs()]
    return _grounding_score("image_miou", len(gold), len(pred), ious)


def score_video_tracking(gold: list[Tracklet], pred: list[Tracklet]) -> GroundingScore:
    """Per matched tracklet the frame-averaged Jaccard, summed over max(G, K)."""
    matching = match_tracklet_sets(list(gold), list(pred))
    means = [tracklet_iou_profile(gold[p.gold], pred[p.pred]).mean for p in matching.real_pairs()]
    return _grounding_score("video_jaccard", len(gold), len(pred), means)


def score_audio_segmentation(gold: list[AudioSegment], pred: list[AudioSegment]) -> GroundingScore:
    matching = match_span_sets(list(gold), list(pred))
    ious = [span_iou_1d(gold[p.gold], pred[p.pred]) for p in matching.real_pairs()]
    return _grounding_score("audio_miou", len(gold), len(pred), ious)


@dataclass(frozen=True)
class ScoringOptions:
    case_insensitive: bool = False
    strict_re: bool = False
    bce_epsilon: float = DEFAULT_BCE_EPSILON
    exclude_vacuous: bool = False
    # bucket upper bounds for the entity-count split; counts above the last
    # bound share one open-ended bucket
    bucket_bounds: tuple[int, ...] = (1, 2, 3, 4)

    def bucket_label(self, count: int) -> str:
        for bound in self.bucket_bounds:
            if count <= bound:
                return f"n={bound}"
        return f"n>={self.bucket_bounds[-1] + 1}"


_GROUNDING_SCORERS = {
    Modality.IMAGE: ("image_miou", ImageMask),
    Modality.AUDIO: ("audio_miou", AudioSegment),
    Modality.VIDEO: ("video_jaccard", Tracklet),
}


def score_pair(
    gold: GoldAnnotation,
    pred: PredictionSet,
    modalities: set[Modality],
    options: ScoringOptions = ScoringOptions(),
) -> tuple[dict[str, PRF], dict[str, GroundingScore]]:
    """Score one instance: its task's F1 counts plus one grounding metric per
    non-text modality present in the bundle."""
    prf: dict[str, PRF] = {}
    if gold.task is Task.NER:
        prf["ner_f1"] = score_ner(gold.entities, pred.entities, options.case_insensitive)
    elif gold.task is Task.RE:
        prf["re_f1"] = score_re(gold.relations, pred.relations, options.strict_re, options.case_insensitive)
    elif gold.task is Task.EE:
        prf["et_f1"] = score_event_trigger(gold.events, pred.events, options.case_insensitive)
        prf["ea_f1"] = score_event_argument(gold.events, pred.events, options.case_insensitive)

    grounding: dict[str, GroundingScore] = {}
    for modality in sorted(modalities & set(_GROUNDING_SCORERS), key=lambda m: m.value):
        kind, _ = _GROUNDING_SCORERS[modality]
        gold_payloads = gold.grounding_payloads(modality)
        pred_payloads = pred.grounding_payloads(modality)
        if modality is Modality.IMAGE:
            grounding[kind] = score_image_grounding(gold_payloads, pred_payloads, options.bce_epsilon)
        elif modality is Modality.AUDIO:
            grounding[kind] = score_audio_segmentation(gold_payloads, pred_payloads)
        else:
            grounding[kind] = score_video_tracking(gold_payloads, pred_payloads)
    return prf, grounding


@dataclass(frozen=True)
class InstanceScore:
    """Per-instance metric bundle feeding corpus aggregation."""

    instance_id: str
    dataset: str
    modality_combo: str
    task: Task
    alignment: Alignment
    gold_tuple_count: int
    prf: dict[str, PRF] = field(default_factory=dict)
    grounding: dict[str, GroundingScore] = field(default_factory=dict)


@dataclass(frozen=True)
class ReportCell:
    dataset: str
    modality_combo: str
    task: str
    metric: str
    split: str
    value: float
    instances: int
    instance_ids: tuple[str, ...]
    tp: int | None = None
    fp: int | None = None
    fn: int | None = None


@dataclass(frozen=True)
class ScoreReport:
    cells: tuple[ReportCell, ...]

    def cell(self, dataset: str, modality_combo: str, task: str, metric: str, split: str = "all") -> ReportCell:
        for c in self.cells:
            if (c.dataset, c.modality_combo, c.task, c.metric, c.split) == (
                dataset, modality_combo, task, metric, split,
            ):
                return c
        raise KeyError((dataset, modality_combo, task, metric, split))


def _split_rank(split: str) -> tuple:
    base = {"all": 0, "shared": 1, "specific": 2}
    if split in base:
        return (base[split], 0)
    return (3, split)


def _metric_rank(metric: str):
    return METRIC_ORDER.index(metric) if metric in METRIC_ORDER else len(METRIC_ORDER)


def _sorted_cells(cells) -> tuple[ReportCell, ...]:
    return tuple(
        sorted(
            cells,
            key=lambda c: (c.modality_combo, c.dataset, c.task, _split_rank(c.split), _metric_rank(c.metric)),
        )
    )


def aggregate(
    instances: list[InstanceScore],
    splits: tuple[str, ...] = ("all",),
    options: ScoringOptions = ScoringOptions(),
) -> ScoreReport:
    """Aggregate per-instance scores into report cells.

    F1 cells sum counts across instances (micro); grounding cells average
    per-instance values in instance-id order (macro). Results are independent
    of input order.
    """
    for split in splits:
        if split not in VALID_SPLITS:
            raise ModelError("INVALID_SPLIT", f"unknown split {split!r}; valid: {VALID_SPLITS}")

    def split_labels(inst: InstanceScore) -> list[str]:
        labels = []
        for split in splits:
            if split == "all":
                labels.append("all")
            elif split == "shared" and inst.alignment is Alignment.SHARED:
                labels.append("shared")
            elif split == "specific" and inst.alignment is Alignment.SPECIFIC:
                labels.append("specific")
            elif split == "entity-buckets":
                labels.append(options.bucket_label(inst.gold_tuple_count))
        return labels

    ordered = sorted(instances, key=lambda i: i.instance_id)
    groups: dict[tuple, list[InstanceScore]] = {}
    for inst in ordered:
        for label in split_labels(inst):
            groups.setdefault((inst.dataset, inst.modality_combo, inst.task.value, label), []).append(inst)

    cells: list[ReportCell] = []
    for (dataset, combo, task, label), members in groups.items():
        metrics = sorted({m for inst in members for m in inst.prf} | {m for inst in members for m in inst.grounding})
        for metric in metrics:
            if metric in F1_METRICS:
                contributing = [i for i in members if metric in i.prf]
                total = PRF(0, 0, 0)
                for inst in contributing:
                    total = total + inst.prf[metric]
                cells.append(
                    ReportCell(
                        dataset=dataset, modality_combo=combo, task=task, metric=metric,
                        split=label, value=total.f1, instances=len(contributing),
                        instance_ids=tuple(i.instance_id for i in contributing),
                        tp=total.tp, fp=total.fp, fn=total.fn,
                    )
                )
            else:
                contributing = [
                    i for i in members
                    if metric in i.grounding and not (options.exclude_vacuous and i.grounding[metric].vacuous)
                ]
                if not contributing:
                    continue
                value = sum(i.grounding[metric].value for i in contributing) / len(contributing)
                cells.append(
                    ReportCell(
                        dataset=dataset, modality_combo=combo, task=task, metric=metric,
                        split=label, value=value, instances=len(contributing),
                        instance_ids=tuple(i.instance_id for i in contributing),
                    )
                )
    return ScoreReport(cells=_sorted_cells(cells))


def format_percent(value: float) -> str:
    """0.474 -> '47.4'; exactly one decimal."""
    return f"{value * 100:.1f}"


def _table_bytes(report: ScoreReport) -> bytes:
    rows: dict[tuple, dict[str, str]] = {}
    counts: dict[tuple, int] = {}
    for c in report.cells:
        key = (c.modality_combo, c.dataset, c.task, c.split)
        rows.setdefault(key, {})[c.metric] = format_percent(c.value)
        counts[key] = max(counts.get(key, 0), c.instances)
    header = ["combo", "dataset", "task", "split"] + [METRIC_HEADERS[m] for m in METRIC_ORDER] + ["N"]
    body = []
    for key in sorted(rows, key=lambda k: (k[0], k[1], k[2], _split_rank(k[3]))):
        combo, dataset, task, split = key
        body.append(
            [combo, dataset, task, split]
            + [rows[key].get(m, "-") for m in METRIC_ORDER]
            + [str(counts[key])]
        )
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in [header] + body]
    lines.insert(1, "-" * max(len(line) for line in lines))
    return ("\n".join(lines) + "\n").encode("utf-8")


def _csv_bytes(report: ScoreReport) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow([
        "dataset", "modality_combo", "task", "metric", "split",
        "value", "percent", "tp", "fp", "fn", "instances", "instance_ids",
    ])
    for c in report.cells:
        writer.writerow([
            c.dataset, c.modality_combo, c.task, c.metric, c.split,
            repr(c.value), format_percent(c.value),
            "" if c.tp is None else c.tp, "" if c.fp is None else c.fp, "" if c.fn is None else c.fn,
            c.instances, ";".join(c.instance_ids),
        ])
    return buf.getvalue().encode("utf-8")


def report_to_dict(report: ScoreReport) -> dict:
    cells = []
    for c in report.cells:
        entry = {
            "dataset": c.dataset,
            "modality_combo": c.modality_combo,
            "task": c.task,
            "metric": c.metric,
            "split": c.split,
            "value": c.value,
            "percent": format_percent(c.value),
            "instances": c.instances,
            "instance_ids": list(c.instance_ids),
        }
        if c.tp is not None:
            entry["counts"] = {"tp": c.tp, "fp": c.fp, "fn": c.fn}
        cells.append(entry)
    return {"format_version": REPORT_FORMAT_VERSION, "cells": cells}


def report_from_dict(data: dict) -> ScoreReport:
    if data.get("format_version") != REPORT_FORMAT_VERSION:
        raise ModelError("BAD_FORMAT_VERSION", f"expected format_version {REPORT_FORMAT_VERSION}")
    cells = []
    for entry in data["cells"]:
        counts = entry.get("counts") or {}
        cells.append(
            ReportCell(
                dataset=entry["dataset"],
                modality_combo=entry["modality_combo"],
                task=entry["task"],
                metric=entry["metric"],
                split=entry["split"],
                value=float(entry["value"]),
                instances=int(entry["instances"]),
                instance_ids=tuple(entry["instance_ids"]),
                tp=counts.get("tp"),
                fp=counts.get("fp"),
                fn=counts.get("fn"),
            )
        )
    return ScoreReport(cells=_sorted_cells(cells))


def load_report(raw: bytes | str) -> ScoreReport:
    return report_from_dict(json.loads(raw))


def render_report(report: ScoreReport, format: str = "table") -> bytes:
    """Render as a UTF-8 table (percent values, one decimal), RFC-4180 CSV,
    or canonical versioned JSON; CSV and JSON are lossless."""
    if format == "table":
        return _table_bytes(report)
    if format == "csv":
        return _csv_bytes(report)
    if format == "json":
        return canonical_bytes(report_to_dict(report))
    raise ModelError("UNKNOWN_FORMAT", f"format must be table|csv|json, got {format!r}")
