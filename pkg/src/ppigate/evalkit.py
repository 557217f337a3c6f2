"""Ranking metrics, gate export, and motif-alignment statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import ParseError, ProteinRecord
from .encoder import EncoderConfig, EncoderParams, encode


class MetricError(ValueError):
    """The metric is undefined for the given scores/labels."""


def _check_scored(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1 or scores.size == 0:
        raise MetricError(f"scores/labels shapes {scores.shape}/{labels.shape} invalid")
    if not np.isin(labels, (0, 1)).all():
        raise MetricError("labels must be binary")
    return scores, labels.astype(np.int64)


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC: P(score_pos > score_neg), ties counted half.

    Computed from midranks, so tied scores across classes contribute 1/2.
    """
    scores, labels = _check_scored(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Area under the precision-recall steps, descending scores.

    Ties are broken by stable input order; this tie-break is part of the
    definition used here and in the exported reports.
    """
    scores, labels = _check_scored(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise MetricError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = np.cumsum(labels[order])
    ranks = np.arange(1, scores.size + 1)
    precision = hits / ranks
    return float(precision[labels[order] == 1].sum() / n_pos)


def roc_points(scores, labels) -> np.ndarray:
    """(fpr, tpr) points of the ROC curve with tied scores grouped."""
    scores, labels = _check_scored(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    order = np.argsort(-scores, kind="mergesort")
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < scores.size:
        j = i
        while j < scores.size and scores[order[j]] == scores[order[i]]:
            tp += labels[order[j]] == 1
            fp += labels[order[j]] == 0
            j += 1
        points.append((fp / n_neg, tp / n_pos))
        i = j
    return np.array(points)


# --------------------------------------------------------------------------
# Gate export


@dataclass
class GateRow:
    id: str
    position: int  # 1-based
    residue: str
    gate: float


def export_gates(
    records: Sequence[ProteinRecord], params: EncoderParams, config: EncoderConfig
) -> list[GateRow]:
    """One row per residue with its gate value; gates sum to one per protein."""
    rows = []
    for rec in records:
        enc = encode(rec, params, config)
        letters = rec.letters()
        for pos, g in enumerate(enc.gates, start=1):
            rows.append(GateRow(rec.id, pos, letters[pos - 1], float(g)))
    return rows


def gates_tsv(rows: Sequence[GateRow]) -> str:
    lines = ["# id\tposition\tresidue\tgate"]
    for r in rows:
        lines.append(f"{r.id}\t{r.position}\t{r.residue}\t{r.gate!r}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Motif alignment


MotifSpan = tuple[str, int, int]  # (motif id, start, end), 1-based inclusive


def parse_motifs_tsv(text) -> dict[str, list[MotifSpan]]:
    """id <tab> motif_id <tab> start <tab> end, 1-based inclusive spans."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    out: dict[str, list[MotifSpan]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ParseError(f"expected 4 columns, got {len(parts)}", lineno)
        try:
            start, end = int(parts[2]), int(parts[3])
        except ValueError:
            raise ParseError(f"start/end must be integers in {line!r}", lineno)
        if not (1 <= start <= end):
            raise ParseError(f"invalid span [{start}, {end}]", lineno)
        out.setdefault(parts[0], []).append((parts[1], start, end))
    return out


def _span_mask(length: int, spans: Sequence[MotifSpan]) -> np.ndarray:
    mask = np.zeros(length, dtype=bool)
    for _, start, end in spans:
        if start > length:
            continue  # positions beyond truncation are ignored
        mask[start - 1 : min(end, length)] = True
    return mask


def motif_alignment(
    gates: Mapping[str, np.ndarray], annotations: Mapping[str, Sequence[MotifSpan]]
) -> tuple[float, float]:
    """(selected %, aligned %) of active gate positions, macro-averaged.

    A position is active when its gate is strictly positive. ``selected`` is
    the per-protein fraction of active positions averaged over all proteins;
    ``aligned`` is the per-protein fraction of active positions inside any
    motif span, averaged over annotated proteins with at least one active
    position.
    """
    if not annotations:
        raise MetricError("no motif annotations given")
    selected = []
    aligned = []
    for pid, g in gates.items():
        g = np.asarray(g)
        active = g > 0
        selected.append(100.0 * active.sum() / g.size)
        spans = annotations.get(pid)
        if spans and active.any():
            mask = _span_mask(g.size, spans)
            aligned.append(100.0 * (active & mask).sum() / active.sum())
    if not aligned:
        raise MetricError("annotations cover no protein with active gates")
    return float(np.mean(selected)), float(np.mean(aligned))


def gate_mass_in_spans(
    gates: Mapping[str, np.ndarray], annotations: Mapping[str, Sequence[MotifSpan]]
) -> float:
    """Fraction of total gate mass inside motif spans, over annotated proteins."""
    inside = total = 0.0
    for pid, spans in annotations.items():
        if pid not in gates:
            continue
        g = np.asarray(gates[pid])
        mask = _span_mask(g.size, spans)
        inside += g[mask].sum()
        total += g.sum()
    if total == 0:
        raise MetricError("no gate mass found for annotated proteins")
    return float(inside / total)


def metrics_report(auroc_value: float, ap_value: float) -> str:
    return (
        "metric,value\n"
        f"auroc,{auroc_value!r}\n"
        f"average_precision,{ap_value!r}\n"
    )
