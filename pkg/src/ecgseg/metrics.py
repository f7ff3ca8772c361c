"""Correspondence-based detection and delineation scoring.

A wave instance counts as detected when any of its fiducials falls inside the
other side's [onset, offset] interval (in either direction). Per-lead
correspondence matrices are OR-fused, detection counts use one-to-one
(maximum bipartite) matching so a single prediction cannot satisfy several
true beats, and boundary errors are taken per true beat over the best-matching
candidate across leads.
"""
from __future__ import annotations

import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .records import WAVES

Beat = tuple[Optional[int], Optional[int], Optional[int]]  # (onset, peak, offset)


def beat_fiducials(beat: Beat) -> list[int]:
    return [v for v in beat if v is not None]


def beat_interval(beat: Beat) -> Optional[tuple[int, int]]:
    present = beat_fiducials(beat)
    if not present:
        return None
    return min(present), max(present)


def correspondence(true_beats: Sequence[Beat], pred_beats: Sequence[Beat]) -> np.ndarray:
    """Boolean matrix H[j, k]: true beat j and predicted beat k correspond."""
    h = np.zeros((len(true_beats), len(pred_beats)), dtype=bool)
    for j, tb in enumerate(true_beats):
        t_int = beat_interval(tb)
        t_fids = beat_fiducials(tb)
        for k, pb in enumerate(pred_beats):
            p_int = beat_interval(pb)
            p_fids = beat_fiducials(pb)
            hit = False
            if t_int is not None:
                hit = any(t_int[0] <= v <= t_int[1] for v in p_fids)
            if not hit and p_int is not None:
                hit = any(p_int[0] <= v <= p_int[1] for v in t_fids)
            h[j, k] = hit
    return h


def fuse_leads(h_per_lead: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise OR across leads; single-lead input returns itself."""
    if not h_per_lead:
        raise ValueError("fuse_leads needs at least one matrix")
    shapes = {np.asarray(h).shape for h in h_per_lead}
    if len(shapes) > 1:
        raise ValueError(f"correspondence matrices disagree in shape: {sorted(shapes)}")
    fused = np.asarray(h_per_lead[0], dtype=bool).copy()
    for h in h_per_lead[1:]:
        fused |= np.asarray(h, dtype=bool)
    return fused


def max_matching(h: np.ndarray) -> dict[int, int]:
    """Maximum one-to-one matching on a boolean matrix via augmenting paths.

    Rows are processed in index order and, once matched, stay matched, so the
    matched-row set is the greedy-by-row-order canonical one. Returns
    {row: column} for matched pairs.
    """
    h = np.asarray(h, dtype=bool)
    n_rows, n_cols = h.shape
    col_owner = [-1] * n_cols

    needed = 2 * min(n_rows, n_cols) + 100
    if sys.getrecursionlimit() < needed:
        sys.setrecursionlimit(needed)

    def try_assign(row: int, visited: list[bool]) -> bool:
        for col in range(n_cols):
            if h[row, col] and not visited[col]:
                visited[col] = True
                if col_owner[col] < 0 or try_assign(col_owner[col], visited):
                    col_owner[col] = row
                    return True
        return False

    for row in range(n_rows):
        try_assign(row, [False] * n_cols)
    return {row: col for col, row in enumerate(col_owner) if row >= 0}


@dataclass
class DetectionCounts:
    tp: int
    fp: int
    fn: int
    raw_pairs: int  # plain count of correspondence entries, without matching
    matched_rows: frozenset[int] = frozenset()

    @property
    def precision(self) -> Optional[float]:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) > 0 else None

    @property
    def recall(self) -> Optional[float]:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) > 0 else None


def count_detection(h: np.ndarray, m: Optional[int] = None, m_hat: Optional[int] = None) -> DetectionCounts:
    """TP/FP/FN from a fused correspondence matrix under one-to-one matching."""
    h = np.asarray(h, dtype=bool)
    m = h.shape[0] if m is None else m
    m_hat = h.shape[1] if m_hat is None else m_hat
    matching = max_matching(h)
    tp = len(matching)
    return DetectionCounts(
        tp=tp,
        fp=m_hat - tp,
        fn=m - tp,
        raw_pairs=int(h.sum()),
        matched_rows=frozenset(matching.keys()),
    )


@dataclass
class BoundaryStats:
    mean_ms: Optional[float]
    sd_ms: Optional[float]
    errors_ms: list[float] = field(default_factory=list)

    @classmethod
    def from_errors(cls, errors: Sequence[float]) -> "BoundaryStats":
        errors = list(errors)
        if not errors:
            return cls(mean_ms=None, sd_ms=None, errors_ms=[])
        arr = np.asarray(errors, dtype=np.float64)
        return cls(mean_ms=float(arr.mean()), sd_ms=float(arr.std(ddof=0)), errors_ms=errors)


def _per_lead(
    pred_beats: Union[Sequence[Beat], Sequence[Sequence[Beat]]],
    h: Union[np.ndarray, Sequence[np.ndarray]],
) -> tuple[list[Sequence[Beat]], list[np.ndarray]]:
    if isinstance(h, np.ndarray):
        return [pred_beats], [h]
    return list(pred_beats), [np.asarray(x, dtype=bool) for x in h]


def _default_tp_rows(hs: Sequence[np.ndarray]) -> frozenset[int]:
    if len(hs) == 1 or len({h.shape for h in hs}) == 1:
        fused = fuse_leads(hs)
        return frozenset(max_matching(fused).keys())
    return frozenset().union(*(frozenset(max_matching(h).keys()) for h in hs))


def boundary_errors(
    true_beats: Sequence[Beat],
    pred_beats: Union[Sequence[Beat], Sequence[Sequence[Beat]]],
    h: Union[np.ndarray, Sequence[np.ndarray]],
    fs: float,
    tp_rows: Optional[frozenset[int]] = None,
) -> dict[str, BoundaryStats]:
    """Onset/offset error statistics over true positives, in milliseconds.

    Error is (true - pred) / fs * 1000, so positive means the prediction came
    early. Per true beat and fiducial type, the candidate minimizing the
    absolute error is chosen among all correspondence entries of that beat,
    across leads. Rows outside tp_rows (the one-to-one matching by default)
    are ignored; an empty TP set yields undefined statistics, never zeros.
    """
    preds, hs = _per_lead(pred_beats, h)
    if tp_rows is None:
        tp_rows = _default_tp_rows(hs)
    out: dict[str, list[float]] = {"onset": [], "offset": []}
    for j, tb in enumerate(true_beats):
        if j not in tp_rows:
            continue
        for name, idx in (("onset", 0), ("offset", 2)):
            truth = tb[idx]
            if truth is None:
                continue
            best: Optional[float] = None
            for h_lead, pred_lead in zip(hs, preds):
                for k in np.flatnonzero(h_lead[j]):
                    value = pred_lead[k][idx]
                    if value is None:
                        continue
                    err = (truth - value) / fs * 1000.0
                    if best is None or abs(err) < abs(best):
                        best = err
            if best is not None:
                out[name].append(best)
    return {name: BoundaryStats.from_errors(errs) for name, errs in out.items()}


def qrs_width_errors(
    true_beats: Sequence[Beat],
    pred_beats: Union[Sequence[Beat], Sequence[Sequence[Beat]]],
    h: Union[np.ndarray, Sequence[np.ndarray]],
    fs: float,
    tp_rows: Optional[frozenset[int]] = None,
) -> list[float]:
    """|predicted width - true width| in ms per matched beat (best candidate)."""
    preds, hs = _per_lead(pred_beats, h)
    if tp_rows is None:
        tp_rows = _default_tp_rows(hs)
    errors: list[float] = []
    for j, tb in enumerate(true_beats):
        if j not in tp_rows or tb[0] is None or tb[2] is None:
            continue
        true_width = tb[2] - tb[0]
        best: Optional[float] = None
        for h_lead, pred_lead in zip(hs, preds):
            for k in np.flatnonzero(h_lead[j]):
                pb = pred_lead[k]
                if pb[0] is None or pb[2] is None:
                    continue
                delta = abs((pb[2] - pb[0]) - true_width) / fs * 1000.0
                if best is None or delta < best:
                    best = delta
        if best is not None:
            errors.append(best)
    return errors


@dataclass
class WaveEvaluation:
    """Scores of one wave on one record."""

    m: int
    m_hat: int
    tp: int
    fp: int
    fn: int
    raw_pairs: int
    onset: BoundaryStats
    offset: BoundaryStats
    width_abs_errors_ms: list[float] = field(default_factory=list)
    dice: float = math.nan


def evaluate_wave(
    true_beats: Sequence[Beat],
    pred_beats_per_lead: Sequence[Sequence[Beat]],
    fs: float,
    cross_lead: bool = True,
    is_qrs: bool = False,
) -> WaveEvaluation:
    """Score one wave of one record against per-lead predictions.

    With a single prediction set the fused matrix is the plain correspondence
    matrix. With several leads of equal beat count the matrices are OR-fused.
    When per-lead beat counts differ the leads are matched independently and a
    true beat counts as detected if matched in any lead, while unmatched
    predictions of every lead count as false positives. cross_lead=False
    scores each lead separately and sums the counts (strict per-lead mode).
    """
    hs = [correspondence(true_beats, pb) for pb in pred_beats_per_lead]
    m = len(true_beats)
    m_hats = [len(pb) for pb in pred_beats_per_lead]

    if not cross_lead and len(hs) > 1:
        per = [
            evaluate_wave(true_beats, [pb], fs, is_qrs=is_qrs)
            for pb in pred_beats_per_lead
        ]
        return WaveEvaluation(
            m=m * len(hs),
            m_hat=sum(m_hats),
            tp=sum(w.tp for w in per),
            fp=sum(w.fp for w in per),
            fn=sum(w.fn for w in per),
            raw_pairs=sum(w.raw_pairs for w in per),
            onset=BoundaryStats.from_errors([e for w in per for e in w.onset.errors_ms]),
            offset=BoundaryStats.from_errors([e for w in per for e in w.offset.errors_ms]),
            width_abs_errors_ms=[e for w in per for e in w.width_abs_errors_ms],
        )

    if len(hs) == 1 or len(set(m_hats)) == 1:
        fused = fuse_leads(hs)
        counts = count_detection(fused, m, m_hats[0])
        tp_rows = counts.matched_rows
        tp, fp, fn, raw = counts.tp, counts.fp, counts.fn, int(sum(h.sum() for h in hs))
    else:
        matchings = [max_matching(h) for h in hs]
        tp_rows = frozenset().union(*(frozenset(mt.keys()) for mt in matchings))
        tp = len(tp_rows)
        fn = m - tp
        fp = sum(mh - len(mt) for mh, mt in zip(m_hats, matchings))
        raw = int(sum(h.sum() for h in hs))

    bounds = boundary_errors(true_beats, pred_beats_per_lead, hs, fs, tp_rows=tp_rows)
    widths = qrs_width_errors(true_beats, pred_beats_per_lead, hs, fs, tp_rows=tp_rows) if is_qrs else []
    return WaveEvaluation(
        m=m,
        m_hat=sum(m_hats) if len(set(m_hats)) > 1 else m_hats[0],
        tp=tp,
        fp=fp,
        fn=fn,
        raw_pairs=raw,
        onset=bounds["onset"],
        offset=bounds["offset"],
        width_abs_errors_ms=widths,
    )


@dataclass
class RecordEvaluation:
    record_id: str
    condition: str
    waves: dict[str, WaveEvaluation]


def aggregate_report(evaluations: Sequence[RecordEvaluation]) -> "MetricsReport":
    """Pool counts and error samples across records (micro-averaging)."""
    if not evaluations:
        raise ValueError("aggregate_report needs at least one record evaluation")
    waves_out: dict[str, dict] = {}
    for wave in WAVES:
        tp = sum(e.waves[wave].tp for e in evaluations)
        fp = sum(e.waves[wave].fp for e in evaluations)
        fn = sum(e.waves[wave].fn for e in evaluations)
        raw = sum(e.waves[wave].raw_pairs for e in evaluations)
        onset = BoundaryStats.from_errors(
            [x for e in evaluations for x in e.waves[wave].onset.errors_ms]
        )
        offset = BoundaryStats.from_errors(
            [x for e in evaluations for x in e.waves[wave].offset.errors_ms]
        )
        dices = [e.waves[wave].dice for e in evaluations if not math.isnan(e.waves[wave].dice)]
        precision = tp / (tp + fp) if (tp + fp) > 0 else None
        recall = tp / (tp + fn) if (tp + fn) > 0 else None
        f1 = None
        if precision is not None and recall is not None and (precision + recall) > 0:
            f1 = 2 * precision * recall / (precision + recall)
        waves_out[wave] = {
            "tp": tp,
            "fp": fp,
            "fn": fn,
            "raw_pairs": raw,
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "onset_mean_ms": onset.mean_ms,
            "onset_sd_ms": onset.sd_ms,
            "offset_mean_ms": offset.mean_ms,
            "offset_sd_ms": offset.sd_ms,
            "dice": float(np.mean(dices)) if dices else None,
        }

    width_all: list[float] = []
    width_by_condition: dict[str, list[float]] = {}
    for e in evaluations:
        widths = e.waves["QRS"].width_abs_errors_ms
        width_all.extend(widths)
        width_by_condition.setdefault(e.condition, []).extend(widths)
    qrs_width = {
        "overall_ms": float(np.mean(width_all)) if width_all else None,
        "by_condition_ms": {
            cond: (float(np.mean(v)) if v else None) for cond, v in sorted(width_by_condition.items())
        },
    }
    return MetricsReport(waves=waves_out, qrs_width=qrs_width, n_records=len(evaluations))


@dataclass
class MetricsReport:
    waves: dict[str, dict]
    qrs_width: dict
    n_records: int

    def to_json(self) -> str:
        return json.dumps(
            {"waves": self.waves, "qrs_width": self.qrs_width, "n_records": self.n_records},
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        doc = json.loads(text)
        return cls(waves=doc["waves"], qrs_width=doc["qrs_width"], n_records=doc["n_records"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        columns = [
            "wave", "tp", "fp", "fn", "precision", "recall", "f1",
            "onset_mean_ms", "onset_sd_ms", "offset_mean_ms", "offset_sd_ms", "dice",
        ]
        writer.writerow(columns)
        for wave in WAVES:
            row = self.waves[wave]
            writer.writerow([wave] + [row.get(c) for c in columns[1:]])
        return buf.getvalue()

    def compare(self, other: "MetricsReport") -> dict:
        """Per-cell deltas (self - other); None where either side is undefined."""
        deltas: dict[str, dict] = {}
        for wave in WAVES:
            deltas[wave] = {}
            for key, a in self.waves[wave].items():
                b = other.waves.get(wave, {}).get(key)
                if isinstance(a, (int, float)) and isinstance(b, (int, float)):
                    deltas[wave][key] = a - b
                else:
                    deltas[wave][key] = None
        return deltas
