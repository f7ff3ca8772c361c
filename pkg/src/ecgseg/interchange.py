"""Portable JSON interchange for records, fiducials and prediction masks.

This is the canonical on-disk format of the toolkit; the binary readers in
wfdb_io are adapters that produce it. Documents are plain JSON with base-10
sample arrays, so round trips are lossless up to float formatting.
"""
from __future__ import annotations

import json
from typing import Optional, Union

import numpy as np

from .errors import SchemaError
from .records import (
    FiducialSet,
    LabelQuality,
    Record,
    RecordHeader,
    StorageFormat,
    WaveFiducials,
    WAVES,
)

RECORD_SCHEMA = "ecgseg-record-v1"
PREDICTION_SCHEMA = "ecgseg-prediction-v1"

FiducialInput = Union[FiducialSet, dict[str, FiducialSet], None]


def export_interchange(record: Record, fiducials: FiducialInput = None) -> str:
    """Serialize a record (and any fiducial sets) to a JSON document."""
    record.validate()
    h = record.header
    doc = {
        "schema": RECORD_SCHEMA,
        "header": {
            "record_id": h.record_id,
            "n_leads": h.n_leads,
            "fs": h.fs,
            "n_samples": h.n_samples,
            "gain": list(h.gain),
            "baseline": list(h.baseline),
            "storage_format": h.storage_format.value,
            "lead_names": list(h.lead_names),
            "condition": h.condition,
        },
        "signal": [record.signal[:, i].tolist() for i in range(h.n_leads)],
    }
    sets = fiducials
    if isinstance(fiducials, FiducialSet):
        sets = {fiducials.quality.value: fiducials}
    if sets:
        doc["fiducial_sets"] = {
            quality if isinstance(quality, str) else quality.value: _fiducials_to_json(fset)
            for quality, fset in sets.items()
        }
    return json.dumps(doc)


def import_interchange(text: str) -> tuple[Record, dict[str, FiducialSet]]:
    """Parse a record document; returns the record and its fiducial sets by quality."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema") != RECORD_SCHEMA:
        raise SchemaError(f"document schema is not {RECORD_SCHEMA!r}")
    head = _require(doc, "header", dict)
    for key in ("record_id", "n_leads", "fs", "n_samples", "gain", "baseline", "storage_format"):
        if key not in head:
            raise SchemaError(f"header missing field {key!r}")
    try:
        fmt = StorageFormat(head["storage_format"])
    except ValueError as exc:
        raise SchemaError(f"unknown storage_format {head['storage_format']!r}") from exc
    header = RecordHeader(
        record_id=str(head["record_id"]),
        n_leads=int(head["n_leads"]),
        fs=float(head["fs"]),
        n_samples=int(head["n_samples"]),
        gain=[float(g) for g in head["gain"]],
        baseline=[float(b) for b in head["baseline"]],
        storage_format=fmt,
        lead_names=[str(n) for n in head.get("lead_names", [])],
        condition=head.get("condition"),
    )
    signal_rows = _require(doc, "signal", list)
    if len(signal_rows) != header.n_leads:
        raise SchemaError(f"signal lists {len(signal_rows)} leads, header declares {header.n_leads}")
    signal = np.asarray(signal_rows, dtype=np.float64).T
    record = Record(header=header, signal=signal)
    try:
        record.validate()
    except Exception as exc:
        raise SchemaError(str(exc)) from exc

    fsets: dict[str, FiducialSet] = {}
    for quality, leads_json in doc.get("fiducial_sets", {}).items():
        if quality not in (LabelQuality.HIGH.value, LabelQuality.LOW.value):
            raise SchemaError(f"unknown fiducial quality {quality!r}")
        fsets[quality] = _fiducials_from_json(leads_json, LabelQuality(quality))
    return record, fsets


def _fiducials_to_json(fset: FiducialSet) -> list[dict]:
    return [
        {
            wave: {
                "onsets": wf.onsets,
                "peaks": wf.peaks,
                "offsets": wf.offsets,
            }
            for wave, wf in wave_map.items()
        }
        for wave_map in fset.leads
    ]


def _fiducials_from_json(leads_json: object, quality: LabelQuality) -> FiducialSet:
    if not isinstance(leads_json, list):
        raise SchemaError("fiducial set must be a per-lead list")
    leads = []
    for wave_map_json in leads_json:
        wave_map = {}
        for wave in WAVES:
            w = wave_map_json.get(wave, {}) if isinstance(wave_map_json, dict) else {}
            wave_map[wave] = WaveFiducials(
                onsets=[None if v is None else int(v) for v in w.get("onsets", [])],
                peaks=[None if v is None else int(v) for v in w.get("peaks", [])],
                offsets=[None if v is None else int(v) for v in w.get("offsets", [])],
            )
        leads.append(wave_map)
    fset = FiducialSet(leads=leads, quality=quality)
    try:
        fset.validate()
    except ValueError as exc:
        raise SchemaError(f"invalid fiducials: {exc}") from exc
    return fset


def mask_to_runs(channels: np.ndarray) -> dict[str, list[list[int]]]:
    """Run-length view of a binary mask: closed [first, last] index pairs per wave."""
    channels = np.asarray(channels)
    runs: dict[str, list[list[int]]] = {}
    for c, wave in enumerate(WAVES):
        col = channels[:, c].astype(bool)
        edges = np.flatnonzero(np.diff(np.concatenate(([0], col.view(np.int8), [0]))))
        runs[wave] = [[int(a), int(b - 1)] for a, b in zip(edges[0::2], edges[1::2])]
    return runs


def runs_to_mask(runs: dict[str, list[list[int]]], n_samples: int) -> np.ndarray:
    out = np.zeros((n_samples, len(WAVES)), dtype=np.float32)
    for c, wave in enumerate(WAVES):
        for pair in runs.get(wave, []):
            if len(pair) != 2 or pair[0] > pair[1] or pair[0] < 0 or pair[1] >= n_samples:
                raise SchemaError(f"bad mask run {pair} for wave {wave}")
            out[pair[0] : pair[1] + 1, c] = 1.0
    return out


def export_prediction(
    record_id: str,
    fs: float,
    n_samples: int,
    threshold: float,
    leads: list[dict],
) -> str:
    """Serialize per-lead prediction output (mask runs plus decoded fiducials)."""
    doc = {
        "schema": PREDICTION_SCHEMA,
        "record_id": record_id,
        "fs": fs,
        "n_samples": n_samples,
        "threshold": threshold,
        "leads": leads,
    }
    return json.dumps(doc)


def import_prediction(text: str) -> dict:
    """Parse a prediction document into {record_id, fs, n_samples, leads: [FiducialSet-like dicts]}."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema") != PREDICTION_SCHEMA:
        raise SchemaError(f"document schema is not {PREDICTION_SCHEMA!r}")
    for key in ("record_id", "fs", "n_samples", "leads"):
        if key not in doc:
            raise SchemaError(f"prediction missing field {key!r}")
    leads = []
    for lead_json in doc["leads"]:
        fset = _fiducials_from_json([lead_json.get("fiducials", {})], LabelQuality.HIGH)
        leads.append(
            {
                "fiducials": fset.for_lead(0),
                "mask_runs": lead_json.get("mask_runs", {}),
            }
        )
    return {
        "record_id": str(doc["record_id"]),
        "fs": float(doc["fs"]),
        "n_samples": int(doc["n_samples"]),
        "threshold": float(doc.get("threshold", 0.5)),
        "leads": leads,
    }


def _require(doc: dict, key: str, typ: type) -> object:
    if key not in doc:
        raise SchemaError(f"document missing field {key!r}")
    value = doc[key]
    if not isinstance(value, typ):
        raise SchemaError(f"field {key!r} must be {typ.__name__}")
    return value


def prediction_fiducials(pred: dict) -> list[dict[str, WaveFiducials]]:
    """Per-lead wave maps from an imported prediction document."""
    return [lead["fiducials"] for lead in pred["leads"]]
