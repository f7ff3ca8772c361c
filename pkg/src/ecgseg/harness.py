"""Dataset curation, subject-wise cross-validation, windowing and training.

Fold assignment is per record id, so every window, lead and augmented copy of
a recording lands in exactly one fold. Training windows must be fully
delineated: every reference QRS inside a window needs both boundaries in the
active label set, and partially delineated wave instances reject the window.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .augment import AugmentSpec, augment_window, default_policy_specs, spec_from_dict, spec_to_dict
from .errors import ConfigError, DataError
from .interchange import export_prediction, import_interchange, mask_to_runs
from .masks import (
    DelineationMask,
    MaskKind,
    WaveIntervals,
    decode_mask,
    encode_mask,
    fiducials_to_intervals,
    intervals_to_fiducials,
)
from .metrics import (
    MetricsReport,
    RecordEvaluation,
    aggregate_report,
    evaluate_wave,
)
from .model import (
    ModelConfig,
    UNet1d,
    build_model,
    dice_score,
    load_checkpoint,
    make_train_state,
    save_checkpoint,
    train_step,
)
from .records import FiducialSet, LabelQuality, Record, WaveFiducials, WAVES

log = logging.getLogger(__name__)

DEFAULT_EXCLUSIONS = {
    "sel35": "sole recording of its rhythm class; cannot be learned from one example",
    "sel36": "incomplete reference annotations",
    "sel232": "incomplete reference annotations",
    "sel233": "incomplete reference annotations",
}


class LeadMode(str, Enum):
    SINGLE = "single"
    MULTI = "multi"


@dataclass
class ManifestEntry:
    record_id: str
    path: Optional[str] = None
    included: bool = True
    exclusion_reason: Optional[str] = None
    label_sets: frozenset[str] = frozenset()
    condition: str = "unknown"


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        ids = [e.record_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("manifest contains duplicate record ids")

    def included_ids(self) -> list[str]:
        return [e.record_id for e in self.entries if e.included]

    def to_json(self) -> str:
        return json.dumps(
            [
                {
                    "record_id": e.record_id,
                    "path": e.path,
                    "included": e.included,
                    "exclusion_reason": e.exclusion_reason,
                    "label_sets": sorted(e.label_sets),
                    "condition": e.condition,
                }
                for e in self.entries
            ],
            indent=2,
        )


def curate(
    manifest: DatasetManifest,
    require_labels: Sequence[str] = ("high",),
    exclusions: Optional[dict[str, str]] = None,
) -> DatasetManifest:
    """Apply the record exclusion list and flag entries lacking label sets."""
    exclusions = DEFAULT_EXCLUSIONS if exclusions is None else exclusions
    out = []
    for entry in manifest.entries:
        e = replace(entry)
        if e.record_id in exclusions:
            e.included = False
            e.exclusion_reason = exclusions[e.record_id]
        else:
            missing = [q for q in require_labels if q not in e.label_sets]
            if missing:
                e.included = False
                e.exclusion_reason = f"missing label sets: {', '.join(missing)}"
        out.append(e)
    return DatasetManifest(entries=out)


@dataclass
class FoldSplit:
    assignments: dict[str, int]
    k: int
    seed: int

    def test_records(self, fold: int) -> list[str]:
        return sorted(r for r, f in self.assignments.items() if f == fold)

    def train_records(self, fold: int) -> list[str]:
        return sorted(r for r, f in self.assignments.items() if f != fold)


def make_folds(manifest: DatasetManifest | Sequence[str], k: int = 5, seed: int = 1234) -> FoldSplit:
    """Deterministic shuffle of record ids, then round-robin fold assignment."""
    if isinstance(manifest, DatasetManifest):
        ids = manifest.included_ids()
    else:
        ids = list(manifest)
    if len(ids) < k:
        raise ConfigError(f"cannot split {len(ids)} records into {k} folds")
    order = sorted(ids)
    rng = np.random.default_rng(seed)
    rng.shuffle(order)
    return FoldSplit(assignments={r: i % k for i, r in enumerate(order)}, k=k, seed=seed)


@dataclass
class Window:
    record_id: str
    lead: Optional[int]  # None when the window carries both leads
    start: int
    length: int
    signal: np.ndarray  # (length, n_channels)
    mask: np.ndarray  # (length, 3)
    quality: str
    qrs_onsets: list[int] = field(default_factory=list)  # window-relative


@dataclass
class WindowSet:
    windows: list[Window] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.windows)


def _qrs_reference_peaks(wave_map: dict[str, WaveFiducials]) -> list[int]:
    return [p for p in wave_map["QRS"].peaks if p is not None]


def _delineated_qrs_spans(wave_map: dict[str, WaveFiducials]) -> list[tuple[int, int]]:
    return wave_map["QRS"].complete_pairs()


def _partial_spans(wave_map: dict[str, WaveFiducials]) -> list[tuple[int, int]]:
    """Spans of beats carrying exactly one boundary (unusable for masks)."""
    spans = []
    for wave in WAVES:
        for on, peak, off in wave_map[wave].beats():
            if (on is None) != (off is None):
                present = [v for v in (on, peak, off) if v is not None]
                spans.append((min(present), max(present)))
    return spans


def _window_ok(
    start: int,
    length: int,
    reference_peaks: Sequence[int],
    qrs_spans: Sequence[tuple[int, int]],
    partial_spans: Sequence[tuple[int, int]],
    require_beat: bool,
) -> bool:
    end = start + length  # exclusive
    peaks_inside = [p for p in reference_peaks if start <= p < end]
    if require_beat and not peaks_inside:
        return False
    for p in peaks_inside:
        if not any(on <= p <= off for on, off in qrs_spans):
            return False
    for lo, hi in partial_spans:
        if lo < end and hi >= start:
            return False
    return True


def make_windows(
    record: Record,
    fiducials: FiducialSet,
    lead_mode: LeadMode,
    window_len: int,
    stride: int,
    reference_beats: Optional[Sequence[int]] = None,
    require_beat: bool = True,
) -> WindowSet:
    """Slide fully delineated windows over a record.

    reference_beats marks where beats exist (defaults to the label set's own
    QRS peaks); supply the every-beat list when filtering a sparse label set
    so windows spanning unlabeled beats are rejected. Single-lead mode emits
    one window per lead with that lead's mask; multi-lead mode emits one
    two-channel window with the shared (lead 0) mask.
    """
    n = record.header.n_samples
    if window_len > n:
        raise ConfigError(f"window length {window_len} exceeds record length {n}")
    if stride < 1:
        raise ConfigError(f"stride must be positive, got {stride}")

    out = WindowSet()
    if lead_mode is LeadMode.MULTI:
        lead_maps = [(None, fiducials.for_lead(0))]
    else:
        lead_maps = [(i, fiducials.for_lead(min(i, fiducials.n_leads - 1))) for i in range(record.header.n_leads)]

    for lead, wave_map in lead_maps:
        peaks = list(reference_beats) if reference_beats is not None else _qrs_reference_peaks(wave_map)
        qrs_spans = _delineated_qrs_spans(wave_map)
        partials = _partial_spans(wave_map)
        full_mask = encode_mask(
            FiducialSet(leads=[wave_map]), n, fs=record.header.fs, strict=False
        ).channels
        qrs_onsets = [on for on, off in qrs_spans]
        for start in range(0, n - window_len + 1, stride):
            if not _window_ok(start, window_len, peaks, qrs_spans, partials, require_beat):
                continue
            if lead is None:
                sig = record.signal[start : start + window_len, :]
            else:
                sig = record.signal[start : start + window_len, lead : lead + 1]
            out.windows.append(
                Window(
                    record_id=record.header.record_id,
                    lead=lead,
                    start=start,
                    length=window_len,
                    signal=np.asarray(sig, dtype=np.float32),
                    mask=full_mask[start : start + window_len].copy(),
                    quality=fiducials.quality.value,
                    qrs_onsets=[o - start for o in qrs_onsets if start <= o < start + window_len],
                )
            )
    return out


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lead_mode: LeadMode = LeadMode.SINGLE
    pretrain_low_quality: bool = False
    augment: list[AugmentSpec] = field(default_factory=list)
    augment_policy: Optional[str] = None  # "default" samples a recipe per window
    folds: int = 5
    seed: int = 1234
    lr: float = 1e-3
    finetune_lr_scale: float = 1.0
    batch_size: int = 8
    epochs: int = 10
    pretrain_epochs: int = 5
    window_len: int = 2048
    train_stride: Optional[int] = None  # defaults to window_len // 2
    validation_fraction: float = 0.0
    threshold: float = 0.5
    min_run: Optional[int] = None
    dataset_root: Optional[str] = None

    def validate(self) -> None:
        self.model.validate()
        expected = 2 if self.lead_mode is LeadMode.MULTI else 1
        if self.model.in_channels != expected:
            raise ConfigError(
                f"lead_mode {self.lead_mode.value} requires in_channels {expected}, "
                f"got {self.model.in_channels}"
            )
        if self.window_len % self.model.pool_factor != 0:
            raise ConfigError(
                f"window_len {self.window_len} must be divisible by {self.model.pool_factor}"
            )
        if self.folds < 1:
            raise ConfigError(f"folds must be >= 1, got {self.folds}")
        if self.augment_policy not in (None, "default"):
            raise ConfigError(f"unknown augment_policy {self.augment_policy!r}")
        if not (0.0 <= self.validation_fraction < 1.0):
            raise ConfigError("validation_fraction must lie in [0, 1)")

    @property
    def effective_train_stride(self) -> int:
        return self.train_stride if self.train_stride is not None else max(1, self.window_len // 2)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "lead_mode": self.lead_mode.value,
            "pretrain_low_quality": self.pretrain_low_quality,
            "augment": [spec_to_dict(s) for s in self.augment],
            "augment_policy": self.augment_policy,
            "folds": self.folds,
            "seed": self.seed,
            "lr": self.lr,
            "finetune_lr_scale": self.finetune_lr_scale,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "pretrain_epochs": self.pretrain_epochs,
            "window_len": self.window_len,
            "train_stride": self.train_stride,
            "validation_fraction": self.validation_fraction,
            "threshold": self.threshold,
            "min_run": self.min_run,
            "dataset_root": self.dataset_root,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        if "lead_mode" in d:
            d["lead_mode"] = LeadMode(d["lead_mode"])
        if "augment" in d:
            d["augment"] = [spec_from_dict(s) for s in d["augment"]]
        unknown = set(d) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc


class Dataset:
    """Records plus their fiducial sets, keyed by record id."""

    def __init__(self, items: dict[str, tuple[Record, dict[str, FiducialSet]]], root: Optional[str] = None):
        self.items = items
        self.root = root

    @classmethod
    def from_dir(cls, path: str | Path) -> "Dataset":
        path = Path(path)
        items: dict[str, tuple[Record, dict[str, FiducialSet]]] = {}
        for file in sorted(path.glob("*.json")):
            try:
                record, fsets = import_interchange(file.read_text())
            except DataError as exc:
                raise DataError(f"{file.name}: {exc}") from exc
            items[record.header.record_id] = (record, fsets)
        if not items:
            raise DataError(f"no interchange records found under {path}")
        return cls(items, root=str(path))

    def manifest(self) -> DatasetManifest:
        entries = []
        for record_id, (record, fsets) in sorted(self.items.items()):
            entries.append(
                ManifestEntry(
                    record_id=record_id,
                    path=self.root,
                    label_sets=frozenset(fsets.keys()),
                    condition=record.header.condition or "unknown",
                )
            )
        return DatasetManifest(entries=entries)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self.items

    def get(self, record_id: str) -> tuple[Record, dict[str, FiducialSet]]:
        return self.items[record_id]


def _best_low_quality_lead(record: Record, fsets: dict[str, FiducialSet]) -> int:
    """Lead whose low-quality mask best overlaps the high-quality mask."""
    low = fsets[LabelQuality.LOW.value]
    high = fsets.get(LabelQuality.HIGH.value)
    n = record.header.n_samples
    if high is None or low.n_leads == 1:
        return 0
    high_mask = encode_mask(high, n, fs=record.header.fs, lead=0, strict=False).channels
    best_lead, best = 0, -1.0
    for lead in range(low.n_leads):
        low_mask = encode_mask(low, n, fs=record.header.fs, lead=lead, strict=False).channels
        score = float(np.mean(dice_score(low_mask, high_mask)))
        if score > best:
            best_lead, best = lead, score
    return best_lead


def _label_fiducials(
    record: Record, fsets: dict[str, FiducialSet], quality: str, lead_mode: LeadMode
) -> Optional[FiducialSet]:
    fset = fsets.get(quality)
    if fset is None:
        return None
    if lead_mode is LeadMode.MULTI and quality == LabelQuality.LOW.value:
        lead = _best_low_quality_lead(record, fsets)
        return FiducialSet(leads=[fset.for_lead(lead)], quality=fset.quality)
    return fset


def gather_windows(
    dataset: Dataset,
    record_ids: Sequence[str],
    config: ExperimentConfig,
    quality: str,
) -> list[Window]:
    windows: list[Window] = []
    for record_id in record_ids:
        record, fsets = dataset.get(record_id)
        fset = _label_fiducials(record, fsets, quality, config.lead_mode)
        if fset is None:
            continue
        # The every-beat list (low-quality QRS peaks across leads) marks where
        # beats exist, so sparse label sets reject windows around unlabeled beats.
        reference = None
        low = fsets.get(LabelQuality.LOW.value)
        if quality == LabelQuality.HIGH.value and low is not None:
            merged = sorted(
                {p for lead in range(low.n_leads) for p in low.for_lead(lead)["QRS"].peaks if p is not None}
            )
            reference = merged or None
        ws = make_windows(
            record,
            fset,
            config.lead_mode,
            config.window_len,
            config.effective_train_stride,
            reference_beats=reference,
        )
        windows.extend(ws.windows)
    return windows


def _phase_rng(config: ExperimentConfig, fold: int, phase: str) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([config.seed, fold, {"pretrain": 1, "train": 2}.get(phase, 3)])
    )


def _train_phase(
    state,
    windows: list[Window],
    epochs: int,
    config: ExperimentConfig,
    fs: float,
    rng: np.random.Generator,
    lr: float,
    augment_specs: Optional[list[AugmentSpec]],
    phase: str,
    log_rows: list[dict],
) -> None:
    if not windows:
        raise DataError(f"{phase}: no eligible training windows")
    order = np.arange(len(windows))
    for epoch in range(epochs):
        rng.shuffle(order)
        epoch_losses = []
        for lo in range(0, len(order), config.batch_size):
            batch = [windows[i] for i in order[lo : lo + config.batch_size]]
            xs = []
            for w in batch:
                sig = w.signal.astype(np.float64)
                if augment_specs is not None:
                    specs = augment_specs if config.augment_policy is None else default_policy_specs(rng)
                    for ch in range(sig.shape[1]):
                        sig[:, ch] = augment_window(
                            sig[:, ch], specs, fs, rng=rng, qrs_onsets=w.qrs_onsets
                        )
                xs.append(sig.astype(np.float32))
            x = np.stack(xs)
            y = np.stack([w.mask for w in batch])
            loss = train_step(state, x, y, lr=lr)
            epoch_losses.append(loss)
        log_rows.append(
            {
                "phase": phase,
                "epoch": epoch,
                "step": state.step,
                "loss": float(np.mean(epoch_losses)),
            }
        )


def predict_record(
    model: UNet1d,
    record: Record,
    lead_mode: LeadMode,
    window_len: int,
) -> list[DelineationMask]:
    """Tile, forward and stitch a full-length prediction mask per output.

    Tiles at stride = window length; a shorter remainder is covered by one
    final overlapped window whose duplicated region is averaged. Records
    shorter than one window are zero-padded (logged) and cropped back.
    """
    n = record.header.n_samples
    padded = record.signal
    if n < window_len:
        log.info("record %s shorter than one window; zero-padding %d -> %d",
                 record.header.record_id, n, window_len)
        padded = np.vstack([record.signal, np.zeros((window_len - n, record.header.n_leads))])
    total = padded.shape[0]
    starts = list(range(0, total - window_len + 1, window_len))
    if starts[-1] + window_len < total:
        starts.append(total - window_len)

    if lead_mode is LeadMode.MULTI:
        inputs = [padded]
    else:
        inputs = [padded[:, i : i + 1] for i in range(record.header.n_leads)]

    masks = []
    for sig in inputs:
        acc = np.zeros((total, 3), dtype=np.float64)
        count = np.zeros((total, 1), dtype=np.float64)
        with torch.no_grad():
            for start in starts:
                x = torch.as_tensor(sig[start : start + window_len][None], dtype=torch.float32)
                pred = model(x, training=False)[0].numpy()
                acc[start : start + window_len] += pred
                count[start : start + window_len] += 1.0
        stitched = (acc / count)[:n].astype(np.float32)
        masks.append(DelineationMask(channels=stitched, fs=record.header.fs, kind=MaskKind.PREDICTION))
    return masks


def prediction_document(
    record: Record,
    masks: list[DelineationMask],
    threshold: float,
    min_run: Optional[int],
) -> str:
    leads = []
    for lead, mask in enumerate(masks):
        intervals = decode_mask(mask, threshold=threshold, min_run=min_run)
        signal_lead = record.signal[:, min(lead, record.header.n_leads - 1)]
        fset = intervals_to_fiducials(intervals, signal=signal_lead)
        wave_map = fset.for_lead(0)
        leads.append(
            {
                "mask_runs": mask_to_runs(mask.channels >= threshold),
                "fiducials": {
                    wave: {
                        "onsets": wave_map[wave].onsets,
                        "peaks": wave_map[wave].peaks,
                        "offsets": wave_map[wave].offsets,
                    }
                    for wave in WAVES
                },
            }
        )
    return export_prediction(
        record.header.record_id, record.header.fs, record.header.n_samples, threshold, leads
    )


def evaluate_against_truth(
    record: Record,
    truth: FiducialSet,
    pred_lead_maps: list[dict[str, WaveFiducials]],
    cross_lead: bool = True,
) -> RecordEvaluation:
    """Score per-lead predicted fiducials against the shared truth annotation."""
    fs = record.header.fs
    n = record.header.n_samples
    truth_map = truth.for_lead(0)
    waves = {}
    truth_mask = encode_mask(FiducialSet(leads=[truth_map]), n, fs=fs, strict=False).channels
    for wave in WAVES:
        true_beats = list(truth_map[wave].beats())
        preds = [list(m[wave].beats()) for m in pred_lead_maps]
        ev = evaluate_wave(true_beats, preds, fs, cross_lead=cross_lead, is_qrs=(wave == "QRS"))
        dices = []
        for m in pred_lead_maps:
            pred_mask = encode_mask(FiducialSet(leads=[m]), n, fs=fs, strict=False).channels
            dices.append(dice_score(pred_mask, truth_mask)[WAVES.index(wave)])
        ev.dice = float(np.mean(dices)) if dices else float("nan")
        waves[wave] = ev
    return RecordEvaluation(
        record_id=record.header.record_id,
        condition=record.header.condition or "unknown",
        waves=waves,
    )


def run_fold(
    config: ExperimentConfig,
    dataset: Dataset,
    folds: FoldSplit,
    fold: int,
    fold_dir: Path,
) -> list[RecordEvaluation]:
    """Train one fold, predict its test records and score them."""
    fold_dir.mkdir(parents=True, exist_ok=True)
    (fold_dir / "predictions").mkdir(exist_ok=True)

    train_ids = [r for r in folds.train_records(fold) if r in dataset]
    test_ids = [r for r in folds.test_records(fold) if r in dataset]

    torch_seed = int(np.random.SeedSequence([config.seed, fold]).generate_state(1)[0])
    torch.manual_seed(torch_seed)
    model = build_model(config.model)
    state = make_train_state(model, lr=config.lr)
    log_rows: list[dict] = []
    fs = next(iter(dataset.items.values()))[0].header.fs

    augment_requested = bool(config.augment) or config.augment_policy is not None
    if config.pretrain_low_quality:
        if augment_requested:
            log.warning("augmentation disabled: low-quality pre-training is active")
        low_windows = gather_windows(dataset, train_ids, config, LabelQuality.LOW.value)
        _train_phase(
            state, low_windows, config.pretrain_epochs, config, fs,
            _phase_rng(config, fold, "pretrain"), config.lr, None, "pretrain", log_rows,
        )
        high_windows = gather_windows(dataset, train_ids, config, LabelQuality.HIGH.value)
        _train_phase(
            state, high_windows, config.epochs, config, fs,
            _phase_rng(config, fold, "train"), config.lr * config.finetune_lr_scale,
            None, "finetune", log_rows,
        )
    else:
        high_windows = gather_windows(dataset, train_ids, config, LabelQuality.HIGH.value)
        specs = config.augment if augment_requested else None
        _train_phase(
            state, high_windows, config.epochs, config, fs,
            _phase_rng(config, fold, "train"), config.lr, specs, "train", log_rows,
        )

    save_checkpoint(fold_dir / "checkpoint.pt", model, step=state.step)
    with open(fold_dir / "log.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["phase", "epoch", "step", "loss"])
        writer.writeheader()
        writer.writerows(log_rows)

    evaluations = []
    for record_id in test_ids:
        record, fsets = dataset.get(record_id)
        truth = fsets.get(LabelQuality.HIGH.value)
        masks = predict_record(model, record, config.lead_mode, config.window_len)
        doc = prediction_document(record, masks, config.threshold, config.min_run)
        (fold_dir / "predictions" / f"{record_id}.json").write_text(doc)
        if truth is not None:
            pred_maps = []
            for lead, mask in enumerate(masks):
                intervals = decode_mask(mask, threshold=config.threshold, min_run=config.min_run)
                signal_lead = record.signal[:, min(lead, record.header.n_leads - 1)]
                pred_maps.append(intervals_to_fiducials(intervals, signal=signal_lead).for_lead(0))
            evaluations.append(evaluate_against_truth(record, truth, pred_maps))
    (fold_dir / "COMPLETE").write_text("ok\n")
    return evaluations


def _run_fold_task(args: tuple) -> list[RecordEvaluation]:
    config_dict, dataset_root, folds_payload, fold, fold_dir = args
    config = ExperimentConfig.from_dict(config_dict)
    dataset = Dataset.from_dir(dataset_root)
    folds = FoldSplit(assignments=folds_payload[0], k=folds_payload[1], seed=folds_payload[2])
    return run_fold(config, dataset, folds, fold, Path(fold_dir))


def run_training(
    config: ExperimentConfig,
    folds: FoldSplit,
    dataset: Dataset,
    out_dir: str | Path,
    parallel_folds: int = 1,
    resume: bool = True,
) -> MetricsReport:
    """Train every fold, predict its test set and aggregate one report."""
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))

    pending = []
    for fold in range(folds.k):
        fold_dir = out / f"fold{fold}"
        if resume and (fold_dir / "COMPLETE").exists():
            log.info("fold %d already complete, skipping", fold)
            continue
        pending.append((fold, fold_dir))

    all_evaluations: list[RecordEvaluation] = []
    if parallel_folds > 1 and dataset.root is not None and len(pending) > 1:
        payload = (folds.assignments, folds.k, folds.seed)
        args = [(config.to_dict(), dataset.root, payload, fold, str(fold_dir)) for fold, fold_dir in pending]
        with ProcessPoolExecutor(max_workers=parallel_folds) as pool:
            for evals in pool.map(_run_fold_task, args):
                all_evaluations.extend(evals)
    else:
        for fold, fold_dir in pending:
            all_evaluations.extend(run_fold(config, dataset, folds, fold, fold_dir))

    if not all_evaluations:
        raise DataError("no test records were evaluated; nothing to report")
    report = aggregate_report(all_evaluations)
    (out / "report.json").write_text(report.to_json())
    return report
