"""Core domain types: record headers, sampled signals and fiducial sets."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional

import numpy as np

from .errors import MalformedHeader

WAVES = ("P", "QRS", "T")


class StorageFormat(str, Enum):
    FORMAT_212 = "212"
    FORMAT_16 = "16"
    TEXT_CSV = "csv"


class LabelQuality(str, Enum):
    HIGH = "high"
    LOW = "low"


@dataclass
class RecordHeader:
    record_id: str
    n_leads: int
    fs: float
    n_samples: int
    gain: list[float]
    baseline: list[float]
    storage_format: StorageFormat
    lead_names: list[str] = field(default_factory=list)
    condition: Optional[str] = None

    def validate(self) -> None:
        if self.n_leads < 1:
            raise MalformedHeader(f"{self.record_id}: lead count must be >= 1, got {self.n_leads}")
        if not (self.fs > 0):
            raise MalformedHeader(f"{self.record_id}: sampling frequency must be positive, got {self.fs}")
        if self.n_samples <= 0:
            raise MalformedHeader(f"{self.record_id}: sample count must be positive, got {self.n_samples}")
        if len(self.gain) != self.n_leads or len(self.baseline) != self.n_leads:
            raise MalformedHeader(f"{self.record_id}: per-lead gain/baseline do not match lead count")
        if any(g <= 0 for g in self.gain):
            raise MalformedHeader(f"{self.record_id}: gains must be positive, got {self.gain}")


@dataclass
class Record:
    """A multi-lead signal in millivolts, shape (n_samples, n_leads)."""

    header: RecordHeader
    signal: np.ndarray

    def __post_init__(self) -> None:
        self.signal = np.asarray(self.signal, dtype=np.float64)
        if self.signal.ndim == 1:
            self.signal = self.signal[:, None]

    def validate(self) -> None:
        self.header.validate()
        if self.signal.shape != (self.header.n_samples, self.header.n_leads):
            raise MalformedHeader(
                f"{self.header.record_id}: signal shape {self.signal.shape} does not match "
                f"header ({self.header.n_samples}, {self.header.n_leads})"
            )
        if not np.all(np.isfinite(self.signal)):
            raise MalformedHeader(f"{self.header.record_id}: signal contains non-finite values")


@dataclass
class WaveFiducials:
    """Parallel onset/peak/offset lists for one wave; None marks a missing fiducial."""

    onsets: list[Optional[int]] = field(default_factory=list)
    peaks: list[Optional[int]] = field(default_factory=list)
    offsets: list[Optional[int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.peaks)

    def beats(self) -> Iterator[tuple[Optional[int], Optional[int], Optional[int]]]:
        yield from zip(self.onsets, self.peaks, self.offsets)

    def complete_pairs(self) -> list[tuple[int, int]]:
        """(onset, offset) for every beat carrying both boundaries."""
        return [(on, off) for on, _, off in self.beats() if on is not None and off is not None]

    def append(self, onset: Optional[int], peak: Optional[int], offset: Optional[int]) -> None:
        self.onsets.append(onset)
        self.peaks.append(peak)
        self.offsets.append(offset)

    def validate(self, n_samples: Optional[int] = None) -> None:
        for name, seq in (("onsets", self.onsets), ("peaks", self.peaks), ("offsets", self.offsets)):
            if len(seq) != len(self.peaks):
                raise ValueError(f"{name} length does not match beat count")
            present = [s for s in seq if s is not None]
            if any(b < a for a, b in zip(present, present[1:])):
                raise ValueError(f"{name} not sorted ascending: {present}")
            if n_samples is not None and any(s < 0 or s >= n_samples for s in present):
                raise ValueError(f"{name} contains indices outside [0, {n_samples})")
        for on, peak, off in self.beats():
            lo = [v for v in (on, peak, off) if v is not None]
            if lo != sorted(lo):
                raise ValueError(f"beat fiducials out of order: ({on}, {peak}, {off})")


def empty_wave_map() -> dict[str, WaveFiducials]:
    return {w: WaveFiducials() for w in WAVES}


@dataclass
class FiducialSet:
    """Per-lead, per-wave fiducials for one record."""

    leads: list[dict[str, WaveFiducials]]
    quality: LabelQuality = LabelQuality.HIGH

    @classmethod
    def empty(cls, n_leads: int = 1, quality: LabelQuality = LabelQuality.HIGH) -> "FiducialSet":
        return cls(leads=[empty_wave_map() for _ in range(n_leads)], quality=quality)

    @property
    def n_leads(self) -> int:
        return len(self.leads)

    def for_lead(self, lead: int) -> dict[str, WaveFiducials]:
        return self.leads[lead]

    def validate(self, n_samples: Optional[int] = None) -> None:
        for wave_map in self.leads:
            for wave in WAVES:
                wave_map[wave].validate(n_samples)

    def replicated(self, n_leads: int) -> "FiducialSet":
        """Share one lead's annotation across n_leads (joint multi-lead markup)."""
        if self.n_leads != 1:
            raise ValueError("replicated() expects a single-lead fiducial set")
        return FiducialSet(leads=[self.leads[0]] * n_leads, quality=self.quality)


@dataclass
class AnnotationEvent:
    """One decoded annotation: absolute sample index plus 6-bit type code."""

    sample: int
    code: int
    sub: int = 0
    chan: int = 0
    num: int = 0
    aux: Optional[bytes] = None
