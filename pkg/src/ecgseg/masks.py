"""Fiducials <-> segmentation masks.

Ground-truth masks are Boolean with ones on the closed interval
[onset, offset] of each wave instance; predictions are sigmoid outputs in
[0, 1] decoded back to intervals by thresholding and minimum-run filtering.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import UnpairedFiducial
from .records import FiducialSet, LabelQuality, WaveFiducials, WAVES

DEFAULT_THRESHOLD = 0.5
MIN_RUN_SECONDS = 0.04  # speckle suppression window; CLI-configurable


class MaskKind(str, Enum):
    GROUND_TRUTH = "ground_truth"
    PREDICTION = "prediction"


@dataclass
class DelineationMask:
    """(n_samples, 3) mask over the (P, QRS, T) channels."""

    channels: np.ndarray
    fs: float
    kind: MaskKind = MaskKind.GROUND_TRUTH

    def __post_init__(self) -> None:
        self.channels = np.asarray(self.channels, dtype=np.float32)
        if self.channels.ndim != 2 or self.channels.shape[1] != len(WAVES):
            raise ValueError(f"mask must be (n_samples, {len(WAVES)}), got {self.channels.shape}")

    def validate(self) -> None:
        if self.kind is MaskKind.GROUND_TRUTH:
            if not np.all(np.isin(self.channels, (0.0, 1.0))):
                raise ValueError("ground-truth mask values must be 0 or 1")
        else:
            if self.channels.min() < 0.0 or self.channels.max() > 1.0:
                raise ValueError("prediction mask values must lie in [0, 1]")

    @property
    def n_samples(self) -> int:
        return self.channels.shape[0]


@dataclass
class WaveIntervals:
    """Sorted, disjoint closed (onset, offset) pairs per wave."""

    waves: dict[str, list[tuple[int, int]]] = field(default_factory=lambda: {w: [] for w in WAVES})

    def validate(self) -> None:
        for wave, pairs in self.waves.items():
            for on, off in pairs:
                if on > off:
                    raise ValueError(f"{wave}: interval ({on}, {off}) has onset after offset")
            for (_, off0), (on1, _) in zip(pairs, pairs[1:]):
                if on1 <= off0:
                    raise ValueError(f"{wave}: intervals overlap or are unsorted near {on1}")


def encode_mask(
    fiducials: FiducialSet,
    n_samples: int,
    fs: float = 250.0,
    lead: int = 0,
    strict: bool = True,
) -> DelineationMask:
    """Paint ones over every closed [onset, offset] interval of each wave.

    A beat with exactly one boundary raises UnpairedFiducial (or is skipped
    when strict is false); peak-only beats contribute nothing to the mask.
    """
    channels = np.zeros((n_samples, len(WAVES)), dtype=np.float32)
    wave_map = fiducials.for_lead(lead)
    for c, wave in enumerate(WAVES):
        for on, peak, off in wave_map[wave].beats():
            if (on is None) != (off is None):
                if strict:
                    raise UnpairedFiducial(
                        f"{wave} beat near sample {on if on is not None else off} lacks its "
                        f"{'offset' if off is None else 'onset'}"
                    )
                continue
            if on is None:
                continue
            if on > off or on < 0 or off >= n_samples:
                raise UnpairedFiducial(f"{wave} interval ({on}, {off}) outside [0, {n_samples})")
            channels[on : off + 1, c] = 1.0
    return DelineationMask(channels=channels, fs=fs, kind=MaskKind.GROUND_TRUTH)


def decode_mask(
    mask: DelineationMask,
    threshold: float = DEFAULT_THRESHOLD,
    min_run: Optional[int] = None,
) -> WaveIntervals:
    """Binarize at threshold and keep maximal runs of at least min_run samples."""
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    if min_run is None:
        min_run = max(1, round(MIN_RUN_SECONDS * mask.fs))
    if min_run < 1:
        raise ValueError(f"min_run must be >= 1, got {min_run}")
    out = WaveIntervals()
    binary = mask.channels >= threshold
    for c, wave in enumerate(WAVES):
        col = binary[:, c].astype(np.int8)
        edges = np.flatnonzero(np.diff(np.concatenate(([0], col, [0]))))
        pairs = [(int(a), int(b - 1)) for a, b in zip(edges[0::2], edges[1::2])]
        out.waves[wave] = [(on, off) for on, off in pairs if off - on + 1 >= min_run]
    return out


def intervals_to_fiducials(
    intervals: WaveIntervals,
    signal: Optional[np.ndarray] = None,
    quality: LabelQuality = LabelQuality.HIGH,
) -> FiducialSet:
    """Intervals back to beat triples; the peak is the sample of maximum
    absolute deflection inside the interval, or the midpoint without a signal."""
    wave_map: dict[str, WaveFiducials] = {}
    for wave in WAVES:
        wf = WaveFiducials()
        for on, off in intervals.waves[wave]:
            if signal is not None:
                segment = np.abs(np.asarray(signal)[on : off + 1])
                peak = on + int(np.argmax(segment))
            else:
                peak = (on + off) // 2
            wf.append(on, peak, off)
        wave_map[wave] = wf
    return FiducialSet(leads=[wave_map], quality=quality)


def fiducials_to_intervals(fiducials: FiducialSet, lead: int = 0) -> WaveIntervals:
    """Interval view of complete (onset, offset) beats for one lead."""
    out = WaveIntervals()
    wave_map = fiducials.for_lead(lead)
    for wave in WAVES:
        out.waves[wave] = list(wave_map[wave].complete_pairs())
    return out
