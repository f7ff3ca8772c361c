"""Synthetic ECG-like records with exact labels, for tests and demos.

Beats are sums of Gaussian bumps (P and T) around a sharp biphasic spike
(QRS), placed at jittered RR intervals; fiducials are fixed sample offsets
from each beat anchor, so masks and metrics have bit-exact ground truth.
"""
from __future__ import annotations

import numpy as np

from .masks import encode_mask
from .records import (
    FiducialSet,
    LabelQuality,
    Record,
    RecordHeader,
    StorageFormat,
    WaveFiducials,
    empty_wave_map,
)

# Sample offsets from the beat anchor (QRS peak) at 250 Hz.
BEAT_LAYOUT = {
    "P": (-52, -40, -28),
    "QRS": (-12, 0, 12),
    "T": (40, 75, 110),
}
_BEAT_SPAN = (BEAT_LAYOUT["P"][0], BEAT_LAYOUT["T"][2])


def _gauss(t: np.ndarray, center: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((t - center) / width) ** 2)


def _beat_bump(t: np.ndarray, anchor: int, amp: float = 1.0) -> np.ndarray:
    return amp * (
        0.15 * _gauss(t, anchor - 40, 7.0)  # P
        - 0.2 * _gauss(t, anchor - 7, 2.5)  # Q
        + 1.0 * _gauss(t, anchor, 3.0)  # R
        - 0.25 * _gauss(t, anchor + 8, 2.5)  # S
        + 0.3 * _gauss(t, anchor + 75, 14.0)  # T
    )


def synthetic_beat_anchors(
    n_samples: int,
    rng: np.random.Generator,
    mean_rr: int = 200,
    rr_jitter: int = 15,
) -> list[int]:
    """Anchor samples leaving room for each beat's full wave span."""
    anchors = []
    pos = -_BEAT_SPAN[0] + int(rng.integers(0, mean_rr // 2))
    while pos + _BEAT_SPAN[1] < n_samples:
        anchors.append(pos)
        pos += int(mean_rr + rng.integers(-rr_jitter, rr_jitter + 1))
    return anchors


def _render(n_samples: int, anchors: list[int], amp: float = 1.0) -> np.ndarray:
    x = np.zeros(n_samples)
    for anchor in anchors:
        lo = max(0, anchor + _BEAT_SPAN[0] - 20)
        hi = min(n_samples, anchor + _BEAT_SPAN[1] + 20)
        x[lo:hi] += _beat_bump(np.arange(lo, hi, dtype=np.float64), anchor, amp)
    return x


def fiducials_for_anchors(anchors: list[int], n_samples: int) -> dict[str, WaveFiducials]:
    waves = empty_wave_map()
    for anchor in anchors:
        for wave, (d_on, d_peak, d_off) in BEAT_LAYOUT.items():
            on, peak, off = anchor + d_on, anchor + d_peak, anchor + d_off
            if on < 0 or off >= n_samples:
                continue
            waves[wave].append(on, peak, off)
    return waves


def make_synthetic_record(
    record_id: str = "synth000",
    fs: float = 250.0,
    n_samples: int = 15000,
    n_leads: int = 2,
    seed: int = 0,
    noise_sd: float = 0.01,
) -> tuple[Record, FiducialSet, FiducialSet]:
    """A record plus shared high-quality labels and per-lead jittered
    low-quality labels (emulating an automatic annotator)."""
    rng = np.random.default_rng(seed)
    anchors = synthetic_beat_anchors(n_samples, rng)
    lead_amps = ([1.0, 0.65] + [0.5] * n_leads)[:n_leads]

    signal = np.zeros((n_samples, n_leads))
    for i, amp in enumerate(lead_amps):
        signal[:, i] = _render(n_samples, anchors, amp) + rng.normal(0.0, noise_sd, n_samples)

    header = RecordHeader(
        record_id=record_id,
        n_leads=n_leads,
        fs=fs,
        n_samples=n_samples,
        gain=[200.0] * n_leads,
        baseline=[0.0] * n_leads,
        storage_format=StorageFormat.TEXT_CSV,
        lead_names=[f"lead{i}" for i in range(n_leads)],
        condition="synthetic",
    )
    record = Record(header=header, signal=signal)

    shared = fiducials_for_anchors(anchors, n_samples)
    high = FiducialSet(leads=[shared] * n_leads, quality=LabelQuality.HIGH)

    low_leads = []
    for _ in range(n_leads):
        waves = empty_wave_map()
        for wave in waves:
            for on, peak, off in shared[wave].beats():
                shift = int(rng.integers(-2, 3))
                waves[wave].append(
                    max(0, on + shift),
                    min(n_samples - 1, peak + shift),
                    min(n_samples - 1, off + shift),
                )
        low_leads.append(waves)
    low = FiducialSet(leads=low_leads, quality=LabelQuality.LOW)
    return record, high, low


def synthetic_windows(
    n_windows: int,
    window_len: int,
    fs: float = 250.0,
    seed: int = 0,
    noise_sd: float = 0.01,
) -> tuple[np.ndarray, np.ndarray]:
    """Labeled single-lead training windows: (n, len, 1) signals, (n, len, 3) masks."""
    rng = np.random.default_rng(seed)
    xs = np.zeros((n_windows, window_len, 1), dtype=np.float32)
    ys = np.zeros((n_windows, window_len, 3), dtype=np.float32)
    for i in range(n_windows):
        anchors = synthetic_beat_anchors(window_len, rng)
        x = _render(window_len, anchors) + rng.normal(0.0, noise_sd, window_len)
        waves = fiducials_for_anchors(anchors, window_len)
        mask = encode_mask(FiducialSet(leads=[waves]), window_len, fs=fs)
        xs[i, :, 0] = x
        ys[i] = mask.channels
    return xs, ys
