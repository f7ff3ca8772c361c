"""ECG-tailored noise sources calibrated to a target SNR.

Six generators: additive white Gaussian noise, random periodic spikes,
amplifier saturation, pacemaker spikes, powerline noise and baseline wander.
Powerline and baseline wander share one sinusoid formula and differ only in
the default frequency range. Per-window parameter jitter draws from
U(-SNR/10, +SNR/10) around the nominal value.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import MissingParameter

log = logging.getLogger(__name__)

SPIKE_KERNEL = np.array([0.0, 0.15, 1.5, -0.25, 0.15])
SPIKE_TAP_JITTER = 0.25
POWERLINE_DEFAULT_HZ = 50.0
BASELINE_WANDER_RANGE_HZ = (0.05, 0.5)

_MIN_FREQUENCY = 1e-3
_MIN_SATURATION = 1e-6


class NoiseKind(str, Enum):
    AWGN = "awgn"
    RANDOM_SPIKES = "random_spikes"
    AMPLIFIER_SATURATION = "amplifier_saturation"
    PACEMAKER_SPIKES = "pacemaker_spikes"
    POWERLINE = "powerline"
    BASELINE_WANDER = "baseline_wander"


_NEEDS_FREQUENCY = {
    NoiseKind.RANDOM_SPIKES,
    NoiseKind.PACEMAKER_SPIKES,
    NoiseKind.POWERLINE,
    NoiseKind.BASELINE_WANDER,
}


@dataclass
class AugmentSpec:
    """One noise source: kind, target SNR and its frequency/saturation knobs."""

    kind: NoiseKind
    snr_db: float
    f: Optional[float] = None  # spike rate or sinusoid frequency, Hz
    p: float = 0.8  # saturation fraction of max |x|, AS only
    jitter: bool = True
    pacemaker_kernel: bool = True  # False: bare impulses at QRS onsets

    def validate(self) -> None:
        if not np.isfinite(self.snr_db):
            raise ValueError(f"snr_db must be finite, got {self.snr_db}")
        if self.kind in _NEEDS_FREQUENCY:
            if self.f is None:
                raise MissingParameter(f"{self.kind.value} requires a frequency f")
            if self.f <= 0:
                raise ValueError(f"f must be positive, got {self.f}")
        if self.kind is NoiseKind.AMPLIFIER_SATURATION and not (0.0 < self.p <= 1.0):
            raise ValueError(f"saturation fraction p must lie in (0, 1], got {self.p}")


@dataclass
class NoiseRealization:
    samples: np.ndarray
    achieved_power: float


def signal_power(x: np.ndarray) -> float:
    """Mean squared sample value."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("signal_power of an empty window")
    return float(np.mean(np.square(x)))


def noise_power(ps: float, snr_db: float) -> float:
    """Noise power that realizes snr_db against signal power ps."""
    return ps / 10.0 ** (snr_db / 10.0)


def jitter_param(value: float, snr_db: float, rng: np.random.Generator) -> float:
    """Uniform jitter of half-width |snr_db| / 10 around value."""
    half = abs(snr_db) / 10.0
    return value + rng.uniform(-half, half)


def _spike_kernel(rng: np.random.Generator) -> np.ndarray:
    return SPIKE_KERNEL + rng.uniform(-SPIKE_TAP_JITTER, SPIKE_TAP_JITTER, SPIKE_KERNEL.size)


def _place_kernel(noise: np.ndarray, center: int, kernel: np.ndarray) -> None:
    # Kernel centered on the spike sample, truncated at window edges.
    half = kernel.size // 2
    lo = max(0, center - half)
    hi = min(noise.size, center + half + 1)
    if lo < hi:
        noise[lo:hi] += kernel[lo - (center - half) : hi - (center - half)]


def generate_noise(
    spec: AugmentSpec,
    window: np.ndarray,
    fs: float,
    qrs_onsets: Optional[Sequence[int]] = None,
    rng: Optional[np.random.Generator] = None,
) -> NoiseRealization:
    """Generate one realization of the requested noise over the window."""
    spec.validate()
    rng = rng if rng is not None else np.random.default_rng()
    x = np.asarray(window, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot generate noise over an empty window")
    ps = signal_power(x)
    if ps < 1e-12 and spec.kind is not NoiseKind.AMPLIFIER_SATURATION:
        log.warning("near-zero signal power (%g); noise will be near zero", ps)
    pn = noise_power(ps, spec.snr_db)
    n = x.size

    if spec.kind is NoiseKind.AWGN:
        noise = rng.normal(0.0, np.sqrt(pn), n)

    elif spec.kind is NoiseKind.RANDOM_SPIKES:
        amp = np.sqrt(pn / spec.f)
        period = max(1, round(fs / spec.f))
        kernel = amp * _spike_kernel(rng)
        phase = int(rng.integers(0, period))
        noise = np.zeros(n)
        for center in range(phase, n, period):
            _place_kernel(noise, center, kernel)

    elif spec.kind is NoiseKind.AMPLIFIER_SATURATION:
        sv = spec.p * np.max(np.abs(x))
        noise = np.zeros(n)
        above = x >= sv
        below = x <= -sv
        noise[above] = -x[above] + sv
        noise[below] = -x[below] - sv
        # x == +-sv lands in both branches above only at sv == 0; the additive
        # correction is 0 there either way.

    elif spec.kind is NoiseKind.PACEMAKER_SPIKES:
        if qrs_onsets is None:
            raise MissingParameter("pacemaker_spikes requires qrs_onsets")
        amp = np.sqrt(pn / spec.f)
        noise = np.zeros(n)
        if spec.pacemaker_kernel:
            kernel = amp * _spike_kernel(rng)
            for onset in qrs_onsets:
                _place_kernel(noise, int(onset), kernel)
        else:
            for onset in qrs_onsets:
                if 0 <= int(onset) < n:
                    noise[int(onset)] += amp

    elif spec.kind in (NoiseKind.POWERLINE, NoiseKind.BASELINE_WANDER):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        noise = np.sqrt(2.0 * pn) * np.cos(2.0 * np.pi * spec.f / fs * np.arange(n) + phase)

    else:  # pragma: no cover - enum is exhaustive
        raise ValueError(f"unknown noise kind {spec.kind}")

    return NoiseRealization(samples=noise, achieved_power=float(np.mean(np.square(noise))))


def effective_spec(spec: AugmentSpec, rng: np.random.Generator) -> AugmentSpec:
    """Apply per-window jitter to the spec's SNR and frequency/saturation knobs.

    The jitter half-width is |nominal SNR| / 10 for every parameter; jittered
    f and p are clamped back to their valid domains.
    """
    if not spec.jitter:
        return spec
    snr = jitter_param(spec.snr_db, spec.snr_db, rng)
    f = spec.f
    if spec.kind in _NEEDS_FREQUENCY:
        f = max(_MIN_FREQUENCY, jitter_param(spec.f, spec.snr_db, rng))
    p = spec.p
    if spec.kind is NoiseKind.AMPLIFIER_SATURATION:
        p = float(np.clip(jitter_param(spec.p, spec.snr_db, rng), _MIN_SATURATION, 1.0))
    return replace(spec, snr_db=snr, f=f, p=p, jitter=False)


def augment_window(
    window: np.ndarray,
    specs: Sequence[AugmentSpec],
    fs: float,
    rng: Optional[np.random.Generator] = None,
    qrs_onsets: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Additively compose independently generated realizations onto the window.

    Each realization is generated against the original window with its own
    jittered parameters; labels are untouched by construction.
    """
    rng = rng if rng is not None else np.random.default_rng()
    x = np.asarray(window, dtype=np.float64)
    out = x.copy()
    for spec in specs:
        eff = effective_spec(spec, rng)
        out += generate_noise(eff, x, fs, qrs_onsets=qrs_onsets, rng=rng).samples
    return out


def default_policy_specs(rng: np.random.Generator, snr_range: tuple[float, float] = (5.0, 30.0),
                         include_prob: float = 0.5, powerline_hz: float = POWERLINE_DEFAULT_HZ) -> list[AugmentSpec]:
    """Sample a per-window noise recipe: each source joins with include_prob
    at an SNR drawn from snr_range. These defaults are toolkit policy, not a
    calibrated protocol; override via the experiment config."""
    specs: list[AugmentSpec] = []
    for kind in NoiseKind:
        if rng.uniform() >= include_prob:
            continue
        snr = float(rng.uniform(*snr_range))
        if kind is NoiseKind.POWERLINE:
            f = powerline_hz
        elif kind is NoiseKind.BASELINE_WANDER:
            f = float(rng.uniform(*BASELINE_WANDER_RANGE_HZ))
        elif kind in (NoiseKind.RANDOM_SPIKES, NoiseKind.PACEMAKER_SPIKES):
            f = float(rng.uniform(0.5, 3.0))
        else:
            f = None
        specs.append(AugmentSpec(kind=kind, snr_db=snr, f=f))
    return specs


def spec_from_dict(d: dict) -> AugmentSpec:
    """Build an AugmentSpec from a config-file entry."""
    spec = AugmentSpec(
        kind=NoiseKind(d["kind"]),
        snr_db=float(d["snr_db"]),
        f=None if d.get("f") is None else float(d["f"]),
        p=float(d.get("p", 0.8)),
        jitter=bool(d.get("jitter", True)),
        pacemaker_kernel=bool(d.get("pacemaker_kernel", True)),
    )
    spec.validate()
    return spec


def spec_to_dict(spec: AugmentSpec) -> dict:
    return {
        "kind": spec.kind.value,
        "snr_db": spec.snr_db,
        "f": spec.f,
        "p": spec.p,
        "jitter": spec.jitter,
        "pacemaker_kernel": spec.pacemaker_kernel,
    }
