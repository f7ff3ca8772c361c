"""Readers for PhysioNet-style header, binary signal and annotation files.

Format 212 packs two 12-bit two's-complement samples into three bytes; the
annotation stream is a sequence of 16-bit little-endian words holding a 6-bit
type code and a 10-bit time increment. Both decoders are bit-exact and have
inverse packers used by the test suite.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .errors import (
    MalformedHeader,
    OrphanBoundary,
    OutOfRangeAnnotation,
    TruncatedStream,
    UnsupportedFormat,
)
from .records import (
    AnnotationEvent,
    FiducialSet,
    LabelQuality,
    Record,
    RecordHeader,
    StorageFormat,
    WaveFiducials,
    empty_wave_map,
)

_SUPPORTED_FORMATS = {
    "212": StorageFormat.FORMAT_212,
    "16": StorageFormat.FORMAT_16,
    "csv": StorageFormat.TEXT_CSV,
}

# Annotation word layout: code in the top 6 bits, time increment in the low 10.
_CODE_SKIP = 59
_CODE_NUM = 60
_CODE_SUB = 61
_CODE_CHN = 62
_CODE_AUX = 63


@dataclass
class ParseReport:
    """Collects non-fatal parse warnings instead of aborting."""

    record_id: str = ""
    warnings: list[str] = field(default_factory=list)

    def warn(self, message: str) -> None:
        self.warnings.append(f"{self.record_id}: {message}" if self.record_id else message)


def parse_header(text: str | bytes) -> RecordHeader:
    """Parse a header file into a RecordHeader.

    The first non-comment line must declare record name, lead count, sampling
    frequency and sample count; one line per lead follows with the storage
    format and the gain, optionally as ``gain(baseline)/units``.
    """
    if isinstance(text, bytes):
        text = text.decode("ascii", errors="replace")
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise MalformedHeader("empty header")

    fields = lines[0].split()
    if len(fields) < 4:
        raise MalformedHeader(f"record line needs name, leads, fs and samples: {lines[0]!r}")
    record_id = fields[0]
    if "/" in record_id:
        raise UnsupportedFormat(f"{record_id}: multi-segment records are not supported")
    try:
        n_leads = int(fields[1])
    except ValueError as exc:
        raise MalformedHeader(f"non-numeric lead count {fields[1]!r}") from exc
    try:
        # A counter frequency may trail the sampling frequency after '/'.
        fs = float(fields[2].split("/")[0])
    except ValueError as exc:
        raise MalformedHeader(f"non-numeric sampling frequency {fields[2]!r}") from exc
    try:
        n_samples = int(fields[3])
    except ValueError as exc:
        raise MalformedHeader(f"non-numeric sample count {fields[3]!r}") from exc
    if n_leads < 1:
        raise MalformedHeader(f"{record_id}: lead count must be >= 1, got {n_leads}")

    if len(lines) - 1 < n_leads:
        raise MalformedHeader(f"{record_id}: header declares {n_leads} leads but lists {len(lines) - 1}")

    formats: list[str] = []
    gains: list[float] = []
    baselines: list[float] = []
    names: list[str] = []
    for i, line in enumerate(lines[1 : 1 + n_leads]):
        fmt, gain, baseline, name = _parse_signal_line(record_id, i, line)
        formats.append(fmt)
        gains.append(gain)
        baselines.append(baseline)
        names.append(name)

    if len(set(formats)) > 1:
        raise UnsupportedFormat(f"{record_id}: mixed storage formats {sorted(set(formats))}")
    fmt_token = formats[0]
    if fmt_token not in _SUPPORTED_FORMATS:
        raise UnsupportedFormat(f"{record_id}: storage format {fmt_token!r} is not supported")

    header = RecordHeader(
        record_id=record_id,
        n_leads=n_leads,
        fs=fs,
        n_samples=n_samples,
        gain=gains,
        baseline=baselines,
        storage_format=_SUPPORTED_FORMATS[fmt_token],
        lead_names=names,
    )
    header.validate()
    return header


def _parse_signal_line(record_id: str, index: int, line: str) -> tuple[str, float, float, str]:
    fields = line.split()
    if len(fields) < 2:
        raise MalformedHeader(f"{record_id}: signal line {index} too short: {line!r}")
    fmt = fields[1].lower()
    # Strip samples-per-frame / skew / byte-offset modifiers (xN, :N, +N).
    fmt = re.split(r"[x:+]", fmt)[0]

    gain = 200.0
    baseline: Optional[float] = None
    if len(fields) >= 3:
        m = re.fullmatch(r"(-?[\d.eE+-]+)(?:\((-?\d+)\))?(?:/(\S+))?", fields[2])
        if not m:
            raise MalformedHeader(f"{record_id}: bad gain field {fields[2]!r}")
        try:
            gain = float(m.group(1))
        except ValueError as exc:
            raise MalformedHeader(f"{record_id}: non-numeric gain {m.group(1)!r}") from exc
        if m.group(2) is not None:
            baseline = float(m.group(2))
    if gain == 0:
        gain = 200.0  # WFDB convention: 0 means unspecified
    if baseline is None:
        # Baseline defaults to the ADC zero field when present.
        baseline = float(fields[4]) if len(fields) >= 5 and _is_number(fields[4]) else 0.0
    name = fields[-1] if len(fields) >= 9 and not _is_number(fields[-1]) else f"lead{index}"
    return fmt, gain, baseline, name


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def parse_signal_212(data: bytes, header: RecordHeader) -> Record:
    """Decode a format-212 byte stream into a Record in millivolts.

    Each byte triple (b0, b1, b2) holds two 12-bit samples: the low nibble of
    b1 extends b0 and the high nibble extends b2. Samples interleave lead 0
    and lead 1 and are converted via (raw - baseline) / gain.
    """
    if header.storage_format is not StorageFormat.FORMAT_212:
        raise UnsupportedFormat(f"{header.record_id}: header does not declare format 212")
    if header.n_leads != 2:
        raise UnsupportedFormat(f"{header.record_id}: format 212 decoding requires exactly 2 leads")
    needed = 3 * header.n_samples
    if len(data) < needed:
        raise TruncatedStream(
            f"{header.record_id}: need {needed} bytes for {header.n_samples} sample pairs, got {len(data)}"
        )
    raw = decode_212(data[:needed])
    signal = raw.reshape(header.n_samples, 2).astype(np.float64)
    signal[:, 0] = (signal[:, 0] - header.baseline[0]) / header.gain[0]
    signal[:, 1] = (signal[:, 1] - header.baseline[1]) / header.gain[1]
    record = Record(header=header, signal=signal)
    record.validate()
    return record


def decode_212(data: bytes) -> np.ndarray:
    """Unpack raw 12-bit sample pairs from a format-212 stream."""
    if len(data) % 3 != 0:
        raise TruncatedStream(f"format 212 stream length {len(data)} is not a multiple of 3")
    b = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
    s1 = ((b[:, 1] & 0x0F) << 8) | b[:, 0]
    s2 = ((b[:, 1] & 0xF0) << 4) | b[:, 2]
    out = np.empty(2 * len(b), dtype=np.int32)
    out[0::2] = s1
    out[1::2] = s2
    out[out > 2047] -= 4096  # sign-extend from bit 11
    return out


def encode_212(samples: Sequence[int] | np.ndarray) -> bytes:
    """Inverse packer for decode_212; input length must be even."""
    s = np.asarray(samples, dtype=np.int32).reshape(-1)
    if len(s) % 2 != 0:
        raise ValueError("format 212 encodes samples in pairs")
    if np.any(s < -2048) or np.any(s > 2047):
        raise ValueError("format 212 samples must fit 12-bit two's complement")
    u = np.where(s < 0, s + 4096, s).astype(np.uint16)
    s1, s2 = u[0::2], u[1::2]
    out = np.empty((len(s1), 3), dtype=np.uint8)
    out[:, 0] = s1 & 0xFF
    out[:, 1] = ((s1 >> 8) & 0x0F) | (((s2 >> 8) & 0x0F) << 4)
    out[:, 2] = s2 & 0xFF
    return out.tobytes()


def parse_signal_16(data: bytes, header: RecordHeader) -> Record:
    """Decode 16-bit little-endian two's-complement interleaved samples."""
    if header.storage_format is not StorageFormat.FORMAT_16:
        raise UnsupportedFormat(f"{header.record_id}: header does not declare format 16")
    needed = 2 * header.n_samples * header.n_leads
    if len(data) < needed:
        raise TruncatedStream(f"{header.record_id}: need {needed} bytes, got {len(data)}")
    raw = np.frombuffer(data[:needed], dtype="<i2").astype(np.float64)
    signal = raw.reshape(header.n_samples, header.n_leads)
    signal = (signal - np.asarray(header.baseline)) / np.asarray(header.gain)
    record = Record(header=header, signal=signal)
    record.validate()
    return record


def load_csv_signal(text: str, record_id: str = "csv") -> Record:
    """Read a text signal: header row carrying ``fs=<hz>``, one column per lead.

    Lead names may follow the fs cell on the header row; values are taken to
    be millivolts (gain 1, baseline 0).
    """
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MalformedHeader(f"{record_id}: empty CSV document")
    head = [c.strip() for c in lines[0].split(",")]
    m = re.fullmatch(r"fs\s*=\s*([\d.eE+-]+)", head[0])
    if not m:
        raise MalformedHeader(f"{record_id}: CSV header row must start with fs=<hz>, got {head[0]!r}")
    fs = float(m.group(1))
    names = [c for c in head[1:] if c]
    rows = []
    for ln in lines[1:]:
        try:
            rows.append([float(c) for c in ln.split(",")])
        except ValueError as exc:
            raise MalformedHeader(f"{record_id}: non-numeric CSV row {ln!r}") from exc
    if not rows:
        raise MalformedHeader(f"{record_id}: CSV document has no sample rows")
    signal = np.asarray(rows, dtype=np.float64)
    n_samples, n_leads = signal.shape
    if names and len(names) != n_leads:
        raise MalformedHeader(f"{record_id}: {len(names)} lead names for {n_leads} columns")
    header = RecordHeader(
        record_id=record_id,
        n_leads=n_leads,
        fs=fs,
        n_samples=n_samples,
        gain=[1.0] * n_leads,
        baseline=[0.0] * n_leads,
        storage_format=StorageFormat.TEXT_CSV,
        lead_names=names or [f"lead{i}" for i in range(n_leads)],
    )
    header.validate()
    record = Record(header=header, signal=signal)
    record.validate()
    return record


def parse_annotations(
    data: bytes,
    n_samples: Optional[int] = None,
    report: Optional[ParseReport] = None,
) -> list[AnnotationEvent]:
    """Decode an annotation byte stream into events with absolute samples.

    Words are 16-bit little-endian; the top 6 bits carry the type code and the
    low 10 bits a time increment accumulated into a running sample counter.
    SKIP (59) consumes a following 4-byte interval (high word first); NUM/SUB/
    CHN/AUX (60-63) modify the latest event without advancing time; a zero
    word terminates the stream. Events past ``n_samples`` raise
    OutOfRangeAnnotation, or are dropped with a warning when a report is given.
    """
    if len(data) % 2 != 0:
        raise TruncatedStream(f"annotation stream has odd byte length {len(data)}")
    words = np.frombuffer(data, dtype="<u2")

    events: list[AnnotationEvent] = []
    time = 0
    chan = 0
    num = 0
    i = 0
    while i < len(words):
        word = int(words[i])
        if word == 0:
            break
        code = word >> 10
        delta = word & 0x3FF
        if code == _CODE_SKIP:
            if i + 2 >= len(words):
                raise TruncatedStream("SKIP annotation missing its 4-byte interval")
            interval = (int(words[i + 1]) << 16) | int(words[i + 2])
            if interval >= 1 << 31:
                interval -= 1 << 32
            time += interval
            i += 3
            continue
        if code == _CODE_AUX:
            aux_len = delta
            n_words = (aux_len + 1) // 2
            if i + n_words >= len(words):
                raise TruncatedStream("AUX annotation missing its payload")
            payload = data[2 * (i + 1) : 2 * (i + 1) + aux_len]
            if events:
                events[-1].aux = payload
            elif report is not None:
                report.warn(f"AUX field before any annotation at word {i}")
            i += 1 + n_words
            continue
        if code in (_CODE_NUM, _CODE_SUB, _CODE_CHN):
            value = delta & 0xFF
            if code != _CODE_CHN and value >= 128:
                value -= 256  # NUM and SUB are signed chars
            if code == _CODE_NUM:
                num = value
                if events:
                    events[-1].num = value
            elif code == _CODE_SUB:
                if events:
                    events[-1].sub = value
                elif report is not None:
                    report.warn(f"SUB field before any annotation at word {i}")
            else:
                chan = value
                if events:
                    events[-1].chan = value
            i += 1
            continue
        # Ordinary annotation word: advance time; code 0 here is a bare time
        # advance carrying no event.
        time += delta
        if code != 0:
            if n_samples is not None and time >= n_samples:
                msg = f"annotation at sample {time} beyond record end {n_samples}"
                if report is None:
                    raise OutOfRangeAnnotation(msg)
                report.warn(msg)
            else:
                events.append(AnnotationEvent(sample=time, code=code, chan=chan, num=num))
        i += 1
    return events


def encode_annotations(events: Sequence[tuple[int, int]]) -> bytes:
    """Pack (sample, code) pairs into an annotation stream, for fixtures.

    Emits SKIP words when a time increment exceeds the 10-bit field, and the
    terminating zero word.
    """
    out = bytearray()
    time = 0
    for sample, code in events:
        delta = sample - time
        if delta < 0:
            raise ValueError("annotation samples must be nondecreasing")
        if delta > 0x3FF:
            out += int(_CODE_SKIP << 10).to_bytes(2, "little")
            out += ((delta >> 16) & 0xFFFF).to_bytes(2, "little")
            out += (delta & 0xFFFF).to_bytes(2, "little")
            delta = 0
        if not (0 < code < 59):
            raise ValueError(f"cannot encode event with code {code}")
        out += ((code << 10) | delta).to_bytes(2, "little")
        time = sample
    out += (0).to_bytes(2, "little")
    return bytes(out)


@dataclass
class WaveCodeTable:
    """Maps annotation type codes to delineation roles.

    Numeric assignments are ecosystem conventions, so the defaults live in a
    bundled config file and can be overridden per dataset.
    """

    p_peak: frozenset[int]
    qrs_peak: frozenset[int]
    t_peak: frozenset[int]
    onset: frozenset[int]
    offset: frozenset[int]

    @classmethod
    def default(cls) -> "WaveCodeTable":
        with resources.files("ecgseg.data").joinpath("wave_codes.json").open("r") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def from_dict(cls, d: dict) -> "WaveCodeTable":
        return cls(
            p_peak=frozenset(d["p_peak"]),
            qrs_peak=frozenset(d["qrs_peak"]),
            t_peak=frozenset(d["t_peak"]),
            onset=frozenset(d["onset"]),
            offset=frozenset(d["offset"]),
        )

    def wave_of_peak(self, code: int) -> Optional[str]:
        if code in self.p_peak:
            return "P"
        if code in self.qrs_peak:
            return "QRS"
        if code in self.t_peak:
            return "T"
        return None


def events_to_fiducials(
    events: Sequence[AnnotationEvent],
    table: Optional[WaveCodeTable] = None,
    quality: LabelQuality = LabelQuality.HIGH,
    report: Optional[ParseReport] = None,
) -> FiducialSet:
    """Group onset/peak/offset events into per-wave beat triples.

    Each onset is attached to the next peak and that peak's following offset.
    Incomplete triples are permitted (a peak may lack either boundary). An
    onset that meets another onset or the end of the stream before any peak is
    an OrphanBoundary: raised when no report is supplied, otherwise recorded
    and skipped.
    """
    table = table or WaveCodeTable.default()
    waves = empty_wave_map()
    pending_onset: Optional[int] = None
    open_wave: Optional[str] = None  # wave of the last peak still awaiting an offset

    def orphan(message: str) -> None:
        if report is None:
            raise OrphanBoundary(message)
        report.warn(message)

    for ev in events:
        if ev.code in table.onset:
            if pending_onset is not None:
                orphan(f"onset at sample {pending_onset} has no following peak or offset")
            pending_onset = ev.sample
            open_wave = None
        elif ev.code in table.offset:
            if pending_onset is not None:
                orphan(f"onset at sample {pending_onset} has no following peak or offset")
                pending_onset = None
            if open_wave is None:
                orphan(f"offset at sample {ev.sample} closes no wave")
                continue
            waves[open_wave].offsets[-1] = ev.sample
            open_wave = None
        else:
            wave = table.wave_of_peak(ev.code)
            if wave is None:
                continue  # rhythm/comment codes and other non-delineation marks
            waves[wave].append(pending_onset, ev.sample, None)
            pending_onset = None
            open_wave = wave
    if pending_onset is not None:
        orphan(f"onset at sample {pending_onset} has no following peak or offset")

    return FiducialSet(leads=[waves], quality=quality)
