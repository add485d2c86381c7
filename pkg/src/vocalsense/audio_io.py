"""WAV loading, canonicalisation (mono, 16 kHz), and segmentation.

The canonical internal form everywhere downstream is mono float64 at 16 kHz
with amplitudes in [-1, 1]. Files are RIFF/WAVE, PCM16 little-endian or IEEE
float32, 1-2 channels; everything else is rejected up front with a specific
error rather than half-parsed.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.signal import firwin, resample_poly

from .errors import CorruptHeader, EmptyAudio, InsufficientLength, UnsupportedFormat

TARGET_RATE = 16000
DEFAULT_SEGMENTS = 32

# Polyphase anti-aliasing filter: windowed sinc, 64 taps per phase with a
# Kaiser window at beta 8.6 (~87 dB stopband).
_KAISER_BETA = 8.6
_TAPS_PER_PHASE = 64

_WAV_PCM16 = 1
_WAV_FLOAT = 3


@dataclass(frozen=True)
class Waveform:
    """Sampled audio; samples shaped [channels, n], amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 2:
            raise ValueError("samples must be shaped [channels, n]")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        if s.size and float(np.abs(s).max()) > 1.0 + 1e-12:
            raise ValueError("samples must lie in [-1, 1]")
        object.__setattr__(self, "samples", s)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass(frozen=True)
class Segment:
    """One contiguous mono slice of a canonical waveform."""

    samples: np.ndarray
    sample_rate: int
    index: int
    source_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


def _read_chunks(raw: bytes):
    """Yield (chunk_id, payload) from a RIFF body, validating declared sizes."""
    if len(raw) < 12:
        raise CorruptHeader("file too small for a RIFF header")
    if raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise CorruptHeader("missing RIFF/WAVE magic")
    (riff_size,) = struct.unpack_from("<I", raw, 4)
    if riff_size + 8 > len(raw):
        raise CorruptHeader("RIFF size exceeds file length")
    pos = 12
    end = 8 + riff_size
    while pos + 8 <= end:
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) != size:
            raise CorruptHeader(f"chunk {cid!r} declares {size} bytes beyond file end")
        yield cid, body
        pos += 8 + size + (size & 1)  # chunks are word-aligned


def load_wav(path) -> Waveform:
    """Read a PCM16 or float32 RIFF/WAVE file into a normalized Waveform.

    Integer samples are scaled by 1/32768 so -32768 maps to exactly -1.0;
    float samples are clipped into [-1, 1].
    """
    with open(path, "rb") as fh:
        raw = fh.read()

    fmt = None
    data = None
    for cid, body in _read_chunks(raw):
        if cid == b"fmt " and fmt is None:
            if len(body) < 16:
                raise CorruptHeader("fmt chunk shorter than 16 bytes")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data" and data is None:
            data = body
    if fmt is None or data is None:
        raise CorruptHeader("missing fmt or data chunk")

    audio_format, channels, rate, _byte_rate, block_align, bits = fmt
    if audio_format not in (_WAV_PCM16, _WAV_FLOAT):
        raise UnsupportedFormat(f"audio format tag {audio_format} (want PCM or IEEE float)")
    if not 1 <= channels <= 2:
        raise UnsupportedFormat(f"{channels} channels (want 1 or 2)")
    if audio_format == _WAV_PCM16 and bits != 16:
        raise UnsupportedFormat(f"{bits}-bit PCM (want 16)")
    if audio_format == _WAV_FLOAT and bits != 32:
        raise UnsupportedFormat(f"{bits}-bit float (want 32)")
    if rate <= 0:
        raise CorruptHeader("non-positive sample rate")

    bytes_per_frame = channels * bits // 8
    if block_align not in (0, bytes_per_frame):
        raise CorruptHeader("block alignment inconsistent with format")
    if len(data) == 0:
        raise EmptyAudio(str(path))
    if len(data) % bytes_per_frame:
        raise CorruptHeader("data chunk is not a whole number of frames")

    if audio_format == _WAV_PCM16:
        flat = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    else:
        flat = np.frombuffer(data, dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(flat)):
            raise CorruptHeader("non-finite float samples")
        flat = np.clip(flat, -1.0, 1.0)
    return Waveform(flat.reshape(-1, channels).T, int(rate))


def save_wav(path, w: Waveform) -> None:
    """Write a Waveform as PCM16 little-endian RIFF/WAVE.

    Samples that are exact multiples of 1/32768 round-trip bit-exactly through
    load_wav.
    """
    ints = np.clip(np.rint(w.samples * 32768.0), -32768, 32767).astype("<i2")
    payload = ints.T.reshape(-1).tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, _WAV_PCM16, w.channels, w.sample_rate,
        w.sample_rate * w.channels * 2, w.channels * 2, 16,
        b"data", len(payload),
    )
    with open(path, "wb") as fh:
        fh.write(header + payload)


def _resample(x: np.ndarray, rate_in: int, rate_out: int) -> np.ndarray:
    g = math.gcd(rate_in, rate_out)
    up, down = rate_out // g, rate_in // g
    taps = _TAPS_PER_PHASE * up
    h = firwin(taps + 1, 1.0 / max(up, down), window=("kaiser", _KAISER_BETA))
    return resample_poly(x, up, down, window=h)


def to_mono_16k(w: Waveform) -> Waveform:
    """Downmix to mono (channel mean) and resample to 16 kHz.

    Idempotent: canonical input comes back sample-exact. Output length is
    ceil(n * 16000 / rate), within one sample of the input duration.
    """
    mono = w.samples.mean(axis=0) if w.channels > 1 else w.samples[0]
    if w.sample_rate == TARGET_RATE:
        return Waveform(mono[None, :], TARGET_RATE)
    y = _resample(mono, w.sample_rate, TARGET_RATE)
    # windowed-sinc ripple can overshoot full scale by a hair
    return Waveform(np.clip(y, -1.0, 1.0)[None, :], TARGET_RATE)


def segment(w: Waveform, n: int = DEFAULT_SEGMENTS, source_id: str = "") -> list[Segment]:
    """Split a canonical waveform into n contiguous segments covering it exactly.

    With length L = q*n + r, the first r segments get q+1 samples and the rest
    get q (extra samples are front-loaded).
    """
    if w.channels != 1 or w.sample_rate != TARGET_RATE:
        raise ValueError("segment() requires canonical mono 16 kHz input")
    if n < 1:
        raise ValueError("segment count must be >= 1")
    length = w.n_samples
    if length < n:
        raise InsufficientLength(f"{length} samples cannot fill {n} segments")
    q, r = divmod(length, n)
    x = w.samples[0]
    out = []
    pos = 0
    for i in range(n):
        size = q + 1 if i < r else q
        out.append(Segment(x[pos : pos + size], w.sample_rate, i, source_id))
        pos += size
    return out
