"""Classical signal features: pitch, pitch histograms, MFCCs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct, irfft, rfft

from .audio_io import Segment
from .errors import SegmentTooShort

PITCH_MIN_HZ = 100.0
PITCH_MAX_HZ = 2000.0
VOICING_THRESHOLD = 0.5

# lags whose normalized autocorrelation comes within this of the global peak
# are preferred when shorter, which suppresses period-multiple (octave) errors
_PEAK_TOLERANCE = 0.01


@dataclass(frozen=True)
class PitchEstimate:
    """Fundamental estimate in Hz; value None marks an unvoiced segment."""

    value: float | None
    periodicity: float

    @property
    def voiced(self) -> bool:
        return self.value is not None


@dataclass
class Histogram:
    bin_width: float
    origin: float
    counts: dict[int, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def _normalized_autocorr(x: np.ndarray, max_lag: int) -> np.ndarray:
    """r[tau] = sum x[t]x[t+tau] / sqrt(sum_head x^2 * sum_tail x^2), tau <= max_lag."""
    n = len(x)
    nfft = 1 << (2 * n - 1).bit_length()
    spec = rfft(x, nfft)
    raw = irfft(spec * np.conj(spec), nfft)[: max_lag + 1]
    sq = np.concatenate([[0.0], np.cumsum(x * x)])
    total = sq[n]
    lags = np.arange(max_lag + 1)
    head = sq[n - lags]             # sum of x^2 over t <= n - 1 - tau
    tail = total - sq[lags]         # sum of x^2 over t >= tau
    denom = np.sqrt(head * tail)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0, raw / denom, 0.0)
    return r


def estimate_pitch(
    s: Segment,
    fmin: float = PITCH_MIN_HZ,
    fmax: float = PITCH_MAX_HZ,
    voicing_threshold: float = VOICING_THRESHOLD,
) -> PitchEstimate:
    """Autocorrelation pitch with parabolic peak refinement.

    Searches lags for fundamentals in [fmin, fmax]; the peak lag is refined by
    fitting a parabola through its neighbours. Periodicity below the voicing
    threshold yields an unvoiced estimate.
    """
    fs = s.sample_rate
    lag_min = int(np.floor(fs / fmax))
    lag_max = int(np.ceil(fs / fmin))
    if s.n_samples < 2 * lag_max:
        raise SegmentTooShort(f"{s.n_samples} samples; need >= {2 * lag_max}")

    x = s.samples - s.samples.mean()
    if not np.any(x):
        return PitchEstimate(None, 0.0)

    r = _normalized_autocorr(x, lag_max + 1)
    window = r[lag_min : lag_max + 1]
    best = int(np.argmax(window)) + lag_min
    peak = float(np.clip(r[best], 0.0, 1.0))
    if peak < voicing_threshold:
        return PitchEstimate(None, peak)

    # prefer the shortest *local maximum* that is effectively as strong as the
    # best one; plain near-peak shoulders must not qualify
    local_max = (window >= r[lag_min - 1 : lag_max]) & (window >= r[lag_min + 1 : lag_max + 2])
    near = np.nonzero(local_max & (window >= r[best] - _PEAK_TOLERANCE))[0]
    lag = int(near[0]) + lag_min if near.size else best

    y0, y1, y2 = r[lag - 1], r[lag], r[lag + 1]
    denom = y0 - 2.0 * y1 + y2
    delta = 0.0 if denom == 0 else float((y0 - y2) / (2.0 * denom))
    delta = float(np.clip(delta, -0.5, 0.5))
    freq = float(np.clip(fs / (lag + delta), fmin, fmax))
    return PitchEstimate(freq, peak)


def pitch_histogram(
    estimates: list[PitchEstimate], bin_width: float = 10.0, origin: float = 0.0
) -> Histogram:
    """Bin voiced estimates at floor((value - origin) / bin_width); drop unvoiced."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    counts: dict[int, int] = {}
    for est in estimates:
        if est.voiced:
            idx = int(np.floor((est.value - origin) / bin_width))
            counts[idx] = counts.get(idx, 0) + 1
    return Histogram(bin_width, origin, counts)


def histogram_csv(h: Histogram) -> str:
    """CSV rows bin_start_hz,bin_end_hz,count for nonempty bins, ascending."""
    lines = ["bin_start_hz,bin_end_hz,count"]
    for idx in sorted(h.counts):
        start = h.origin + idx * h.bin_width
        lines.append(f"{start!r},{start + h.bin_width!r},{h.counts[idx]}")
    return "\n".join(lines) + "\n"


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, fs: int) -> np.ndarray:
    """Triangular mel filters, peak 1, sampled at rfft bin frequencies.

    Adjacent filters overlap 50%, so per-bin weights across filters sum to at
    most 1.
    """
    points = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(fs / 2.0), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * fs / n_fft
    fb = np.zeros((n_mels, len(freqs)))
    for j in range(n_mels):
        lo, mid, hi = points[j], points[j + 1], points[j + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        fb[j] = np.clip(np.minimum(rising, falling), 0.0, 1.0)
    return fb


def mfcc(
    s: Segment,
    n_mels: int = 26,
    n_coeffs: int = 13,
    frame_ms: float = 25.0,
    hop_ms: float = 10.0,
    floor: float = 1e-10,
) -> np.ndarray:
    """Mel-frequency cepstra per frame (Hann window, orthonormal DCT-II).

    Returns [n_frames, n_coeffs].
    """
    fs = s.sample_rate
    frame = int(round(frame_ms * fs / 1000.0))
    hop = int(round(hop_ms * fs / 1000.0))
    if s.n_samples < frame:
        raise SegmentTooShort(f"{s.n_samples} samples; need >= {frame}")
    n_fft = 1 << (frame - 1).bit_length()

    n_frames = (s.n_samples - frame) // hop + 1
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    windowed = s.samples[idx] * np.hanning(frame)
    power = np.abs(rfft(windowed, n_fft, axis=1)) ** 2

    fb = mel_filterbank(n_mels, n_fft, fs)
    energies = np.log(np.maximum(power @ fb.T, floor))
    return dct(energies, type=2, norm="ortho", axis=1)[:, :n_coeffs]
