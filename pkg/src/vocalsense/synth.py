"""Deterministic synthetic call generator.

Stands in for field recordings: each file is a run of harmonic tone bursts
(fundamental plus three decaying harmonics) alternating with noise bursts.
Cohort profiles fix the pitch band, the tonal/noise balance, burst lengths,
and the sentiment label distribution, so corpora with known contrasts can be
produced on demand. Output is bit-reproducible from (seed, profile, index).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import TARGET_RATE, Waveform, save_wav
from .errors import InvalidProfile
from .rng import RandomStream

MANIFEST_VERSION = 1
LABELS = ("negative", "neutral", "positive")

_BURST_SECONDS = 0.08
_EDGE_SECONDS = 0.005
_HARMONIC_AMPS = (1.0, 0.5, 0.25, 0.125)


@dataclass(frozen=True)
class CohortProfile:
    """Acoustic and labelling recipe for one cohort."""

    name: str
    pitch_range: tuple[float, float]          # fundamental band, Hz
    vowel_ratio: float                        # fraction of tonal bursts
    harmonicity: float                        # tone-to-noise mix inside tonal bursts
    call_length_range: tuple[float, float]    # seconds
    label_weights: dict[str, float] = field(
        default_factory=lambda: {"negative": 1 / 3, "neutral": 1 / 3, "positive": 1 / 3})

    def validate(self) -> None:
        lo, hi = self.pitch_range
        if not (100.0 <= lo <= hi <= 2000.0):
            raise InvalidProfile(f"pitch_range {self.pitch_range} outside [100, 2000]")
        if not 0.0 <= self.vowel_ratio <= 1.0:
            raise InvalidProfile(f"vowel_ratio {self.vowel_ratio} outside [0, 1]")
        if not 0.0 <= self.harmonicity <= 1.0:
            raise InvalidProfile(f"harmonicity {self.harmonicity} outside [0, 1]")
        a, b = self.call_length_range
        if not 0.0 < a <= b:
            raise InvalidProfile(f"call_length_range {self.call_length_range} invalid")
        if set(self.label_weights) != set(LABELS):
            raise InvalidProfile(f"label_weights keys {sorted(self.label_weights)}")
        if any(w < 0 for w in self.label_weights.values()) or \
                sum(self.label_weights.values()) <= 0:
            raise InvalidProfile("label_weights must be nonnegative and sum > 0")


PROFILES: dict[str, CohortProfile] = {
    "stressed": CohortProfile(
        "stressed", (480.0, 500.0), 0.35, 0.85, (0.7, 1.0),
        {"negative": 0.6, "neutral": 0.3, "positive": 0.1}),
    "relaxed": CohortProfile(
        "relaxed", (380.0, 620.0), 0.75, 0.9, (0.7, 1.2),
        {"negative": 0.15, "neutral": 0.45, "positive": 0.4}),
    "healthy": CohortProfile(
        "healthy", (420.0, 580.0), 0.7, 0.9, (0.7, 1.1),
        {"negative": 0.1, "neutral": 0.45, "positive": 0.45}),
    "unhealthy": CohortProfile(
        "unhealthy", (460.0, 540.0), 0.45, 0.7, (0.7, 0.9),
        {"negative": 0.55, "neutral": 0.3, "positive": 0.15}),
}


def render_call(profile: CohortProfile, rng: RandomStream) -> tuple[np.ndarray, float]:
    """One call as float64 samples at 16 kHz; returns (samples, fundamental)."""
    lo, hi = profile.call_length_range
    duration = lo + (hi - lo) * rng.uniform()
    n = int(round(duration * TARGET_RATE))
    plo, phi = profile.pitch_range
    f0 = plo + (phi - plo) * rng.uniform()

    burst = int(_BURST_SECONDS * TARGET_RATE)
    edge = int(_EDGE_SECONDS * TARGET_RATE)
    ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(edge) / edge))
    envelope = np.ones(burst)
    envelope[:edge] = ramp
    envelope[-edge:] = ramp[::-1]

    t = np.arange(n) / TARGET_RATE
    tone = np.zeros(n)
    for h, amp in enumerate(_HARMONIC_AMPS, start=1):
        tone += amp * np.sin(2.0 * np.pi * f0 * h * t)
    tone /= sum(_HARMONIC_AMPS)

    out = np.zeros(n)
    for start in range(0, n, burst):
        stop = min(start + burst, n)
        size = stop - start
        env = envelope[:size]
        if rng.uniform() < profile.vowel_ratio:
            noise = rng.uniform((size,)) * 2.0 - 1.0
            mix = profile.harmonicity * tone[start:stop] + \
                (1.0 - profile.harmonicity) * 0.3 * noise
            out[start:stop] = 0.8 * env * mix
        else:
            noise = rng.uniform((size,)) * 2.0 - 1.0
            out[start:stop] = 0.25 * env * noise
    return np.clip(out, -1.0, 1.0), f0


def draw_label(profile: CohortProfile, rng: RandomStream) -> str:
    return LABELS[rng.categorical([profile.label_weights[k] for k in LABELS])]


def generate(profile: CohortProfile, count: int, seed: int, out_dir) -> dict:
    """Write count WAV calls plus labels.csv and manifest.json for one cohort.

    Layout: <out_dir>/<profile.name>/<index>.wav with labels.csv and
    manifest.json beside the audio. Each file's stream derives from
    (seed, profile, index), so any subset regenerates identically and
    generation order cannot matter.
    """
    profile.validate()
    if count < 1:
        raise InvalidProfile(f"count must be >= 1, got {count}")
    root = Path(out_dir) / profile.name
    root.mkdir(parents=True, exist_ok=True)

    rows = []
    fundamentals = []
    for index in range(count):
        rng = RandomStream(seed, "synth", profile.name, index)
        samples, f0 = render_call(profile, rng)
        label = draw_label(profile, rng)
        name = f"{index:04d}.wav"
        save_wav(root / name, Waveform(samples[None, :], TARGET_RATE))
        rows.append((f"{profile.name}/{name}", label))
        fundamentals.append(f0)

    with open(root / "labels.csv", "w") as fh:
        fh.write("source_id,label\n")
        for source_id, label in rows:
            fh.write(f"{source_id},{label}\n")

    manifest = {
        "format_version": MANIFEST_VERSION,
        "seed": seed,
        "count": count,
        "profile": asdict(profile),
        "sample_rate": TARGET_RATE,
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    return manifest


def read_labels(corpus_dir) -> dict[str, str]:
    """source_id -> label from every labels.csv under corpus_dir."""
    labels: dict[str, str] = {}
    for csv_path in sorted(Path(corpus_dir).rglob("labels.csv")):
        with open(csv_path) as fh:
            header = fh.readline().strip()
            if header != "source_id,label":
                raise InvalidProfile(f"{csv_path}: unexpected header {header!r}")
            for line in fh:
                source_id, label = line.strip().split(",")
                labels[source_id] = label
    return labels
