"""Synthetic speaker corpus, WAV ingestion and frame preprocessing.

Preprocessing is trim -> frame -> max-normalize.  Every step is a pure
function of its inputs; the synthetic generator derives one RNG stream per
utterance from ``(seed, utt_id)`` so output never depends on generation
order.
"""
from __future__ import annotations

import base64
import csv
import logging
import wave
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError, DataError, PreconditionError, WavFormatError

log = logging.getLogger(__name__)

SPLITS = ("train", "test", "enroll")
# formant search ranges in Hz; upper ends are capped at 0.45 * f_s
FORMANT_RANGES = ((250.0, 900.0), (900.0, 2200.0), (2200.0, 3400.0))
BANDWIDTH_RANGE = (60.0, 160.0)
PITCH_RANGE = (90.0, 250.0)
MIN_SEPARATION_HZ = 100.0


@dataclass
class Utterance:
    samples: np.ndarray
    sample_rate: int
    class_id: int
    split: str = "train"
    utt_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.split not in SPLITS:
            raise DataError(f"unknown split {self.split!r}")

    @property
    def is_empty(self):
        return self.samples.size == 0

    def with_samples(self, samples):
        return Utterance(samples, self.sample_rate, self.class_id, self.split, self.utt_id)


@dataclass(frozen=True)
class Trial:
    enroll_class: int
    utt_id: str
    is_target: bool


@dataclass
class Corpus:
    utterances: list
    trials: list = field(default_factory=list)
    num_classes: int = 0

    def split(self, name):
        return [u for u in self.utterances if u.split == name]

    def by_id(self):
        return {u.utt_id: u for u in self.utterances}


@dataclass(frozen=True)
class ClassVoice:
    formants: tuple
    bandwidths: tuple
    pitch: float


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a deterministic multi-class corpus.

    ``formants`` optionally pins the resonance centers of each class
    (one triple per class); otherwise they are drawn from the seed.
    """

    n_classes: int = 10
    utterances_per_class: int = 10
    test_per_class: int = 4
    duration: tuple = (2.0, 6.0)
    sample_rate: int = 16000
    seed: int = 0
    formant_jitter: float = 0.04
    pitch_jitter: float = 0.08
    noise_db: float = -30.0
    nontarget_trials: int = 3
    formants: tuple | None = None

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")
        if not 0 < self.test_per_class < self.utterances_per_class:
            raise ConfigError("test_per_class must leave at least one training utterance")
        lo, hi = self.duration
        if not 0 < lo <= hi:
            raise ConfigError("duration range must satisfy 0 < min <= max")
        if self.sample_rate < 2 * 1200:
            raise ConfigError("sample_rate too low for the resonance layout")
        if self.formants is not None and len(self.formants) != self.n_classes:
            raise ConfigError("formants override needs one triple per class")
        if not 0 <= self.nontarget_trials < self.n_classes:
            raise ConfigError("nontarget_trials must be < n_classes")


def _stream(seed, key):
    return np.random.default_rng([seed, zlib.crc32(key.encode())])


def class_voices(spec: SynthSpec):
    """Per-class resonances and pitch, drawn by rejection to keep classes apart."""
    rng = _stream(spec.seed, "classes")
    nyq_cap = 0.45 * spec.sample_rate
    ranges = [(lo, min(hi, nyq_cap)) for lo, hi in FORMANT_RANGES]
    if any(hi - lo < MIN_SEPARATION_HZ for lo, hi in ranges):
        raise ConfigError("sample_rate leaves no room for separated resonances")
    voices = []
    for i in range(spec.n_classes):
        bws = tuple(rng.uniform(*BANDWIDTH_RANGE, size=3))
        pitch = float(rng.uniform(*PITCH_RANGE))
        if spec.formants is not None:
            fm = tuple(float(f) for f in spec.formants[i])
            if any(not 50.0 < f < spec.sample_rate / 2 for f in fm):
                raise ConfigError(f"class {i} resonances must lie in (50 Hz, f_s/2)")
        else:
            for _ in range(10000):
                fm = tuple(float(rng.uniform(lo, hi)) for lo, hi in ranges)
                if all(max(abs(a - b) for a, b in zip(fm, v.formants)) >= MIN_SEPARATION_HZ for v in voices):
                    break
            else:
                raise ConfigError(f"cannot place {spec.n_classes} classes with {MIN_SEPARATION_HZ} Hz separation")
        voices.append(ClassVoice(fm, bws, pitch))
    return voices


def _resonator(fc, bw, fs):
    r = np.exp(-np.pi * bw / fs)
    theta = 2.0 * np.pi * fc / fs
    a = np.array([1.0, -2.0 * r * np.cos(theta), r * r])
    # unit gain at the center frequency
    z = np.exp(1j * theta)
    gain = abs(a[0] + a[1] / z + a[2] / z**2)
    return np.array([gain]), a


def synth_utterance(voice: ClassVoice, spec: SynthSpec, utt_id: str, class_id: int, split: str):
    rng = _stream(spec.seed, utt_id)
    fs = spec.sample_rate
    n = int(round(rng.uniform(*spec.duration) * fs))
    pitch = voice.pitch * (1.0 + rng.uniform(-spec.pitch_jitter, spec.pitch_jitter))
    # slow pitch drift across the utterance
    drift = 1.0 + 0.03 * np.sin(2 * np.pi * rng.uniform(0.3, 1.5) * np.arange(n) / fs + rng.uniform(0, 2 * np.pi))
    phase = np.cumsum(pitch * drift / fs)
    excitation = np.diff(np.floor(phase), prepend=0.0)
    sig = excitation
    for fc, bw in zip(voice.formants, voice.bandwidths):
        fc_u = fc * (1.0 + rng.uniform(-spec.formant_jitter, spec.formant_jitter))
        b, a = _resonator(min(fc_u, 0.49 * fs), bw, fs)
        sig = lfilter(b, a, sig)
    rms = np.sqrt(np.mean(sig**2)) or 1.0
    sig = sig + rng.normal(0.0, rms * 10 ** (spec.noise_db / 20.0), n)
    sig *= 0.9 / np.max(np.abs(sig))
    return Utterance(sig, fs, class_id, split, utt_id)


def synth_corpus(spec: SynthSpec) -> Corpus:
    """Generate the corpus and a verification trial list over its test split."""
    voices = class_voices(spec)
    n_train = spec.utterances_per_class - spec.test_per_class
    utts = []
    for c, voice in enumerate(voices):
        for j in range(spec.utterances_per_class):
            split = "train" if j < n_train else "test"
            utts.append(synth_utterance(voice, spec, f"c{c:03d}_u{j:03d}", c, split))
    return Corpus(utts, make_trials(utts, spec.n_classes, spec.nontarget_trials, spec.seed), spec.n_classes)


def make_trials(utterances, num_classes, nontarget_per_utt, seed):
    """One target and ``nontarget_per_utt`` impostor claims per test utterance."""
    rng = _stream(seed, "trials")
    trials = []
    for u in utterances:
        if u.split != "test":
            continue
        trials.append(Trial(u.class_id, u.utt_id, True))
        others = [c for c in range(num_classes) if c != u.class_id]
        for c in rng.choice(others, size=nontarget_per_utt, replace=False):
            trials.append(Trial(int(c), u.utt_id, False))
    return trials


def trim_silence(utt: Utterance, threshold_db: float = -40.0, win_ms: float = 10.0) -> Utterance:
    """Drop leading/trailing 10 ms blocks whose RMS is below ``peak + threshold_db``.

    A fully silent input comes back empty (``is_empty`` is True).
    """
    if threshold_db >= 0:
        raise PreconditionError("threshold_db must be negative")
    x = utt.samples
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak == 0.0:
        return utt.with_samples(np.zeros(0))
    hop = max(1, int(round(win_ms * 1e-3 * utt.sample_rate)))
    nblk = -(-x.size // hop)
    padded = np.zeros(nblk * hop)
    padded[: x.size] = x
    rms = np.sqrt(np.mean(padded.reshape(nblk, hop) ** 2, axis=1))
    loud = np.nonzero(rms >= peak * 10 ** (threshold_db / 20.0))[0]
    start, stop = loud[0] * hop, min(x.size, (loud[-1] + 1) * hop)
    return utt.with_samples(x[start:stop].copy())


@dataclass
class FrameBatch:
    frames: np.ndarray  # (N, 1, W)
    utt_index: np.ndarray  # (N,) index into ``utt_ids``
    labels: np.ndarray  # (N,)
    utt_ids: list
    utt_labels: np.ndarray
    skipped: int = 0

    def __len__(self):
        return self.frames.shape[0]


def frame_count(T, W, H):
    return 0 if T < W else (T - W) // H + 1


def frame_signal(utt: Utterance, window_ms: float = 200.0, hop_ms: float = 10.0) -> FrameBatch:
    """Slice one utterance into un-normalized frames; too-short input yields zero frames."""
    W = int(round(window_ms * 1e-3 * utt.sample_rate))
    H = int(round(hop_ms * 1e-3 * utt.sample_rate))
    if W < 1 or H < 1:
        raise ConfigError("window and hop must cover at least one sample")
    n = frame_count(utt.samples.size, W, H)
    if n == 0:
        frames = np.zeros((0, 1, W))
    else:
        starts = np.arange(n) * H
        frames = utt.samples[starts[:, None] + np.arange(W)][:, None, :]
    return FrameBatch(frames, np.zeros(n, dtype=np.int64), np.full(n, utt.class_id, dtype=np.int64),
                      [utt.utt_id], np.array([utt.class_id]), skipped=int(n == 0))


def max_normalize(frame):
    frame = np.asarray(frame, dtype=np.float64)
    m = np.max(np.abs(frame), axis=-1, keepdims=True) if frame.size else np.zeros(frame.shape[:-1] + (1,))
    return np.divide(frame, m, out=frame.copy(), where=m > 0)


def prepare_frames(utterances, window_ms=200.0, hop_ms=10.0, trim_db=-40.0) -> FrameBatch:
    """trim -> frame -> normalize for a list of utterances."""
    parts, ids, labels, skipped = [], [], [], 0
    for utt in utterances:
        trimmed = trim_silence(utt, trim_db)
        if trimmed.is_empty:
            skipped += 1
            continue
        fb = frame_signal(trimmed, window_ms, hop_ms)
        if len(fb) == 0:
            skipped += 1
            continue
        fb.utt_index[:] = len(ids)
        parts.append(fb)
        ids.append(utt.utt_id)
        labels.append(utt.class_id)
    if skipped:
        log.warning("skipped %d utterance(s) that were silent or shorter than one frame", skipped)
    if not parts:
        raise DataError("no usable frames")
    return FrameBatch(
        max_normalize(np.concatenate([p.frames for p in parts])),
        np.concatenate([p.utt_index for p in parts]),
        np.concatenate([p.labels for p in parts]),
        ids,
        np.array(labels, dtype=np.int64),
        skipped,
    )


# -- WAV and manifest I/O --------------------------------------------------------------


def _to_pcm16(samples):
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def wav_write(path, samples, sample_rate):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(sample_rate))
        w.writeframes(_to_pcm16(samples).tobytes())


def wav_read(path, class_id=0, split="train", utt_id=None) -> Utterance:
    """Read 16-bit PCM mono; samples are scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise WavFormatError(f"{path}: channels={w.getnchannels()}, expected mono")
            if w.getsampwidth() != 2:
                raise WavFormatError(f"{path}: sample width={8 * w.getsampwidth()} bits, expected 16")
            if w.getcomptype() != "NONE":
                raise WavFormatError(f"{path}: compression type={w.getcomptype()}, expected PCM")
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as e:
        raise WavFormatError(f"{path}: malformed or non-PCM header ({e})") from e
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Utterance(samples, rate, class_id, split, utt_id or Path(path).stem)


MANIFEST_FIELDS = ["utt_id", "class_id", "split", "path_or_inline", "seed"]


def write_corpus(corpus: Corpus, out_dir, seed=0, inline=False):
    """Materialize WAVs plus ``manifest.csv`` and ``trials.csv`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(MANIFEST_FIELDS)
        for u in corpus.utterances:
            if inline:
                loc = "inline:" + base64.b64encode(_to_pcm16(u.samples).tobytes()).decode()
            else:
                loc = f"wav/{u.utt_id}.wav"
                wav_write(out / loc, u.samples, u.sample_rate)
            wr.writerow([u.utt_id, u.class_id, u.split, loc, seed])
    with open(out / "trials.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["enroll_class", "utt_id", "is_target"])
        for t in corpus.trials:
            wr.writerow([t.enroll_class, t.utt_id, int(t.is_target)])
    return out / "manifest.csv"


def read_manifest(path, sample_rate=None) -> Corpus:
    """Load a corpus from a manifest; ``trials.csv`` beside it is picked up if present."""
    path = Path(path)
    utts = []
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(MANIFEST_FIELDS) - set(rows[0]):
        raise DataError(f"{path}: manifest needs columns {MANIFEST_FIELDS}")
    for row in rows:
        loc = row["path_or_inline"]
        cid = int(row["class_id"])
        if loc.startswith("inline:"):
            if sample_rate is None:
                raise DataError("inline manifest entries need an explicit sample_rate")
            pcm = np.frombuffer(base64.b64decode(loc[7:]), dtype="<i2")
            u = Utterance(pcm / 32768.0, sample_rate, cid, row["split"], row["utt_id"])
        else:
            u = wav_read(path.parent / loc, cid, row["split"], row["utt_id"])
        if sample_rate is not None and u.sample_rate != sample_rate:
            raise DataError(f"{row['utt_id']}: sample rate {u.sample_rate} != configured {sample_rate}")
        utts.append(u)
    trials = []
    tpath = path.parent / "trials.csv"
    if tpath.exists():
        with open(tpath, newline="") as fh:
            for row in csv.DictReader(fh):
                trials.append(Trial(int(row["enroll_class"]), row["utt_id"], bool(int(row["is_target"]))))
    n_classes = max(u.class_id for u in utts) + 1
    return Corpus(utts, trials, n_classes)
