"""WAV ingestion and the fixed 128-band log-Mel frontend.

All pipeline audio is mono at 44.1 kHz. Every 1-second clip maps to a
128x87 matrix: STFT (FFT 2048, hop 512, periodic Hann, reflect-centered),
power spectrum through a Slaney-style area-normalized Mel filterbank,
dB relative to the clip maximum floored at -80 dB, then min-max rescaled
to [0, 1]. A silent (constant) matrix rescales to all zeros.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft
from scipy import signal
from scipy.io import wavfile

from .errors import DataError, DimensionError

SAMPLE_RATE = 44100
N_FFT = 2048
HOP_LENGTH = 512
N_MELS = 128
N_FRAMES = 87
DB_FLOOR = -80.0
MIN_SOURCE_RATE = 8000
_RESAMPLE_TAPS_PER_PHASE = 64
_KAISER_BETA = 8.6


@dataclass
class Waveform:
    """Mono audio: float32 samples in [-1, 1] plus a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        self.sample_rate = int(self.sample_rate)
        if self.sample_rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class MelSpectrogram:
    """128x87 log-Mel matrix normalized to [0, 1]."""

    values: np.ndarray
    normalization: str = "db-minmax"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.shape != (N_MELS, N_FRAMES):
            raise DimensionError(
                f"mel spectrogram must be {N_MELS}x{N_FRAMES}, got {self.values.shape}"
            )


# ---- WAV I/O ---------------------------------------------------------------


def load_wav(path: str | Path) -> Waveform:
    """Read a RIFF/WAVE file (PCM16 or float32, 1-2 channels) as mono.

    Stereo channels are averaged; integer PCM is scaled to [-1, 1] by
    1/32768; float samples are clamped to [-1, 1].
    """
    path = Path(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as e:
        raise DataError(f"{path}: malformed WAV file ({e})") from e
    if data.size == 0:
        raise DataError(f"{path}: zero-length audio")
    if data.ndim == 2:
        if data.shape[1] > 2:
            raise DataError(f"{path}: {data.shape[1]} channels, only mono/stereo supported")
        data = data.astype(np.float64).mean(axis=1)
    elif data.ndim != 1:
        raise DataError(f"{path}: unsupported WAV layout")
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = np.clip(data, -1.0, 1.0).astype(np.float32)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype} (want PCM16 or float32)")
    return Waveform(samples=samples, sample_rate=rate)


def write_wav(path: str | Path, w: Waveform, fmt: str = "pcm16") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    clipped = np.clip(w.samples, -1.0, 1.0)
    if fmt == "pcm16":
        data = np.round(clipped * 32767.0).astype(np.int16)
    elif fmt == "float32":
        data = clipped.astype(np.float32)
    else:
        raise DataError(f"unsupported WAV format {fmt!r}")
    wavfile.write(str(path), w.sample_rate, data)


def ingest_wav(path: str | Path) -> Waveform:
    """Load and bring to the pipeline rate (44.1 kHz mono)."""
    return resample_to_44100(load_wav(path))


# ---- rate conversion ---------------------------------------------------------


def _resample_filter(up: int, down: int) -> np.ndarray:
    n = _RESAMPLE_TAPS_PER_PHASE * up
    if n % 2 == 0:
        n += 1
    m = np.arange(n) - (n - 1) / 2
    f = min(1.0 / up, 1.0 / down)  # cutoff relative to the upsampled Nyquist
    h = f * np.sinc(f * m)
    h *= np.kaiser(n, _KAISER_BETA)
    return h / h.sum()


def resample_to_44100(w: Waveform) -> Waveform:
    """Polyphase windowed-sinc resampling to 44.1 kHz.

    Duration is preserved to within one sample period. Input already at
    44.1 kHz is returned unchanged.
    """
    if w.sample_rate == SAMPLE_RATE:
        return w
    if w.sample_rate < MIN_SOURCE_RATE:
        raise DataError(
            f"sample rate {w.sample_rate} below the supported minimum {MIN_SOURCE_RATE}"
        )
    g = math.gcd(SAMPLE_RATE, w.sample_rate)
    up, down = SAMPLE_RATE // g, w.sample_rate // g
    out = signal.resample_poly(w.samples.astype(np.float64), up, down, window=_resample_filter(up, down))
    return Waveform(samples=out.astype(np.float32), sample_rate=SAMPLE_RATE)


# ---- clip shaping ------------------------------------------------------------


def fit_to_one_second(w: Waveform) -> Waveform:
    """Pad with trailing zeros or truncate to exactly one second."""
    n = w.sample_rate
    if len(w.samples) == n:
        return w
    if len(w.samples) > n:
        return Waveform(samples=w.samples[:n].copy(), sample_rate=w.sample_rate)
    padded = np.zeros(n, dtype=np.float32)
    padded[: len(w.samples)] = w.samples
    return Waveform(samples=padded, sample_rate=w.sample_rate)


def chunk_clip(w: Waveform, chunk_seconds: float = 1.0) -> list[Waveform]:
    """Split into consecutive non-overlapping chunks; the remainder is dropped."""
    n = int(round(chunk_seconds * w.sample_rate))
    count = len(w.samples) // n
    if count == 0:
        raise DataError(
            f"clip of {len(w.samples)} samples is shorter than one {chunk_seconds}s chunk"
        )
    return [
        Waveform(samples=w.samples[i * n : (i + 1) * n].copy(), sample_rate=w.sample_rate)
        for i in range(count)
    ]


# ---- Mel frontend ----------------------------------------------------------


def _hz_to_mel(hz):
    hz = np.asarray(hz, dtype=np.float64)
    mel = hz * 3.0 / 200.0
    log_region = hz >= 1000.0
    mel = np.where(log_region, 15.0 + 27.0 * np.log(np.maximum(hz, 1e-12) / 1000.0) / np.log(6.4), mel)
    return mel


def _mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    hz = mel * 200.0 / 3.0
    log_region = mel >= 15.0
    return np.where(log_region, 1000.0 * np.exp(np.log(6.4) * (mel - 15.0) / 27.0), hz)


_FILTERBANK_CACHE: dict[tuple[int, int, int], np.ndarray] = {}


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular area-normalized filters, [n_mels, n_fft//2 + 1]."""
    key = (n_mels, n_fft, sample_rate)
    cached = _FILTERBANK_CACHE.get(key)
    if cached is not None:
        return cached
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    mel_points = np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_points = _mel_to_hz(mel_points)
    fb = np.zeros((n_mels, len(fft_freqs)))
    for i in range(n_mels):
        lo, center, hi = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        rising = (fft_freqs - lo) / (center - lo)
        falling = (hi - fft_freqs) / (hi - center)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
        fb[i] *= 2.0 / (hi - lo)  # area normalization
    fb = fb.astype(np.float32)
    _FILTERBANK_CACHE[key] = fb
    return fb


def filter_center_frequencies(n_mels: int = N_MELS, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    mel_points = np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0), n_mels + 2)
    return _mel_to_hz(mel_points)[1:-1]


_HANN = None


def _hann_periodic(n: int) -> np.ndarray:
    global _HANN
    if _HANN is None or len(_HANN) != n:
        _HANN = (0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)).astype(np.float32)
    return _HANN


def _check_one_second(w: Waveform) -> None:
    if w.sample_rate != SAMPLE_RATE or len(w.samples) != SAMPLE_RATE:
        raise DimensionError(
            f"expected exactly {SAMPLE_RATE} samples at {SAMPLE_RATE} Hz, "
            f"got {len(w.samples)} at {w.sample_rate}"
        )


def mel_power(w: Waveform) -> np.ndarray:
    """Pre-normalization Mel energies, [128, 87]."""
    _check_one_second(w)
    pad = N_FFT // 2
    x = np.pad(w.samples.astype(np.float32), pad, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(x, N_FFT)[::HOP_LENGTH]
    spec = scipy.fft.rfft(frames * _hann_periodic(N_FFT), axis=1)  # float32 in, complex64 out
    power = spec.real**2 + spec.imag**2
    mel = mel_filterbank() @ power.T
    if mel.shape != (N_MELS, N_FRAMES):
        raise DimensionError(f"frame-count law violated: got {mel.shape[1]} frames")
    return mel


def mel_spectrogram(w: Waveform) -> MelSpectrogram:
    """The 128x87 normalized log-Mel representation of a 1-second clip."""
    mel = mel_power(w)
    ref = float(mel.max())
    if ref <= 0.0:
        return MelSpectrogram(values=np.zeros((N_MELS, N_FRAMES), dtype=np.float32))
    floor = ref * 10.0 ** (DB_FLOOR / 10.0)
    db = 10.0 * np.log10(np.maximum(mel, floor)) - 10.0 * math.log10(ref)
    lo, hi = float(db.min()), float(db.max())
    if hi - lo < 1e-9:
        # constant matrix: the 0/0 rescale is defined as silence
        return MelSpectrogram(values=np.zeros((N_MELS, N_FRAMES), dtype=np.float32))
    values = ((db - lo) / (hi - lo)).astype(np.float32)
    return MelSpectrogram(values=values)
