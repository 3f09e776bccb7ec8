"""WAV decoding and the 40x98 MFCC frontend.

Per frame: periodic Hann window, 512-point real FFT, power spectrum, 40
triangular HTK-mel filters (20 Hz to 8 kHz), ``log(power + 1e-6)`` and an
orthonormal DCT-II keeping all 40 coefficients. Frames are not centred:
frame ``i`` covers samples ``[160 i, 160 i + 480)``, giving 98 frames per
second of 16 kHz audio.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
CLIP_SAMPLES = 16000
CACHE_MAGIC = b"KWMFCC01"


class WavFormatError(ValueError):
    """The file is a valid RIFF/WAVE container but not PCM16 mono 16 kHz."""


class WavParseError(ValueError):
    """The file is not RIFF/WAVE or is truncated."""


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class MfccConfig:
    sample_rate: int = SAMPLE_RATE
    window_length: int = 480
    hop_length: int = 160
    fft_size: int = 512
    n_mels: int = 40
    n_mfcc: int = 40
    fmin: float = 20.0
    fmax: float = 8000.0
    log_floor: float = 1e-6

    def __post_init__(self):
        if self.fft_size < self.window_length:
            raise ValueError(f"fft_size {self.fft_size} < window_length {self.window_length}")
        if self.n_mfcc > self.n_mels:
            raise ValueError(f"n_mfcc {self.n_mfcc} > n_mels {self.n_mels}")
        if not 0 < self.hop_length < self.window_length:
            raise ValueError(f"hop_length {self.hop_length} must be in (0, window_length)")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ValueError(f"bad mel range [{self.fmin}, {self.fmax}]")

    @property
    def num_frames(self) -> int:
        return 1 + (CLIP_SAMPLES - self.window_length) // self.hop_length


# ----------------------------------------------------------------------------
# WAV


def load_wav(path) -> AudioClip:
    """Read a PCM16 mono 16 kHz WAV file into floats in [-1, 1)."""
    raw = Path(path).read_bytes()
    return parse_wav(raw, name=str(path))


def parse_wav(raw: bytes, name: str = "<bytes>") -> AudioClip:
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavParseError(f"{name}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos < len(raw):
        if pos + 8 > len(raw):
            raise WavParseError(f"{name}: truncated chunk header at byte {pos}")
        cid, size = struct.unpack_from("<4sI", raw, pos)
        body = raw[pos + 8: pos + 8 + size]
        if len(body) < size:
            raise WavParseError(f"{name}: chunk {cid!r} truncated ({len(body)} of {size} bytes)")
        if cid == b"fmt ":
            if size < 16:
                raise WavParseError(f"{name}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise WavParseError(f"{name}: missing fmt chunk")
    if data is None:
        raise WavParseError(f"{name}: missing data chunk")
    encoding, channels, rate, _, _, bits = fmt
    if encoding != 1:
        raise WavFormatError(f"{name}: audio_format={encoding}, expected 1 (PCM)")
    if channels != 1:
        raise WavFormatError(f"{name}: channels={channels}, expected 1")
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"{name}: sample_rate={rate}, expected {SAMPLE_RATE}")
    if bits != 16:
        raise WavFormatError(f"{name}: bits_per_sample={bits}, expected 16")
    if len(data) % 2:
        raise WavParseError(f"{name}: odd number of bytes in PCM16 data")
    pcm = np.frombuffer(data, dtype="<i2")
    return AudioClip(pcm.astype(np.float32) / np.float32(32768.0), rate)


def save_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """Write float samples in [-1, 1] as PCM16 mono."""
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    pcm = pcm.astype("<i2").tobytes()
    header = struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(pcm), b"WAVE",
                         b"fmt ", 16, 1, 1, sample_rate, sample_rate * 2, 2, 16,
                         b"data", len(pcm))
    Path(path).write_bytes(header + pcm)


def pad_or_trim(clip: AudioClip, length: int = CLIP_SAMPLES) -> AudioClip:
    s = clip.samples
    if len(s) >= length:
        return AudioClip(s[:length].copy(), clip.sample_rate)
    out = np.zeros(length, dtype=s.dtype if s.dtype.kind == "f" else np.float32)
    out[: len(s)] = s
    return AudioClip(out, clip.sample_rate)


# ----------------------------------------------------------------------------
# MFCC


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: MfccConfig) -> np.ndarray:
    """``n_mels + 2`` frequencies in Hz; filter k rises from edge k, peaks at
    edge k+1 and falls to zero at edge k+2."""
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return mel_to_hz(mels)


@lru_cache(maxsize=8)
def mel_filterbank(cfg: MfccConfig) -> np.ndarray:
    edges = mel_band_edges(cfg)
    freqs = np.arange(cfg.fft_size // 2 + 1) * cfg.sample_rate / cfg.fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


@lru_cache(maxsize=8)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II as an ``n x n`` matrix; its inverse is the transpose."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.sqrt(2.0 / n) * np.cos(np.pi * k * (2 * i + 1) / (2 * n))
    m[0] /= np.sqrt(2.0)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=8)
def hann_window(n: int) -> np.ndarray:
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    w.setflags(write=False)
    return w


def frame_signal(samples: np.ndarray, cfg: MfccConfig) -> np.ndarray:
    n = cfg.num_frames
    idx = np.arange(n)[:, None] * cfg.hop_length + np.arange(cfg.window_length)[None, :]
    return np.asarray(samples, dtype=np.float64)[idx]


def power_spectrum(frames: np.ndarray, fft_size: int) -> np.ndarray:
    spec = np.fft.rfft(frames, n=fft_size, axis=-1)
    return spec.real ** 2 + spec.imag ** 2


def log_mel(clip: AudioClip, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """Log mel energies, shape ``(n_mels, frames)``."""
    if clip.sample_rate != cfg.sample_rate:
        raise WavFormatError(f"sample_rate={clip.sample_rate}, expected {cfg.sample_rate}")
    if len(clip.samples) != CLIP_SAMPLES:
        raise ValueError(f"compute_mfcc needs {CLIP_SAMPLES} samples, got {len(clip.samples)}; use pad_or_trim")
    frames = frame_signal(clip.samples, cfg) * hann_window(cfg.window_length)
    power = power_spectrum(frames, cfg.fft_size)
    return np.log(power @ mel_filterbank(cfg).T + cfg.log_floor).T


def compute_mfcc(clip: AudioClip, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """MFCC matrix of shape ``(n_mfcc, frames)`` = (40, 98), float32."""
    lm = log_mel(clip, cfg)
    coeffs = dct_matrix(cfg.n_mels)[: cfg.n_mfcc] @ lm
    return coeffs.astype(np.float32)


def wav_to_mfcc(path, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    return compute_mfcc(pad_or_trim(load_wav(path)), cfg)


# ----------------------------------------------------------------------------
# feature cache blobs: magic + little-endian f32 (n_mfcc x frames)


def write_feature_cache(path, mfcc: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(CACHE_MAGIC + np.ascontiguousarray(mfcc, dtype="<f4").tobytes())
    tmp.replace(path)


def read_feature_cache(path, shape: tuple[int, int] = (40, 98)) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != CACHE_MAGIC:
        raise ValueError(f"{path}: bad feature-cache magic {raw[:8]!r}")
    expected = 8 + 4 * shape[0] * shape[1]
    if len(raw) != expected:
        raise ValueError(f"{path}: feature cache is {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype="<f4", offset=8).reshape(shape).astype(np.float32)
