"""Audio-to-network-input conversion and DoA likelihood encoding.

STFT uses a 32 ms Hann window with 20 ms hop at 16 kHz (512/320
samples, K = 257 bins). Azimuth likelihoods live on a 180-point grid
over [0, 180) degrees with a 16 degree Gaussian beam.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acoustics import MultichannelAudio

WINDOW_SAMPLES = 512
HOP_SAMPLES = 320
NUM_BINS = WINDOW_SAMPLES // 2 + 1  # 257
GRID_SIZE = 180
SIGMA_DEG = 16.0
VAD_THRESHOLD = 0.3


@dataclass
class Spectrogram:
    values: np.ndarray  # complex [M, K, L]
    sample_rate: int

    @property
    def num_frames(self):
        return self.values.shape[2]


@dataclass
class DoaTrack:
    azimuth_rad: np.ndarray  # [L], meaningful only where active
    active: np.ndarray  # [L] bool

    def __post_init__(self):
        self.azimuth_rad = np.asarray(self.azimuth_rad, dtype=float)
        self.active = np.asarray(self.active, dtype=bool)
        if self.azimuth_rad.shape != self.active.shape:
            raise ValueError("azimuth and activity lengths differ")

    def __len__(self):
        return len(self.active)


def num_frames(num_samples: int) -> int:
    if num_samples < WINDOW_SAMPLES:
        raise ValueError(f"need at least {WINDOW_SAMPLES} samples, got {num_samples}")
    return (num_samples - WINDOW_SAMPLES) // HOP_SAMPLES + 1


def frame_signal(x: np.ndarray) -> np.ndarray:
    """[.., S] -> [.., L, 512] frames, hop 320, no padding."""
    l = num_frames(x.shape[-1])
    idx = np.arange(WINDOW_SAMPLES)[None, :] + HOP_SAMPLES * np.arange(l)[:, None]
    return x[..., idx]


def stft(audio: MultichannelAudio) -> Spectrogram:
    if audio.sample_rate != 16000:
        raise ValueError(f"expected 16 kHz audio, got {audio.sample_rate}")
    frames = frame_signal(audio.samples)  # [M, L, 512]
    window = np.hanning(WINDOW_SAMPLES + 1)[:WINDOW_SAMPLES]
    spec = np.fft.rfft(frames * window[None, None, :], axis=-1)  # [M, L, K]
    return Spectrogram(values=spec.transpose(0, 2, 1), sample_rate=audio.sample_rate)


def stack_reim(spec: Spectrogram) -> np.ndarray:
    """[M, K, L] complex -> [2M, K, L] real: real parts then imaginary parts."""
    return np.concatenate([spec.values.real, spec.values.imag], axis=0)


def unstack_reim(x: np.ndarray) -> np.ndarray:
    m2 = x.shape[0]
    m = m2 // 2
    return x[:m] + 1j * x[m:]


def energy_vad(audio: MultichannelAudio, threshold: float = VAD_THRESHOLD,
               reference_channel: int = 0) -> np.ndarray:
    """Frame active iff reference-channel RMS exceeds threshold * median RMS."""
    frames = frame_signal(audio.samples[reference_channel])
    rms = np.sqrt(np.mean(frames**2, axis=-1))
    return rms > threshold * np.median(rms)


def grid_deg() -> np.ndarray:
    return np.arange(GRID_SIZE, dtype=float)


def encode_likelihood(track: DoaTrack) -> np.ndarray:
    """Gaussian-bump encoding of a DoA track, [L, 180] in [0, 1].

    Distances are plain degree differences on the linear grid (no wrap);
    inactive frames are all-zero rows.
    """
    az_deg = np.rad2deg(track.azimuth_rad)
    if np.any(track.active & ((az_deg < 0) | (az_deg >= 180.0))):
        raise ValueError("active azimuths must lie in [0, 180) degrees")
    diff = grid_deg()[None, :] - az_deg[:, None]
    out = np.exp(-(diff**2) / (2.0 * SIGMA_DEG**2))
    out[~track.active] = 0.0
    return out


def decode_peak(likelihood: np.ndarray, active: np.ndarray) -> DoaTrack:
    """Per-frame argmax over the azimuth grid; lowest index wins ties."""
    likelihood = np.asarray(likelihood)
    active = np.asarray(active, dtype=bool)
    if likelihood.shape[0] != active.shape[0]:
        raise ValueError("likelihood and activity lengths differ")
    idx = likelihood.argmax(axis=1)
    az = np.deg2rad(idx.astype(float))
    az[~active] = 0.0
    return DoaTrack(azimuth_rad=az, active=active)


def track_from_trajectory(traj_azimuths: np.ndarray, sample_activity: np.ndarray) -> DoaTrack:
    """Per-frame ground truth from per-sample azimuths and activity.

    Azimuth is read at the frame center sample; a frame counts as active
    if more than half of its samples are active.
    """
    l = num_frames(len(traj_azimuths))
    starts = HOP_SAMPLES * np.arange(l)
    centers = starts + WINDOW_SAMPLES // 2
    az = traj_azimuths[centers]
    frames = frame_signal(sample_activity.astype(float))
    active = frames.mean(axis=-1) > 0.5
    return DoaTrack(azimuth_rad=az, active=active)
