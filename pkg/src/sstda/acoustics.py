"""Synthetic acoustic scene generation.

Shoe-box image-source simulation of moving sources recorded by a small
circular microphone array, spatially coherent diffuse noise, and a
randomized scene sampler. Everything is deterministic given the
configuration and a seed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, fftconvolve, lfilter

SOUND_SPEED = 343.0
SAMPLE_RATE = 16000
SINC_HALF_TAPS = 40  # 81-tap Hann-windowed sinc interpolation


class ConfigurationError(ValueError):
    """Raised when a sampler configuration cannot produce a valid scene."""


@dataclass
class RoomSpec:
    dimensions: tuple[float, float, float]  # length, width, height [m]
    rt60: float
    sound_speed: float = SOUND_SPEED

    def __post_init__(self):
        if any(d <= 0 for d in self.dimensions):
            raise ValueError(f"room dimensions must be positive, got {self.dimensions}")
        if self.rt60 < 0:
            raise ValueError("rt60 must be >= 0")

    @property
    def volume(self):
        lx, ly, lz = self.dimensions
        return lx * ly * lz

    @property
    def surface(self):
        lx, ly, lz = self.dimensions
        return 2.0 * (lx * ly + lx * lz + ly * lz)

    def contains(self, point, margin=0.0):
        return all(margin < p < d - margin for p, d in zip(point, self.dimensions))


@dataclass
class MicArray:
    positions: np.ndarray  # [M, 3], relative to origin
    origin: np.ndarray  # [3], room coordinates of the array center

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.origin = np.asarray(self.origin, dtype=float)
        if self.positions.shape[0] < 2:
            raise ValueError("array needs at least 2 microphones")

    @property
    def num_channels(self):
        return self.positions.shape[0]

    def absolute_positions(self):
        return self.positions + self.origin[None, :]


def circular_array_9ch(origin=(0.0, 0.0, 0.0), radius=0.03) -> MicArray:
    """8-channel uniform circle of the given radius plus a center mic."""
    angles = 2.0 * np.pi * np.arange(8) / 8.0
    ring = np.stack([radius * np.cos(angles), radius * np.sin(angles), np.zeros(8)], axis=1)
    positions = np.vstack([np.zeros((1, 3)), ring])
    return MicArray(positions=positions, origin=np.asarray(origin, dtype=float))


@dataclass
class Trajectory:
    positions: np.ndarray  # [S, 3], one source position per audio sample
    duration_s: float

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)

    def azimuths(self, array: MicArray) -> np.ndarray:
        rel = self.positions - array.origin[None, :]
        return np.arctan2(rel[:, 1], rel[:, 0])


@dataclass
class MultichannelAudio:
    samples: np.ndarray  # [M, S]
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))

    @property
    def num_channels(self):
        return self.samples.shape[0]

    @property
    def num_samples(self):
        return self.samples.shape[1]


@dataclass
class DomainSamplerConfig:
    room_min: tuple[float, float, float] = (3.0, 3.0, 2.5)
    room_max: tuple[float, float, float] = (10.0, 8.0, 6.0)
    rt60_range: tuple[float, float] = (0.2, 1.0)
    snr_range_db: tuple[float, float] = (-10.0, 15.0)
    noise_model: str = "spherical-isotropic"  # or "spatially-white"
    coverage_deg: tuple[float, float] = (0.0, 180.0)  # azimuth interval, subset of [0, 180)
    duration_range_s: tuple[float, float] = (2.0, 10.0)
    wall_margin: float = 0.5  # array placement margin
    source_margin: float = 0.3
    max_order: int = 12
    block_ms: float = 50.0
    seed: int = 0

    def __post_init__(self):
        for lo, hi, name in [
            (self.rt60_range[0], self.rt60_range[1], "rt60_range"),
            (self.snr_range_db[0], self.snr_range_db[1], "snr_range_db"),
            (self.coverage_deg[0], self.coverage_deg[1], "coverage_deg"),
            (self.duration_range_s[0], self.duration_range_s[1], "duration_range_s"),
        ]:
            if lo > hi:
                raise ConfigurationError(f"{name}: min {lo} > max {hi}")
        if any(a > b for a, b in zip(self.room_min, self.room_max)):
            raise ConfigurationError("room_min exceeds room_max")
        if not (0.0 <= self.coverage_deg[0] and self.coverage_deg[1] <= 180.0):
            raise ConfigurationError("coverage interval must lie within [0, 180] degrees")
        if self.noise_model not in ("spherical-isotropic", "spatially-white"):
            raise ConfigurationError(f"unknown noise model {self.noise_model!r}")


def rt60_to_absorption(room: RoomSpec) -> float:
    """Uniform wall absorption from Sabine's formula, clamped to (0, 1]."""
    if room.rt60 <= 0:
        raise ValueError("rt60_to_absorption requires rt60 > 0")
    alpha = 0.161 * room.volume / (room.surface * room.rt60)
    if alpha > 1.0:
        warnings.warn(
            f"rt60={room.rt60}s implies absorption {alpha:.3f} > 1; clamping to 1",
            stacklevel=2,
        )
        alpha = 1.0
    return alpha


def _axis_images(extent, coord, max_order):
    """Image coordinates and bounce counts along one axis, bounces <= max_order."""
    coords, bounces = [], []
    m_max = max_order // 2 + 1
    for m in range(-m_max, m_max + 1):
        for q, b in ((0, abs(2 * m)), (1, abs(2 * m - 1))):
            if b <= max_order:
                coords.append(2.0 * m * extent + (coord if q == 0 else -coord))
                bounces.append(b)
    return np.array(coords), np.array(bounces)


def image_sources(room: RoomSpec, source, max_order: int):
    """All image-source positions with total reflection count <= max_order.

    Returns (positions [P, 3], orders [P]).
    """
    axes = [_axis_images(room.dimensions[i], source[i], max_order) for i in range(3)]
    cx, bx = axes[0]
    cy, by = axes[1]
    cz, bz = axes[2]
    total = bx[:, None, None] + by[None, :, None] + bz[None, None, :]
    keep = total <= max_order
    ix, iy, iz = np.nonzero(keep)
    positions = np.stack([cx[ix], cy[iy], cz[iz]], axis=1)
    return positions, total[keep]


def simulate_rir(room: RoomSpec, source, mic, max_order: int, length_samples: int,
                 sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Image-source room impulse response at one microphone.

    Each image of order n contributes amplitude (1-alpha)^(n/2) / (4 pi d)
    at delay d/c, placed with an 81-tap Hann-windowed sinc kernel.
    """
    source = np.asarray(source, dtype=float)
    mic = np.asarray(mic, dtype=float)
    if np.allclose(source, mic):
        raise ValueError("source and microphone positions coincide")
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    if room.rt60 > 0:
        alpha = rt60_to_absorption(room)
    else:
        alpha = 1.0
    beta = np.sqrt(max(0.0, 1.0 - alpha))
    positions, orders = image_sources(room, source, max_order)
    dists = np.linalg.norm(positions - mic[None, :], axis=1)
    direct = np.linalg.norm(source - mic)
    if direct / room.sound_speed * sample_rate >= length_samples:
        raise ValueError("length_samples too short to contain the direct path")
    amps = beta**orders / (4.0 * np.pi * dists)
    delays = dists / room.sound_speed * sample_rate
    return _place_pulses(amps, delays, length_samples)


def _place_pulses(amps, delays, length_samples):
    rir = np.zeros(length_samples)
    offsets = np.arange(-SINC_HALF_TAPS, SINC_HALF_TAPS + 1)
    base = np.floor(delays).astype(int)
    taps = base[:, None] + offsets[None, :]  # [P, 81]
    frac = taps - delays[:, None]
    window = np.where(np.abs(frac) <= SINC_HALF_TAPS,
                      0.5 * (1.0 + np.cos(np.pi * frac / SINC_HALF_TAPS)), 0.0)
    values = amps[:, None] * np.sinc(frac) * window
    valid = (taps >= 0) & (taps < length_samples)
    np.add.at(rir, taps[valid], values[valid])
    return rir


def default_max_order(room: RoomSpec, cap: int = 12) -> int:
    """Smallest order whose per-axis image distance exceeds c * rt60, capped."""
    if room.rt60 <= 0:
        return 0
    reach = room.sound_speed * room.rt60
    order = int(np.ceil(reach / (2.0 * min(room.dimensions))))
    return min(max(order, 1), cap)


def render_moving_source(dry: np.ndarray, traj: Trajectory, room: RoomSpec,
                         array: MicArray, block_ms: float = 50.0,
                         max_order: int | None = None,
                         sample_rate: int = SAMPLE_RATE) -> MultichannelAudio:
    """Convolve a dry mono signal with block-wise RIRs along the trajectory.

    The trajectory is split into blocks; per block one RIR per microphone
    at the block-center position; block outputs are cross-faded with
    linear ramps centered on the block centers.
    """
    dry = np.asarray(dry, dtype=float)
    n = dry.shape[0]
    if n != traj.positions.shape[0]:
        raise ValueError("dry signal length does not match trajectory length")
    if block_ms <= 0:
        raise ValueError("block_ms must be positive")
    if max_order is None:
        max_order = default_max_order(room)
    block = max(1, int(round(block_ms * sample_rate / 1000.0)))
    n_blocks = max(1, int(np.ceil(n / block)))
    rir_len = max(int(np.ceil(room.rt60 * sample_rate)) + 2 * SINC_HALF_TAPS + 1, 1024)
    mics = array.absolute_positions()
    m = mics.shape[0]
    centers = np.minimum((np.arange(n_blocks) + 0.5) * block, n - 1).astype(int)

    out = np.zeros((m, n))
    for b in range(n_blocks):
        pos = traj.positions[centers[b]]
        rirs = np.stack([
            simulate_rir(room, pos, mics[ch], max_order, rir_len, sample_rate)
            for ch in range(m)
        ])
        wet = fftconvolve(dry[None, :], rirs, axes=1)[:, :n]
        w = _block_window(n, b, n_blocks, block)
        out += wet * w[None, :]
    return MultichannelAudio(samples=out, sample_rate=sample_rate)


def _block_window(n, b, n_blocks, block):
    """Linear cross-fade weight for block b; the windows sum to one."""
    t = np.arange(n)
    c = (b + 0.5) * block
    w = np.zeros(n)
    if b > 0:
        left = (b - 0.5) * block
        rising = (t >= left) & (t < c)
        w[rising] = (t[rising] - left) / block
    else:
        w[t < c] = 1.0
    if b < n_blocks - 1:
        right = (b + 1.5) * block
        falling = (t >= c) & (t < right)
        w[falling] = 1.0 - (t[falling] - c) / block
    else:
        w[t >= c] = 1.0
    return w


def coherence_matrix(array: MicArray, freq_hz: float, sound_speed: float = SOUND_SPEED) -> np.ndarray:
    """Spherically isotropic target coherence sinc(2 pi f d / c) between mics."""
    pos = array.positions
    d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
    return np.sinc(2.0 * freq_hz * d / sound_speed)


def generate_diffuse_noise(array: MicArray, num_samples: int, sample_rate: int = SAMPLE_RATE,
                           model: str = "spherical-isotropic", seed: int = 0,
                           tilt_hz: float | None = None) -> MultichannelAudio:
    """Multichannel noise with a target spatial coherence.

    spherical-isotropic: independent white noise is mixed per STFT
    frequency with a square root (eigen factorization) of the sinc
    coherence matrix. spatially-white: independent channels.
    """
    if num_samples <= 0:
        raise ValueError("num_samples must be positive")
    rng = np.random.default_rng(seed)
    m = array.num_channels
    if model == "spatially-white":
        data = rng.standard_normal((m, num_samples))
        return MultichannelAudio(samples=data, sample_rate=sample_rate)
    if model != "spherical-isotropic":
        raise ValueError(f"unknown coherence model {model!r}")

    nfft = 1024
    hop = nfft // 2
    win = np.hanning(nfft + 1)[:nfft]
    n_frames = int(np.ceil(num_samples / hop)) + 2
    padded = n_frames * hop + nfft
    white = rng.standard_normal((m, padded))
    frames = np.stack([
        np.fft.rfft(white[:, i * hop : i * hop + nfft] * win[None, :], axis=1)
        for i in range(n_frames)
    ], axis=2)  # [M, K, L]
    freqs = np.fft.rfftfreq(nfft, d=1.0 / sample_rate)

    mixed = np.empty_like(frames)
    for k, f in enumerate(freqs):
        gamma = coherence_matrix(array, f)
        vals, vecs = np.linalg.eigh(gamma + 1e-12 * np.eye(m))
        if vals.min() < -1e-8:
            raise ValueError(f"target coherence matrix not PSD at {f:.0f} Hz")
        root = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
        mixed[:, k, :] = np.einsum("ij,jl->il", root, frames[:, k, :])

    if tilt_hz is not None:
        gain = 1.0 / np.sqrt(1.0 + (freqs / tilt_hz) ** 2)
        mixed *= gain[None, :, None]

    out = np.zeros((m, padded))
    for i in range(n_frames):
        out[:, i * hop : i * hop + nfft] += np.fft.irfft(mixed[:, :, i], n=nfft, axis=1)
    # drop the first frame's partial overlap region to keep statistics stationary
    return MultichannelAudio(samples=out[:, nfft : nfft + num_samples], sample_rate=sample_rate)


def mix_at_snr(speech: MultichannelAudio, noise: MultichannelAudio, snr_db: float,
               active_mask: np.ndarray | None = None) -> MultichannelAudio:
    """Add noise scaled so the active-region speech-to-noise ratio is snr_db."""
    if speech.num_channels != noise.num_channels:
        raise ValueError("channel count mismatch")
    if speech.num_samples != noise.num_samples:
        raise ValueError("length mismatch")
    if speech.sample_rate != noise.sample_rate:
        raise ValueError("sample rate mismatch")
    if active_mask is None:
        active_mask = np.ones(speech.num_samples, dtype=bool)
    active = np.asarray(active_mask, dtype=bool)
    sp = speech.samples[:, active]
    if sp.size == 0 or not np.any(sp):
        raise ValueError("zero speech power over active samples")
    p_speech = np.mean(sp**2)
    p_noise = np.mean(noise.samples[:, active] ** 2)
    if p_noise <= 0:
        raise ValueError("zero noise power")
    scale = np.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0)))
    return MultichannelAudio(samples=speech.samples + scale * noise.samples,
                             sample_rate=speech.sample_rate)


def synth_speech_like(rng: np.random.Generator, duration_s: float,
                      sample_rate: int = SAMPLE_RATE) -> tuple[np.ndarray, np.ndarray]:
    """Speech-like excitation: filtered noise, syllabic AM, randomized pauses.

    Returns (signal, sample_activity_mask). Pauses are exact zeros so the
    energy VAD sees clean on/off structure.
    """
    n = int(round(duration_s * sample_rate))
    carrier = rng.standard_normal(n)
    b, a = butter(4, 3400.0 / (sample_rate / 2.0), btype="low")
    carrier = lfilter(b, a, carrier)
    # syllabic 3-8 Hz amplitude modulation
    knots = max(3, int(duration_s * 5) + 1)
    env = np.interp(np.linspace(0, 1, n), np.linspace(0, 1, knots),
                    0.25 + rng.random(knots))
    # alternate speech bursts and silent pauses
    mask = np.zeros(n, dtype=bool)
    pos = 0
    speaking = True
    while pos < n:
        if speaking:
            seg = int(rng.uniform(0.4, 1.2) * sample_rate)
            mask[pos : pos + seg] = True
        else:
            seg = int(rng.uniform(0.15, 0.5) * sample_rate)
        pos += seg
        speaking = not speaking
    if not mask.any():
        mask[:] = True
    sig = carrier * env * mask
    rms = np.sqrt(np.mean(sig[mask] ** 2))
    if rms > 0:
        sig /= rms
    return sig, mask


@dataclass
class Scene:
    room: RoomSpec
    array: MicArray
    trajectory: Trajectory
    snr_db: float
    duration_s: float


def sample_scene(cfg: DomainSamplerConfig, seed: int, max_tries: int = 200) -> Scene:
    """Draw one randomized scene; identical (cfg, seed) gives identical output."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, seed & 0xFFFFFFFFFFFFFFFF]))
    dims = tuple(rng.uniform(lo, hi) for lo, hi in zip(cfg.room_min, cfg.room_max))
    rt60 = float(rng.uniform(*cfg.rt60_range))
    snr_db = float(rng.uniform(*cfg.snr_range_db))
    duration_s = float(rng.uniform(*cfg.duration_range_s))
    room = RoomSpec(dimensions=dims, rt60=rt60)

    margin = min(cfg.wall_margin, min(dims) / 2.5)
    origin = np.array([rng.uniform(margin, d - margin) for d in dims])
    array = circular_array_9ch(origin=origin)

    lo, hi = np.deg2rad(cfg.coverage_deg[0]), np.deg2rad(min(cfg.coverage_deg[1], 179.999))
    n_way = int(rng.integers(2, 5))
    waypoints = []
    for _ in range(n_way):
        for attempt in range(max_tries):
            theta = rng.uniform(lo, hi)
            direction = np.array([np.cos(theta), np.sin(theta), 0.0])
            r_max = _max_radius(room, origin, direction, cfg.source_margin)
            if r_max > 0.4:
                r = rng.uniform(0.4, r_max)
                waypoints.append(origin + r * direction)
                break
        else:
            raise ConfigurationError(
                "could not place a source waypoint inside the room; "
                "coverage interval or margins are geometrically infeasible"
            )
    n = int(round(duration_s * SAMPLE_RATE))
    knots = np.linspace(0, n - 1, n_way)
    t = np.arange(n)
    waypoints = np.asarray(waypoints)
    positions = np.stack([np.interp(t, knots, waypoints[:, i]) for i in range(3)], axis=1)
    traj = Trajectory(positions=positions, duration_s=duration_s)
    return Scene(room=room, array=array, trajectory=traj, snr_db=snr_db, duration_s=duration_s)


def _max_radius(room: RoomSpec, origin, direction, margin):
    """Distance from origin to the margin-shrunk walls along direction."""
    r = np.inf
    for i in range(3):
        if abs(direction[i]) < 1e-12:
            continue
        for wall in (margin, room.dimensions[i] - margin):
            step = (wall - origin[i]) / direction[i]
            if step > 0:
                r = min(r, step)
    return r if np.isfinite(r) else 0.0
