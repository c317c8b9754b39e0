"""Scene rendering, dataset persistence (WAV + annotations + manifest),
and conversion into training items."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import features
from .acoustics import (
    SAMPLE_RATE,
    DomainSamplerConfig,
    MultichannelAudio,
    Scene,
    generate_diffuse_noise,
    mix_at_snr,
    render_moving_source,
    sample_scene,
    synth_speech_like,
)
from .tracker import CrnnConfig, TrainItem, make_train_item

MANIFEST_NAME = "manifest.txt"


def render_scene(scene: Scene, cfg: DomainSamplerConfig, seed: int):
    """Render one scene to a noisy multichannel recording.

    Returns (audio, frame_track, sample_activity, dry).
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, seed & 0xFFFFFFFFFFFFFFFF, 1]))
    dry, activity = synth_speech_like(rng, scene.duration_s)
    wet = render_moving_source(dry, scene.trajectory, scene.room, scene.array,
                               block_ms=cfg.block_ms, max_order=cfg.max_order)
    noise = generate_diffuse_noise(scene.array, wet.num_samples, sample_rate=SAMPLE_RATE,
                                   model=cfg.noise_model, seed=int(rng.integers(2**31)))
    mixed = mix_at_snr(wet, noise, scene.snr_db, active_mask=activity)
    azimuths = scene.trajectory.azimuths(scene.array)
    track = features.track_from_trajectory(azimuths, activity)
    return mixed, track, activity, dry


def make_scene(cfg: DomainSamplerConfig, seed: int):
    scene = sample_scene(cfg, seed)
    audio, track, activity, _ = render_scene(scene, cfg, seed)
    return scene, audio, track


def scene_to_item(audio: MultichannelAudio, track: features.DoaTrack,
                  model_cfg: CrnnConfig, meta: dict | None = None) -> TrainItem:
    spec = features.stft(audio)
    x = features.stack_reim(spec)
    return make_train_item(x, track, model_cfg, meta=meta)


def build_items(cfg: DomainSamplerConfig, count: int, base_seed: int,
                model_cfg: CrnnConfig, tag: str = "") -> list[TrainItem]:
    """Render `count` scenes directly into training items (no disk)."""
    items = []
    for i in range(count):
        scene, audio, track = make_scene(cfg, base_seed + i)
        active = track.active
        mean_az = float(np.rad2deg(np.mean(track.azimuth_rad[active]))) if active.any() else float("nan")
        meta = {
            "scene": f"{tag}{base_seed + i}",
            "seed": base_seed + i,
            "mean_azimuth_deg": mean_az,
            "rt60": scene.room.rt60,
            "snr_db": scene.snr_db,
        }
        items.append(scene_to_item(audio, track, model_cfg, meta=meta))
    return items


# -- on-disk dataset ------------------------------------------------


@dataclass
class SceneRecord:
    record_id: str
    wav_path: Path
    annotation_path: Path
    meta_path: Path
    meta: dict


def _write_kv(path: Path, data: dict):
    lines = [f"{k} = {data[k]}" for k in sorted(data)]
    path.write_text("\n".join(lines) + "\n")


def _read_kv(path: Path) -> dict:
    out = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_scene_record(out_dir: Path, record_id: str, scene: Scene,
                       audio: MultichannelAudio, track: features.DoaTrack,
                       domain: str, seed: int, cfg: DomainSamplerConfig) -> SceneRecord:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wav_path = out_dir / f"{record_id}.wav"
    ann_path = out_dir / f"{record_id}.ann.txt"
    meta_path = out_dir / f"{record_id}.meta.txt"
    wavfile.write(wav_path, audio.sample_rate, audio.samples.T.astype(np.float32))
    lines = [
        f"{i} {np.rad2deg(track.azimuth_rad[i]):.6f} {int(track.active[i])}"
        for i in range(len(track))
    ]
    ann_path.write_text("\n".join(lines) + "\n")
    meta = {
        "record_id": record_id,
        "domain": domain,
        "seed": seed,
        "room_dims_m": ",".join(f"{d:.6f}" for d in scene.room.dimensions),
        "rt60_s": f"{scene.room.rt60:.6f}",
        "snr_db": f"{scene.snr_db:.6f}",
        "duration_s": f"{scene.duration_s:.6f}",
        "coverage_deg": f"{cfg.coverage_deg[0]},{cfg.coverage_deg[1]}",
        "noise_model": cfg.noise_model,
        "array_origin_m": ",".join(f"{v:.6f}" for v in scene.array.origin),
        "num_channels": scene.array.num_channels,
        "sample_rate": audio.sample_rate,
    }
    _write_kv(meta_path, meta)
    return SceneRecord(record_id=record_id, wav_path=wav_path,
                       annotation_path=ann_path, meta_path=meta_path, meta=meta)


def write_manifest(out_dir: Path, records: list[SceneRecord]):
    out_dir = Path(out_dir)
    lines = []
    for r in records:
        lines.append(" ".join([
            r.record_id,
            r.wav_path.name, _sha256(r.wav_path),
            r.annotation_path.name, _sha256(r.annotation_path),
            r.meta_path.name, _sha256(r.meta_path),
        ]))
    (out_dir / MANIFEST_NAME).write_text("\n".join(lines) + "\n")


def simulate_dataset(cfg: DomainSamplerConfig, count: int, out_dir: Path,
                     base_seed: int = 0, domain: str = "source") -> list[SceneRecord]:
    records = []
    for i in range(count):
        seed = base_seed + i
        scene, audio, track = make_scene(cfg, seed)
        rec = write_scene_record(Path(out_dir), f"scene{seed:06d}", scene, audio, track,
                                 domain, seed, cfg)
        records.append(rec)
    write_manifest(Path(out_dir), records)
    return records


def load_manifest(dataset_dir: Path) -> list[SceneRecord]:
    dataset_dir = Path(dataset_dir)
    manifest = dataset_dir / MANIFEST_NAME
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest in {dataset_dir}")
    records = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 7:
            raise ValueError(f"malformed manifest line: {line!r}")
        rid, wav, wav_sum, ann, ann_sum, meta, meta_sum = parts
        paths = {"wav": dataset_dir / wav, "annotation": dataset_dir / ann, "meta": dataset_dir / meta}
        for kind, path, expect in (("wav", paths["wav"], wav_sum),
                                   ("annotation", paths["annotation"], ann_sum),
                                   ("meta", paths["meta"], meta_sum)):
            if not path.exists():
                raise FileNotFoundError(f"record {rid}: missing {kind} file {path.name}")
            if _sha256(path) != expect:
                raise ValueError(f"record {rid}: checksum mismatch for {path.name}")
        records.append(SceneRecord(record_id=rid, wav_path=paths["wav"],
                                   annotation_path=paths["annotation"],
                                   meta_path=paths["meta"], meta=_read_kv(paths["meta"])))
    return records


def read_scene_record(rec: SceneRecord):
    rate, data = wavfile.read(rec.wav_path)
    audio = MultichannelAudio(samples=np.asarray(data, dtype=float).T, sample_rate=int(rate))
    az, active = [], []
    for line in rec.annotation_path.read_text().splitlines():
        if not line.strip():
            continue
        _, a, flag = line.split()
        az.append(np.deg2rad(float(a)))
        active.append(bool(int(flag)))
    track = features.DoaTrack(azimuth_rad=np.array(az), active=np.array(active))
    return audio, track


def load_items(dataset_dir: Path, model_cfg: CrnnConfig) -> list[TrainItem]:
    items = []
    for rec in load_manifest(dataset_dir):
        audio, track = read_scene_record(rec)
        meta = {"scene": rec.record_id, **rec.meta}
        az_active = track.azimuth_rad[track.active]
        meta["mean_azimuth_deg"] = float(np.rad2deg(np.mean(az_active))) if az_active.size else float("nan")
        items.append(scene_to_item(audio, track, model_cfg, meta=meta))
    return items
