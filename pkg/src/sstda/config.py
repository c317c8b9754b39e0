"""Flat key-value run configuration with dotted section names.

Format: one ``section.key = value`` per line; ``#`` starts a comment.
Lists are comma separated. See README for the full key reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .acoustics import DomainSamplerConfig


def parse_flat_config(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _floats(s):
    return tuple(float(v) for v in s.split(","))


def _ints(s):
    return tuple(int(v) for v in s.split(","))


def sampler_from_config(kv: dict, section: str, default_seed: int = 0) -> DomainSamplerConfig:
    def get(key, default=None):
        return kv.get(f"{section}.{key}", default)

    cfg = DomainSamplerConfig()
    if get("room_min"):
        cfg.room_min = _floats(get("room_min"))
    if get("room_max"):
        cfg.room_max = _floats(get("room_max"))
    if get("rt60"):
        cfg.rt60_range = _floats(get("rt60"))
    if get("snr_db"):
        cfg.snr_range_db = _floats(get("snr_db"))
    if get("noise"):
        cfg.noise_model = get("noise")
    if get("coverage_deg"):
        cfg.coverage_deg = _floats(get("coverage_deg"))
    if get("duration_s"):
        cfg.duration_range_s = _floats(get("duration_s"))
    if get("max_order"):
        cfg.max_order = int(get("max_order"))
    cfg.seed = int(get("seed", default_seed))
    cfg.__post_init__()
    return cfg


@dataclass
class RunConfig:
    kv: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        return cls(kv=parse_flat_config(path.read_text()), base_dir=path.parent)

    def sampler(self, section: str) -> DomainSamplerConfig:
        return sampler_from_config(self.kv, section)

    def get(self, key, default=None):
        return self.kv.get(key, default)

    def get_int(self, key, default):
        return int(self.kv.get(key, default))

    def get_float(self, key, default):
        return float(self.kv.get(key, default))

    def get_floats(self, key, default):
        raw = self.kv.get(key)
        return _floats(raw) if raw is not None else tuple(default)

    def get_ints(self, key, default):
        raw = self.kv.get(key)
        return _ints(raw) if raw is not None else tuple(default)

    def path(self, key, default=None):
        raw = self.kv.get(key, default)
        if raw is None:
            raise KeyError(f"config key {key!r} is required")
        p = Path(raw)
        return p if p.is_absolute() else self.base_dir / p
