"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest

from sstda import features
from sstda.tracker import CrnnConfig, TrainItem, make_train_item


def tiny_crnn_config() -> CrnnConfig:
    """Very small architecture for fast training-loop tests.

    Keeps the 180-wide output and the 5 conv blocks / pooling chain so
    shape arithmetic is exercised, but shrinks every width.
    """
    return CrnnConfig(in_channels=4, conv_channels=4, gru_hidden=6, fc_widths=(8, 8, 180))


def random_track(rng: np.random.Generator, n_frames: int) -> features.DoaTrack:
    az = np.deg2rad(rng.uniform(0.0, 179.0, n_frames))
    active = rng.random(n_frames) > 0.2
    if not active.any():
        active[0] = True
    return features.DoaTrack(azimuth_rad=az, active=active)


def random_items(rng: np.random.Generator, cfg: CrnnConfig, count: int,
                 lengths=(25,)) -> list[TrainItem]:
    """Synthetic TrainItems with random inputs (no acoustics involved)."""
    items = []
    for i in range(count):
        l = int(lengths[i % len(lengths)])
        x = 0.5 * rng.standard_normal((cfg.in_channels, features.NUM_BINS, l))
        track = random_track(rng, l)
        items.append(make_train_item(x, track, cfg, meta={"scene": f"rand{i}"}))
    return items


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# -- acceptance reporting --------------------------------------------

ACCEPTANCE_LINES = []


def record_criterion(number: int, passed: bool, detail: str):
    """Collect one pass/fail line per acceptance criterion for the
    terminal summary (printed even under output capture)."""
    ACCEPTANCE_LINES.append(
        f"CRITERION {number}: {'PASS' if passed else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
