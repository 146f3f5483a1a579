"""Shared fixtures: default configuration, the test track, and fast variants."""

from __future__ import annotations

import dataclasses

import pytest

from ptgc_sim.config import GlobalConfig
from ptgc_sim.track import build_test_track


@pytest.fixture(scope="session")
def cfg() -> GlobalConfig:
    return GlobalConfig()


@pytest.fixture(scope="session")
def track(cfg):
    return build_test_track(cfg.track)


@pytest.fixture(scope="session")
def fast_cfg(cfg) -> GlobalConfig:
    """Default config with the 32x32 BEV fast mode for closed-loop tests."""
    return dataclasses.replace(cfg, bev=dataclasses.replace(cfg.bev, grid_side=32))
