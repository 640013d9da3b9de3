"""Shared test fixtures: canonical intrinsics and cached synthetic pairs."""

import functools

import pytest

from occmatch.geometry import CameraIntrinsics
from occmatch.synth import make_fixture, make_pair


@functools.lru_cache(maxsize=None)
def cached_pair(name: str, width: int = 192, height: int = 144):
    """Build one named fixture pair once per session; tests must not mutate it."""
    fx = make_fixture(name, width=width, height=height)
    return fx, make_pair(fx.scene, fx.pose_a, fx.pose_b, fx.k)


@pytest.fixture(scope="session")
def pair_cache():
    return cached_pair


@pytest.fixture
def k100():
    """Round-number pinhole camera used by the hand-computed projections."""
    return CameraIntrinsics(100.0, 100.0, 320.0, 240.0, 640, 480)
