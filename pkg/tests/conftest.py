"""Shared fixtures: small models and pre-rendered frames reused across tests."""

import numpy as np
import pytest

from brickxar.instruction import begin_session, frame_update
from brickxar.scenes import make_static_truth, make_tower_model
from brickxar.sim import render_reality_frame


@pytest.fixture(scope="session")
def tower3():
    return make_tower_model(3, metadata_step=2)


@pytest.fixture(scope="session")
def static_truth(tower3):
    return make_static_truth(tower3, 4)


@pytest.fixture(scope="session")
def static_frame(static_truth):
    """(feed, cbcr) of the empty-build static scene at t=0."""
    return render_reality_frame(static_truth, 0)


@pytest.fixture(scope="session")
def tracked_session(static_truth, static_frame):
    """Session state after one frame_update on the static scene (tracking)."""
    state = begin_session(
        static_truth.model, static_truth.marker, static_truth.intrinsics
    )
    frame, state = frame_update(state, static_frame[0])
    return state, frame
