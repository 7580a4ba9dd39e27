"""Step-machine state transitions and per-frame AR frame production."""

import numpy as np
import pytest

from brickxar.errors import BoundaryError, CompleteError, EmptyModelError, SizeError
from brickxar.geometry import DEFAULT_INTRINSICS
from brickxar.instruction import (
    COMPLETE,
    BrickStatus,
    advance_step,
    begin_session,
    frame_update,
    retreat_step,
    step_info,
)
from brickxar.marker import TrackingMode, default_marker_spec
from brickxar.model import AssemblyModel
from brickxar.scenes import make_tower_model
from brickxar.sim import visibility_oracle

K = DEFAULT_INTRINSICS


def session(n=3, metadata_step=None):
    model = make_tower_model(n, metadata_step=metadata_step)
    return begin_session(model, default_marker_spec(), K)


class TestBeginSession:
    def test_single_brick(self):
        s = session(1)
        assert s.current_step == 1
        assert s.statuses() == (BrickStatus.CURRENT,)

    def test_386_bricks(self):
        s = session(386)
        statuses = s.statuses()
        assert statuses[0] is BrickStatus.CURRENT
        assert statuses.count(BrickStatus.FUTURE) == 385

    def test_pure(self):
        a, b = session(4), session(4)
        assert a.current_step == b.current_step
        assert a.statuses() == b.statuses()
        assert a.tracking.mode is TrackingMode.LOST
        assert a.tracking.quality == 0.0

    def test_empty_model_rejected(self):
        with pytest.raises(EmptyModelError):
            AssemblyModel(())


class TestAdvanceRetreat:
    def test_basic_advance(self):
        s = advance_step(session(3))
        assert s.current_step == 2
        assert s.statuses()[0] is BrickStatus.PLACED

    def test_final_advance_completes(self):
        s = session(2)
        s = advance_step(advance_step(s))
        assert s.complete and s.current_step == COMPLETE
        assert all(st is BrickStatus.PLACED for st in s.statuses())

    def test_advance_complete_errors(self):
        s = advance_step(session(1))
        with pytest.raises(CompleteError):
            advance_step(s)

    def test_placed_count_after_k_advances(self):
        s = session(10)
        for k in range(1, 10):
            s = advance_step(s)
            assert s.statuses().count(BrickStatus.PLACED) == k

    def test_retreat_inverse(self):
        s = session(5)
        for _ in range(3):
            s = advance_step(s)
        back = retreat_step(advance_step(s))
        assert back.current_step == s.current_step
        assert back.statuses() == s.statuses()

    def test_retreat_at_step_one(self):
        with pytest.raises(BoundaryError):
            retreat_step(session(3))

    def test_retreat_from_complete(self):
        s = advance_step(advance_step(session(2)))
        s = retreat_step(s)
        assert s.current_step == 2
        assert advance_step(s).complete

    def test_invariants_every_step(self):
        s = session(8)
        while not s.complete:
            statuses = s.statuses()
            assert statuses.count(BrickStatus.CURRENT) == 1
            placed = {
                b.step_index
                for b, st in zip(s.model.bricks, statuses)
                if st is BrickStatus.PLACED
            }
            assert placed == set(range(1, s.current_step))
            s = advance_step(s)
        assert s.statuses().count(BrickStatus.CURRENT) == 0


class TestStepInfo:
    def test_metadata_step(self):
        s = session(5, metadata_step=3)
        s = advance_step(advance_step(s))
        md = step_info(s)
        assert md is not None and md.step_index == 3 and md.title == "Keystone"

    def test_no_metadata(self):
        assert step_info(session(5, metadata_step=3)) is None

    def test_complete(self):
        s = advance_step(session(1, metadata_step=1))
        assert step_info(s) is None


class TestFrameUpdate:
    def test_size_mismatch(self):
        small = np.zeros((100, 100, 3), dtype=np.uint8)
        with pytest.raises(SizeError):
            frame_update(session(1), small)

    def test_guide_matches_oracle_step1(self, static_truth, static_frame):
        feed, _ = static_frame
        state = begin_session(
            static_truth.model, static_truth.marker, static_truth.intrinsics
        )
        frame, state = frame_update(state, feed)
        assert state.tracking.mode is TrackingMode.TRACKING
        assert frame.guide_mask.any()
        oracle = visibility_oracle(static_truth, 0, target_step=1)
        agree = (frame.guide_mask == oracle).mean()
        assert agree >= 0.995

    def test_statuses_never_mutated(self, static_truth, static_frame):
        feed, _ = static_frame
        state = begin_session(
            static_truth.model, static_truth.marker, static_truth.intrinsics
        )
        before = state.statuses()
        _, after = frame_update(state, feed)
        assert after.statuses() == before
        assert after.current_step == state.current_step

    def test_frozen_pose_byte_identical(self, static_truth, static_frame):
        feed, _ = static_frame
        state = begin_session(
            static_truth.model, static_truth.marker, static_truth.intrinsics
        )
        _, state = frame_update(state, feed)
        covered = np.full_like(feed, 128)
        f1, s1 = frame_update(state, covered)
        f2, s2 = frame_update(s1, covered)
        assert s1.tracking.mode is TrackingMode.LOST
        assert s1.tracking.pose == state.tracking.pose
        assert s2.tracking.pose == state.tracking.pose
        assert np.array_equal(f1.composed, f2.composed)
        assert np.array_equal(f1.guide_mask, f2.guide_mask)
        # resume on the first good frame
        _, s3 = frame_update(s2, feed)
        assert s3.tracking.mode is TrackingMode.TRACKING

    def test_complete_passthrough(self, static_truth, static_frame):
        feed, _ = static_frame
        state = begin_session(
            static_truth.model, static_truth.marker, static_truth.intrinsics
        )
        while not state.complete:
            state = advance_step(state)
        frame, _ = frame_update(state, feed)
        assert np.array_equal(frame.composed, feed)
