"""Tests for trace rows, traces and run metrics."""

import math

import pytest
from pydantic import ValidationError

from manifold_intercept.domain.entities import RunMetrics, ScenarioTrace, TraceRow
from manifold_intercept.domain.value_objects import EventType


def _row(time: float, *events: EventType) -> TraceRow:
    return TraceRow(
        time=time,
        ball=(0.0, 0.0, 1.0),
        joints=[0.0] * 7,
        ee=(0.3, 0.0, 0.5),
        min_clearance=1.0e3,
        events=list(events),
    )


class TestTraceRow:
    """Tests for TraceRow defaults."""

    def test_filter_columns_default_to_nan(self):
        """Test rows before the tracker starts carry NaN filter columns."""
        row = _row(0.0)
        assert all(math.isnan(v) for v in row.observation)
        assert all(math.isnan(v) for v in row.estimate)
        assert row.stage == 0
        assert row.events == []


class TestScenarioTrace:
    """Tests for ScenarioTrace causality and counting."""

    def test_valid_event_order(self):
        """Test a trigger-predict-catch sequence is accepted."""
        trace = ScenarioTrace(
            rows=[
                _row(0.1, EventType.TRIGGER),
                _row(0.2, EventType.PREDICT, EventType.REROUTE),
                _row(0.3, EventType.REPREDICT),
                _row(0.4, EventType.CATCH),
            ]
        )
        assert [e for _, e in trace.events()] == [
            EventType.TRIGGER,
            EventType.PREDICT,
            EventType.REROUTE,
            EventType.REPREDICT,
            EventType.CATCH,
        ]
        assert trace.count(EventType.REROUTE) == 1

    def test_prediction_before_trigger_rejected(self):
        """Test PREDICT cannot precede TRIGGER."""
        with pytest.raises(ValidationError, match="precedes TRIGGER"):
            ScenarioTrace(rows=[_row(0.1, EventType.PREDICT), _row(0.2, EventType.TRIGGER)])

    def test_repredict_needs_predict(self):
        """Test REPREDICT cannot come before the first prediction."""
        with pytest.raises(ValidationError, match="REPREDICT"):
            ScenarioTrace(rows=[_row(0.1, EventType.TRIGGER, EventType.REPREDICT)])

    def test_blocked_and_miss_are_unconstrained(self):
        """Test events without prerequisites may appear anywhere."""
        trace = ScenarioTrace(rows=[_row(0.1, EventType.BLOCKED), _row(0.2, EventType.MISS)])
        assert trace.count(EventType.MISS) == 1


class TestRunMetrics:
    """Tests for RunMetrics validation."""

    def test_catch_within_tolerance(self):
        """Test a catch inside the tolerance validates."""
        metrics = RunMetrics(caught=True, catch_error=0.05, catch_tolerance=0.1, time_to_catch=0.4)
        assert metrics.caught

    def test_catch_outside_tolerance_rejected(self):
        """Test a catch further than the tolerance is refused."""
        with pytest.raises(ValidationError, match="exceeds tolerance"):
            RunMetrics(caught=True, catch_error=0.2, catch_tolerance=0.1)

    def test_defaults_describe_an_empty_run(self):
        """Test defaults mean no trigger and no catch."""
        metrics = RunMetrics()
        assert not metrics.caught and not metrics.triggered
        assert metrics.catch_error == math.inf
        assert metrics.route_lengths == []
