import numpy as np
import pytest

from visionassist.errors import InvalidInputError
from visionassist.proximity import (
    AlertMode,
    AlertState,
    DistanceReading,
    echo_to_distance,
    update,
)


class TestEchoToDistance:
    def test_zero(self):
        assert echo_to_distance(0.0) == 0.0

    def test_twenty_centimeters(self):
        assert echo_to_distance(1.1662e-3) == pytest.approx(0.2000, abs=1e-4)

    def test_one_meter(self):
        assert echo_to_distance(5.831e-3) == pytest.approx(1.000, abs=1e-3)

    def test_negative_rejected(self):
        with pytest.raises(InvalidInputError):
            echo_to_distance(-1e-6)

    def test_linearity(self):
        rng = np.random.default_rng(51)
        for _ in range(200):
            t = float(rng.uniform(0, 0.05))
            assert echo_to_distance(2 * t) == pytest.approx(2 * echo_to_distance(t), rel=1e-12)


class TestDistanceReading:
    def test_requires_exactly_one_value(self):
        with pytest.raises(InvalidInputError):
            DistanceReading(timestamp=0)
        with pytest.raises(InvalidInputError):
            DistanceReading(timestamp=0, meters=1.0, echo_round_trip_s=0.001)

    def test_echo_resolves_to_distance(self):
        reading = DistanceReading(timestamp=0, echo_round_trip_s=1.1662e-3)
        assert reading.distance_m == pytest.approx(0.2, abs=1e-4)

    def test_negative_rejected(self):
        with pytest.raises(InvalidInputError):
            DistanceReading(timestamp=0, meters=-0.5)


def reading(meters, t=0):
    return DistanceReading(timestamp=t, meters=meters)


class TestAlertStateMachine:
    def test_trigger_below_20cm_with_immediate_beep(self):
        state, cmds = update(AlertState(), reading(0.19), now=100)
        assert state.mode == AlertMode.ALERTING
        assert state.last_beep_at == 100
        assert [c.at for c in cmds] == [100]

    def test_quiet_above_thresholds_stays_quiet(self):
        state, cmds = update(AlertState(), reading(0.25), now=100)
        assert state.mode == AlertMode.QUIET
        assert cmds == []

    def test_band_preserves_alerting(self):
        alerting = AlertState(mode=AlertMode.ALERTING, entered_at=0, last_beep_at=0)
        state, _ = update(alerting, reading(0.22), now=50)
        assert state.mode == AlertMode.ALERTING

    def test_band_preserves_quiet(self):
        state, cmds = update(AlertState(), reading(0.22), now=50)
        assert state.mode == AlertMode.QUIET
        assert cmds == []

    def test_release_above_24cm(self):
        alerting = AlertState(mode=AlertMode.ALERTING, entered_at=0, last_beep_at=0)
        state, cmds = update(alerting, reading(0.241), now=500)
        assert state.mode == AlertMode.QUIET
        assert state.last_beep_at is None
        assert cmds == []

    def test_exactly_020_preserves_mode(self):
        # 0.20 is inside the hold band from both sides
        state, _ = update(AlertState(), reading(0.20), now=10)
        assert state.mode == AlertMode.QUIET
        alerting = AlertState(mode=AlertMode.ALERTING, entered_at=0, last_beep_at=0)
        state, _ = update(alerting, reading(0.20), now=10)
        assert state.mode == AlertMode.ALERTING

    def test_exactly_024_preserves_mode(self):
        alerting = AlertState(mode=AlertMode.ALERTING, entered_at=0, last_beep_at=0)
        state, _ = update(alerting, reading(0.24), now=10)
        assert state.mode == AlertMode.ALERTING

    def test_beep_cadence_250ms(self):
        state = AlertState(mode=AlertMode.ALERTING, entered_at=0, last_beep_at=0)
        state, cmds = update(state, reading(0.15), now=200)
        assert cmds == []  # 200 < 250 since last beep
        state, cmds = update(state, reading(0.15), now=250)
        assert len(cmds) == 1 and state.last_beep_at == 250
        state, cmds = update(state, reading(0.15), now=400)
        assert cmds == []
        state, cmds = update(state, reading(0.15), now=520)
        assert len(cmds) == 1

    def test_beep_spacing_under_noisy_close_signal(self):
        rng = np.random.default_rng(52)
        state = AlertState()
        beeps = []
        t = 0
        for _ in range(2000):
            t += int(rng.integers(10, 120))
            state, cmds = update(state, reading(float(rng.uniform(0.05, 0.19)), t), now=t)
            beeps.extend(c.at for c in cmds)
        gaps = [b - a for a, b in zip(beeps, beeps[1:])]
        assert gaps and min(gaps) >= 250

    def test_noise_inside_band_causes_no_transitions(self):
        rng = np.random.default_rng(53)
        state = AlertState()
        transitions = 0
        t = 0
        for _ in range(10_000):
            t += 20
            distance = float(np.clip(0.22 + rng.normal(0, 0.008), 0.201, 0.239))
            new_state, _ = update(state, reading(distance, t), now=t)
            if new_state.mode != state.mode:
                transitions += 1
            state = new_state
        assert transitions == 0

    def test_single_transition_then_band_noise(self):
        rng = np.random.default_rng(54)
        state = AlertState()
        transitions = 0
        t = 0
        # establish alerting once, then oscillate strictly inside the band
        state, _ = update(state, reading(0.15, 0), now=0)
        for _ in range(10_000):
            t += 20
            distance = float(np.clip(0.22 + rng.normal(0, 0.008), 0.201, 0.239))
            new_state, _ = update(state, reading(distance, t), now=t)
            if new_state.mode != state.mode:
                transitions += 1
            state = new_state
        assert transitions == 0
        assert state.mode == AlertMode.ALERTING

    def test_ramp_produces_exactly_one_transition(self):
        state = AlertState()
        transitions = []
        for t, d in enumerate([0.30, 0.28, 0.26, 0.24, 0.22, 0.20, 0.18, 0.15], start=1):
            new_state, _ = update(state, reading(d, t * 100), now=t * 100)
            if new_state.mode != state.mode:
                transitions.append((t * 100, new_state.mode))
            state = new_state
        assert transitions == [(700, AlertMode.ALERTING)]  # first d < 0.20 is 0.18 at t=700
