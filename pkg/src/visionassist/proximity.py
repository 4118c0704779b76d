"""Ultrasonic distance conversion and the buzzer alert state machine.

Trigger below 0.20 m, release above 0.24 m (hysteresis band keeps the
buzzer from chattering at the boundary), beeps at a 250 ms cadence while
alerting. Readings inside [0.20, 0.24] preserve the current mode.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .errors import InvalidInputError

SPEED_OF_SOUND_M_S = 343.0
ALERT_ENTER_M = 0.20
ALERT_RELEASE_M = 0.24
BEEP_INTERVAL_MS = 250


class AlertMode(str, Enum):
    QUIET = "quiet"
    ALERTING = "alerting"


@dataclass(frozen=True)
class DistanceReading:
    """Either a direct distance or an ultrasonic round-trip echo time."""

    timestamp: int  # virtual ms
    meters: Optional[float] = None
    echo_round_trip_s: Optional[float] = None

    def __post_init__(self):
        if (self.meters is None) == (self.echo_round_trip_s is None):
            raise InvalidInputError("reading needs exactly one of meters or echo_round_trip_s")
        value = self.meters if self.meters is not None else self.echo_round_trip_s
        if value < 0:
            raise InvalidInputError(f"reading value must be >= 0, got {value}")

    @property
    def distance_m(self) -> float:
        if self.meters is not None:
            return self.meters
        return echo_to_distance(self.echo_round_trip_s)


@dataclass(frozen=True)
class AlertState:
    mode: AlertMode = AlertMode.QUIET
    entered_at: int = 0
    last_beep_at: Optional[int] = None


@dataclass(frozen=True)
class BuzzerCommand:
    """A single beep pulse at the given instant."""

    at: int


def echo_to_distance(echo_round_trip_s: float) -> float:
    """Distance in meters from a round-trip echo time (343 m/s, one way = half)."""
    if echo_round_trip_s < 0:
        raise InvalidInputError(f"echo time must be >= 0, got {echo_round_trip_s}")
    return echo_round_trip_s * SPEED_OF_SOUND_M_S / 2.0


def update(state: AlertState, reading: DistanceReading,
           now: int) -> tuple[AlertState, list[BuzzerCommand]]:
    """Advance the alert state machine with one reading.

    Returns the new state and any beep commands emitted at `now`.
    """
    distance = reading.distance_m
    if state.mode == AlertMode.QUIET:
        if distance < ALERT_ENTER_M:
            new = AlertState(mode=AlertMode.ALERTING, entered_at=now, last_beep_at=now)
            return new, [BuzzerCommand(at=now)]
        return state, []
    # alerting
    if distance > ALERT_RELEASE_M:
        return AlertState(mode=AlertMode.QUIET, entered_at=now, last_beep_at=None), []
    if state.last_beep_at is None or now - state.last_beep_at >= BEEP_INTERVAL_MS:
        return AlertState(mode=AlertMode.ALERTING, entered_at=state.entered_at,
                          last_beep_at=now), [BuzzerCommand(at=now)]
    return state, []
