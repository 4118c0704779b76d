"""Simulated wearable vision-assistance system.

Continuous recognition, one-button enrollment, one-button scene description,
and ultrasonic proximity alerting, with all hardware replaced by a scenario
simulator and all model backends pluggable.
"""

__version__ = "0.1.0"
