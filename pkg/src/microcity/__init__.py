"""microcity: a desk-scale urban driving testbed.

Deterministic fixed-timestep simulator of a miniature grid city, a
backend-agnostic teleoperation service, personality-parameterized autonomous
drivers, synchronized telemetry recording, and driving-style analytics.
"""

__version__ = "0.1.0"
