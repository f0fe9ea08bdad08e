"""Deterministic closed-loop driving-scenario simulator.

Subpackages follow the pipeline: maps -> scene controller -> planners ->
kinematics -> BEV renderer -> metrics, orchestrated by the engine and
exposed over a newline-delimited JSON planner protocol.
"""

__version__ = "0.1.0"
