"""Multi-task pedestrian behavior prediction on a gradient-verified numpy core."""

__version__ = "0.1.0"
