"""Desk-scale simulator and autonomy stack for an underground-mine skid-steer robot."""

__version__ = "0.1.0"
