"""capmax: competitive facility location with joint location and cost decisions."""

__version__ = "0.1.0"
