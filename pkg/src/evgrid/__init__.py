"""EV adoption impact studies on radial distribution feeders."""

__version__ = "0.1.0"
