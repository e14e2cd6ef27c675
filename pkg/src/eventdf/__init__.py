"""Event describing functions and event phase response curves of excitable nodes."""

__version__ = "0.1.0"
