"""Module criticality toolkit: train small networks, probe their loss landscape, rank complexity measures."""

__version__ = "0.1.0"
