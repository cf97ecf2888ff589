"""Acoustic and VHF whale localization with UAV rendezvous planning."""

__version__ = "0.1.0"
