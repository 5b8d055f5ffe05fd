"""Retarget reconstructed driving scenes to a new camera rig."""

__version__ = "0.1.0"
