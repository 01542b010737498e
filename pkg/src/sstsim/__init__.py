"""Averaged multirate simulator and loop-design checker for a modular MVAC-to-LVDC converter."""

__version__ = "0.1.0"
