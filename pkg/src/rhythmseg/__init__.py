"""Arrhythmia segmentation of single-lead ECG with a TCN/U-Net hybrid built on
a small numpy autodiff core."""

__version__ = "0.1.0"
