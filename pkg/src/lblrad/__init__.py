"""Line-by-line radiative transfer with a model of shader floating-point arithmetic."""

__version__ = "0.1.0"
