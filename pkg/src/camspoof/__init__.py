"""Camera-stream spoofing simulator: GVSP-style streaming, injection attacks, passive detectors and the width-varying defense."""

__version__ = "0.1.0"
