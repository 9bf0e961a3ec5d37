"""Robot-arm reaching benchmark: SAC over several perception pipelines on a numpy autodiff."""

__version__ = "0.1.0"
