"""Relative contrastive learning for motion time series, built on a small numpy autodiff core."""

__version__ = "0.1.0"
