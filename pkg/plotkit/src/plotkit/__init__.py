"""Diagnostic figures from OOD-certificate experiment reports.

Reads the report files the `oodcert` CLI writes (JSON reports and their flat
CSV row dumps) and renders three figure kinds: error-vs-certificate scatter
with decision boundaries, certificate/error histograms, and the exponential
error fit with its percentile band.  Every figure is an SVG plus a JSON
sidecar of plotted primitives so tests can assert content without pixel
comparisons.
"""

__version__ = "0.1.0"

from .figures import FigureSpec, render

__all__ = ["FigureSpec", "render", "__version__"]
