"""Figure scripts for groupconn results CSV files."""

from .render import PANELS, PlotSpec, render

__all__ = ["PANELS", "PlotSpec", "render"]
