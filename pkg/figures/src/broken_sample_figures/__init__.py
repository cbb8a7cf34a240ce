"""Batch figure rendering for broken-sample harness CSV outputs.

Read-only over the harness CSV schema (version 1): the renderer never
recomputes statistics, it just draws the rows it is given.
"""

__version__ = "0.1.0"

from .render import FigureSpec, build_figure, load_rows, render

__all__ = ["FigureSpec", "build_figure", "load_rows", "render"]
