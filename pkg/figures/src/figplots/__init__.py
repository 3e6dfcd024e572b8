"""Figure renderer for the DI-QKD sweep CSVs."""

__version__ = "0.1.0"

from .render import SCHEMAS, PlotJob, RenderInfo, SchemaError, read_rows, render

__all__ = ["SCHEMAS", "PlotJob", "RenderInfo", "SchemaError", "read_rows", "render"]
