"""Render figures from the spinet CLI's CSV + metadata artifacts.

This package never imports the solver: its only inputs are the delimited
tables and JSON sidecars the CLI writes, so any run directory (or any other
tool producing the same schema) can be plotted.
"""

from spinet_figures.errors import EmptyData, MissingColumn, RecipeError
from spinet_figures.recipes import FigureRecipe, load_recipe, shipped_recipes
from spinet_figures.render import RenderResult, render

__version__ = "0.1.0"

__all__ = [
    "EmptyData",
    "FigureRecipe",
    "MissingColumn",
    "RecipeError",
    "RenderResult",
    "load_recipe",
    "render",
    "shipped_recipes",
    "__version__",
]
