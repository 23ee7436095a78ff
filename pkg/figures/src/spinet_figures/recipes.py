"""Figure recipes: small YAML documents mapping CSV artifacts to a plot.

A recipe names its input tables (paths or globs, resolved against the
render-time data directory), the figure kind, and presentation options.
Unknown keys are rejected so a typo cannot silently drop an option.
"""

import dataclasses
import glob as globlib
from importlib import resources
from pathlib import Path

import yaml

from spinet_figures.errors import RecipeError

KINDS = ("curve", "heatmap", "trace-pair", "temp-map")

_FIELDS = {
    "kind", "inputs", "out",
    "x", "y", "ys", "value", "top", "bottom",
    "labels", "title", "x_label", "y_label",
    "x_range", "y_range", "log_y", "abs_value", "isolines",
}


@dataclasses.dataclass(frozen=True)
class FigureRecipe:
    kind: str
    inputs: tuple
    out: str = "figure.png"
    x: str | None = None
    y: str | None = None
    ys: tuple = ()
    value: str | None = None
    top: str = "pg"
    bottom: str = "chi"
    labels: tuple = ()
    title: str | None = None
    x_label: str | None = None
    y_label: str | None = None
    x_range: tuple | None = None
    y_range: tuple | None = None
    log_y: bool = False
    abs_value: bool = False
    isolines: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RecipeError(f"unknown figure kind '{self.kind}' (one of {', '.join(KINDS)})")
        if not self.inputs:
            raise RecipeError("recipe needs at least one input table")
        if self.kind == "trace-pair" and len(self.inputs) != 2:
            raise RecipeError("trace-pair needs exactly two input tables")
        for rng in (self.x_range, self.y_range):
            if rng is not None and (len(rng) != 2 or not rng[0] < rng[1]):
                raise RecipeError(f"axis range must be an increasing pair, got {rng}")


def _as_tuple(value, key):
    if value is None:
        return ()
    if isinstance(value, (list, tuple)):
        return tuple(value)
    raise RecipeError(f"'{key}' must be a list")


def parse_recipe(doc) -> FigureRecipe:
    if not isinstance(doc, dict):
        raise RecipeError("recipe document must be a mapping")
    unknown = sorted(set(doc) - _FIELDS)
    if unknown:
        raise RecipeError(f"unknown recipe keys: {', '.join(unknown)}")
    if "kind" not in doc:
        raise RecipeError("recipe needs a 'kind'")
    kw = dict(doc)
    kw["inputs"] = _as_tuple(kw.get("inputs"), "inputs")
    for key in ("ys", "labels"):
        if key in kw:
            kw[key] = _as_tuple(kw[key], key)
    for key in ("x_range", "y_range"):
        if kw.get(key) is not None:
            kw[key] = tuple(float(v) for v in kw[key])
    try:
        return FigureRecipe(**kw)
    except TypeError as exc:
        raise RecipeError(str(exc)) from exc


def load_recipe(source) -> FigureRecipe:
    """Load a recipe from a file path or a shipped recipe name."""
    path = Path(source)
    if not path.exists():
        shipped = shipped_recipes()
        if str(source) in shipped:
            path = shipped[str(source)]
        else:
            raise RecipeError(f"no recipe file or shipped recipe named '{source}'")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise RecipeError(f"{path}: {exc}") from exc
    return parse_recipe(doc)


def shipped_recipes() -> dict:
    """Name -> path of the recipe files installed with the package."""
    root = resources.files("spinet_figures") / "recipes"
    out = {}
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".yaml"):
            out[entry.name[: -len(".yaml")]] = Path(str(entry))
    return out


def resolve_inputs(recipe: FigureRecipe, data_dir) -> list:
    """Match each input entry to exactly one existing CSV under *data_dir*."""
    base = Path(data_dir)
    out = []
    for entry in recipe.inputs:
        candidate = Path(entry)
        if not candidate.is_absolute():
            candidate = base / entry
        if any(ch in entry for ch in "*?["):
            matches = sorted(globlib.glob(str(candidate)))
            if len(matches) != 1:
                raise RecipeError(
                    f"input pattern '{entry}' matches {len(matches)} files under {base}"
                )
            out.append(Path(matches[0]))
        elif candidate.exists():
            out.append(candidate)
        else:
            raise RecipeError(f"input table '{entry}' not found under {base}")
    return out
