"""``render`` command: one recipe in, one image out.

Exit codes follow the solver CLI's convention: 0 success, 2 when the data
files cannot support the figure, 3 when the recipe itself is bad.
"""

import argparse
import sys

from spinet_figures.errors import DataError, RecipeError
from spinet_figures.recipes import shipped_recipes
from spinet_figures.render import render


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="render", description="Render a figure from spinet CSV artifacts."
    )
    parser.add_argument("recipe", nargs="?", help="recipe file path or shipped recipe name")
    parser.add_argument("--data-dir", default=".", help="directory holding the input CSVs")
    parser.add_argument("--out", help="output image path (default: recipe's 'out' in the data dir)")
    parser.add_argument("--list", action="store_true", help="list shipped recipes and exit")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.list:
        for name, path in shipped_recipes().items():
            print(f"{name}\t{path}")
        return 0
    if not args.recipe:
        print("render: error: a recipe is required (or --list)", file=sys.stderr)
        return 3
    try:
        result = render(args.recipe, data_dir=args.data_dir, out=args.out)
    except RecipeError as exc:
        print(f"render: recipe error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"render: data error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {result.path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
