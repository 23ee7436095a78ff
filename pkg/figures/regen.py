#!/usr/bin/env python3
"""Regenerate the shipped figures from presets, make-style.

Each target names the solver preset(s) that produce its CSV artifacts and
the recipe that renders them.  Existing CSVs are reused, so a partial build
can be resumed or refreshed selectively:

    python3 regen.py               # everything, full resolution (slow)
    python3 regen.py fig4 fig7     # just those targets
    python3 regen.py --fast ...    # coarse axes/grids for a smoke pass

Requires both console scripts on PATH: `spinet` (solver) and `render`.
"""

import argparse
import glob
import shutil
import subprocess
import sys
from pathlib import Path

# target -> (recipe, [(subcommand, preset, subdir), ...])
TARGETS = {
    "fig3-phi0": ("fig3", [("marcus-curve", "fig3-marcus-phi0", ".")]),
    "fig3-phi45": ("fig3", [("marcus-curve", "fig3-marcus-phi45", ".")]),
    "fig3-phi90": ("fig3", [("marcus-curve", "fig3-marcus-phi90", ".")]),
    "fig4": ("fig4", [("sweep", "fig4-theta45-dg-0.01", ".")]),
    "fig4-theta0": ("fig4", [("sweep", "fig4-theta0-dg-0.01", ".")]),
    "fig4-theta30": ("fig4", [("sweep", "fig4-theta30-dg-0.01", ".")]),
    "fig4-dg0": ("fig4", [("sweep", "fig4-theta45-dg0", ".")]),
    "fig4-dg-0.029": ("fig4", [("sweep", "fig4-theta45-dg-0.029", ".")]),
    "fig5": ("fig5", [("sweep", "fig4-theta45-dg-0.01", ".")]),
    "fig6-phi0": (
        "fig6",
        [
            ("polarization", "fig6-trace-phi0-eta0", "eta0"),
            ("polarization", "fig6-trace-phi0-eta90", "eta90"),
        ],
    ),
    "fig6-phi90": (
        "fig6",
        [
            ("polarization", "fig6-trace-phi90-eta0", "eta0"),
            ("polarization", "fig6-trace-phi90-eta90", "eta90"),
        ],
    ),
    "fig7": ("fig7", [("temp-sweep", "fig7-tempmap-theta45", ".")]),
    "fig9": ("fig9", [("sweep", "fig4-theta45-dg-0.029", ".")]),
}

FAST_FLAGS = {
    "marcus-curve": ["--t-max", "2000", "--steps", "64", "--points", "7"],
    "sweep": ["--t-max", "2000", "--steps", "64", "--sweep-points", "6"],
    "temp-sweep": ["--t-max", "2000", "--steps", "64", "--sweep-points", "6"],
    "polarization": ["--t-max", "2000", "--steps", "64"],
}


def run(argv):
    print("+", " ".join(argv), flush=True)
    subprocess.run(argv, check=True)


def build(target, build_dir, fast):
    recipe, jobs = TARGETS[target]
    root = build_dir / target
    for subcommand, preset, subdir in jobs:
        outdir = root / subdir
        if glob.glob(str(outdir / f"{subcommand}-*.csv")):
            print(f"  {target}: reusing {outdir}", flush=True)
            continue
        argv = ["spinet", subcommand, "--preset", preset, "--outdir", str(outdir)]
        if fast:
            argv += FAST_FLAGS.get(subcommand, [])
        run(argv)
    run(["render", recipe, "--data-dir", str(root), "--out", str(build_dir / f"{target}.png")])


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("targets", nargs="*", default=[], help=f"subset of: {' '.join(TARGETS)}")
    parser.add_argument("--build", default="build", help="output directory (default: build/)")
    parser.add_argument("--fast", action="store_true", help="coarse smoke-pass resolution")
    args = parser.parse_args(argv)
    for tool in ("spinet", "render"):
        if shutil.which(tool) is None:
            print(f"regen: '{tool}' not on PATH (install both packages first)", file=sys.stderr)
            return 3
    unknown = [t for t in args.targets if t not in TARGETS]
    if unknown:
        print(f"regen: unknown targets: {', '.join(unknown)}", file=sys.stderr)
        return 3
    for target in args.targets or list(TARGETS):
        build(target, Path(args.build), args.fast)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
