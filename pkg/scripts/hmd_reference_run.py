"""Single-population comparison and forecast on a user-supplied HMD extract.

Expects ``<dir>/CZE.Mx_1x1.txt`` and optionally ``<dir>/CZE.Exposures_1x1.txt``
(used as weights). Runs the four correlation structures on Czech males aged
20-80 over 1991-2010, prints the criteria table, then forecasts 2011-2019
with the minimum-QIC structure.

    python3 scripts/hmd_reference_run.py /path/to/hmd --out hmd_run
"""
import argparse
from pathlib import Path

from geemort.cli import main as cli


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("hmd_dir", type=Path)
    p.add_argument("--country", default="CZE")
    p.add_argument("--out", type=Path, default=Path("hmd_run"))
    p.add_argument("--corr-ddof", default="params", choices=["params", "none"])
    args = p.parse_args(argv)
    mx = args.hmd_dir / f"{args.country}.Mx_1x1.txt"
    expo = args.hmd_dir / f"{args.country}.Exposures_1x1.txt"
    common = ["--input", str(mx), "--layout", "mx", "--sexes", "Male", "--population-mode", "single",
              "--ages", "20:80", "--train", "1991:2010", "--corr-ddof", args.corr_ddof]
    if expo.is_file():
        common += ["--weighted", "--exposure-file", str(expo)]
    kinds = []
    for k in ("independence", "exchangeable", "ar1", "unstructured"):
        kinds += ["--corstr", k]
    rc = cli(["compare", *common, *kinds, "--out", str(args.out / "compare")])
    if rc:
        return rc
    return cli(["forecast", *common, *kinds, "--horizon", "9", "--out", str(args.out / "forecast")])


if __name__ == "__main__":
    raise SystemExit(main())
