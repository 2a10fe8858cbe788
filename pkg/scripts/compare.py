"""Print mean/median exploitability from several result directories side by side."""
import argparse
import csv
from pathlib import Path


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("dirs", nargs="+", help="eval or baseline output directories")
    args = ap.parse_args()
    print(f"{'run':<40} {'mean phi':>12} {'median phi':>12} {'mean norm':>12}")
    for d in args.dirs:
        with open(Path(d) / "summary.csv", newline="") as fh:
            rows = {r["statistic"]: r for r in csv.DictReader(fh)}
        print(f"{d:<40} {float(rows['mean']['exploitability']):>12.4g} "
              f"{float(rows['median']['exploitability']):>12.4g} "
              f"{float(rows['mean']['normalized_exploitability']):>12.4g}")


if __name__ == "__main__":
    main()
