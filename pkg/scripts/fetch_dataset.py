#!/usr/bin/env python3
"""Download the real UCI drug-consumption table.

The repository bundles a synthetic stand-in with the same shape (see
scripts/make_synthetic_dataset.py) so tests never touch the network;
this script fetches the original when real-data experiments are wanted.
"""

import argparse
import urllib.request

URL = ("https://archive.ics.uci.edu/ml/machine-learning-databases/"
       "00373/drug_consumption.data")
EXPECTED_ROWS = 1885
EXPECTED_COLS = 32  # id + 12 attributes + 19 drug classes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data/drug_consumption.data")
    args = ap.parse_args()

    print(f"fetching {URL}")
    with urllib.request.urlopen(URL) as resp:
        raw = resp.read().decode()
    rows = [ln for ln in raw.splitlines() if ln.strip()]
    if len(rows) != EXPECTED_ROWS:
        raise SystemExit(f"expected {EXPECTED_ROWS} rows, got {len(rows)}")
    bad = [ln for ln in rows if len(ln.split(",")) != EXPECTED_COLS]
    if bad:
        raise SystemExit(f"{len(bad)} rows do not have {EXPECTED_COLS} columns")
    with open(args.out, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    print(f"wrote {len(rows)} rows to {args.out}")


if __name__ == "__main__":
    main()
