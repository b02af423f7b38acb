#!/usr/bin/env python3
"""Build the annual `year,I,D,C` market file from Robert Shiller's monthly data.

    python3 scripts/fetch_shiller.py                      # download, write data/shiller_annual.csv
    python3 scripts/fetch_shiller.py --xls ie_data.xls    # use a local copy

I is the average monthly close for the year, D the average of the monthly
(annualised) dividend, C the January CPI. Needs pandas and xlrd.
"""

import argparse
import io
import sys
from pathlib import Path

import pandas as pd

URL = "http://www.econ.yale.edu/~shiller/data/ie_data.xls"


def load_monthly(source):
    if source is None:
        import requests

        resp = requests.get(URL, timeout=60)
        resp.raise_for_status()
        source = io.BytesIO(resp.content)
    raw = pd.read_excel(source, sheet_name="Data", skiprows=7, usecols="A:E")
    raw.columns = ["date", "price", "dividend", "earnings", "cpi"]
    raw = raw[pd.to_numeric(raw["date"], errors="coerce").notna()].copy()
    # Dates are year.month with October written as .1
    raw["year"] = raw["date"].astype(float).astype(int)
    raw["month"] = ((raw["date"].astype(float) - raw["year"]) * 100).round().astype(int)
    for col in ("price", "dividend", "cpi"):
        raw[col] = pd.to_numeric(raw[col], errors="coerce")
    return raw


def annual(monthly, first, last):
    rows = []
    for year in range(first, last + 1):
        m = monthly[monthly["year"] == year]
        jan = m[m["month"] == 1]
        if len(m) < 12 or jan.empty or m["dividend"].isna().any():
            sys.exit(f"incomplete monthly data for {year}")
        rows.append((year, m["price"].mean(), m["dividend"].mean(), float(jan["cpi"].iloc[0])))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--xls", help="local ie_data.xls instead of downloading")
    ap.add_argument("--first-year", type=int, default=1871)
    ap.add_argument("--last-year", type=int, default=2020)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data" / "shiller_annual.csv"))
    args = ap.parse_args()

    rows = annual(load_monthly(args.xls), args.first_year, args.last_year)
    with open(args.out, "w") as f:
        f.write(f"# derived from {URL}\n")
        f.write("year,I,D,C\n")
        for year, index, dividend, cpi in rows:
            f.write(f"{year},{index:.6f},{dividend:.6f},{cpi:.6f}\n")
    print(f"wrote {len(rows)} years to {args.out}")


if __name__ == "__main__":
    main()
