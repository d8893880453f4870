#!/usr/bin/env python3
"""Convert Philadelphia Fed real-time CPI and individual SPF files to the
canonical inflcast CSVs.

Inputs may be .xlsx (needs openpyxl) or .csv exports of the first sheet.

  cpi:  quarterly-vintage file with monthly observations, a DATE column
        ("1994:07") and one PCPIyyQq column per vintage.
  spf:  individual responses with YEAR, QUARTER, ID and CPI1..CPI6, where
        CPI2 is the current quarter.

Usage: adapt_philly.py --cpi pcpiQvMd.xlsx --spf Individual_CPI.xlsx --out raw/
"""

import argparse
import re
import sys
from pathlib import Path

import pandas as pd

VINTAGE_COL = re.compile(r"^PCPI(\d{2})Q([1-4])$", re.IGNORECASE)
MISSING = ["#N/A", "NA", "", "."]


def read_table(path):
    path = Path(path)
    if path.suffix.lower() in (".xlsx", ".xls"):
        return pd.read_excel(path, na_values=MISSING)
    return pd.read_csv(path, na_values=MISSING)


def vintage_label(col):
    m = VINTAGE_COL.match(col.strip())
    if not m:
        return None
    yy = int(m.group(1))
    year = 1900 + yy if yy >= 40 else 2000 + yy
    return f"{year}Q{m.group(2)}"


def month_label(value):
    text = str(value).strip()
    m = re.match(r"^(\d{4})[:\-M](\d{1,2})$", text)
    if not m:
        raise ValueError(f"unrecognised month {text!r}")
    return f"{m.group(1)}-{int(m.group(2)):02d}"


def adapt_cpi(df):
    df = df.rename(columns=lambda c: str(c).strip())
    date_col = next((c for c in df.columns if c.upper() == "DATE"), None)
    if date_col is None:
        raise ValueError("cpi file has no DATE column")
    vintages = {c: vintage_label(c) for c in df.columns if vintage_label(c)}
    if not vintages:
        raise ValueError("cpi file has no PCPIyyQq vintage columns")
    long = df[[date_col, *vintages]].melt(id_vars=date_col, var_name="col", value_name="level")
    long = long.dropna(subset=["level"])
    out = pd.DataFrame(
        {
            "vintage": long["col"].map(vintages),
            "month": long[date_col].map(month_label),
            "level": pd.to_numeric(long["level"]),
        }
    )
    return out.sort_values(["vintage", "month"]).reset_index(drop=True)


def adapt_spf(df):
    df = df.rename(columns=lambda c: str(c).strip().upper())
    needed = {"YEAR", "QUARTER", "ID"} | {f"CPI{k}" for k in range(2, 7)}
    missing = needed - set(df.columns)
    if missing:
        raise ValueError(f"spf file lacks columns {sorted(missing)}")
    rows = []
    for h in range(1, 6):
        part = df[["YEAR", "QUARTER", "ID", f"CPI{h + 1}"]].dropna()
        rows.append(
            pd.DataFrame(
                {
                    "origin": part["YEAR"].astype(int).astype(str) + "Q" + part["QUARTER"].astype(int).astype(str),
                    "horizon": h,
                    "forecaster_id": part["ID"].astype(int).astype(str),
                    "value": pd.to_numeric(part[f"CPI{h + 1}"]),
                }
            )
        )
    out = pd.concat(rows, ignore_index=True)
    dup = out.duplicated(["origin", "horizon", "forecaster_id"], keep=False)
    if dup.any():
        raise ValueError(f"{int(dup.sum())} duplicate (origin, horizon, forecaster_id) rows")
    key = out["forecaster_id"].astype(int)
    return (
        out.assign(_k=key)
        .sort_values(["origin", "horizon", "_k"])
        .drop(columns="_k")
        .reset_index(drop=True)
    )


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cpi", required=True)
    ap.add_argument("--spf", required=True)
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cpi = adapt_cpi(read_table(args.cpi))
    spf = adapt_spf(read_table(args.spf))
    cpi.to_csv(out / "cpi_vintages.csv", index=False, float_format="%.10g")
    spf.to_csv(out / "spf_panel.csv", index=False, float_format="%.10g")
    print(f"cpi_vintages.csv: {len(cpi)} rows, spf_panel.csv: {len(spf)} rows", file=sys.stderr)


if __name__ == "__main__":
    main()
