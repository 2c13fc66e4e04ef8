#!/usr/bin/env python3
"""Fetch and format the OECD per-capita GDP panel (1960-2003, 16 countries).

The study data is the comparative-politics German-reunification panel
("repgermany"), distributed with several synthetic-control packages. This
script downloads a copy (or reads a local file you already have), pivots it
to the wide layout the run configs expect, validates it, and writes
tests/data/gdp.csv.

Usage:
    python scripts/fetch_gdp_data.py [--source URL_OR_PATH] [--out tests/data/gdp.csv]

Accepted source layouts:
  * long CSV with columns (country, year, gdp) -- case-insensitive, extra
    columns ignored;
  * wide CSV with a year/time column followed by one column per country.

Country naming may use full names or ISO3 codes; both are mapped.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import urllib.request
from pathlib import Path

LABELS = [
    "AUT", "USA", "NLD", "PRT", "BEL", "NOR", "AUS", "FRA",
    "DEU", "ITA", "CHE", "DNK", "NZD", "GBR", "ESP", "JPN",
]
YEARS = list(range(1960, 2004))

NAME_MAP = {
    "austria": "AUT", "usa": "USA", "united states": "USA", "united states of america": "USA",
    "netherlands": "NLD", "portugal": "PRT", "belgium": "BEL", "norway": "NOR",
    "australia": "AUS", "france": "FRA", "germany": "DEU", "west germany": "DEU",
    "italy": "ITA", "switzerland": "CHE", "denmark": "DNK", "new zealand": "NZD",
    "uk": "GBR", "united kingdom": "GBR", "spain": "ESP", "japan": "JPN",
    "nzl": "NZD", "deu": "DEU", "gbr": "GBR",
}
NAME_MAP.update({lab.lower(): lab for lab in LABELS})

DEFAULT_SOURCES = [
    "https://raw.githubusercontent.com/synth-inference/synthdid/master/data/repgermany.csv",
    "https://raw.githubusercontent.com/OscarEngelbrektson/SyntheticControlMethods/master/examples/datasets/german_reunification.csv",
]


def _read_source(source: str) -> str:
    if Path(source).exists():
        return Path(source).read_text()
    with urllib.request.urlopen(source, timeout=60) as resp:
        return resp.read().decode("utf-8")


def _canon(name: str) -> str | None:
    return NAME_MAP.get(name.strip().strip('"').lower())


def parse_table(text: str) -> dict[str, dict[int, float]]:
    rows = list(csv.reader(io.StringIO(text)))
    header = [h.strip().strip('"').lower() for h in rows[0]]
    data: dict[str, dict[int, float]] = {lab: {} for lab in LABELS}
    cols = {name: i for i, name in enumerate(header)}
    long_keys = [k for k in ("country", "state", "unit") if k in cols]
    year_key = next((k for k in ("year", "time", "period") if k in cols), None)
    value_key = next((k for k in ("gdp", "gdpcap", "y", "value") if k in cols), None)
    if long_keys and year_key is not None and value_key is not None:
        for row in rows[1:]:
            lab = _canon(row[cols[long_keys[0]]])
            if lab is None:
                continue
            year = int(float(row[cols[year_key]]))
            if year in YEARS and row[cols[value_key]].strip():
                data[lab][year] = float(row[cols[value_key]])
        return data
    if year_key is not None:
        for i, name in enumerate(header):
            lab = _canon(name)
            if lab is None:
                continue
            for row in rows[1:]:
                year = int(float(row[cols[year_key]]))
                if year in YEARS and row[i].strip():
                    data[lab][year] = float(row[i])
        return data
    raise SystemExit("unrecognized table layout: need (country, year, gdp) or wide-by-country")


def validate(data: dict[str, dict[int, float]]) -> list[str]:
    problems = []
    for lab in LABELS:
        missing = [y for y in YEARS if y not in data[lab]]
        if missing:
            problems.append(f"{lab}: missing years {missing[:5]}{'...' if len(missing) > 5 else ''}")
            continue
        bad = [y for y in YEARS if not data[lab][y] > 0]
        if bad:
            problems.append(f"{lab}: non-positive GDP in years {bad}")
    return problems


def write_wide(data: dict[str, dict[int, float]], out: Path) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", *LABELS])
        for year in YEARS:
            w.writerow([year, *(format(data[lab][year], ".17g") for lab in LABELS)])


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--source", default=None, help="URL or local file (long or wide CSV)")
    ap.add_argument("--out", default="tests/data/gdp.csv")
    args = ap.parse_args()

    sources = [args.source] if args.source else DEFAULT_SOURCES
    last_err = None
    for src in sources:
        try:
            text = _read_source(src)
            data = parse_table(text)
            problems = validate(data)
            if problems:
                last_err = f"{src}: " + "; ".join(problems)
                continue
            write_wide(data, Path(args.out))
            print(f"wrote {args.out} from {src}")
            return 0
        except Exception as exc:  # try the next mirror
            last_err = f"{src}: {exc}"
    print(f"no usable source; last error: {last_err}", file=sys.stderr)
    print("provide --source pointing at a local copy of the panel", file=sys.stderr)
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
