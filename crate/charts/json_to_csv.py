#!/usr/bin/env python3
"""Convert an LMS table in the rcpchgrowth JSON layout to the chart CSV format.

Usage: json_to_csv.py INPUT.json OUTPUT.csv [--half-months]

Ages are stored as decimal years upstream; they are converted to months and
rounded to the nearest half month (CDC) or whole month (WHO).
"""
import json
import sys


def main():
    src, dst = sys.argv[1], sys.argv[2]
    quantum = 0.5 if "--half-months" in sys.argv else 1.0
    table = json.load(open(src))["measurement"]["bmi"]
    with open(dst, "w", newline="\n") as out:
        out.write("sex,age_months,lambda,mu,sigma\n")
        for key, code in (("male", "M"), ("female", "F")):
            for row in table[key]:
                months = round(row["decimal_age"] * 12.0 / quantum) * quantum
                out.write(f"{code},{months:g},{row['L']!r},{row['M']!r},{row['S']!r}\n")


if __name__ == "__main__":
    main()
