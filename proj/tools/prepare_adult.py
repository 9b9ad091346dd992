#!/usr/bin/env python3
"""Builds data/adult.csv from the UCI Adult files adult.data and adult.test.

Rows with missing values ("?") are kept; the loader drops and counts them.
"""

import argparse
import csv
import sys

COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
]


def read_rows(path):
    with open(path, newline="") as f:
        for fields in csv.reader(f, skipinitialspace=True):
            if len(fields) != len(COLUMNS):
                continue  # blank lines and the header comment in adult.test
            yield [v.strip() for v in fields]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--train", required=True, help="path to adult.data")
    parser.add_argument("--test", required=True, help="path to adult.test")
    parser.add_argument("--out", default="data/adult.csv")
    args = parser.parse_args()

    count = 0
    with open(args.out, "w", newline="") as out:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(COLUMNS)
        for path in (args.train, args.test):
            for row in read_rows(path):
                writer.writerow(row)
                count += 1
    print(f"wrote {count} rows to {args.out}", file=sys.stderr)


if __name__ == "__main__":
    main()
