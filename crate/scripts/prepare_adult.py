#!/usr/bin/env python3
"""Convert the UCI Adult files into headered CSVs with 0/1 labels plus a schema.

Usage: prepare_adult.py RAW_DIR OUT_DIR
"""

import csv
import json
import sys
from pathlib import Path

COLUMNS = [
    ("age", "numeric", 100),
    ("workclass", "categorical", None),
    ("fnlwgt", "numeric", 100),
    ("education", "categorical", None),
    ("education_num", "numeric", 100),
    ("marital_status", "categorical", None),
    ("occupation", "categorical", None),
    ("relationship", "categorical", None),
    ("race", "categorical", None),
    ("sex", "categorical", None),
    ("capital_gain", "numeric", 1000),
    ("capital_loss", "numeric", 1000),
    ("hours_per_week", "numeric", 100),
    ("native_country", "categorical", None),
]


def convert(src: Path, dst: Path) -> int:
    rows = 0
    with src.open() as f, dst.open("w", newline="") as out:
        w = csv.writer(out)
        w.writerow([c[0] for c in COLUMNS] + ["label"])
        for line in f:
            cells = [c.strip() for c in line.split(",")]
            if len(cells) != len(COLUMNS) + 1:
                continue
            label = cells[-1].rstrip(".")
            w.writerow(cells[:-1] + [1 if label == ">50K" else 0])
            rows += 1
    return rows


def main() -> None:
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    raw, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    n_train = convert(raw / "adult.data", out / "adult_train.csv")
    n_test = convert(raw / "adult.test", out / "adult_test.csv")
    schema = {
        "columns": [
            {"name": n, "kind": k, **({"granularity": g} if g else {})} for n, k, g in COLUMNS
        ],
        "label_column": "label",
    }
    (out / "schema.json").write_text(json.dumps(schema, indent=2) + "\n")
    print(f"train rows {n_train}, test rows {n_test}")


if __name__ == "__main__":
    main()
