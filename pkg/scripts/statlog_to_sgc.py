"""Convert the Statlog ``german.data`` file into the numeric 21-column credit layout.

The Statlog release codes categorical attributes as ``A11``, ``A34`` and so on.
This script maps each code onto the integer coding of the corrected South
German Credit release, so the result can be read by ``dvge.data.load_credit``.
Usage: python scripts/statlog_to_sgc.py german.data out.asc
"""
from __future__ import annotations

import argparse
from pathlib import Path

from dvge.data import CREDIT_GERMAN_HEADER

# column index -> {statlog code: integer code}; numeric columns are absent
CODE_MAPS: dict[int, dict[str, int]] = {
    0: {"A14": 1, "A11": 2, "A12": 3, "A13": 4},
    2: {"A33": 0, "A34": 1, "A30": 2, "A32": 3, "A31": 4},
    3: {"A410": 0, **{f"A4{i}": i + 1 for i in range(10)}},
    5: {"A65": 1, "A61": 2, "A62": 3, "A63": 4, "A64": 5},
    6: {f"A7{i}": i for i in range(1, 6)},
    8: {"A91": 1, "A92": 2, "A93": 2, "A94": 3, "A95": 4},
    9: {"A101": 1, "A102": 2, "A103": 3},
    11: {"A124": 1, "A123": 2, "A122": 3, "A121": 4},
    13: {"A141": 1, "A142": 2, "A143": 3},
    14: {"A153": 1, "A151": 2, "A152": 3},
    16: {f"A17{i}": i for i in range(1, 5)},
    18: {"A191": 1, "A192": 2},
    19: {"A201": 1, "A202": 2},
}
# Statlog: 1 = good, 2 = bad; target layout: 1 = good, 0 = bad
LABEL_MAP = {"1": 1, "2": 0}


def convert_line(line: str, lineno: int) -> list[int]:
    tokens = line.split()
    if len(tokens) != 21:
        raise ValueError(f"line {lineno}: expected 21 fields, found {len(tokens)}")
    out = []
    for j, tok in enumerate(tokens[:20]):
        if j in CODE_MAPS:
            try:
                out.append(CODE_MAPS[j][tok])
            except KeyError:
                raise ValueError(f"line {lineno}: unknown code {tok!r} in column {j + 1}") from None
        else:
            out.append(int(tok))
    out.append(LABEL_MAP[tokens[20]])
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source", type=Path)
    ap.add_argument("target", type=Path)
    args = ap.parse_args(argv)
    rows = [convert_line(line, i) for i, line in enumerate(args.source.read_text().splitlines(), 1) if line.strip()]
    with args.target.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(" ".join(CREDIT_GERMAN_HEADER) + "\n")
        for row in rows:
            fh.write(" ".join(map(str, row)) + "\n")
    print(f"wrote {len(rows)} rows to {args.target}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
