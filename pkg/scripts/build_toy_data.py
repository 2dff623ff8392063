"""Regenerate the bundled toy CSVs under data/toy/.

Sources:
  iris, wine, breast_cancer  -- scikit-learn's bundled copies of the UCI files
  ionosphere, mushroom       -- the KEEL repository copies shipped in the
                                ``keel-ds`` wheel (pass its path with --keel-wheel,
                                or let the script ``pip download`` it)
  balance_scale              -- regenerated from the UCI generating rule
                                (all 5**4 attribute combinations)

Banknote, Algerian forest fires, cervical cancer and car evaluation are not
available offline; drop their CSV + schema into data/toy/ to enable them.

Usage:
    python scripts/build_toy_data.py [--keel-wheel PATH] [--out data/toy]
"""
import argparse
import csv
import itertools
import json
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

from sklearn import datasets

MUSHROOM_COLUMNS = [
    "cap-shape", "cap-surface", "cap-color", "bruises", "odor",
    "gill-attachment", "gill-spacing", "gill-size", "gill-color",
    "stalk-shape", "stalk-root", "stalk-surface-above-ring",
    "stalk-surface-below-ring", "stalk-color-above-ring",
    "stalk-color-below-ring", "veil-type", "veil-color", "ring-number",
    "ring-type", "spore-print-color", "population", "habitat",
]
# KEEL drops the constant second attribute of the UCI file.
IONOSPHERE_COLUMNS = ["a01"] + [f"a{i:02d}" for i in range(3, 35)]


def write(out, name, header, rows, kinds):
    with open(out / f"{name}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    schema = [{"name": h, "kind": k} for h, k in zip(header, kinds)]
    with open(out / f"{name}.schema.json", "w") as fh:
        json.dump(schema, fh, indent=1)
        fh.write("\n")
    print(f"{name}: {len(rows)} rows, {len(header) - 1} features")


def from_sklearn(out, name, bunch):
    header = [c.replace(" ", "_").replace("(cm)", "cm").strip("_") for c in bunch.feature_names]
    header = [h.replace("_cm", "") if h.endswith("_cm") else h for h in header] + ["class"]
    rows = [[repr(float(v)) for v in x] + [bunch.target_names[t]] for x, t in zip(bunch.data, bunch.target)]
    write(out, name, header, rows, ["numeric"] * (len(header) - 1) + ["label"])


def keel_rows(wheel, member):
    with zipfile.ZipFile(wheel) as z:
        text = z.read(member).decode()
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("@"):
            continue
        rows.append([tok.strip() for tok in line.split(",")])
    return rows


def balance_scale():
    rows = []
    for lw, ld, rw, rd in itertools.product(range(1, 6), repeat=4):
        left, right = lw * ld, rw * rd
        cls = "L" if left > right else "R" if right > left else "B"
        rows.append([str(lw), str(ld), str(rw), str(rd), cls])
    return rows


def locate_keel(path):
    if path:
        return Path(path)
    tmp = Path(tempfile.mkdtemp())
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q",
                    "-d", str(tmp), "keel-ds==0.2.5"], check=True)
    return next(tmp.glob("keel_ds-*.whl"))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--keel-wheel", default=None)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data" / "toy"))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    from_sklearn(out, "iris", datasets.load_iris())
    from_sklearn(out, "wine", datasets.load_wine())
    from_sklearn(out, "breast_cancer", datasets.load_breast_cancer())

    header = ["left_weight", "left_distance", "right_weight", "right_distance", "class"]
    write(out, "balance_scale", header, balance_scale(), ["numeric"] * 4 + ["label"])

    wheel = locate_keel(args.keel_wheel)
    base = "keel_ds/data/balanced/raw/"
    rows = keel_rows(wheel, base + "ionosphere.dat")
    write(out, "ionosphere", IONOSPHERE_COLUMNS + ["class"], rows,
          ["numeric"] * len(IONOSPHERE_COLUMNS) + ["label"])
    rows = keel_rows(wheel, base + "mushroom.dat")
    write(out, "mushroom", MUSHROOM_COLUMNS + ["class"], rows,
          ["categorical"] * len(MUSHROOM_COLUMNS) + ["label"])


if __name__ == "__main__":
    main()
