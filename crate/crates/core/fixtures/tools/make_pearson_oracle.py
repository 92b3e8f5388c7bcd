"""Writes random (x, y) datasets with Pearson r and two-sided p computed by
mpmath at 50 significant digits. Run from this directory:

    python3 make_pearson_oracle.py
"""
import csv
import json
import os
import random

import mpmath as mp

mp.mp.dps = 50
HERE = os.path.dirname(os.path.abspath(__file__))
ROOT = os.path.dirname(HERE)
OUT = os.path.join(ROOT, "oracle", "pearson.json")
OUT_TABLE = os.path.join(ROOT, "oracle", "pearson-table4.json")


def pearson(xs, ys):
    n = len(xs)
    X = [mp.mpf(v) for v in xs]
    Y = [mp.mpf(v) for v in ys]
    mx, my = mp.fsum(X) / n, mp.fsum(Y) / n
    sxy = mp.fsum((a - mx) * (b - my) for a, b in zip(X, Y))
    sxx = mp.fsum((a - mx) ** 2 for a in X)
    syy = mp.fsum((b - my) ** 2 for b in Y)
    r = sxy / mp.sqrt(sxx * syy)
    nu = n - 2
    t = r * mp.sqrt(nu / (1 - r * r))
    # Two-sided tail of Student's t by direct integration of the density.
    dens = lambda s: mp.gamma((nu + 1) / mp.mpf(2)) / (mp.sqrt(nu * mp.pi) * mp.gamma(nu / mp.mpf(2))) * (1 + s * s / nu) ** (-(nu + 1) / mp.mpf(2))
    p = 2 * mp.quad(dens, [abs(t), mp.inf])
    return r, p


def main():
    rng = random.Random(20240917)
    cases = []
    while len(cases) < 100:
        n = rng.randint(3, 50)
        slope = rng.uniform(-2, 2)
        noise = rng.choice([0.05, 0.3, 1.0, 3.0])
        xs = [round(rng.gauss(0, 1), 6) for _ in range(n)]
        ys = [round(slope * x + rng.gauss(0, noise), 6) for x in xs]
        if len(set(xs)) < 2 or len(set(ys)) < 2:
            continue
        r, p = pearson(xs, ys)
        cases.append({"x": xs, "y": ys, "r": mp.nstr(r, 20), "p": mp.nstr(p, 20)})
    with open(OUT, "w") as f:
        json.dump(cases, f, indent=1)
        f.write("\n")

    with open(os.path.join(ROOT, "tables", "table4_path1.csv")) as f:
        rows = list(csv.DictReader(line for line in f if not line.startswith("#")))
    table = {}
    for metric in ("pcc", "cs", "ed"):
        xs = [r[metric] for r in rows]
        gains = [r["gain"] for r in rows]
        r, p = pearson(xs, gains)
        ra, pa = pearson(xs, [abs(float(g)) for g in gains])
        table[metric] = {
            "n": len(xs),
            "r_gain": mp.nstr(r, 20),
            "p_gain": mp.nstr(p, 20),
            "r_abs_gain": mp.nstr(ra, 20),
            "p_abs_gain": mp.nstr(pa, 20),
        }
    with open(OUT_TABLE, "w") as f:
        json.dump(table, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
