#!/usr/bin/env python3
"""Independent golden-value computation for the frozen test cells.

Brute-force implementations kept deliberately separate from the C++ library:
pair sums run over a 5^3 image search, the schedule value comes from the
closed form, and the k-hot bits are recomputed from the binning definition.
Output is frozen into tests/data/golden/goldens_v1.json.
"""

import json
import math
import os

# element rows used by the frozen cells (must match the embedded table)
CHI = {"Fe": 1.83, "O": 3.44}
RCOV = {"Fe": 1.32, "O": 0.66}

# oracle defaults
CUTOFF = 6.0
PAIR_STRENGTH = 0.4
IONIC_WEIGHT = 0.3
GAP_BASE = 0.3
GAP_CHI_SCALE = 2.0
GAP_DENSITY_SCALE = 10.0

A = 4.2  # cubic lattice constant of the frozen Fe2O3 cell
FE2O3_CELL = [
    ("Fe", (0.00, 0.00, 0.00)),
    ("Fe", (0.50, 0.50, 0.50)),
    ("O", (0.25, 0.25, 0.25)),
    ("O", (0.75, 0.75, 0.75)),
    ("O", (0.50, 0.50, 0.00)),
]


def min_image_distance(fi, fj):
    best = float("inf")
    for ax in range(-2, 3):
        for ay in range(-2, 3):
            for az in range(-2, 3):
                d = math.sqrt(
                    ((fj[0] - fi[0] + ax) * A) ** 2
                    + ((fj[1] - fi[1] + ay) * A) ** 2
                    + ((fj[2] - fi[2] + az) * A) ** 2
                )
                best = min(best, d)
    return best


def formation_energy(cell):
    total = 0.0
    n = len(cell)
    for i in range(n):
        for j in range(i + 1, n):
            si, fi = cell[i]
            sj, fj = cell[j]
            d = min_image_distance(fi, fj)
            if d > CUTOFF:
                continue
            r0 = RCOV[si] + RCOV[sj]
            q6 = (r0 / d) ** 6
            total += PAIR_STRENGTH * (q6 * q6 - 2.0 * q6)
            total -= IONIC_WEIGHT * abs(CHI[si] - CHI[sj]) / d
    return total / n


def band_gap(cell):
    n = len(cell)
    chi_sum = 0.0
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            chi_sum += abs(CHI[cell[i][0]] - CHI[cell[j][0]])
            pairs += 1
    density = n / (A ** 3)
    g = GAP_BASE + GAP_CHI_SCALE * chi_sum / pairs - GAP_DENSITY_SCALE * density
    return max(0.0, g)


def cosine_alpha_bar(t, T, s=0.008):
    def f(x):
        return math.cos(((x / T + s) / (1 + s)) * math.pi / 2.0) ** 2

    return f(t) / f(0)


def fe_khot_bits():
    group, period, chi, radius, z = 8, 4, 1.83, 1.32, 26
    bits = [group - 1, 18 + (period - 1)]
    bits.append(25 + min(9, int(chi / 4.0 * 10)))
    bits.append(35 + min(3, int((radius - 0.2) / 2.4 * 4)))
    bits.append(39 + min(24, int((z - 1) / 86.0 * 25)))
    return sorted(bits)


def main():
    goldens = {
        "fe2o3_cell": {
            "lattice_a": A,
            "species": [s for s, _ in FE2O3_CELL],
            "frac_coords": [list(f) for _, f in FE2O3_CELL],
        },
        "fe2o3_formation_energy": formation_energy(FE2O3_CELL),
        "fe2o3_band_gap": band_gap(FE2O3_CELL),
        "cosine_alpha_bar_t500_T1000": cosine_alpha_bar(500, 1000),
        "fe_khot_bits": fe_khot_bits(),
    }
    out_dir = os.path.join(os.path.dirname(__file__), "..", "tests", "data", "golden")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "goldens_v1.json")
    with open(path, "w") as f:
        json.dump(goldens, f, indent=2)
        f.write("\n")
    print(f"wrote {os.path.normpath(path)}")
    for k, v in goldens.items():
        if not isinstance(v, dict):
            print(f"  {k} = {v}")


if __name__ == "__main__":
    main()
