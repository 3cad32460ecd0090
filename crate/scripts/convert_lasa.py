#!/usr/bin/env python3
"""Convert the LASA handwriting .mat files into the per-shape CSV layout.

Usage: convert_lasa.py <DataSet dir with *.mat> <output dir>

Writes `<shape>.csv` (header `demo,t,y,z`) for each of the 26 single-pattern
shapes and a `concepts.csv` mapping shapes onto the 22 concept names.
The Multi_Models_* files are skipped.
"""
import os
import sys

from scipy.io import loadmat

CONCEPTS = {
    "Angle": "Angle",
    "BendedLine": "BendedLine",
    "DoubleBendedLine": "BendedLine",
    "CShape": "CShape",
    "Sharpc": "CShape",
    "GShape": "GShape",
    "heee": "Heee",
    "JShape": "JShape",
    "JShape_2": "JShape",
    "Khamesh": "Khamesh",
    "Leaf_1": "Leaf",
    "Leaf_2": "Leaf",
    "Line": "Line",
    "LShape": "LShape",
    "NShape": "NShape",
    "PShape": "PShape",
    "RShape": "RShape",
    "Saeghe": "Saeghe",
    "Sine": "Sine",
    "Snake": "Snake",
    "Spoon": "Spoon",
    "Sshape": "Sshape",
    "Trapezoid": "Trapezoid",
    "Worm": "Worm",
    "WShape": "WShape",
    "Zshape": "ZShape",
}


def main():
    src, dst = sys.argv[1], sys.argv[2]
    os.makedirs(dst, exist_ok=True)
    for shape in sorted(CONCEPTS):
        mat = loadmat(os.path.join(src, shape + ".mat"))
        demos = mat["demos"]
        with open(os.path.join(dst, shape + ".csv"), "w") as out:
            out.write("demo,t,y,z\n")
            for d in range(demos.shape[1]):
                rec = demos[0, d]
                pos = rec["pos"][0, 0]
                t = rec["t"][0, 0][0]
                for k in range(pos.shape[1]):
                    out.write("%d,%.6f,%.6f,%.6f\n" % (d, t[k], pos[0, k], pos[1, k]))
    with open(os.path.join(dst, "concepts.csv"), "w") as out:
        out.write("shape,concept\n")
        for shape in sorted(CONCEPTS):
            out.write("%s,%s\n" % (shape, CONCEPTS[shape]))


if __name__ == "__main__":
    main()
