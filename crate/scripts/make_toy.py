"""Writes the small synthetic corpus in data/toy: three shapes, five demos each."""
import math
import os
import random

OUT = os.path.join(os.path.dirname(__file__), "..", "data", "toy")
N = 40


def line(s):
    return [(-40 + 80 * s, -30 + 60 * s)]


def arc(s):
    a = math.pi * s
    return [(-40 * math.cos(a), 40 * math.sin(a))]


def zig(s):
    return [(-40 + 80 * s, 20 * math.sin(3 * math.pi * s))]


def main():
    rng = random.Random(11)
    with open(os.path.join(OUT, "concepts.csv"), "w") as f:
        f.write("shape,concept\n")
        for name in ("Line", "Arc", "Zig"):
            f.write(f"{name},{name}\n")
    for name, fn in (("Line", line), ("Arc", arc), ("Zig", zig)):
        with open(os.path.join(OUT, f"{name}.csv"), "w") as f:
            f.write("demo,t,y,z\n")
            for d in range(5):
                sx, sy = 1 + rng.uniform(-0.08, 0.08), 1 + rng.uniform(-0.08, 0.08)
                dx, dy = rng.uniform(-3, 3), rng.uniform(-3, 3)
                for i in range(N):
                    s = i / (N - 1)
                    (y, z), = fn(s)
                    y = sx * y + dx + rng.uniform(-0.3, 0.3)
                    z = sy * z + dy + rng.uniform(-0.3, 0.3)
                    f.write(f"{d},{s:.6f},{y:.6f},{z:.6f}\n")


if __name__ == "__main__":
    main()
