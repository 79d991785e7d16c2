"""Reference MS-SSIM values for formula-defined image pairs.

Each case is (channels, height, width, variant). The images are
  x[c, i, j] = 0.5 + 0.3 sin(0.07 (c + 1) j + 0.11 i) + 0.1 cos(0.05 i j / w)
  y = x + a sin(0.9 i + 1.3 j + c) + b cos(0.013 (i + 2 j))
with (a, b) chosen per variant. The C++ test rebuilds them from the same
formula. Values come from pytorch_msssim in float64, data_range 1.
"""

import math

import torch
from pytorch_msssim import ms_ssim

CASES = [(3, 176, 168, 0), (1, 200, 161, 1), (3, 163, 190, 2)]
VARIANTS = {0: (0.05, 0.02), 1: (0.15, 0.0), 2: (0.01, 0.08)}


def images(c, h, w, variant):
    a, b = VARIANTS[variant]
    x = torch.zeros(1, c, h, w, dtype=torch.float64)
    y = torch.zeros_like(x)
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                v = 0.5 + 0.3 * math.sin(0.07 * (ch + 1) * j + 0.11 * i) + 0.1 * math.cos(0.05 * i * j / w)
                x[0, ch, i, j] = v
                y[0, ch, i, j] = v + a * math.sin(0.9 * i + 1.3 * j + ch) + b * math.cos(0.013 * (i + 2 * j))
    return x, y


if __name__ == "__main__":
    with open("msssim_reference.txt", "w") as f:
        f.write("# channels height width variant ms_ssim\n")
        for c, h, w, v in CASES:
            x, y = images(c, h, w, v)
            val = ms_ssim(x, y, data_range=1.0, size_average=True).item()
            f.write(f"{c} {h} {w} {v} {val:.17g}\n")
