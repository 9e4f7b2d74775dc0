"""Brute-force sigma sweep for the scale-normalized LoG at the center of a
Gaussian bump whose FWHM equals the lesion diameter. Writes the argmax per
diameter; the values are frozen into log_golden.hpp."""
import numpy as np
from scipy.ndimage import correlate1d

N = 64
C = N // 2


def bump(diameter):
    s = diameter / (2 * np.sqrt(2 * np.log(2)))
    g = np.arange(N) - C
    z, y, x = np.meshgrid(g, g, g, indexing="ij")
    return 80.0 * np.exp(-(x * x + y * y + z * z) / (2 * s * s))


def center_response(v, sigma):
    r = int(np.ceil(np.sqrt(3) * sigma))
    i = np.arange(-r, r + 1)
    k = np.exp(-0.5 * i * i / sigma ** 2)
    k /= k.sum()
    g = v
    for axis in range(3):
        g = correlate1d(g, k, axis=axis, mode="reflect")
    lap = (g[C - 1, C, C] + g[C + 1, C, C] + g[C, C - 1, C] + g[C, C + 1, C]
           + g[C, C, C - 1] + g[C, C, C + 1] - 6 * g[C, C, C])
    return -sigma * sigma * lap


for d in (3, 5, 8, 12):
    v = bump(d)
    sigmas = np.round(np.arange(0.5, 10.0001, 0.1), 1)
    resp = [center_response(v, s) for s in sigmas]
    best = sigmas[int(np.argmax(resp))]
    analytic = d / (2 * np.sqrt(2 * np.log(2))) * np.sqrt(2 / 3)
    print(f"{d} {best:.1f} analytic {analytic:.3f}")
