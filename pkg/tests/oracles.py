"""Brute-force reference implementations used only by the tests.

Each one is a direct loop over the defining formula and shares no code with
the package.
"""

import math

import numpy as np


def reflect_index(i, n):
    """Half-sample symmetric boundary: ... b a | a b c ... c | c b ..."""
    period = 2 * n
    i = i % period
    return i if i < n else period - 1 - i


def luma(img):
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def convolve_loop(img, kernel):
    """Reflect-padded 2-D convolution by nested loops (kernel flipped)."""
    h, w = img.shape[:2]
    s = kernel.shape[0]
    r = s // 2
    out = np.zeros_like(img, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            acc = np.zeros(img.shape[2:])
            for u in range(-r, r + 1):
                for v in range(-r, r + 1):
                    acc = acc + kernel[u + r, v + r] * img[reflect_index(y - u, h), reflect_index(x - v, w)]
            out[y, x] = acc
    return out


def laplacian_variance_loop(img):
    y = luma(img)
    h, w = y.shape
    vals = []
    for i in range(h):
        for j in range(w):
            c = y[i, j]
            up = y[reflect_index(i - 1, h), j]
            down = y[reflect_index(i + 1, h), j]
            left = y[i, reflect_index(j - 1, w)]
            right = y[i, reflect_index(j + 1, w)]
            vals.append(up + down + left + right - 4 * c)
    m = sum(vals) / len(vals)
    return sum((v - m) ** 2 for v in vals) / len(vals)


def psnr_loop(a, b):
    se = 0.0
    n = 0
    for v1, v2 in zip(np.ravel(a), np.ravel(b)):
        se += (float(v1) - float(v2)) ** 2
        n += 1
    mse = se / n
    if mse < 1e-10:
        return 100.0
    return 10 * math.log10(1.0 / mse)


def ssim_loop(a, b, size=11, sigma=1.5):
    ya, yb = luma(a), luma(b)
    ax = [i - (size - 1) / 2 for i in range(size)]
    g = [[math.exp(-(p * p + q * q) / (2 * sigma * sigma)) for q in ax] for p in ax]
    tot = sum(sum(row) for row in g)
    g = [[v / tot for v in row] for row in g]
    c1, c2 = 0.01**2, 0.03**2
    h, w = ya.shape
    vals = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            ma = mb = 0.0
            for p in range(size):
                for q in range(size):
                    ma += g[p][q] * ya[i + p, j + q]
                    mb += g[p][q] * yb[i + p, j + q]
            va = vb = cov = 0.0
            for p in range(size):
                for q in range(size):
                    da = ya[i + p, j + q] - ma
                    db = yb[i + p, j + q] - mb
                    va += g[p][q] * da * da
                    vb += g[p][q] * db * db
                    cov += g[p][q] * da * db
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def central_difference(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)
