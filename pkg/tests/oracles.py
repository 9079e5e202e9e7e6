"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports wcellnet; every routine is written from scratch with
plain loops or scipy so that agreement is meaningful.
"""

import math

import numpy as np
from scipy.signal import correlate2d
from scipy.signal.windows import gaussian


def conv2d_loop(x, w, b=None, pad=None):
    m, c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    p = (k - 1) // 2 if pad is None else pad
    xp = np.zeros((m, c_in, h + 2 * p, wd + 2 * p))
    xp[:, :, p:p + h, p:p + wd] = x
    oh, ow = h + 2 * p - k + 1, wd + 2 * p - k + 1
    out = np.zeros((m, c_out, oh, ow))
    for n in range(m):
        for o in range(c_out):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for c in range(c_in):
                        for a in range(k):
                            for d in range(k):
                                acc += xp[n, c, i + a, j + d] * w[o, c, a, d]
                    out[n, o, i, j] = acc + (0.0 if b is None else b[o])
    return out


def conv_transpose_loop(x, w, b=None, stride=2):
    """Scatter every input pixel through the kernel, then take the centred 2h x 2w window."""
    m, c_in, h, wd = x.shape
    _, c_out, k, _ = w.shape
    full = np.zeros((m, c_out, stride * (h - 1) + k, stride * (wd - 1) + k))
    for n in range(m):
        for c in range(c_in):
            for i in range(h):
                for j in range(wd):
                    for o in range(c_out):
                        for a in range(k):
                            for d in range(k):
                                full[n, o, stride * i + a, stride * j + d] += x[n, c, i, j] * w[c, o, a, d]
    top = (k - stride) // 2
    out = full[:, :, top:top + stride * h, top:top + stride * wd]
    if b is not None:
        out = out + np.asarray(b).reshape(1, -1, 1, 1)
    return out


def maxpool_loop(x):
    m, c, h, w = x.shape
    out = np.zeros((m, c, h // 2, w // 2))
    for n in range(m):
        for ch in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[n, ch, i, j] = max(x[n, ch, 2 * i + a, 2 * j + d] for a in range(2) for d in range(2))
    return out


def pixel_loss_loop(y, p, x):
    total = 0.0
    for a, b in zip(np.ravel(y), np.ravel(p)):
        total += abs(float(b) - float(a)) ** x
    return 0.5 * total


def mse_loop(y, p):
    vals = [(float(a) - float(b)) ** 2 for a, b in zip(np.ravel(y), np.ravel(p))]
    return math.fsum(vals) / len(vals)


def psnr_ref(mse, peak=255.0):
    return 20.0 * math.log10(peak) - 10.0 * math.log10(mse)


def gaussian_window_ref(size=11, sigma=1.5):
    g = gaussian(size, sigma)
    w = np.outer(g, g)
    return w / w.sum()


def ssim_ref(a, b, c1=4e-4, c2=3.6e-3, size=11, sigma=1.5):
    """Mean SSIM of two 2D images over valid Gaussian-window positions."""
    win = gaussian_window_ref(size, sigma)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)

    def blur(z):
        return correlate2d(z, win, mode="valid")

    mu_a, mu_b = blur(a), blur(b)
    va = blur(a * a) - mu_a ** 2
    vb = blur(b * b) - mu_b ** 2
    cov = blur(a * b) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2))
    return s.mean()
