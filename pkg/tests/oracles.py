"""Independent reference implementations used as test oracles.

Each one is written the slow, obvious way so it can be checked by eye.
"""

import math

import numpy as np

from advlogo.render import NEAR, project


def conv2d_loops(x, k, bias=None, stride=1, pad=0):
    c, h, w = x.shape
    kout, kc, kh, kw = k.shape
    xp = np.zeros((c, h + 2 * pad, w + 2 * pad))
    xp[:, pad:pad + h, pad:pad + w] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((kout, ho, wo))
    for o in range(kout):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for ci in range(c):
                    for a in range(kh):
                        for b in range(kw):
                            acc += xp[ci, i * stride + a, j * stride + b] * k[o, ci, a, b]
                out[o, i, j] = acc + (bias[o] if bias is not None else 0.0)
    return out


def central_diff(f, x, eps=1e-3):
    """Numerical gradient of scalar f at array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        hi = f(x)
        x[idx] = old - eps
        lo = f(x)
        x[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


def rasterize_brute(mesh, camera):
    """Every face tested against every pixel centre; nearest depth wins, ties keep the lower index.

    Uses the same edge-function and perspective-correct depth arithmetic as
    the library so results can be compared bit for bit.
    """
    s = camera.image_size
    sx, sy, dz = project(mesh.vertices, camera)
    zbuf = np.full((s, s), np.inf)
    fid = np.full((s, s), -1, dtype=np.int64)
    py, px = np.mgrid[0:s, 0:s].astype(np.float64) + 0.5
    for f, (i0, i1, i2) in enumerate(mesh.faces):
        x0, y0, z0 = sx[i0], sy[i0], dz[i0]
        x1, y1, z1 = sx[i1], sy[i1], dz[i1]
        x2, y2, z2 = sx[i2], sy[i2], dz[i2]
        if min(z0, z1, z2) <= NEAR:
            continue
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area == 0.0:
            continue
        w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
        w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        if area > 0:
            inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        else:
            inside = (w0 <= 0) & (w1 <= 0) & (w2 <= 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = 1.0 / ((w0 / area) / z0 + (w1 / area) / z1 + (w2 / area) / z2)
        better = inside & (z < zbuf)
        zbuf[better] = z[better]
        fid[better] = f
    return fid >= 0, zbuf, fid


def nearest_mask_brute(mask, r, c):
    """Closest mask pixel to (r, c); the first in row-major order wins ties."""
    best, best_d = None, math.inf
    h, w = mask.shape
    for i in range(h):
        for j in range(w):
            if mask[i, j]:
                d = (i - r) ** 2 + (j - c) ** 2
                if d < best_d:
                    best, best_d = (i, j), d
    return best


class ScalarAdam:
    """Textbook Adam on a single float."""

    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = self.v = 0.0
        self.t = 0

    def step(self, p, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mh = self.m / (1 - self.b1 ** self.t)
        vh = self.v / (1 - self.b2 ** self.t)
        return p - self.lr * mh / (math.sqrt(vh) + self.eps)


def tv_loops(rgb, mask):
    h, w, _ = rgb.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            for ch in range(3):
                if j + 1 < w and mask[i, j] and mask[i, j + 1]:
                    total += abs(rgb[i, j, ch] - rgb[i, j + 1, ch])
                if i + 1 < h and mask[i, j] and mask[i + 1, j]:
                    total += abs(rgb[i + 1, j, ch] - rgb[i, j, ch])
    return total


def box_iou(a, b):
    ax0, ax1 = a[0] - a[2] / 2, a[0] + a[2] / 2
    ay0, ay1 = a[1] - a[3] / 2, a[1] + a[3] / 2
    bx0, bx1 = b[0] - b[2] / 2, b[0] + b[2] / 2
    by0, by1 = b[1] - b[3] / 2, b[1] + b[3] / 2
    inter = max(0.0, min(ax1, bx1) - max(ax0, bx0)) * max(0.0, min(ay1, by1) - max(ay0, by0))
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)
