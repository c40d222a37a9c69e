"""Hot raster kernels.

Each kernel has a numpy implementation (``*_np``) and, when numba is active,
a compiled loop implementation (``*_nb``).  The public names dispatch to the
compiled variant if available.  Both variants evaluate the same arithmetic in
the same order.
"""
import numpy as np

from ._accel import HAS_NUMBA, njit

# 3x3 neighbourhood offsets (dy, dx), row-major, center excluded
LBP_OFFSETS = np.array(
    [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
    dtype=np.int64,
)


def bilinear_np(data, xs, ys):
    """Sample an (H, W, K) raster at float coordinates with border clamping."""
    h, w, _ = data.shape
    x = np.clip(xs, 0.0, w - 1.0)
    y = np.clip(ys, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    a = data[y0, x0]
    b = data[y0, x1]
    c = data[y1, x0]
    d = data[y1, x1]
    return (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d)


def box3_np(img):
    """One 3x3 box-filter pass with replicated borders on a 2-D array."""
    p = np.pad(img, 1, mode="edge")
    h, w = img.shape
    acc = np.zeros((h, w))
    for dy in range(3):
        for dx in range(3):
            acc += p[dy:dy + h, dx:dx + w]
    return acc / 9.0


def lbp_compare_np(s):
    """Eight binary planes: 1.0 where the pixel is >= its neighbour at each offset."""
    h, w = s.shape
    p = np.pad(s, 1, mode="edge")
    out = np.empty((h, w, 8))
    for j, (dy, dx) in enumerate(LBP_OFFSETS):
        nb = p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        out[:, :, j] = (s >= nb).astype(np.float64)
    return out


@njit
def bilinear_nb(data, xs, ys):
    h, w, k = data.shape
    m = xs.shape[0]
    out = np.empty((m, k))
    xmax = max(w - 2, 0)
    ymax = max(h - 2, 0)
    for i in range(m):
        x = min(max(xs[i], 0.0), w - 1.0)
        y = min(max(ys[i], 0.0), h - 1.0)
        x0 = min(int(np.floor(x)), xmax)
        y0 = min(int(np.floor(y)), ymax)
        x1 = min(x0 + 1, w - 1)
        y1 = min(y0 + 1, h - 1)
        fx = x - x0
        fy = y - y0
        for c in range(k):
            top = (1.0 - fx) * data[y0, x0, c] + fx * data[y0, x1, c]
            bot = (1.0 - fx) * data[y1, x0, c] + fx * data[y1, x1, c]
            out[i, c] = (1.0 - fy) * top + fy * bot
    return out


@njit
def box3_nb(img):
    h, w = img.shape
    out = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-1, 2):
                yy = min(max(y + dy, 0), h - 1)
                for dx in range(-1, 2):
                    xx = min(max(x + dx, 0), w - 1)
                    acc += img[yy, xx]
            out[y, x] = acc / 9.0
    return out


@njit
def lbp_compare_nb(s, offsets):
    h, w = s.shape
    out = np.empty((h, w, 8))
    for y in range(h):
        for x in range(w):
            v = s[y, x]
            for j in range(8):
                yy = min(max(y + offsets[j, 0], 0), h - 1)
                xx = min(max(x + offsets[j, 1], 0), w - 1)
                out[y, x, j] = 1.0 if v >= s[yy, xx] else 0.0
    return out


if HAS_NUMBA:
    def bilinear(data, xs, ys):
        return bilinear_nb(data, np.ascontiguousarray(xs, dtype=np.float64),
                           np.ascontiguousarray(ys, dtype=np.float64))

    def box3(img):
        return box3_nb(np.ascontiguousarray(img, dtype=np.float64))

    def lbp_compare(s):
        return lbp_compare_nb(np.ascontiguousarray(s, dtype=np.float64), LBP_OFFSETS)
else:
    bilinear = bilinear_np
    box3 = box3_np
    lbp_compare = lbp_compare_np
