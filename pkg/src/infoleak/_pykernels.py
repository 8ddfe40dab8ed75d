"""Pure NumPy twins of the compiled kernels in ``_ckernels.pyx``."""

import numpy as np
from scipy.special import logsumexp

_MASK_CHUNK = 1 << 14


def subset_sup(p, q, gamma):
    p = np.ascontiguousarray(p, dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.float64)
    n = p.shape[0]
    w = p - gamma * q
    bits = np.arange(n, dtype=np.uint64)
    best, best_mask = 0.0, 0
    for start in range(0, 1 << n, _MASK_CHUNK):
        masks = np.arange(start, min(start + _MASK_CHUNK, 1 << n), dtype=np.uint64)
        member = ((masks[:, None] >> bits[None, :]) & np.uint64(1)).astype(np.float64)
        vals = member @ w
        k = int(np.argmax(vals))
        if vals[k] > best:
            best, best_mask = float(vals[k]), int(masks[k])
    best = float(sum(w[b] for b in range(n) if (best_mask >> b) & 1))
    return best, best_mask


def gauss_log_mean(points, centers, bandwidth, chunk=256):
    points = np.asarray(points, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    h = np.asarray(bandwidth, dtype=np.float64)
    norm = np.sum(np.log(h)) + 0.5 * h.size * np.log(2.0 * np.pi)
    cz = centers / h
    out = np.empty(points.shape[0])
    for start in range(0, points.shape[0], chunk):
        pz = points[start:start + chunk] / h
        sq = -0.5 * np.sum((pz[:, None, :] - cz[None, :, :]) ** 2, axis=-1)
        out[start:start + chunk] = logsumexp(sq, axis=1)
    return out - np.log(centers.shape[0]) - norm
