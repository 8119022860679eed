"""Independent reference implementations used to pin expected test values.

Everything here is deliberately written as direct summation / enumeration,
sharing no code path with the package implementations it checks.
"""

import math

import numpy as np


def loop_conv2d(x, kernels, bias):
    """Direct nested-loop wide convolution (pad k//2, stride 1)."""
    c, h, w = x.shape
    k, kc, kh, kw = kernels.shape
    assert c == kc
    ph, pw = kh // 2, kw // 2
    out = np.zeros((k, h, w), dtype=np.float64)
    for f in range(k):
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for ch in range(c):
                    for di in range(kh):
                        for dj in range(kw):
                            si, sj = i + di - ph, j + dj - pw
                            if 0 <= si < h and 0 <= sj < w:
                                acc += x[ch, si, sj] * kernels[f, ch, di, dj]
                out[f, i, j] = acc + bias[f]
    return out


def loop_dct2_pure(patch):
    """Quadruple-loop DCT-II with scalar math only; O(N^4), small N."""
    n = len(patch)
    out = [[0.0] * n for _ in range(n)]
    for k in range(n):
        for l in range(n):
            acc = 0.0
            for i in range(n):
                for j in range(n):
                    acc += (
                        patch[i][j]
                        * math.cos(math.pi * (2 * i + 1) * k / (2 * n))
                        * math.cos(math.pi * (2 * j + 1) * l / (2 * n))
                    )
            sk = math.sqrt(1.0 / n) if k == 0 else math.sqrt(2.0 / n)
            sl = math.sqrt(1.0 / n) if l == 0 else math.sqrt(2.0 / n)
            out[k][l] = sk * sl * acc
    return np.array(out)


def direct_dct2(patch):
    """Per-coefficient direct summation; loops over outputs, sums over inputs."""
    patch = np.asarray(patch, dtype=np.float64)
    n = patch.shape[0]
    grid = np.arange(n)
    out = np.empty((n, n), dtype=np.float64)
    for k in range(n):
        ck = np.cos(np.pi * (2 * grid + 1) * k / (2 * n))
        sk = math.sqrt(1.0 / n) if k == 0 else math.sqrt(2.0 / n)
        for l in range(n):
            cl = np.cos(np.pi * (2 * grid + 1) * l / (2 * n))
            sl = math.sqrt(1.0 / n) if l == 0 else math.sqrt(2.0 / n)
            out[k, l] = sk * sl * float((patch * np.outer(ck, cl)).sum())
    return out


def zigzag_pairs_by_walk(n):
    """Zig-zag as an explicit walk: start (0,0), bounce along anti-diagonals."""
    pairs = [(0, 0)]
    r = c = 0
    going_up = True  # moving towards smaller rows
    while len(pairs) < n * n:
        if going_up:
            if c == n - 1:
                r += 1
            elif r == 0:
                c += 1
            else:
                r -= 1
                c += 1
                pairs.append((r, c))
                continue
            going_up = False
        else:
            if r == n - 1:
                c += 1
            elif c == 0:
                r += 1
            else:
                r += 1
                c -= 1
                pairs.append((r, c))
                continue
            going_up = True
        pairs.append((r, c))
    return pairs


# canonical JPEG 8x8 scan, row-major flat indices
JPEG_ZIGZAG_8 = [
    0, 1, 8, 16, 9, 2, 3, 10,
    17, 24, 32, 25, 18, 11, 4, 5,
    12, 19, 26, 33, 40, 48, 41, 34,
    27, 20, 13, 6, 7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36,
    29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46,
    53, 60, 61, 54, 47, 55, 62, 63,
]


def enumerate_roc(labels, distances):
    """All-threshold ROC by brute-force counting at every placement.

    Thresholds are taken at each observed distance plus one below the
    minimum; a pair predicts "match" when distance <= threshold.
    """
    labels = np.asarray(labels)
    distances = np.asarray(distances, dtype=np.float64)
    pos = distances[labels == 1]
    neg = distances[labels == 0]
    points = []
    for t in sorted(set(distances.tolist())):
        tpr = float((pos <= t).sum()) / len(pos)
        fpr = float((neg <= t).sum()) / len(neg)
        points.append((t, tpr, fpr))
    return points


def enumerate_fpr_at_tpr(labels, distances, target):
    for _, tpr, fpr in enumerate_roc(labels, distances):
        if tpr >= target:
            return fpr
    raise AssertionError("target TPR unreachable")


def finite_difference(scalar_fn, arrays, h=1e-5):
    """Central-difference gradients of scalar_fn() w.r.t. arrays (in place)."""
    grads = []
    for arr in arrays:
        grad = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = scalar_fn()
            flat[i] = orig - h
            fm = scalar_fn()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(grad)
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())
