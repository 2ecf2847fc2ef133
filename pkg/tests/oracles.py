"""Reference implementations written independently of vrtkit.

Each oracle is a slow, direct transcription in plain numpy / ``math`` so the
package code can be checked against something that shares none of its
vectorisation tricks.
"""

from __future__ import annotations

import math

import numpy as np


def matmul_loop(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = math.fsum(a[i, p] * b[p, j] for p in range(k))
    return out


def softmax_row(row) -> list[float]:
    top = max(row)
    e = [math.exp(v - top) for v in row]
    s = math.fsum(e)
    return [v / s for v in e]


def attention_loop(q, k, v, allowed=None) -> np.ndarray:
    """Per-row direct summation of softmax(q k^T / sqrt(D)) v."""
    n, d = q.shape
    m = k.shape[0]
    out = np.zeros((n, v.shape[1]))
    for i in range(n):
        cols = [j for j in range(m) if allowed is None or allowed[i, j]]
        logits = [math.fsum(q[i, p] * k[j, p] for p in range(d)) / math.sqrt(d) for j in cols]
        w = softmax_row(logits)
        for c in range(v.shape[1]):
            out[i, c] = math.fsum(wj * v[j, c] for wj, j in zip(w, cols))
    return out


def layer_norm_rows(x: np.ndarray, gamma, beta, eps=1e-5) -> np.ndarray:
    out = np.empty_like(x)
    for idx in np.ndindex(x.shape[:-1]):
        row = x[idx]
        mu = math.fsum(row) / len(row)
        var = math.fsum((v - mu) ** 2 for v in row) / len(row)
        out[idx] = (row - mu) / math.sqrt(var + eps) * gamma + beta
    return out


def gelu(x: np.ndarray) -> np.ndarray:
    f = np.vectorize(lambda v: 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0))))
    return f(x)


def dense(x, w, b):
    return x @ w + b


def multi_head_loop(xq, xkv, proj, heads, allowed=None):
    """Projections, per-head attention loops, head concat, output projection."""
    (wq, bq), (wk, bk), (wv, bv), (wo, bo) = proj
    q, k, v = dense(xq, wq, bq), dense(xkv, wk, bk), dense(xkv, wv, bv)
    d = q.shape[1] // heads
    parts = [
        attention_loop(q[:, h * d:(h + 1) * d], k[:, h * d:(h + 1) * d],
                       v[:, h * d:(h + 1) * d], allowed)
        for h in range(heads)
    ]
    return dense(np.concatenate(parts, axis=1), wo, bo)


def tmsa_group(x, w, heads):
    """Straight-line two-frame block for one unshifted group ``[2N, C]``.

    ``w`` is a dict of plain arrays: ln1, ln2 as (gamma, beta); mutual and
    self_attn as four (W, b) pairs; fuse, ffn1, ffn2 as (W, b).
    """
    n = x.shape[0] // 2
    xn = layer_norm_rows(x, *w["ln1"])
    x1, x2 = xn[:n], xn[n:]
    y1 = multi_head_loop(x1, x2, w["mutual"], heads)
    y2 = multi_head_loop(x2, x1, w["mutual"], heads)
    y3 = multi_head_loop(xn, xn, w["self_attn"], heads)
    mid = x + dense(np.concatenate([np.concatenate([y1, y2], axis=0), y3], axis=1), *w["fuse"])
    hidden = gelu(dense(layer_norm_rows(mid, *w["ln2"]), *w["ffn1"]))
    return mid + dense(hidden, *w["ffn2"])


def conv2d_direct(x: np.ndarray, k: np.ndarray, b=None) -> np.ndarray:
    """Zero-padded 'same' convolution of [H, W, Cin] with [kh, kw, Cin, Cout]."""
    h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((h, w, cout))
    for y in range(h):
        for xx in range(w):
            for co in range(cout):
                acc = []
                for dy in range(kh):
                    for dx in range(kw):
                        sy, sx = y + dy - ph, xx + dx - pw
                        if 0 <= sy < h and 0 <= sx < w:
                            acc.extend(x[sy, sx, ci] * k[dy, dx, ci, co] for ci in range(cin))
                out[y, xx, co] = math.fsum(acc) + (0.0 if b is None else b[co])
    return out


def bilinear_resize_pixelwise(img: np.ndarray, s: int) -> np.ndarray:
    """Half-pixel-centre bilinear upsampling of [H, W] by integer ``s``."""
    h, w = img.shape
    out = np.zeros((h * s, w * s))

    def src(o, n):
        p = max((o + 0.5) / s - 0.5, 0.0)
        i0 = min(int(math.floor(p)), n - 1)
        i1 = min(i0 + 1, n - 1)
        return i0, i1, p - i0

    for oy in range(h * s):
        y0, y1, fy = src(oy, h)
        for ox in range(w * s):
            x0, x1, fx = src(ox, w)
            out[oy, ox] = ((1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1])
                           + fy * ((1 - fx) * img[y1, x0] + fx * img[y1, x1]))
    return out


def warp_pixelwise(img: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Sample [H, W, C] at p + (dx, dy) with zeros outside the frame."""
    h, w, c = img.shape
    out = np.zeros_like(img)

    def at(y, x):
        return img[y, x] if 0 <= y < h and 0 <= x < w else np.zeros(c)

    for y in range(h):
        for x in range(w):
            sx, sy = x + flow[y, x, 0], y + flow[y, x, 1]
            x0, y0 = math.floor(sx), math.floor(sy)
            fx, fy = sx - x0, sy - y0
            out[y, x] = ((1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                         + fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1)))
    return out


def psnr_frame(a: np.ndarray, b: np.ndarray, peak=1.0) -> float:
    mse = math.fsum(((a - b) ** 2).ravel()) / a.size
    return 100.0 if mse == 0 else min(100.0, 10 * math.log10(peak * peak / mse))


def ssim_frame(a: np.ndarray, b: np.ndarray, size=11, sigma=1.5, k1=0.01, k2=0.03, peak=1.0):
    """Mean SSIM over valid window positions and channels of [H, W, C]."""
    r = size // 2
    g = [math.exp(-((i - r) ** 2) / (2 * sigma * sigma)) for i in range(size)]
    total = math.fsum(g)
    g = [v / total for v in g]
    win = [[gy * gx for gx in g] for gy in g]
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    h, w, ch = a.shape
    vals = []
    for c in range(ch):
        for y in range(h - size + 1):
            for x in range(w - size + 1):
                pa = a[y:y + size, x:x + size, c]
                pb = b[y:y + size, x:x + size, c]
                mu_a = sum(win[i][j] * pa[i, j] for i in range(size) for j in range(size))
                mu_b = sum(win[i][j] * pb[i, j] for i in range(size) for j in range(size))
                saa = sum(win[i][j] * (pa[i, j] - mu_a) ** 2 for i in range(size) for j in range(size))
                sbb = sum(win[i][j] * (pb[i, j] - mu_b) ** 2 for i in range(size) for j in range(size))
                sab = sum(win[i][j] * (pa[i, j] - mu_a) * (pb[i, j] - mu_b)
                          for i in range(size) for j in range(size))
                vals.append((2 * mu_a * mu_b + c1) * (2 * sab + c2)
                            / ((mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)))
    return math.fsum(vals) / len(vals)


def charbonnier(pred: np.ndarray, target: np.ndarray, eps=1e-3) -> float:
    d = (pred - target).ravel()
    return math.fsum(math.sqrt(v * v + eps * eps) for v in d) / d.size
