"""Compiled per-pixel blending loops (forward, backward, brute-force oracle).

All loops run sequentially in a fixed tile/pixel order, which makes the
per-Gaussian gradient reduction deterministic.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _alpha(gi, px, py, mean2d, conic, opac, cutoff, alpha_max):
    dx = px - mean2d[gi, 0]
    dy = py - mean2d[gi, 1]
    power = 0.5 * (conic[gi, 0] * dx * dx + conic[gi, 2] * dy * dy) + conic[gi, 1] * dx * dy
    if power > cutoff or power < 0.0:
        return 0.0, 0.0, dx, dy, False
    g = math.exp(-power)
    a = opac[gi] * g
    clamped = False
    if a > alpha_max:
        a = alpha_max
        clamped = True
    return a, g, dx, dy, clamped


@njit(cache=True)
def forward_tiles(ranges, ids, tiles_x, tile, width, height, mean2d, conic, color, opac, bg,
                  cutoff, alpha_max, t_min, early_stop):
    out = np.zeros((height, width, 3))
    final_t = np.ones((height, width))
    n_contrib = np.zeros((height, width), dtype=np.int64)
    for tid in range(ranges.shape[0]):
        start = ranges[tid, 0]
        end = ranges[tid, 1]
        ty = tid // tiles_x
        tx = tid - ty * tiles_x
        for py in range(ty * tile, min(height, (ty + 1) * tile)):
            for px in range(tx * tile, min(width, (tx + 1) * tile)):
                fx = px + 0.5
                fy = py + 0.5
                T = 1.0
                r = 0.0
                g = 0.0
                b = 0.0
                last = 0
                for k in range(start, end):
                    gi = ids[k]
                    a, _, _, _, _ = _alpha(gi, fx, fy, mean2d, conic, opac, cutoff, alpha_max)
                    if a <= 0.0:
                        continue
                    w = a * T
                    r += color[gi, 0] * w
                    g += color[gi, 1] * w
                    b += color[gi, 2] * w
                    T *= 1.0 - a
                    last = k - start + 1
                    if early_stop and T < t_min:
                        break
                out[py, px, 0] = r + T * bg[0]
                out[py, px, 1] = g + T * bg[1]
                out[py, px, 2] = b + T * bg[2]
                final_t[py, px] = T
                n_contrib[py, px] = last
    return out, final_t, n_contrib


@njit(cache=True)
def backward_tiles(ranges, ids, tiles_x, tile, width, height, mean2d, conic, color, opac, bg,
                   cutoff, alpha_max, n_contrib, final_t, grad_rgb, grad_alpha, n_gauss):
    d_mean = np.zeros((n_gauss, 2))
    d_conic = np.zeros((n_gauss, 3))
    d_color = np.zeros((n_gauss, 3))
    d_opac = np.zeros(n_gauss)
    max_len = 0
    for tid in range(ranges.shape[0]):
        max_len = max(max_len, ranges[tid, 1] - ranges[tid, 0])
    a_buf = np.zeros(max_len)
    g_buf = np.zeros(max_len)
    t_buf = np.zeros(max_len)
    c_buf = np.zeros(max_len, dtype=np.bool_)
    for tid in range(ranges.shape[0]):
        start = ranges[tid, 0]
        ty = tid // tiles_x
        tx = tid - ty * tiles_x
        for py in range(ty * tile, min(height, (ty + 1) * tile)):
            for px in range(tx * tile, min(width, (tx + 1) * tile)):
                n = n_contrib[py, px]
                if n == 0:
                    continue
                fx = px + 0.5
                fy = py + 0.5
                # replay the forward blend for this pixel
                T = 1.0
                for j in range(n):
                    gi = ids[start + j]
                    a, gk, _, _, cl = _alpha(gi, fx, fy, mean2d, conic, opac, cutoff, alpha_max)
                    a_buf[j] = a
                    g_buf[j] = gk
                    c_buf[j] = cl
                    t_buf[j] = T
                    if a > 0.0:
                        T *= 1.0 - a
                t_final = final_t[py, px]
                gr = grad_rgb[py, px, 0]
                gg = grad_rgb[py, px, 1]
                gb = grad_rgb[py, px, 2]
                ga = grad_alpha[py, px]
                s0 = t_final * bg[0]
                s1 = t_final * bg[1]
                s2 = t_final * bg[2]
                for j in range(n - 1, -1, -1):
                    a = a_buf[j]
                    if a <= 0.0:
                        continue
                    gi = ids[start + j]
                    Ti = t_buf[j]
                    w = a * Ti
                    d_color[gi, 0] += w * gr
                    d_color[gi, 1] += w * gg
                    d_color[gi, 2] += w * gb
                    inv = 1.0 / (1.0 - a)
                    c0 = color[gi, 0]
                    c1 = color[gi, 1]
                    c2 = color[gi, 2]
                    d_a = (gr * (c0 * Ti - s0 * inv) + gg * (c1 * Ti - s1 * inv) + gb * (c2 * Ti - s2 * inv)
                           + ga * t_final * inv)
                    s0 += c0 * w
                    s1 += c1 * w
                    s2 += c2 * w
                    if c_buf[j]:
                        continue
                    d_opac[gi] += d_a * g_buf[j]
                    dx = fx - mean2d[gi, 0]
                    dy = fy - mean2d[gi, 1]
                    d_power = -a * d_a
                    # power = .5(a dx^2 + c dy^2) + b dx dy ; d/dmean = -(Q d)
                    d_mean[gi, 0] -= d_power * (conic[gi, 0] * dx + conic[gi, 1] * dy)
                    d_mean[gi, 1] -= d_power * (conic[gi, 1] * dx + conic[gi, 2] * dy)
                    d_conic[gi, 0] += d_power * 0.5 * dx * dx
                    d_conic[gi, 1] += d_power * dx * dy
                    d_conic[gi, 2] += d_power * 0.5 * dy * dy
    return d_mean, d_conic, d_color, d_opac


@njit(cache=True)
def forward_brute(order, width, height, mean2d, conic, color, opac, bg, cutoff, alpha_max,
                  t_min, early_stop, truncate):
    out = np.zeros((height, width, 3))
    final_t = np.ones((height, width))
    cut = cutoff if truncate else np.inf
    for py in range(height):
        for px in range(width):
            fx = px + 0.5
            fy = py + 0.5
            T = 1.0
            r = 0.0
            g = 0.0
            b = 0.0
            for k in range(order.shape[0]):
                gi = order[k]
                a, _, _, _, _ = _alpha(gi, fx, fy, mean2d, conic, opac, cut, alpha_max)
                if a <= 0.0:
                    continue
                w = a * T
                r += color[gi, 0] * w
                g += color[gi, 1] * w
                b += color[gi, 2] * w
                T *= 1.0 - a
                if early_stop and T < t_min:
                    break
            out[py, px, 0] = r + T * bg[0]
            out[py, px, 1] = g + T * bg[1]
            out[py, px, 2] = b + T * bg[2]
            final_t[py, px] = T
    return out, final_t
