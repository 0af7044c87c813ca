"""Numba tile kernels for the software rasterizer.

Tiles are independent work units; the forward pass writes only pixels it
owns and the backward pass writes only per-instance gradient slots owned by
its tile, so both are bit-deterministic for any worker count. Per-pixel
arithmetic runs in float64 regardless of buffer dtype.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True)
def fill_instances(rect, depth, tiles_x, offsets, inst_tile, inst_depth, inst_screen):
    m = rect.shape[0]
    for i in range(m):
        off = offsets[i]
        for ty in range(rect[i, 2], rect[i, 3]):
            for tx in range(rect[i, 0], rect[i, 1]):
                inst_tile[off] = ty * tiles_x + tx
                inst_depth[off] = depth[i]
                inst_screen[off] = i
                off += 1


@njit(cache=True, parallel=True)
def forward(tile_start, tile_end, inst_screen,
            mean2d, conic, color, oeff, velpix, depth,
            background, height, width, tile, tiles_x,
            alpha_clamp, alpha_skip, t_floor,
            out_color, out_flow, out_depth, out_alpha, out_tfinal, out_ncontrib):
    n_tiles = tile_start.shape[0]
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t % tiles_x
        y_lo = ty * tile
        x_lo = tx * tile
        y_hi = min(y_lo + tile, height)
        x_hi = min(x_lo + tile, width)
        s_lo = tile_start[t]
        s_hi = tile_end[t]
        for py in range(y_lo, y_hi):
            for px in range(x_lo, x_hi):
                pxc = px + 0.5
                pyc = py + 0.5
                trans = 1.0
                cr = 0.0
                cg = 0.0
                cb = 0.0
                fu = 0.0
                fv = 0.0
                dz = 0.0
                last = s_lo
                for s in range(s_lo, s_hi):
                    g = inst_screen[s]
                    dx = pxc - float(mean2d[g, 0])
                    dy = pyc - float(mean2d[g, 1])
                    a = float(conic[g, 0])
                    b = float(conic[g, 1])
                    c = float(conic[g, 2])
                    power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
                    if power > 0.0:
                        continue
                    alpha = float(oeff[g]) * np.exp(power)
                    if alpha > alpha_clamp:
                        alpha = alpha_clamp
                    if alpha < alpha_skip:
                        continue
                    test_t = trans * (1.0 - alpha)
                    if test_t < t_floor:
                        break
                    w = alpha * trans
                    cr += w * float(color[g, 0])
                    cg += w * float(color[g, 1])
                    cb += w * float(color[g, 2])
                    fu += w * float(velpix[g, 0])
                    fv += w * float(velpix[g, 1])
                    dz += w * float(depth[g])
                    trans = test_t
                    last = s + 1
                out_color[py, px, 0] = cr + trans * background[0]
                out_color[py, px, 1] = cg + trans * background[1]
                out_color[py, px, 2] = cb + trans * background[2]
                out_flow[py, px, 0] = fu
                out_flow[py, px, 1] = fv
                out_depth[py, px] = dz
                out_alpha[py, px] = 1.0 - trans
                out_tfinal[py, px] = trans
                out_ncontrib[py, px] = last


@njit(cache=True, parallel=True)
def backward(tile_start, inst_screen,
             mean2d, conic, color, oeff, velpix, depth,
             background, height, width, tile, tiles_x,
             alpha_clamp, alpha_skip,
             tfinal, ncontrib,
             d_color, d_flow, d_depth, d_alpha,
             inst_grads):
    n_tiles = tile_start.shape[0]
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t % tiles_x
        y_lo = ty * tile
        x_lo = tx * tile
        y_hi = min(y_lo + tile, height)
        x_hi = min(x_lo + tile, width)
        s_lo = tile_start[t]
        for py in range(y_lo, y_hi):
            for px in range(x_lo, x_hi):
                pxc = px + 0.5
                pyc = py + 0.5
                t_final = float(tfinal[py, px])
                trans = t_final
                gr = float(d_color[py, px, 0])
                gg = float(d_color[py, px, 1])
                gb = float(d_color[py, px, 2])
                gfu = float(d_flow[py, px, 0])
                gfv = float(d_flow[py, px, 1])
                gdz = float(d_depth[py, px])
                gal = float(d_alpha[py, px])
                bg_dot = (gr * background[0] + gg * background[1]
                          + gb * background[2])
                # suffix composites of everything blended after the current one
                acc_r = 0.0
                acc_g = 0.0
                acc_b = 0.0
                acc_fu = 0.0
                acc_fv = 0.0
                acc_dz = 0.0
                for s in range(ncontrib[py, px] - 1, s_lo - 1, -1):
                    g = inst_screen[s]
                    dx = pxc - float(mean2d[g, 0])
                    dy = pyc - float(mean2d[g, 1])
                    a = float(conic[g, 0])
                    b = float(conic[g, 1])
                    c = float(conic[g, 2])
                    power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
                    if power > 0.0:
                        continue
                    gauss = np.exp(power)
                    raw_alpha = float(oeff[g]) * gauss
                    clamped = raw_alpha > alpha_clamp
                    alpha = alpha_clamp if clamped else raw_alpha
                    if alpha < alpha_skip:
                        continue
                    one_m = 1.0 - alpha
                    trans = trans / one_m  # transmittance before this one
                    w = alpha * trans
                    inst_grads[s, 5] += w * gr
                    inst_grads[s, 6] += w * gg
                    inst_grads[s, 7] += w * gb
                    inst_grads[s, 9] += w * gfu
                    inst_grads[s, 10] += w * gfv
                    inst_grads[s, 11] += w * gdz
                    d_a = trans * ((float(color[g, 0]) - acc_r) * gr
                                   + (float(color[g, 1]) - acc_g) * gg
                                   + (float(color[g, 2]) - acc_b) * gb
                                   + (float(velpix[g, 0]) - acc_fu) * gfu
                                   + (float(velpix[g, 1]) - acc_fv) * gfv
                                   + (float(depth[g]) - acc_dz) * gdz)
                    d_a += (gal - bg_dot) * t_final / one_m
                    acc_r = alpha * float(color[g, 0]) + one_m * acc_r
                    acc_g = alpha * float(color[g, 1]) + one_m * acc_g
                    acc_b = alpha * float(color[g, 2]) + one_m * acc_b
                    acc_fu = alpha * float(velpix[g, 0]) + one_m * acc_fu
                    acc_fv = alpha * float(velpix[g, 1]) + one_m * acc_fv
                    acc_dz = alpha * float(depth[g]) + one_m * acc_dz
                    if clamped:
                        continue  # d alpha / d params is zero at the clamp
                    d_power = d_a * raw_alpha
                    inst_grads[s, 8] += d_a * gauss
                    inst_grads[s, 2] += d_power * (-0.5 * dx * dx)
                    inst_grads[s, 3] += d_power * (-dx * dy)
                    inst_grads[s, 4] += d_power * (-0.5 * dy * dy)
                    inst_grads[s, 0] += d_power * (a * dx + b * dy)
                    inst_grads[s, 1] += d_power * (b * dx + c * dy)
