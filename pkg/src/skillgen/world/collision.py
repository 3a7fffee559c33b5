"""Vectorized overlap tests for spheres, capsules and oriented boxes.

Spheres and capsules are both "swept segments" (a sphere is a capsule whose
endpoints coincide), so only three kernels exist: segment/segment distance,
segment/box distance and box/box separating-axis overlap.  All kernels take
arrays with a common leading shape and broadcast.
"""

from __future__ import annotations

import numpy as np


def segment_segment_distance(p1, q1, p2, q2) -> np.ndarray:
    """Closest distance between segments p1-q1 and p2-q2 (..., 3) arrays."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.einsum("...i,...i->...", d1, d1)
    e = np.einsum("...i,...i->...", d2, d2)
    f = np.einsum("...i,...i->...", d2, r)
    c = np.einsum("...i,...i->...", d1, r)
    b = np.einsum("...i,...i->...", d1, d2)
    tiny = 1e-14
    a_deg = a <= tiny
    e_deg = e <= tiny
    a_safe = np.where(a_deg, 1.0, a)
    e_safe = np.where(e_deg, 1.0, e)
    denom = a * e - b * b
    s = np.where(denom > tiny * np.maximum(a * e, tiny),
                 np.clip((b * f - c * e) / np.where(denom > 0, denom, 1.0), 0.0, 1.0), 0.0)
    s = np.where(e_deg, np.clip(-c / a_safe, 0.0, 1.0), s)
    s = np.where(a_deg, 0.0, s)
    t = np.where(e_deg, 0.0, (b * s + f) / e_safe)
    # t outside [0, 1]: clamp and recompute s for the clamped t
    t_lo = t < 0.0
    t_hi = t > 1.0
    s = np.where(t_lo, np.clip(-c / a_safe, 0.0, 1.0), s)
    s = np.where(t_hi, np.clip((b - c) / a_safe, 0.0, 1.0), s)
    s = np.where(a_deg, 0.0, s)
    t = np.clip(t, 0.0, 1.0)
    c1 = p1 + d1 * s[..., None]
    c2 = p2 + d2 * t[..., None]
    return np.linalg.norm(c1 - c2, axis=-1)


def _point_box_sq(p, h):
    excess = np.maximum(np.abs(p) - h, 0.0)
    return np.einsum("...i,...i->...", excess, excess)


def segment_box_distance(p, q, center, rot, half) -> np.ndarray:
    """Distance from segment p-q to an oriented box.

    The squared distance to a box along a line is convex and piecewise
    quadratic with breakpoints where a coordinate crosses a face plane; the
    minimum is found exactly by checking every piece.
    """
    # move the segment into the box frame
    lp = np.einsum("...ji,...j->...i", rot, p - center)
    lq = np.einsum("...ji,...j->...i", rot, q - center)
    d = lq - lp
    h = np.broadcast_to(half, lp.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_minus = (-h - lp) / d
        t_plus = (h - lp) / d
    cands = np.concatenate([np.zeros(lp.shape[:-1] + (1,)), np.ones(lp.shape[:-1] + (1,)),
                            t_minus, t_plus], axis=-1)
    cands = np.where(np.isfinite(cands), np.clip(cands, 0.0, 1.0), 0.0)
    cands = np.sort(cands, axis=-1)
    lo = cands[..., :-1]
    hi = cands[..., 1:]
    mid = 0.5 * (lo + hi)
    # active faces on each piece, decided at the midpoint
    pm = lp[..., None, :] + d[..., None, :] * mid[..., None]
    hh = h[..., None, :]
    target = np.where(pm > hh, hh, np.where(pm < -hh, -hh, np.nan))
    active = ~np.isnan(target)
    off = np.where(active, lp[..., None, :] - np.nan_to_num(target), 0.0)
    dd = np.where(active, d[..., None, :], 0.0)
    num = np.einsum("...ki,...ki->...k", dd, off)
    den = np.einsum("...ki,...ki->...k", dd, dd)
    with np.errstate(divide="ignore", invalid="ignore"):
        tstar = np.where(den > 1e-18, -num / den, lo)
    tstar = np.clip(tstar, lo, hi)
    ts = np.concatenate([cands, tstar], axis=-1)
    pts = lp[..., None, :] + d[..., None, :] * ts[..., None]
    sq = _point_box_sq(pts, h[..., None, :])
    return np.sqrt(np.min(sq, axis=-1))


def box_box_separation(c1, r1, h1, c2, r2, h2) -> np.ndarray:
    """Largest gap between the boxes' projections over the 15 SAT axes.

    Positive values are a lower bound on the true surface distance (any
    projection gap is); a value <= 0 means the boxes overlap.
    """
    c1, h1, c2, h2 = (np.asarray(v, dtype=float) for v in (c1, h1, c2, h2))
    r1, r2 = np.asarray(r1, dtype=float), np.asarray(r2, dtype=float)
    lead = np.broadcast_shapes(c1.shape[:-1], h1.shape[:-1], c2.shape[:-1], h2.shape[:-1],
                               r1.shape[:-2], r2.shape[:-2])
    c1, h1, c2, h2 = (np.broadcast_to(v, lead + (3,)) for v in (c1, h1, c2, h2))
    r1, r2 = (np.broadcast_to(v, lead + (3, 3)) for v in (r1, r2))
    axes = [r1[..., :, i] for i in range(3)] + [r2[..., :, i] for i in range(3)]
    for i in range(3):
        for j in range(3):
            axes.append(np.cross(r1[..., :, i], r2[..., :, j]))
    best = np.full(lead, -np.inf)
    dc = c2 - c1
    for ax in axes:
        n = np.linalg.norm(ax, axis=-1)
        valid = n > 1e-9
        u = ax / np.where(valid, n, 1.0)[..., None]
        pr1 = np.sum(h1 * np.abs(np.einsum("...ji,...j->...i", r1, u)), axis=-1)
        pr2 = np.sum(h2 * np.abs(np.einsum("...ji,...j->...i", r2, u)), axis=-1)
        dist = np.abs(np.einsum("...i,...i->...", dc, u))
        best = np.where(valid, np.maximum(best, dist - pr1 - pr2), best)
    return best


def box_box_overlap(c1, r1, h1, c2, r2, h2) -> np.ndarray:
    """Separating-axis test for oriented boxes; True where they overlap."""
    return box_box_separation(c1, r1, h1, c2, r2, h2) <= 0.0
