"""Independent reference implementations used to pin expected test values.

Everything here is deliberately written from scratch (plain loops, marching,
finite differences) so it shares no code path with the package internals it
checks.
"""

import math

import numpy as np


def point_in_closed_rects(x: float, y: float, rects) -> bool:
    for xmin, ymin, xmax, ymax in rects:
        if xmin <= x <= xmax and ymin <= y <= ymax:
            return True
    return False


def marching_readings(
    positions: np.ndarray,
    directions: np.ndarray,
    rects: np.ndarray,
    scan_range: float,
    coarse_step: float = 1e-5,
    chunk: int = 32,
) -> np.ndarray:
    """Ray-marching rangefinder oracle.

    Marches each ray at coarse_step until a sample falls inside any closed
    rectangle, then bisects the bracketing interval down to ~1e-12, and
    returns (R - d) / R clipped to [0, 1] (0 when nothing is hit within R).
    """
    q = positions.shape[0]
    out = np.zeros(q)
    if rects.shape[0] == 0:
        return out
    ts = np.arange(0.0, scan_range + coarse_step, coarse_step)
    xmin, ymin, xmax, ymax = rects[:, 0], rects[:, 1], rects[:, 2], rects[:, 3]

    def inside_mask(px, py):
        # px, py broadcast against (K,) rect bounds; any-rect membership
        return (
            (px[..., None] >= xmin)
            & (px[..., None] <= xmax)
            & (py[..., None] >= ymin)
            & (py[..., None] <= ymax)
        ).any(axis=-1)

    for s in range(0, q, chunk):
        e = min(s + chunk, q)
        pos = positions[s:e]
        d = directions[s:e]
        px = pos[:, 0:1] + ts[None, :] * d[:, 0:1]
        py = pos[:, 1:2] + ts[None, :] * d[:, 1:2]
        inside = inside_mask(px, py)
        hit_any = inside.any(axis=1)
        first = np.argmax(inside, axis=1)
        dist = np.full(e - s, np.inf)
        zero_hit = hit_any & (first == 0)
        dist[zero_hit] = 0.0
        refine = hit_any & (first > 0)
        if refine.any():
            idx = np.nonzero(refine)[0]
            lo = ts[first[idx] - 1]
            hi = ts[first[idx]]
            ppos = pos[idx]
            pdir = d[idx]
            for _ in range(50):
                mid = 0.5 * (lo + hi)
                mx = ppos[:, 0] + mid * pdir[:, 0]
                my = ppos[:, 1] + mid * pdir[:, 1]
                m_in = inside_mask(mx, my)
                hi = np.where(m_in, mid, hi)
                lo = np.where(m_in, lo, mid)
            dist[idx] = hi
        out[s:e] = np.clip((scan_range - dist) / scan_range, 0.0, 1.0)
    return out


def dense_forward(weights, biases, activations, x):
    """Plain-loop MLP evaluation; activations are (name, bound) pairs."""
    a = list(x)
    for W, b, (name, bound) in zip(weights, biases, activations):
        z = []
        for i in range(len(b)):
            acc = b[i]
            for j in range(len(a)):
                acc += W[i][j] * a[j]
            z.append(acc)
        if name == "tanh":
            a = [math.tanh(v) for v in z]
        elif name == "relu":
            a = [v if v > 0 else 0.0 for v in z]
        elif name == "sigmoid":
            a = [1.0 / (1.0 + math.exp(-v)) for v in z]
        elif name == "linear":
            a = z
        elif name == "scaled_tanh":
            a = [bound * math.tanh(v) for v in z]
        else:
            raise ValueError(name)
    return np.asarray(a)


def central_difference(f, params: np.ndarray, indices, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f(params) at the given indices."""
    grads = np.empty(len(indices))
    for k, i in enumerate(indices):
        p_hi = params.copy()
        p_hi[i] += h
        p_lo = params.copy()
        p_lo[i] -= h
        grads[k] = (f(p_hi) - f(p_lo)) / (2.0 * h)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def discounted_returns_and_gae(rewards, values, bootstrap, gamma, lam):
    """Hand-unrolled per-episode recursion used to pin rlcore expectations."""
    n = len(rewards)
    returns = [0.0] * n
    adv = [0.0] * n
    g = bootstrap
    a = 0.0
    v_next = bootstrap
    for t in range(n - 1, -1, -1):
        g = rewards[t] + gamma * g
        delta = rewards[t] + gamma * v_next - values[t]
        a = delta + gamma * lam * a
        returns[t] = g
        adv[t] = a
        v_next = values[t]
    return returns, adv


def random_hazard_world(rng, n_rects=4, **overrides):
    """WorldConfig with random rectangles in [-0.7, 0.7] and corner goals at
    (+-0.9, +-0.9), which random rectangles can never cover."""
    from instinctnav.envsim import WorldConfig

    rects = []
    for _ in range(n_rects):
        x0, y0 = rng.uniform(-0.7, 0.6, 2)
        w, h = rng.uniform(0.05, 0.4, 2)
        rects.append((x0, y0, min(x0 + w, 0.7), min(y0 + h, 0.7)))
    goals = ((0.9, 0.9), (0.9, -0.9), (-0.9, 0.9), (-0.9, -0.9))
    return WorldConfig(goals=goals, hazard_zones=tuple(rects), **overrides)
