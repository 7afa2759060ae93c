"""Pure numpy implementations of the hot loops.

These mirror :mod:`calderon._kernels` one for one and are used whenever the
compiled extension is unavailable or ``CALDERON_PURE_PYTHON=1`` is set.
"""

import math

import numpy as np


def _accel(x, y, vx, vy, amp, width):
    e = amp * np.exp(-(x * x + y * y) / (width * width))
    k = -e / (width * width * (1.0 + e))
    gx = k * x
    gy = k * y
    dot = gx * vx + gy * vy
    v2 = vx * vx + vy * vy
    return -2.0 * dot * vx + v2 * gx, -2.0 * dot * vy + v2 * gy


def _rk4(x, y, vx, vy, h, amp, width):
    ax1, ay1 = _accel(x, y, vx, vy, amp, width)
    x2 = x + 0.5 * h * vx
    y2 = y + 0.5 * h * vy
    vx2 = vx + 0.5 * h * ax1
    vy2 = vy + 0.5 * h * ay1
    ax2, ay2 = _accel(x2, y2, vx2, vy2, amp, width)
    x3 = x + 0.5 * h * vx2
    y3 = y + 0.5 * h * vy2
    vx3 = vx + 0.5 * h * ax2
    vy3 = vy + 0.5 * h * ay2
    ax3, ay3 = _accel(x3, y3, vx3, vy3, amp, width)
    x4 = x + h * vx3
    y4 = y + h * vy3
    vx4 = vx + h * ax3
    vy4 = vy + h * ay3
    ax4, ay4 = _accel(x4, y4, vx4, vy4, amp, width)
    return (
        x + h / 6.0 * (vx + 2 * vx2 + 2 * vx3 + vx4),
        y + h / 6.0 * (vy + 2 * vy2 + 2 * vy3 + vy4),
        vx + h / 6.0 * (ax1 + 2 * ax2 + 2 * ax3 + ax4),
        vy + h / 6.0 * (ay1 + 2 * ay2 + 2 * ay3 + ay4),
    )


def geodesic_march(state0, h, amp, width, max_steps):
    """March until the first state outside the unit disk.

    Returns the states visited, shape ``(n, 4)``; the last row is the first
    state with radius above one.  ``n = max_steps + 1`` signals no exit.
    """
    out = [tuple(float(v) for v in state0)]
    x, y, vx, vy = out[0]
    for _ in range(max_steps):
        x, y, vx, vy = _rk4(x, y, vx, vy, h, amp, width)
        out.append((x, y, vx, vy))
        if x * x + y * y > 1.0:
            break
    return np.array(out)


def shoot_conformal(state, h, nsteps, amp, width):
    """Advance many geodesics by ``nsteps`` RK4 steps of per-ray size ``h``."""
    x, y, vx, vy = (np.array(state[i], dtype=float) for i in range(4))
    h = np.asarray(h, dtype=float)
    for _ in range(int(nsteps)):
        x, y, vx, vy = _rk4(x, y, vx, vy, h, amp, width)
    return np.stack([x, y, vx, vy])


def polar_interp(values, rho0, drho, nrho, ntheta, px, py):
    """Bilinear interpolation in ``(rho, theta)`` of a polar grid field.

    Radii below the first ring are interpolated along the diameter through
    the antipodal node, avoiding the axis.  Points outside the disk get the
    rim value.
    """
    values = np.asarray(values)
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    dth = 2.0 * math.pi / ntheta
    r = np.hypot(px, py)
    t = np.arctan2(py, px) % (2.0 * math.pi)
    ft = t / dth
    l0 = np.floor(ft).astype(np.int64) % ntheta
    wt = ft - np.floor(ft)
    l1 = (l0 + 1) % ntheta

    def ring(m, la, lb, w):
        return (1.0 - w) * values[m, la] + w * values[m, lb]

    fr = (r - rho0) / drho
    inner = fr < 0.0
    m0 = np.clip(np.floor(fr).astype(np.int64), 0, nrho - 2)
    wr = np.clip(fr - m0, 0.0, 1.0)
    out = (1.0 - wr) * ring(m0, l0, l1, wt) + wr * ring(m0 + 1, l0, l1, wt)
    if np.any(inner):
        half = ntheta // 2
        la, lb, w = l0[inner], l1[inner], wt[inner]
        near = ring(0, la, lb, w)
        far = ring(0, (la + half) % ntheta, (lb + half) % ntheta, w)
        s = (r[inner] + rho0) / (2.0 * rho0)
        out = out.astype(np.result_type(out, near))
        out[inner] = s * near + (1.0 - s) * far
    return out


def backproject(filtered, offsets, angles, px, py, atten):
    """Weighted backprojection of a filtered parallel sinogram.

    ``filtered[j, i]`` is the filtered projection at angle ``angles[j]`` and
    offset ``offsets[i]`` (uniform).  Each angle contributes
    ``exp(-atten * x . wperp) * filtered(x . w)`` with linear interpolation
    in the offset, where ``w = (cos a, sin a)`` and ``wperp = (-sin a, cos a)``.
    """
    px = np.asarray(px, dtype=float).ravel()
    py = np.asarray(py, dtype=float).ravel()
    ds = offsets[1] - offsets[0]
    n = offsets.size
    out = np.zeros(px.size, dtype=np.result_type(filtered, atten, float))
    for j, a in enumerate(angles):
        ca, sa = math.cos(a), math.sin(a)
        s = px * ca + py * sa
        tt = -px * sa + py * ca
        f = (s - offsets[0]) / ds
        i0 = np.floor(f).astype(np.int64)
        w = f - i0
        ok = (i0 >= 0) & (i0 < n - 1)
        i0c = np.clip(i0, 0, n - 2)
        val = (1.0 - w) * filtered[j, i0c] + w * filtered[j, i0c + 1]
        val = np.where(ok, val, 0.0)
        if atten != 0:
            val = val * np.exp(-atten * tt)
        out += val
    return out
