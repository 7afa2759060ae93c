# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the loops in :mod:`calderon._kernels_py`."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor, sqrt, atan2, hypot, cos, sin, fmod, M_PI

cnp.import_array()


cdef inline void _accel(double x, double y, double vx, double vy,
                        double amp, double width, double* ax, double* ay) noexcept nogil:
    cdef double e = amp * exp(-(x * x + y * y) / (width * width))
    cdef double k = -e / (width * width * (1.0 + e))
    cdef double gx = k * x
    cdef double gy = k * y
    cdef double dot = gx * vx + gy * vy
    cdef double v2 = vx * vx + vy * vy
    ax[0] = -2.0 * dot * vx + v2 * gx
    ay[0] = -2.0 * dot * vy + v2 * gy


cdef inline void _rk4(double* s, double h, double amp, double width) noexcept nogil:
    cdef double x = s[0], y = s[1], vx = s[2], vy = s[3]
    cdef double ax1, ay1, ax2, ay2, ax3, ay3, ax4, ay4
    cdef double x2, y2, vx2, vy2, x3, y3, vx3, vy3, x4, y4, vx4, vy4
    _accel(x, y, vx, vy, amp, width, &ax1, &ay1)
    x2 = x + 0.5 * h * vx
    y2 = y + 0.5 * h * vy
    vx2 = vx + 0.5 * h * ax1
    vy2 = vy + 0.5 * h * ay1
    _accel(x2, y2, vx2, vy2, amp, width, &ax2, &ay2)
    x3 = x + 0.5 * h * vx2
    y3 = y + 0.5 * h * vy2
    vx3 = vx + 0.5 * h * ax2
    vy3 = vy + 0.5 * h * ay2
    _accel(x3, y3, vx3, vy3, amp, width, &ax3, &ay3)
    x4 = x + h * vx3
    y4 = y + h * vy3
    vx4 = vx + h * ax3
    vy4 = vy + h * ay3
    _accel(x4, y4, vx4, vy4, amp, width, &ax4, &ay4)
    s[0] = x + h / 6.0 * (vx + 2 * vx2 + 2 * vx3 + vx4)
    s[1] = y + h / 6.0 * (vy + 2 * vy2 + 2 * vy3 + vy4)
    s[2] = vx + h / 6.0 * (ax1 + 2 * ax2 + 2 * ax3 + ax4)
    s[3] = vy + h / 6.0 * (ay1 + 2 * ay2 + 2 * ay3 + ay4)


def geodesic_march(state0, double h, double amp, double width, Py_ssize_t max_steps):
    cdef double s[4]
    cdef Py_ssize_t i, n = 0
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((max_steps + 1, 4))
    for i in range(4):
        s[i] = float(state0[i])
        out[0, i] = s[i]
    with nogil:
        while n < max_steps:
            _rk4(s, h, amp, width)
            n += 1
            out[n, 0] = s[0]
            out[n, 1] = s[1]
            out[n, 2] = s[2]
            out[n, 3] = s[3]
            if s[0] * s[0] + s[1] * s[1] > 1.0:
                break
    return out[: n + 1].copy()


def shoot_conformal(state, h, Py_ssize_t nsteps, double amp, double width):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] st = np.array(state, dtype=np.float64, copy=True)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] hh = np.broadcast_to(
        np.asarray(h, dtype=np.float64), (st.shape[1],)).copy()
    cdef Py_ssize_t j, k, n = st.shape[1]
    cdef double s[4]
    with nogil:
        for j in range(n):
            s[0] = st[0, j]
            s[1] = st[1, j]
            s[2] = st[2, j]
            s[3] = st[3, j]
            for k in range(nsteps):
                _rk4(s, hh[j], amp, width)
            st[0, j] = s[0]
            st[1, j] = s[1]
            st[2, j] = s[2]
            st[3, j] = s[3]
    return st


cdef inline double _ring(const double[:, :] v, Py_ssize_t m, Py_ssize_t la, Py_ssize_t lb, double w) noexcept nogil:
    return (1.0 - w) * v[m, la] + w * v[m, lb]


def _polar_interp_real(const double[:, :] v, double rho0, double drho, Py_ssize_t nrho,
                       Py_ssize_t ntheta, const double[:] px, const double[:] py):
    cdef Py_ssize_t n = px.shape[0], i, l0, l1, m0, half = ntheta // 2
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n)
    cdef double dth = 2.0 * M_PI / ntheta, r, t, ft, wt, fr, wr, s
    with nogil:
        for i in range(n):
            r = hypot(px[i], py[i])
            t = fmod(atan2(py[i], px[i]) + 2.0 * M_PI, 2.0 * M_PI)
            ft = t / dth
            l0 = (<Py_ssize_t> floor(ft)) % ntheta
            wt = ft - floor(ft)
            l1 = (l0 + 1) % ntheta
            fr = (r - rho0) / drho
            if fr < 0.0:
                s = (r + rho0) / (2.0 * rho0)
                out[i] = s * _ring(v, 0, l0, l1, wt) + (1.0 - s) * _ring(
                    v, 0, (l0 + half) % ntheta, (l1 + half) % ntheta, wt)
            else:
                m0 = <Py_ssize_t> floor(fr)
                if m0 > nrho - 2:
                    m0 = nrho - 2
                wr = fr - m0
                if wr > 1.0:
                    wr = 1.0
                out[i] = (1.0 - wr) * _ring(v, m0, l0, l1, wt) + wr * _ring(v, m0 + 1, l0, l1, wt)
    return out


def polar_interp(values, double rho0, double drho, Py_ssize_t nrho, Py_ssize_t ntheta, px, py):
    values = np.asarray(values)
    shape = np.broadcast(np.asarray(px), np.asarray(py)).shape
    x = np.ascontiguousarray(np.broadcast_to(px, shape), dtype=np.float64).ravel()
    y = np.ascontiguousarray(np.broadcast_to(py, shape), dtype=np.float64).ravel()
    if np.iscomplexobj(values):
        re = _polar_interp_real(np.ascontiguousarray(values.real, dtype=np.float64), rho0, drho, nrho, ntheta, x, y)
        im = _polar_interp_real(np.ascontiguousarray(values.imag, dtype=np.float64), rho0, drho, nrho, ntheta, x, y)
        return (re + 1j * im).reshape(shape)
    v = np.ascontiguousarray(values, dtype=np.float64)
    return _polar_interp_real(v, rho0, drho, nrho, ntheta, x, y).reshape(shape)


def _backproject_real(const double[:, :] filt, double s0, double ds, const double[:] angles,
                      const double[:] px, const double[:] py, double atten):
    cdef Py_ssize_t npts = px.shape[0], na = angles.shape[0], ns = filt.shape[1]
    cdef Py_ssize_t i, j, i0
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(npts)
    cdef double ca, sa, s, tt, f, w, val, acc
    cdef double[:] cs = np.cos(np.asarray(angles))
    cdef double[:] sn = np.sin(np.asarray(angles))
    with nogil:
        for i in range(npts):
            acc = 0.0
            for j in range(na):
                ca = cs[j]
                sa = sn[j]
                s = px[i] * ca + py[i] * sa
                f = (s - s0) / ds
                i0 = <Py_ssize_t> floor(f)
                if i0 < 0 or i0 >= ns - 1:
                    continue
                w = f - i0
                val = (1.0 - w) * filt[j, i0] + w * filt[j, i0 + 1]
                if atten != 0.0:
                    tt = -px[i] * sa + py[i] * ca
                    val = val * exp(-atten * tt)
                acc += val
            out[i] = acc
    return out


def backproject(filtered, offsets, angles, px, py, double atten):
    offsets = np.asarray(offsets, dtype=np.float64)
    ang = np.ascontiguousarray(angles, dtype=np.float64)
    x = np.ascontiguousarray(px, dtype=np.float64).ravel()
    y = np.ascontiguousarray(py, dtype=np.float64).ravel()
    s0 = offsets[0]
    ds = offsets[1] - offsets[0]
    filtered = np.asarray(filtered)
    if np.iscomplexobj(filtered):
        re = _backproject_real(np.ascontiguousarray(filtered.real), s0, ds, ang, x, y, atten)
        im = _backproject_real(np.ascontiguousarray(filtered.imag), s0, ds, ang, x, y, atten)
        return re + 1j * im
    return _backproject_real(np.ascontiguousarray(filtered, dtype=np.float64), s0, ds, ang, x, y, atten)
