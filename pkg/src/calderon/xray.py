"""Ray transforms on the transversal disk and the Fourier synthesis in ``x1``.

Samples follow the extraction convention

    D(lambda, gamma) = int_0^T exp(-2 lambda t) F(2 lambda, gamma(t)) dt,
    F(mu, x') = int exp(-i mu x1) (c q)(x1, x') dx1,

with ``t`` measured from the entry point.  Parallel chords are indexed by
the offset ``s`` and the angle ``alpha`` of the normal ``w = (cos a, sin a)``;
the chord runs along ``d = (-sin a, cos a)`` from ``s w - sqrt(1 - s^2) d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import kernels
from .errors import AttenuationTooLarge, InvalidConfig, MetricUnsupported, StencilTooShort
from .geometry import Geodesic, ManifoldGrid, MetricSpec, chord_geodesic, default_step

MEASURED = "measured"
ORACLE = "oracle"
ATTENUATION_GUARD = 1e3


# ---------------------------------------------------------------------------
# geodesic families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChordFamily:
    """Parallel chords on the unit disk.

    ``angles`` cover ``[0, 2 pi)`` when ``full_circle`` (needed for
    attenuated data, where the direction of travel matters) and ``[0, pi)``
    otherwise.  Offsets are cell centred on ``(-1, 1)``.
    """

    n_offsets: int = 32
    n_angles: int = 64
    full_circle: bool = True
    offset_max: float = 1.0

    def __post_init__(self):
        if self.n_offsets < 2 or self.n_angles < 1:
            raise InvalidConfig("chord family needs at least two offsets and one angle")

    @property
    def offsets(self) -> np.ndarray:
        ds = 2.0 * self.offset_max / self.n_offsets
        return -self.offset_max + (np.arange(self.n_offsets) + 0.5) * ds

    @property
    def angles(self) -> np.ndarray:
        span = 2.0 * math.pi if self.full_circle else math.pi
        return np.arange(self.n_angles) * span / self.n_angles

    @property
    def d_angle(self) -> float:
        return (2.0 * math.pi if self.full_circle else math.pi) / self.n_angles

    def chords(self):
        """``(i, j, s, alpha)`` for every chord, offsets fastest."""
        for j, a in enumerate(self.angles):
            for i, s in enumerate(self.offsets):
                yield i, j, float(s), float(a)

    @classmethod
    def from_dict(cls, d: dict) -> "ChordFamily":
        return cls(**{k: d[k] for k in ("n_offsets", "n_angles", "full_circle", "offset_max") if k in d})

    def to_dict(self) -> dict:
        return {
            "n_offsets": self.n_offsets,
            "n_angles": self.n_angles,
            "full_circle": self.full_circle,
            "offset_max": self.offset_max,
        }


def chord_endpoints(s: float, alpha: float):
    """Entry point, direction and length of the Euclidean chord ``(s, alpha)``."""
    w = np.array([math.cos(alpha), math.sin(alpha)])
    d = np.array([-math.sin(alpha), math.cos(alpha)])
    half = math.sqrt(max(1.0 - s * s, 0.0))
    return s * w - half * d, d, 2.0 * half


@dataclass
class TransformSamples:
    """Complex samples ``D[k, i, j]`` at ``lambdas[k]``, ``offsets[i]``, ``angles[j]``."""

    lambdas: np.ndarray
    family: ChordFamily
    values: np.ndarray
    provenance: str = ORACLE
    residual: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        shape = (self.lambdas.size, self.family.n_offsets, self.family.n_angles)
        if self.values.shape != shape:
            raise InvalidConfig(f"sample array has shape {self.values.shape}, expected {shape}")

    def slice(self, lam: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.lambdas - lam)))
        if abs(self.lambdas[k] - lam) > 1e-12:
            raise InvalidConfig(f"lambda {lam} is not on the sample grid")
        return self.values[k]

    def conjugate_symmetry_error(self) -> float:
        """``max |D(-lambda) - conj D(lambda)|`` relative to ``max |D|``.

        Only meaningful for data of the form ``int F(2 lambda, .)`` with no
        path weight, i.e. after removing ``exp(-2 lambda t)``; see
        :func:`reversal_symmetry_error` for the weighted samples.
        """
        lam = self.lambdas
        out = 0.0
        for k, l in enumerate(lam):
            m = int(np.argmin(np.abs(lam + l)))
            if abs(lam[m] + l) < 1e-12:
                out = max(out, float(np.abs(self.values[m] - np.conj(self.values[k])).max()))
        scale = float(np.abs(self.values).max()) or 1.0
        return out / scale

    def to_rows(self, ids: Optional[np.ndarray] = None):
        """Rows for the sinogram CSV."""
        offs, angs = self.family.offsets, self.family.angles
        res = self.residual
        for k, l in enumerate(self.lambdas):
            for j, a in enumerate(angs):
                for i, s in enumerate(offs):
                    gid = j * offs.size + i
                    v = self.values[k, i, j]
                    r = float(res[k, i, j]) if res is not None else 0.0
                    yield (float(l), gid, float(s), float(a), float(v.real), float(v.imag), r)


def reversal_symmetry_error(samples: TransformSamples) -> float:
    """Conjugate symmetry for real ``q`` on a full-circle family.

    Reversing a chord maps ``(s, alpha)`` to ``(-s, alpha + pi)`` and gives
    ``D(-lambda, gamma) = exp(2 lambda T) conj D(lambda, reversed gamma)``.
    """
    fam = samples.family
    if not fam.full_circle or fam.n_angles % 2:
        raise InvalidConfig("reversal symmetry needs a full-circle family with even angle count")
    lam = samples.lambdas
    T = 2.0 * np.sqrt(np.maximum(1.0 - fam.offsets**2, 0.0))
    half = fam.n_angles // 2
    worst = 0.0
    for k, l in enumerate(lam):
        m = int(np.argmin(np.abs(lam + l)))
        if abs(lam[m] + l) > 1e-12:
            continue
        rev = np.roll(samples.values[k][::-1, :], -half, axis=1)
        pred = np.exp(2.0 * l * T)[:, None] * np.conj(rev)
        worst = max(worst, float(np.abs(samples.values[m] - pred).max()))
    scale = float(np.abs(samples.values).max()) or 1.0
    return worst / scale


# ---------------------------------------------------------------------------
# forward transform
# ---------------------------------------------------------------------------


FieldLike = Union[np.ndarray, Callable]


def _evaluator(F: FieldLike, grid: Optional[ManifoldGrid]):
    if callable(F):
        return F
    F = np.asarray(F)
    if grid is None:
        raise InvalidConfig("a grid is needed to interpolate nodal fields")
    nr, nt = grid.shape[1:]
    vals = F.reshape(nr, nt)

    def ev(x, y):
        return kernels.polar_interp(vals, grid.rho[0], grid.drho, nr, nt, x, y)

    return ev


def _trapezoid(y: np.ndarray, t: np.ndarray) -> complex:
    dt = np.diff(t)
    return np.sum(0.5 * (y[1:] + y[:-1]) * dt)


def _tp(t: np.ndarray, T: float, t_power: int, t_origin: str):
    if not t_power:
        return 1.0
    if t_origin == "midpoint":
        return (t - 0.5 * T) ** t_power
    if t_origin != "entry":
        raise InvalidConfig(f"t_origin must be 'entry' or 'midpoint', not {t_origin!r}")
    return t**t_power


def integrate_along(F: FieldLike, geo: Geodesic, lam: float, grid: Optional[ManifoldGrid] = None,
                    step: Optional[float] = None, t_power: int = 0, t_origin: str = "entry"):
    """``int_0^T t^p exp(-2 lambda t) F(gamma(t)) dt`` by composite trapezoid.

    With ``t_origin="midpoint"`` the power weight is ``(t - T/2)^p``.
    """
    ev = _evaluator(F, grid)
    T = geo.length
    if step is None:
        step = default_step(grid) if grid is not None else 1e-3
    n = max(int(math.ceil(T / step)), 2)
    t = np.linspace(0.0, T, n + 1)
    p = geo.sample(t)
    w = np.exp(-2.0 * lam * t) * _tp(t, T, t_power, t_origin)
    return _trapezoid(w * ev(p[:, 0], p[:, 1]), t)


def forward_ert(
    F: FieldLike,
    lam: Union[float, Sequence[float]],
    geodesics: Union[ChordFamily, Sequence[Geodesic]],
    grid: Optional[ManifoldGrid] = None,
    step: Optional[float] = None,
    metric: Optional[MetricSpec] = None,
    t_power: int = 0,
    t_origin: str = "entry",
):
    """Attenuated ray transform ``int exp(-2 lambda t) F(gamma(t)) dt``.

    ``F`` is a transversal nodal field (interpolated bilinearly) or a
    callable ``F(x, y)``.  For a :class:`ChordFamily` the result has shape
    ``(n_lambda, n_offsets, n_angles)``; for a list of geodesics it has shape
    ``(n_lambda, n_geodesics)``.  A scalar ``lam`` drops the first axis.
    ``t_power`` adds the weight ``t^p`` (``(t - T/2)^p`` for
    ``t_origin="midpoint"``).
    """
    scalar = np.ndim(lam) == 0
    lams = np.atleast_1d(np.asarray(lam, dtype=float))
    ev = _evaluator(F, grid)
    if step is None:
        step = default_step(grid) if grid is not None else 2e-3
    metric = metric if metric is not None else (grid.metric if grid is not None else MetricSpec())
    if isinstance(geodesics, ChordFamily):
        fam = geodesics
        out = np.zeros((lams.size, fam.n_offsets, fam.n_angles), dtype=complex)
        if metric.is_euclidean:
            for i, j, s, a in fam.chords():
                e, d, T = chord_endpoints(s, a)
                n = max(int(math.ceil(T / step)), 2)
                t = np.linspace(0.0, T, n + 1)
                vals = ev(e[0] + t * d[0], e[1] + t * d[1]) * _tp(t, T, t_power, t_origin)
                for k, l in enumerate(lams):
                    y = np.exp(-2.0 * l * t) * vals
                    out[k, i, j] = _trapezoid(y, t)
        else:
            for i, j, s, a in fam.chords():
                geo = chord_geodesic(metric, s, a)
                for k, l in enumerate(lams):
                    out[k, i, j] = integrate_along(ev, geo, l, None, step, t_power, t_origin)
    else:
        geos = list(geodesics)
        out = np.zeros((lams.size, len(geos)), dtype=complex)
        for g_i, geo in enumerate(geos):
            for k, l in enumerate(lams):
                out[k, g_i] = integrate_along(ev, geo, l, None, step, t_power, t_origin)
    if np.all(out.imag == 0):
        out = out.real
    return out[0] if scalar else out


# ---------------------------------------------------------------------------
# inversion
# ---------------------------------------------------------------------------


def _ramp_kernel_spectrum(n_pad: int, ds: float) -> np.ndarray:
    """Spectrum of the discrete band-limited ramp kernel (no DC bias)."""
    k = np.arange(n_pad)
    k = np.where(k > n_pad // 2, k - n_pad, k)
    h = np.zeros(n_pad)
    h[0] = 1.0 / (4.0 * ds * ds)
    odd = (k % 2) != 0
    h[odd] = -1.0 / (np.pi**2 * k[odd] ** 2 * ds * ds)
    # kernel samples give the ramp in cycles; scale to |sigma| in radians
    return 2.0 * np.pi * np.real(np.fft.fft(h)) * ds


def _filter_projections(sino: np.ndarray, offsets: np.ndarray, mu: float, window: str) -> np.ndarray:
    """Filter each column ``sino[:, j]`` with ``|sigma|`` cut below ``|mu|``."""
    n = offsets.size
    ds = offsets[1] - offsets[0]
    n_pad = int(2 ** math.ceil(math.log2(max(2 * n, 64))))
    sigma = 2.0 * np.pi * np.fft.fftfreq(n_pad, d=ds)
    H = _ramp_kernel_spectrum(n_pad, ds)
    if mu != 0.0:
        H = np.where(np.abs(sigma) >= abs(mu), H, 0.0)
    if window == "hann":
        H = H * 0.5 * (1.0 + np.cos(np.pi * sigma / np.abs(sigma).max()))
    elif window not in (None, "none"):
        raise InvalidConfig(f"unknown window {window!r}")
    P = np.fft.fft(sino, n=n_pad, axis=0)
    q = np.fft.ifft(P * H[:, None], axis=0)[:n]
    # the circular kernel wraps; n_pad >= 2n keeps the first n entries clean
    return q


def _backproject(filtered_ij: np.ndarray, fam: ChordFamily, px, py, mu: float) -> np.ndarray:
    filt = np.ascontiguousarray(filtered_ij.T)
    if np.iscomplexobj(filt):
        re = kernels.backproject(np.ascontiguousarray(filt.real), fam.offsets, fam.angles, px, py, mu)
        im = kernels.backproject(np.ascontiguousarray(filt.imag), fam.offsets, fam.angles, px, py, mu)
        return re + 1j * im
    return kernels.backproject(filt, fam.offsets, fam.angles, px, py, mu)


def _inversion_points(grid: Optional[ManifoldGrid], points):
    if points is not None:
        px, py = points
        return np.asarray(px, float).ravel(), np.asarray(py, float).ravel(), np.shape(px)
    if grid is None:
        raise InvalidConfig("need a grid or explicit points")
    return grid.X.ravel(), grid.Y.ravel(), grid.X.shape


def exponential_radon_invert(
    sino: np.ndarray,
    fam: ChordFamily,
    mu: float,
    grid: Optional[ManifoldGrid] = None,
    points=None,
    window: str = "hann",
) -> np.ndarray:
    """Invert ``R_mu F(s, a) = int exp(mu t') F(s w + t' d) dt'``.

    ``t'`` is the signed distance from the foot point ``s w``.  The filter is
    ``|sigma|`` on ``|sigma| >= |mu|`` (zero below) and backprojection
    carries ``exp(-mu x . d)``; ``mu = 0`` is ordinary filtered
    backprojection.
    """
    if mu != 0.0 and not fam.full_circle:
        raise InvalidConfig("attenuated inversion needs angles over the full circle")
    px, py, shape = _inversion_points(grid, points)
    filt = _filter_projections(np.asarray(sino), fam.offsets, mu, window)
    out = _backproject(filt, fam, px, py, mu)
    # int over [0, pi) of the filtered projections, divided by 2 pi
    norm = fam.d_angle / (2.0 * np.pi) / (2.0 if fam.full_circle else 1.0)
    out = out * norm
    r2 = px * px + py * py
    out = np.where(r2 <= 1.0 + 1e-12, out, 0.0)
    if np.iscomplexobj(out) and np.all(out.imag == 0):
        out = out.real
    return out.reshape(shape)


def _require_euclidean(grid: Optional[ManifoldGrid], metric: Optional[MetricSpec]):
    m = metric if metric is not None else (grid.metric if grid is not None else MetricSpec())
    if not m.is_euclidean:
        raise MetricUnsupported("constructive inversion is implemented for the Euclidean disk only")


def fbp_invert(sino: np.ndarray, fam: ChordFamily, grid: Optional[ManifoldGrid] = None, points=None,
               window: str = "hann", metric: Optional[MetricSpec] = None) -> np.ndarray:
    """Filtered backprojection of an unattenuated parallel sinogram ``(n_offsets, n_angles)``."""
    _require_euclidean(grid, metric)
    if fam.n_offsets < 32 or fam.n_angles < 32:
        raise InvalidConfig("filtered backprojection needs at least 32 offsets and 32 angles")
    return exponential_radon_invert(sino, fam, 0.0, grid, points, window)


def lambda_guard(lam: float, T_max: float = 2.0, guard: float = ATTENUATION_GUARD) -> None:
    if math.exp(2.0 * abs(lam) * T_max) > guard:
        raise AttenuationTooLarge(
            f"exp(2 |lambda| T) = {math.exp(2 * abs(lam) * T_max):.3e} exceeds {guard:.1e}"
        )


def per_lambda_invert(sino: np.ndarray, fam: ChordFamily, lam: float, grid: Optional[ManifoldGrid] = None,
                      points=None, window: str = "hann", metric: Optional[MetricSpec] = None,
                      guard: float = ATTENUATION_GUARD) -> np.ndarray:
    """``F(2 lambda, .)`` from the samples ``D(lambda, .)`` at one ``lambda``.

    Re-centring ``t = t' + sqrt(1 - s^2)`` turns the samples into an
    exponential Radon transform with ``mu = -2 lambda``.
    """
    _require_euclidean(grid, metric)
    lambda_guard(lam, 2.0 * fam.offset_max, guard)
    half = np.sqrt(np.maximum(1.0 - fam.offsets**2, 0.0))
    R = np.exp(2.0 * lam * half)[:, None] * np.asarray(sino)
    return exponential_radon_invert(R, fam, -2.0 * lam, grid, points, window)


# ---------------------------------------------------------------------------
# lambda derivatives
# ---------------------------------------------------------------------------


def fd_weights(x: np.ndarray, x0: float, order: int) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at ``x0`` (Fornberg)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < order + 1:
        raise StencilTooShort(f"{n} points cannot give a derivative of order {order}")
    c = np.zeros((n, order + 1))
    c1 = 1.0
    c4 = x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


@dataclass
class DerivativeRecovery:
    """Fields ``F_k = d^k_mu F(0, .)`` and the intermediate sinograms."""

    fields: list
    derivative_data: list
    corrected: list


def lambda_derivative_recover(
    samples: TransformSamples,
    K: int,
    grid: ManifoldGrid,
    window: str = "hann",
    stencil: Optional[int] = None,
    mask: Optional[np.ndarray] = None,
    origin: str = "midpoint",
) -> DerivativeRecovery:
    """Recover ``F_k`` for ``k = 0..K`` from ``lambda``-derivatives at 0.

    ``d^k_lambda D(0, gamma) = sum_j C(k, j) 2^j int (-2 t)^(k - j) F_j(gamma(t)) dt``;
    the terms with ``j < k`` are computed from the fields already
    recovered and subtracted, leaving ``2^k`` times the plain transform of
    ``F_k``, which is inverted by filtered backprojection.

    ``origin="midpoint"`` measures ``t`` from the chord midpoint instead of
    the entry point: the samples are multiplied by ``exp(2 lambda T / 2)``
    and the same recursion runs with weights ``(-2 (t - T/2))^(k - j)``.
    The identity is unchanged; the correction terms are much smaller, so
    less cancellation is needed.
    """
    _require_euclidean(grid, None)
    lam = samples.lambdas
    if lam.size < K + 1:
        raise StencilTooShort(f"lambda grid has {lam.size} points, order {K} needs {K + 1}")
    fam = samples.family
    if stencil is not None:
        idx = np.argsort(np.abs(lam))[:stencil]
        idx.sort()
    else:
        idx = np.arange(lam.size)
    values = samples.values[idx]
    if origin == "midpoint":
        half = np.sqrt(np.maximum(1.0 - fam.offsets**2, 0.0))
        values = np.exp(2.0 * lam[idx][:, None, None] * half[None, :, None]) * values
    elif origin != "entry":
        raise InvalidConfig(f"origin must be 'entry' or 'midpoint', not {origin!r}")
    fields, ddata, corr_data = [], [], []
    for k in range(K + 1):
        w = fd_weights(lam[idx], 0.0, k)
        dk = np.tensordot(w, values, axes=(0, 0))
        resid = dk.copy()
        for j in range(k):
            coef = math.comb(k, j) * 2.0**j * (-2.0) ** (k - j)
            resid = resid - coef * forward_ert(fields[j], 0.0, fam, grid, t_power=k - j, t_origin=origin)
        data = resid / 2.0**k
        if mask is not None:
            data = np.where(mask, data, 0.0)
        Fk = fbp_invert(data, fam, grid, window=window)
        ddata.append(dk)
        corr_data.append(data)
        fields.append(Fk)
    return DerivativeRecovery(fields, ddata, corr_data)


# ---------------------------------------------------------------------------
# Fourier synthesis in x1
# ---------------------------------------------------------------------------


def fourier_synthesize(
    x1: np.ndarray,
    c,
    fields: Optional[Sequence[np.ndarray]] = None,
    mus: Optional[np.ndarray] = None,
    slices: Optional[Sequence[np.ndarray]] = None,
    mu_max: Optional[float] = None,
    n_mu: int = 257,
    window: Optional[str] = None,
) -> np.ndarray:
    """``q(x1, x')`` from ``F(mu, x')``.

    Taylor mode (``fields`` = ``[F_0, ..., F_K]``) evaluates
    ``sum_k F_k mu^k / k!`` on ``|mu| <= mu_max``.  Slice mode takes
    ``slices[k] = F(mus[k], .)`` on a uniform ``mu`` grid.  Both integrate
    ``(1 / 2 pi) int F(mu, .) exp(i mu x1) d mu`` by the trapezoid rule and
    divide by ``c`` (scalar or per node) at the end.
    """
    x1 = np.asarray(x1, dtype=float)
    if fields is not None:
        if mu_max is None or not mu_max > 0:
            raise InvalidConfig("Taylor synthesis needs a positive mu_max")
        mu = np.linspace(-mu_max, mu_max, n_mu)
        F = np.zeros((n_mu,) + np.shape(fields[0]), dtype=complex)
        for k, Fk in enumerate(fields):
            F += np.multiply.outer(mu**k / math.factorial(k), np.asarray(Fk))
    elif slices is not None and mus is not None:
        mu = np.asarray(mus, dtype=float)
        F = np.asarray(slices, dtype=complex)
        if mu.size != F.shape[0]:
            raise InvalidConfig("one slice per mu value is required")
        if mu.size > 2 and np.ptp(np.diff(mu)) > 1e-9 * abs(mu[1] - mu[0]):
            raise InvalidConfig("slice mode needs a uniform mu grid")
    else:
        raise InvalidConfig("give either Taylor fields or mu slices")
    wts = np.full(mu.size, mu[1] - mu[0] if mu.size > 1 else 1.0)
    wts[0] *= 0.5
    wts[-1] *= 0.5
    if window == "hann":
        wts = wts * 0.5 * (1.0 + np.cos(np.pi * mu / np.abs(mu).max()))
    phase = np.exp(1j * np.outer(x1, mu)) * wts[None, :]
    cq = np.tensordot(phase, F, axes=(1, 0)) / (2.0 * np.pi)
    cq = cq.real if np.isrealobj(F) or np.allclose(cq.imag, 0, atol=1e-14 * (np.abs(cq).max() + 1e-300)) else cq
    return cq / np.asarray(c)


__all__ = [
    "MEASURED",
    "ORACLE",
    "ChordFamily",
    "chord_endpoints",
    "TransformSamples",
    "reversal_symmetry_error",
    "integrate_along",
    "forward_ert",
    "exponential_radon_invert",
    "fbp_invert",
    "per_lambda_invert",
    "lambda_guard",
    "fd_weights",
    "DerivativeRecovery",
    "lambda_derivative_recover",
    "fourier_synthesize",
]
