"""Run configuration, phantoms and the forward / reconstruction / selftest drivers."""

from __future__ import annotations

import dataclasses
import logging
import math
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import io as cio
from .bie import BieSolver, assemble_bie, pairing, richardson
from .carleman import GreenOperator, RtauSolver, assemble_single_layer, transversal_modes
from .cgo import GLOBAL, PARTIAL, Bump, _check_bump_in_e, harmonic_batch, keep_out_rim, schrodinger_batch
from .errors import (
    BumpOutsideE,
    CalderonError,
    ChartFailure,
    DirichletEigenvalue,
    ExtrapolationUnstable,
    IndexMismatch,
    InvalidConfig,
)
from .forward import DirichletSolver, PartialDtN, dtn, smallest_dirichlet_eigenvalue
from .geometry import (
    GammaISpec,
    ManifoldConfig,
    ManifoldGrid,
    build_manifold,
    build_polar_chart,
    chord_geodesic,
    classify_boundary,
)
from .xray import (
    ChordFamily,
    TransformSamples,
    fourier_synthesize,
    lambda_derivative_recover,
    per_lambda_invert,
    MEASURED,
)

log = logging.getLogger("calderon")

LOCAL = "local"
RUN_MODES = (PARTIAL, GLOBAL, LOCAL)
REPORT_SCHEMA = "calderon-report/1"


# ---------------------------------------------------------------------------
# threads
# ---------------------------------------------------------------------------


def thread_count() -> int:
    raw = os.environ.get("CALDERON_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise InvalidConfig(f"CALDERON_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise InvalidConfig("CALDERON_THREADS must be at least 1")
    return n


def _available_cpus() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - not on Linux
        return os.cpu_count() or 1


@contextmanager
def thread_limit(n: Optional[int] = None):
    """Cap BLAS threads; the work itself is sequential and ordered.

    The cap is clamped to the available CPUs: OpenBLAS sizes its buffers at
    load time and crashes when asked for more threads than that.
    """
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=min(n or thread_count(), _available_cpus())):
        yield


# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------


def _smooth_step(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


@dataclass(frozen=True)
class PhantomSpec:
    """Potential phantoms on the cylinder.

    ``kind`` is one of ``zero``, ``gaussian``, ``two_bump``, ``separable``,
    ``transversal`` (x1-independent Gaussian, no cap taper) and
    ``dirichlet_eigenvalue`` (constant ``-lambda_1``, singular on purpose).
    Gaussians are ``A exp(-|x - x0|^2 / sigma^2)``, tapered to zero over
    ``taper`` near the boundary.
    """

    kind: str = "gaussian"
    amplitude: float = 1.0
    center: tuple = (0.0, 0.25, 0.0)
    sigma: float = 0.7
    second_center: tuple = (0.0, -0.35, 0.2)
    taper: float = 0.2
    p_center: float = 0.0
    p_halfwidth: float = 0.5

    KINDS = ("zero", "gaussian", "two_bump", "separable", "transversal", "dirichlet_eigenvalue")

    def validate(self) -> None:
        if self.kind not in self.KINDS:
            raise InvalidConfig(f"unknown phantom kind {self.kind!r}")
        if not self.sigma > 0 or not self.taper > 0:
            raise InvalidConfig("phantom sigma and taper must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        kw = {}
        for f in dataclasses.fields(cls):
            if f.name in d:
                v = d[f.name]
                kw[f.name] = tuple(v) if isinstance(v, list) else v
        spec = cls(**kw)
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}


def raised_cosine(x1, center: float = 0.0, halfwidth: float = 0.5):
    """``(1 + cos(pi (x1 - c) / h)) / 2`` on ``|x1 - c| <= h``."""
    z = (np.asarray(x1, dtype=float) - center) / halfwidth
    return np.where(np.abs(z) <= 1.0, 0.5 * (1.0 + np.cos(np.pi * z)), 0.0)


def phantom_function(spec: PhantomSpec, x1_range: tuple = (-1.0, 1.0)) -> Callable:
    """``q(x1, x, y)`` as a vectorised callable."""
    spec.validate()
    a, b = x1_range
    A = spec.amplitude

    def taper(x1, x, y, caps=True):
        rho = np.sqrt(x * x + y * y)
        t = _smooth_step((1.0 - rho) / spec.taper)
        if caps:
            t = t * _smooth_step((x1 - a) / spec.taper) * _smooth_step((b - x1) / spec.taper)
        return t

    def gauss(x1, x, y, c):
        return np.exp(-((x1 - c[0]) ** 2 + (x - c[1]) ** 2 + (y - c[2]) ** 2) / spec.sigma**2)

    def gauss2(x, y, c):
        return np.exp(-((x - c[1]) ** 2 + (y - c[2]) ** 2) / spec.sigma**2)

    kind = spec.kind
    if kind == "zero":
        return lambda x1, x, y: np.zeros(np.broadcast(x1, x, y).shape)
    if kind == "gaussian":
        return lambda x1, x, y: A * gauss(x1, x, y, spec.center) * taper(x1, x, y)
    if kind == "two_bump":
        return lambda x1, x, y: A * (gauss(x1, x, y, spec.center) - 0.5 * gauss(x1, x, y, spec.second_center)) * taper(x1, x, y)
    if kind == "separable":
        return lambda x1, x, y: A * raised_cosine(x1, spec.p_center, spec.p_halfwidth) * gauss2(x, y, spec.center) * taper(x1, x, y, caps=False)
    if kind == "transversal":
        return lambda x1, x, y: A * gauss2(x, y, spec.center) * taper(x1, x, y, caps=False) + 0.0 * x1
    raise InvalidConfig(f"phantom {kind!r} has no closed form")


def phantom(grid: ManifoldGrid, spec: PhantomSpec) -> np.ndarray:
    """Nodal values of the phantom."""
    if spec.kind == "dirichlet_eigenvalue":
        return np.full(grid.n_nodes, -smallest_dirichlet_eigenvalue(grid))
    f = phantom_function(spec, grid.config.x1)
    return np.asarray(f(grid.node_x1, grid.node_x, grid.node_y), dtype=float)


def transversal_fourier(spec: PhantomSpec, c: float, mu, x, y, x1_range=(-1.0, 1.0), n: int = 2001) -> np.ndarray:
    """``F(mu, x') = int exp(-i mu x1) c q(x1, x') dx1`` by fine trapezoid."""
    f = phantom_function(spec, x1_range)
    t = np.linspace(x1_range[0], x1_range[1], n)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    vals = f(t[:, None], x.ravel()[None, :], y.ravel()[None, :]) * c
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    ph = np.exp(-1j * np.outer(mu, t))
    w = np.full(n, t[1] - t[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    out = (ph * w) @ vals
    return out.reshape(mu.shape + x.shape)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; tolerances live here, never in the drivers.

    ``lambdas`` drive the partial and local modes; ``slice_lambdas`` are the
    per-slice grid of the global mode (``mu = 2 lambda`` sets the ``x1``
    resolution of the synthesis).  ``o_disk`` is ``(x, y, radius)``.
    """

    manifold: ManifoldConfig = field(default_factory=ManifoldConfig)
    mode: str = GLOBAL
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    taus: tuple = (8.0, 16.0, 32.0)
    lambdas: tuple = tuple(np.round(np.linspace(-0.4, 0.4, 9), 12))
    slice_lambdas: tuple = tuple(np.round(np.linspace(-1.6, 1.6, 17), 12))
    family: ChordFamily = field(default_factory=lambda: ChordFamily(32, 32, True))
    o_disk: Optional[tuple] = None
    epsilon: float = 0.25
    bump_width: float = 0.2
    delta: float = 0.3
    richardson_order: int = 1
    extrapolation_rel_tol: Optional[float] = None
    cond_limit: float = 1e8
    neumann_tol: float = 1e-12
    taylor_order: int = 4
    taylor_mu_max: float = 0.8
    fbp_window: str = "hann"
    chunk: int = 128
    seed: int = 0
    output_dir: Optional[str] = None

    def validate(self, ladder: bool = True) -> None:
        """Raise :class:`InvalidConfig` on any violated precondition.

        ``ladder=False`` skips the ladder-length checks, which only the
        reconstruction needs; the selftest accepts a single ``tau``.
        """
        self.manifold.validate()
        self.phantom.validate()
        if self.mode not in RUN_MODES:
            raise InvalidConfig(f"mode must be one of {RUN_MODES}")
        if len(self.taus) < 1:
            raise InvalidConfig("the tau ladder is empty")
        if any(not (t > 0 and math.isfinite(t)) for t in self.taus) or list(self.taus) != sorted(self.taus):
            raise InvalidConfig("tau ladder must be positive and increasing")
        if ladder and len(self.taus) < 2:
            raise InvalidConfig("the tau ladder needs at least two values")
        if ladder and self.richardson_order + 1 > len(self.taus):
            raise InvalidConfig("Richardson order exceeds the ladder length")
        lam = np.asarray(self.lambdas if self.mode != GLOBAL else self.slice_lambdas)
        if lam.size < 1 or np.any(np.abs(lam + lam[::-1]) > 1e-9):
            raise InvalidConfig("lambda grid must be symmetric about 0")
        if lam.size > 2 and np.ptp(np.diff(lam)) > 1e-9:
            raise InvalidConfig("lambda grid must be uniform")
        if not self.epsilon > 0 or not self.bump_width > 0 or not self.delta > 0:
            raise InvalidConfig("epsilon, bump_width and delta must be positive")
        gi = self.manifold.gamma_i
        if self.mode == GLOBAL and gi is not None and not (gi.angular_span >= 2 * math.pi and gi.x1_range[0] <= self.manifold.x1[0] and gi.x1_range[1] >= self.manifold.x1[1]):
            raise InvalidConfig("global mode excludes every lateral node from the data sets")
        if self.mode in (PARTIAL, LOCAL) and (gi is None or gi.e_arc() is None):
            raise InvalidConfig("partial and local modes need an inaccessible set leaving an arc E")
        if self.mode == LOCAL and self.o_disk is None:
            raise InvalidConfig("local mode needs the disk O")
        if self.chunk < 1:
            raise InvalidConfig("chunk must be positive")

    @property
    def lambda_grid(self) -> np.ndarray:
        return np.asarray(self.slice_lambdas if self.mode == GLOBAL else self.lambdas, dtype=float)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        try:
            kw = dict(d)
            kw["manifold"] = ManifoldConfig.from_dict(d.get("manifold", {}))
            kw["phantom"] = PhantomSpec.from_dict(d.get("phantom", {}))
            if "family" in d:
                kw["family"] = ChordFamily.from_dict(d["family"])
            for k in ("taus", "lambdas", "slice_lambdas", "o_disk"):
                if k in d and d[k] is not None:
                    kw[k] = tuple(float(v) for v in d[k])
            names = {f.name for f in dataclasses.fields(cls)}
            unknown = set(kw) - names
            if unknown:
                raise InvalidConfig(f"unknown config keys {sorted(unknown)}")
            cfg = cls(**kw)
        except InvalidConfig:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise InvalidConfig(f"malformed run config: {exc}") from exc
        cfg.validate(ladder=False)
        return cfg

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            d = cio.read_json(path)
        except (OSError, ValueError) as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["manifold"] = self.manifold.to_dict()
        d["phantom"] = self.phantom.to_dict()
        d["family"] = self.family.to_dict()
        for k in ("taus", "lambdas", "slice_lambdas", "o_disk"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def reference_config(mode: str = GLOBAL, **kw) -> RunConfig:
    """Reference resolution ``17 x 16 x 32`` with the ``{8, 16, 32}`` ladder."""
    man = kw.pop("manifold", None)
    if man is None:
        gi = None if mode == GLOBAL else GammaISpec((math.pi / 2, 3 * math.pi / 2), (-1.0, 1.0))
        man = ManifoldConfig(gamma_i=gi)
    if mode == LOCAL:
        kw.setdefault("o_disk", (0.45, 0.0, 0.45))
    return RunConfig(manifold=man, mode=mode, **kw)


# ---------------------------------------------------------------------------
# data sets
# ---------------------------------------------------------------------------


def data_sets(grid: ManifoldGrid, config: RunConfig) -> tuple:
    """``(Gamma_+, Gamma_-)``; the caps alone in global mode."""
    d = classify_boundary(grid, 1.0, config.delta, _gamma_i(grid, config))
    return d.gamma_plus, d.gamma_minus


def _gamma_i(grid: ManifoldGrid, config: RunConfig) -> GammaISpec:
    if config.mode == GLOBAL:
        return GammaISpec.full()
    return grid.config.gamma_i


@dataclass
class ForwardResult:
    grid: ManifoldGrid
    q: np.ndarray
    dtn_q: PartialDtN
    dtn_0: PartialDtN
    checksums: dict
    out_dir: Optional[str] = None


def compute_dtn_pair(grid: ManifoldGrid, q: np.ndarray, cols: np.ndarray, rows: np.ndarray,
                     chunk: int = 256) -> tuple:
    """``Lambda_q`` and ``Lambda_0`` on ``rows x cols`` (columns in chunks)."""
    out = []
    for qq, label in ((q, "q"), (None, "0")):
        solver = DirichletSolver(grid, qq)
        parts = [dtn(grid, qq, cols[i:i + chunk], rows, label, solver).matrix for i in range(0, cols.size, chunk)]
        out.append(PartialDtN(np.concatenate(parts, axis=1), rows.copy(), cols.copy(), label,
                              grid.sigma[rows].copy()))
    return out[0], out[1]


def run_forward(config: RunConfig, out_dir=None) -> ForwardResult:
    """Synthesise the partial DtN data ``Lambda_q`` and ``Lambda_0``."""
    config.validate(ladder=False)
    grid = build_manifold(config.manifold)
    q = phantom(grid, config.phantom)
    cols, rows = data_sets(grid, config)
    t0 = time.perf_counter()
    with thread_limit():
        try:
            Lq, L0 = compute_dtn_pair(grid, q, cols, rows)
        except DirichletEigenvalue as exc:
            log.error("forward: %s", exc)
            raise
    log.info("forward: DtN %d x %d in %.2fs", rows.size, cols.size, time.perf_counter() - t0)
    checks = {}
    out_dir = out_dir or config.output_dir
    if out_dir is not None:
        p = Path(out_dir)
        p.mkdir(parents=True, exist_ok=True)
        checks["dtn_q"] = cio.save_dtn(p / "dtn_q", Lq)["sha256"]
        checks["dtn_0"] = cio.save_dtn(p / "dtn_0", L0)["sha256"]
        checks["q_true"] = cio.save_field(p / "q_true.cald1", grid, q)
        cio.write_json(p / "manifest.json", {
            "schema": REPORT_SCHEMA,
            "config": config.to_dict(),
            "grid_shape": list(grid.shape),
            "checksums": checks,
        })
    return ForwardResult(grid, q, Lq, L0, checks, None if out_dir is None else str(out_dir))


def load_forward(config: RunConfig, dtn_dir) -> ForwardResult:
    """Read stored DtN data, checking checksums and geometry."""
    p = Path(dtn_dir)
    grid = build_manifold(config.manifold)
    try:
        man = cio.read_json(p / "manifest.json")
    except (OSError, ValueError) as exc:
        raise InvalidConfig(f"cannot read {p / 'manifest.json'}: {exc}") from exc
    if list(man.get("grid_shape", [])) != list(grid.shape):
        raise InvalidConfig("stored DtN data were computed on a different grid")
    Lq = cio.load_dtn(p / "dtn_q")
    L0 = cio.load_dtn(p / "dtn_0")
    for key, op in (("dtn_q", Lq), ("dtn_0", L0)):
        if man["checksums"].get(key) != cio.file_sha256(p / f"{key}.cald1"):
            raise cio.ChecksumMismatch(f"{key}: checksum does not match the manifest")
    q = cio.load_field(p / "q_true.cald1", grid) if (p / "q_true.cald1").exists() else None
    return ForwardResult(grid, q, Lq, L0, man["checksums"], str(p))


def restrict_dtn(op: PartialDtN, rows: np.ndarray, cols: np.ndarray) -> PartialDtN:
    """Sub-block on ``rows x cols``; raises if the data do not cover them."""
    pr = np.searchsorted(op.rows, rows)
    pc = np.searchsorted(op.cols, cols)
    if (np.any(pr >= op.rows.size) or np.any(op.rows[np.minimum(pr, op.rows.size - 1)] != rows)
            or np.any(pc >= op.cols.size) or np.any(op.cols[np.minimum(pc, op.cols.size - 1)] != cols)):
        raise IndexMismatch("DtN data do not cover the required rows and columns")
    return PartialDtN(op.matrix[np.ix_(pr, pc)].copy(), rows.copy(), cols.copy(), op.q_label,
                      op.row_weights[pr].copy())


# ---------------------------------------------------------------------------
# transform samples from data
# ---------------------------------------------------------------------------


@dataclass
class ChordSetup:
    ids: np.ndarray
    charts: list
    bumps: list
    partners: list
    mask: np.ndarray


def chord_setup(grid: ManifoldGrid, config: RunConfig) -> ChordSetup:
    """Charts and bumps for every chord of the family that admits them.

    In partial and local modes a chord is kept only if its bump and the
    partner's plateau cover vanish near ``dM0 \\ E``; local mode also
    drops chords that miss ``O``.
    """
    fam = config.family
    keep_out = None
    if config.mode != GLOBAL:
        # the lateral part of V does not depend on tau
        keep_out = keep_out_rim(grid, classify_boundary(grid, config.taus[0], config.delta, _gamma_i(grid, config)))
    ids, charts, bumps, partners = [], [], [], []
    mask = np.zeros((fam.n_offsets, fam.n_angles), dtype=bool)
    for i, j, s, a in fam.chords():
        try:
            geo = chord_geodesic(grid, s, a)
            ch = build_polar_chart(grid, geo, config.epsilon)
            b = Bump(ch.theta0, config.bump_width)
            cover = b.plateau_cover()
            if keep_out is not None:
                _check_bump_in_e(grid, ch, b, keep_out)
                _check_bump_in_e(grid, ch, cover, keep_out)
        except (BumpOutsideE, ChartFailure, CalderonError):
            continue
        if config.mode == LOCAL and not _meets_disk(s, a, config.o_disk):
            continue
        mask[i, j] = True
        ids.append(j * fam.n_offsets + i)
        charts.append(ch)
        bumps.append(b)
        partners.append(cover)
    return ChordSetup(np.asarray(ids, dtype=np.int64), charts, bumps, partners, mask)


def _meets_disk(s: float, a: float, disk) -> bool:
    cx, cy, R = disk
    return abs(cx * math.cos(a) + cy * math.sin(a) - s) < R


@dataclass
class TauStage:
    tau: float
    decomp: object
    decomp_minus: object
    green: GreenOperator
    rsolver: RtauSolver
    rsolver_minus: RtauSolver
    bie: Optional[BieSolver]
    cond: float


def _tau_stage(grid, config, Lq, L0, modes, tau, need_bie: bool) -> TauStage:
    gi = _gamma_i(grid, config)
    d = classify_boundary(grid, tau, config.delta, gi)
    dm = classify_boundary(grid, -tau, config.delta, gi)
    G = GreenOperator(grid, tau, modes, d)
    solver, cond = None, float("nan")
    if need_bie:
        S = assemble_single_layer(G)
        op = assemble_bie(S, Lq, L0, grid.boundary)
        solver = BieSolver(op, config.cond_limit)
        cond = solver.cond
    return TauStage(tau, d, dm, G, RtauSolver(grid, tau, modes, d), RtauSolver(grid, -tau, modes, dm), solver, cond)


@dataclass
class SampleRun:
    samples: TransformSamples
    pairings: np.ndarray
    setup: ChordSetup
    conds: list
    certificates: dict
    route: str


def transform_samples(grid: ManifoldGrid, config: RunConfig, Lq: PartialDtN, L0: PartialDtN,
                      q_oracle: Optional[np.ndarray] = None, setup: Optional[ChordSetup] = None) -> SampleRun:
    """``D(lambda, gamma)`` for every admissible chord.

    With ``q_oracle`` the BIE is bypassed and the exact CGO traces (Neumann
    series with the true potential) are paired with the data instead.
    """
    mode = PARTIAL if config.mode in (PARTIAL, LOCAL) else GLOBAL
    setup = setup or chord_setup(grid, config)
    lam_grid = config.lambda_grid
    taus = list(config.taus)
    fam = config.family
    nch = setup.ids.size
    P = np.zeros((len(taus), lam_grid.size, nch), dtype=complex)
    modes = transversal_modes(grid)
    rows, cols = Lq.rows, Lq.cols
    worst_cert = 0.0
    # every stage (and its conditioning guard) is built before any CGO work
    stages = []
    for tau in taus:
        stages.append(_tau_stage(grid, config, Lq, L0, modes, tau, need_bie=q_oracle is None))
        log.info("tau %g: BIE cond %.3e", tau, stages[-1].cond)
    conds = [st.cond for st in stages]
    for it, (tau, st) in enumerate(zip(taus, stages)):
        for il, lam in enumerate(lam_grid):
            for c0 in range(0, nch, config.chunk):
                sl = slice(c0, min(c0 + config.chunk, nch))
                u1 = harmonic_batch(grid, st.decomp, setup.charts[sl], tau, lam, setup.bumps[sl], mode, st.rsolver)
                u2 = harmonic_batch(grid, st.decomp_minus, setup.charts[sl], -tau, lam, setup.partners[sl],
                                    mode, st.rsolver_minus, conjugate=True)
                worst_cert = max(worst_cert, float(u1.support_max_outside.max()), float(u2.support_max_outside.max()))
                if q_oracle is None:
                    h = st.bie.solve(u1.u0[cols])
                else:
                    schrodinger_batch(grid, st.green, q_oracle, u1, tol=config.neumann_tol)
                    h = u1.u[cols]
                P[it, il, sl] = pairing(Lq, L0, u2.u0[rows], h)
    mass = setup.bumps[0].mass() if nch else 1.0
    lim = richardson(taus, P, config.richardson_order)
    resid = np.zeros(lim.shape)
    if len(taus) > config.richardson_order + 1:
        prev = richardson(taus[:-1], P[:-1], config.richardson_order)
        resid = np.abs(lim - prev)
        if config.extrapolation_rel_tol is not None:
            scale = np.maximum(np.abs(lim), np.abs(prev))
            bad = resid > config.extrapolation_rel_tol * scale
            if np.any(bad):
                raise ExtrapolationUnstable(f"{int(bad.sum())} samples failed the Richardson stability test")
    fac = np.exp(2.0 * lam_grid * config.epsilon)[:, None] / mass
    D = np.zeros((lam_grid.size, fam.n_offsets, fam.n_angles), dtype=complex)
    R = np.zeros(D.shape)
    ii, jj = setup.ids % fam.n_offsets, setup.ids // fam.n_offsets
    D[:, ii, jj] = fac * lim
    R[:, ii, jj] = fac * resid
    route = "oracle-trace" if q_oracle is not None else "bie"
    samples = TransformSamples(lam_grid, fam, D, MEASURED, R, setup.mask, {"route": route})
    return SampleRun(samples, P, setup, conds, {"support_max_outside": worst_cert}, route)


# ---------------------------------------------------------------------------
# reconstruction
# ---------------------------------------------------------------------------


def weighted_rel_error(grid: ManifoldGrid, rec: np.ndarray, true: np.ndarray) -> float:
    w = grid.volume_weights
    den = math.sqrt(float(np.sum(w * np.abs(true) ** 2)))
    num = math.sqrt(float(np.sum(w * np.abs(rec - true) ** 2)))
    return num / den if den > 0 else num


def synthesize(grid: ManifoldGrid, config: RunConfig, samples: TransformSamples) -> np.ndarray:
    """Nodal ``q`` from transform samples according to the run mode."""
    fam = config.family
    if config.mode == GLOBAL:
        slices = [per_lambda_invert(samples.values[k], fam, lam, grid, window=config.fbp_window)
                  for k, lam in enumerate(samples.lambdas)]
        cq = fourier_synthesize(grid.x1, 1.0, mus=2.0 * samples.lambdas, slices=slices)
    elif config.mode == LOCAL:
        rec = lambda_derivative_recover(samples, config.taylor_order, grid, config.fbp_window,
                                        mask=samples.mask)
        cq = fourier_synthesize(grid.x1, 1.0, fields=rec.fields, mu_max=config.taylor_mu_max)
        if config.o_disk is not None:
            cx, cy, R = config.o_disk
            inside = ((grid.X - cx) ** 2 + (grid.Y - cy) ** 2) < R * R
            cq = np.where(inside[None], cq, 0.0)
    else:
        raise InvalidConfig("partial mode stops at the transform samples")
    q = np.real(cq) / grid.c
    return np.asarray(q, dtype=float).reshape(-1)


@dataclass
class ReconstructionResult:
    q: Optional[np.ndarray]
    samples: TransformSamples
    report: dict
    sample_run: SampleRun


def run_reconstruction(config: RunConfig, data, oracle: bool = False, out_dir=None,
                       emit_plots: bool = False) -> ReconstructionResult:
    """Transform samples and (global, local) the potential from DtN data.

    ``data`` is a :class:`ForwardResult` or a directory written by
    :func:`run_forward`.  Only the ``Gamma_- x Gamma_+`` block is read.
    ``oracle=True`` substitutes the exact CGO traces for the BIE solution.
    """
    config.validate()
    t_start = time.perf_counter()
    fwd = data if isinstance(data, ForwardResult) else load_forward(config, data)
    grid = fwd.grid
    cols, rows = data_sets(grid, config)
    Lq = restrict_dtn(fwd.dtn_q, rows, cols)
    L0 = restrict_dtn(fwd.dtn_0, rows, cols)
    timing = {}
    with thread_limit():
        t0 = time.perf_counter()
        q_or = None
        if oracle:
            if fwd.q is None:
                raise InvalidConfig("the oracle route needs the true potential")
            q_or = fwd.q
        run = transform_samples(grid, config, Lq, L0, q_or)
        timing["samples"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        q = None if config.mode == PARTIAL else synthesize(grid, config, run.samples)
        timing["synthesis"] = time.perf_counter() - t0
    report = {
        "schema": REPORT_SCHEMA,
        "mode": config.mode,
        "route": run.route,
        "taus": list(config.taus),
        "lambdas": run.samples.lambdas.tolist(),
        "n_chords": int(run.setup.ids.size),
        "bie_condition": run.conds,
        "support_max_outside": run.certificates["support_max_outside"],
        "max_extrapolation_residual": float(run.samples.residual.max()) if run.samples.residual is not None else 0.0,
        "timing_s": timing,
    }
    if q is not None and fwd.q is not None:
        report["rel_l2_error"] = weighted_rel_error(grid, q, fwd.q)
        report["true_max"] = float(np.abs(fwd.q).max())
        report["rec_max"] = float(np.abs(q).max())
    report["timing_s"]["total"] = time.perf_counter() - t_start
    out_dir = out_dir or config.output_dir
    if out_dir is not None:
        p = Path(out_dir)
        p.mkdir(parents=True, exist_ok=True)
        cio.write_samples_csv(p / "samples.csv", run.samples)
        if q is not None:
            report["q_rec_sha256"] = cio.save_field(p / "q_rec.cald1", grid, q)
        cio.write_json(p / "report.json", report)
        if emit_plots and q is not None and fwd.q is not None:
            write_plots(p, grid, fwd.q, q)
    return ReconstructionResult(q, run.samples, report, run)


def write_plots(out: Path, grid: ManifoldGrid, q_true: np.ndarray, q_rec: np.ndarray) -> None:
    """SVG heatmaps of the middle ``x1`` layer."""
    k = grid.shape[0] // 2
    t = q_true.reshape(grid.shape)[k]
    r = q_rec.reshape(grid.shape)[k]
    panels = [(grid.rho, grid.theta, t), (grid.rho, grid.theta, r), (grid.rho, grid.theta, r - t)]
    cio.write_svg_heatmaps(out / "q_mid_layer.svg", panels, ["true q", "reconstructed q", "error"])


__all__ = [
    "LOCAL",
    "RUN_MODES",
    "thread_count",
    "thread_limit",
    "PhantomSpec",
    "raised_cosine",
    "phantom_function",
    "phantom",
    "transversal_fourier",
    "RunConfig",
    "reference_config",
    "data_sets",
    "ForwardResult",
    "compute_dtn_pair",
    "run_forward",
    "load_forward",
    "restrict_dtn",
    "ChordSetup",
    "chord_setup",
    "transform_samples",
    "weighted_rel_error",
    "synthesize",
    "ReconstructionResult",
    "run_reconstruction",
    "write_plots",
]
