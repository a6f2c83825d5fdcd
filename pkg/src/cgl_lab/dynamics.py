"""CGL evolution on the torus.

The model is the Galerkin truncation of

    du/dt + L(u + zeta) + B(u + zeta) = f,    L = -(nu + i) Laplacian + gamma,
                                              B(u) = i c |u|^{2p} u,

on the mode box of a :class:`~cgl_lab.spectral.TorusGrid`.  ``L`` is diagonal
and handled exactly; the nonlinearity is evaluated on a zero-padded grid so
the projected product is alias free.  Time stepping is the second-order
exponential Runge-Kutta scheme (ETD2RK of Cox & Matthews) with adaptive
sub-stepping driven by the forcing size and the local nonlinear frequency.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import BlowUp, DegreeOutOfRange, GridMismatch, NonFinite, ValidationError
from .spectral import (
    LocalizationMask,
    SpectralField,
    TorusGrid,
    coeff_sobolev_norm,
    dealiaser,
    gradient_norm_sq,
)


@dataclass(frozen=True)
class CglParams:
    nu: float = 0.1
    gamma: float = 0.1
    c: float = 1.0
    p: int = 1
    d: int = 1
    s: int = 1

    def __post_init__(self):
        problems = []
        if not self.nu > 0:
            problems.append("nu must be > 0")
        if not self.gamma >= 0:
            problems.append("gamma must be >= 0")
        if not self.c > 0:
            problems.append("c must be > 0")
        if int(self.p) != self.p or self.p < 1:
            problems.append("p must be an integer >= 1")
        if self.d not in (1, 2, 3):
            problems.append("d must be 1, 2 or 3")
        if int(self.s) != self.s or not self.s > self.d / 2:
            problems.append("s must be an integer > d/2")
        if problems:
            raise ValidationError("; ".join(problems))

    @property
    def q(self) -> int:
        return 2 * self.p + 1


def linear_symbol(grid: TorusGrid, params: CglParams, adjoint: bool = False) -> np.ndarray:
    """Fourier symbol of ``L`` (or of ``L*`` with ``adjoint=True``)."""
    disp = -1j if adjoint else 1j
    return (params.nu + disp) * grid.k2 + params.gamma


def apply_L(u: SpectralField, params: CglParams) -> SpectralField:
    return SpectralField(u.grid, linear_symbol(u.grid, params) * u.coeffs)


# ---------------------------------------------------------------------------
# nonlinearity and its derivatives


def nonlinear_coeffs(c: np.ndarray, grid: TorusGrid, params: CglParams) -> tuple[np.ndarray, float]:
    """Projected ``B(u)`` for coefficient arrays, plus ``max |u|`` on the padded grid."""
    dz = dealiaser(grid, params.q)
    u = dz.physical(c)
    mod2 = u.real**2 + u.imag**2
    sup = float(np.sqrt(mod2.max())) if mod2.size else 0.0
    return dz.project(1j * params.c * mod2**params.p * u), sup


def nonlinearity_B(u: SpectralField, params: CglParams) -> SpectralField:
    return SpectralField(u.grid, nonlinear_coeffs(u.coeffs, u.grid, params)[0])


def _falling(n: int, k: int) -> int:
    return math.perm(n, k) if 0 <= k <= n else 0


def derivative_Bk(u: SpectralField, directions: Sequence[SpectralField], params: CglParams) -> SpectralField:
    """Symmetric k-linear derivative of ``B`` at ``u`` in the given directions.

    ``B(u) = i c u^{p+1} conj(u)^p``; each direction is routed either to one of
    the ``p + 1`` plain factors or to one of the ``p`` conjugated ones.
    """
    k = len(directions)
    q = params.q
    if not 1 <= k <= q:
        raise DegreeOutOfRange(f"derivative order must lie in [1, {q}], got {k}")
    grid = u.grid
    for v in directions:
        if v.grid != grid:
            raise GridMismatch("directions live on a different grid")
    dz = dealiaser(grid, q)
    U = dz.physical(u.coeffs)
    V = [dz.physical(v.coeffs) for v in directions]
    Vc = [np.conj(x) for x in V]
    Uc = np.conj(U)
    p = params.p
    total = np.zeros_like(U)
    for plain in itertools.product((True, False), repeat=k):
        a = sum(plain)
        b = k - a
        weight = _falling(p + 1, a) * _falling(p, b)
        if weight == 0:
            continue
        term = np.full_like(U, weight)
        for j in range(k):
            term = term * (V[j] if plain[j] else Vc[j])
        if p + 1 - a:
            term = term * U ** (p + 1 - a)
        if p - b:
            term = term * Uc ** (p - b)
        total += term
    return SpectralField(grid, dz.project(1j * params.c * total))


def lyapunov(u: SpectralField, params: CglParams) -> float:
    """``int (|grad u|^2 / 2 + c |u|^{2p+2} / (2p+2)) dx``."""
    return float(lyapunov_coeffs(u.coeffs, u.grid, params))


def lyapunov_coeffs(c: np.ndarray, grid: TorusGrid, params: CglParams) -> np.ndarray:
    dz = dealiaser(grid, 2 * params.p + 2)
    u = dz.physical(c)
    pot = dz.mean(np.abs(u) ** (2 * params.p + 2)).real
    return 0.5 * gradient_norm_sq(c, grid) + params.c / (2 * params.p + 2) * pot


# ---------------------------------------------------------------------------
# time stepping


@dataclass(frozen=True)
class SolverOptions:
    """Step-size controls.

    Each step satisfies ``dt <= dt_max``, ``dt * ||f||_{H^{s-1}} <= forcing_cfl``,
    ``dt * max|u + zeta|^{2p} <= nonlinear_cfl`` and resolves every segment with
    at least ``min_substeps`` steps.
    """

    dt_max: float = 1e-2
    forcing_cfl: float = 0.1
    nonlinear_cfl: float = 0.1
    min_substeps: int = 1
    blowup_threshold: float = 1e6


def _phi_functions(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``exp(z)``, ``phi1(z) = (e^z - 1)/z`` and ``phi2(z) = (e^z - 1 - z)/z^2``."""
    ez = np.exp(z)
    small = np.abs(z) < 0.1
    zs = np.where(small, 1.0, z)
    em1 = np.expm1(zs)
    phi1 = np.where(small, 0.0, em1 / zs)
    phi2 = np.where(small, 0.0, (em1 - zs) / zs**2)
    if small.any():
        zz = z[small]
        s1 = np.zeros_like(zz)
        s2 = np.zeros_like(zz)
        term = np.ones_like(zz)
        for j in range(0, 12):
            # term = z^j / j!
            s1 += term / (j + 1)
            s2 += term / ((j + 1) * (j + 2))
            term = term * zz / (j + 1)
        phi1[small] = s1
        phi2[small] = s2
    return ez, phi1, phi2


class Integrator:
    """ETD2RK integrator for the (shifted) truncated CGL system.

    Works on coefficient arrays of shape ``(..., n, ..., n)``; leading axes are
    independent members advanced with a common step size.
    """

    def __init__(self, grid: TorusGrid, params: CglParams, options: SolverOptions | None = None,
                 nonlinear: bool = True):
        if params.d != grid.d:
            raise GridMismatch(f"params.d={params.d} but grid.d={grid.d}")
        self.grid = grid
        self.params = params
        self.options = options or SolverOptions()
        self.nonlinear = nonlinear
        self.symbol = linear_symbol(grid, params)
        self._hs1 = (1.0 + grid.k2) ** (params.s - 1)
        self._cache: dict[float, tuple] = {}

    def coefficients(self, dt: float):
        hit = self._cache.get(dt)
        if hit is None:
            e, p1, p2 = _phi_functions(-self.symbol * dt)
            hit = (e, dt * p1, dt * p2)
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[dt] = hit
        return hit

    def rhs(self, c, forcing, shift, lin_shift):
        """Nonlinear part ``f - L zeta - B(u + zeta)`` and ``max|u + zeta|``."""
        out = np.zeros_like(c) if forcing is None else np.broadcast_to(forcing, c.shape).astype(complex)
        if lin_shift is not None:
            out = out - lin_shift
        if not self.nonlinear:
            return out, 0.0
        arg = c if shift is None else c + shift
        b, sup = nonlinear_coeffs(arg, self.grid, self.params)
        return out - b, sup

    def forcing_norm(self, forcing) -> float:
        if forcing is None:
            return 0.0
        f = np.asarray(forcing)
        vals = np.sqrt(np.sum(self._hs1 * np.abs(f) ** 2, axis=self.grid.axes) * self.grid.volume)
        return float(np.max(vals))

    def step(self, c, dt, forcing=None, shift=None, lin_shift=None, n0=None):
        e, h1, h2 = self.coefficients(dt)
        if n0 is None:
            n0, _ = self.rhs(c, forcing, shift, lin_shift)
        a = e * c + h1 * n0
        n1, _ = self.rhs(a, forcing, shift, lin_shift)
        return a + h2 * (n1 - n0)

    def hs_norm(self, c) -> np.ndarray:
        return coeff_sobolev_norm(c, self.grid, self.params.s)

    def _check(self, c, t):
        if not np.all(np.isfinite(c)):
            raise NonFinite(f"non-finite state at t={t:.6g}", )
        norm = float(np.max(self.hs_norm(c)))
        if norm > self.options.blowup_threshold:
            raise BlowUp(f"H^s norm {norm:.3g} exceeded threshold at t={t:.6g}", time=t)

    def advance(self, c, duration, forcing=None, shift=None, t0=0.0, callback=None):
        """Integrate over one segment with constant forcing and shift.

        ``callback(t, c)`` is invoked after every step.  Returns the final state
        and the number of steps taken.
        """
        opts = self.options
        self._check(c, t0)
        if duration <= 0:
            return c, 0
        lin_shift = None if shift is None else self.symbol * shift
        fnorm = self.forcing_norm(forcing)
        cap_f = opts.forcing_cfl / fnorm if fnorm > 0 else np.inf
        cap_seg = duration / max(1, opts.min_substeps)
        elapsed = 0.0
        steps = 0
        while duration - elapsed > 1e-14 * duration:
            remaining = duration - elapsed
            n0, sup = self.rhs(c, forcing, shift, lin_shift)
            cap_n = opts.nonlinear_cfl / sup ** (2 * self.params.p) if sup > 0 and self.nonlinear else np.inf
            cap = min(opts.dt_max, cap_f, cap_n, cap_seg)
            m = max(1, math.ceil(remaining / cap - 1e-9))
            dt = remaining / m
            c = self.step(c, dt, forcing, shift, lin_shift, n0=n0)
            elapsed += dt
            steps += 1
            self._check(c, t0 + elapsed)
            if callback is not None:
                callback(t0 + elapsed, c)
        return c, steps

    def run_uniform(self, c, dt, nsteps, forcing_at=None):
        """Fixed-step run returning all ``nsteps + 1`` states.

        ``forcing_at(j)`` gives the forcing coefficients held on step ``j``.
        """
        states = np.empty((nsteps + 1,) + np.shape(c), dtype=complex)
        states[0] = c
        for j in range(nsteps):
            f = None if forcing_at is None else forcing_at(j)
            c = self.step(c, dt, f)
            self._check(c, (j + 1) * dt)
            states[j + 1] = c
        return states


# ---------------------------------------------------------------------------
# schedules and trajectories


@dataclass(frozen=True)
class ControlSegment:
    """One timed piece of a control schedule.

    ``control`` is the H-valued amplitude ``eta`` (already scaled; the force is
    ``h + chi * control``) and ``shift`` the constant ``zeta`` of the shifted
    equation.  ``kind`` is a label: ``"impulse"``, ``"free_run"``,
    ``"shifted_run"`` or ``"noise"``.
    """

    duration: float
    control: SpectralField | None = None
    shift: SpectralField | None = None
    kind: str = "free_run"

    def __post_init__(self):
        if not self.duration > 0:
            raise ValidationError("segment duration must be positive")


@dataclass
class ControlSchedule:
    segments: list[ControlSegment] = field(default_factory=list)

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def __iter__(self):
        return iter(self.segments)

    def __len__(self):
        return len(self.segments)

    def extend(self, other: "ControlSchedule | Iterable[ControlSegment]"):
        self.segments.extend(other.segments if isinstance(other, ControlSchedule) else other)


@dataclass
class Trajectory:
    times: list[float]
    states: list[SpectralField]
    blowup_time: float | None = None

    @property
    def final(self) -> SpectralField:
        return self.states[-1]

    def norms(self, params: CglParams) -> list[tuple[float, float, float, float]]:
        """Rows ``(t, ||u||_{L^2}, ||u||_{H^s}, lyapunov)``."""
        rows = []
        for t, u in zip(self.times, self.states):
            rows.append((t, float(coeff_sobolev_norm(u.coeffs, u.grid, 0)),
                         float(coeff_sobolev_norm(u.coeffs, u.grid, params.s)), lyapunov(u, params)))
        return rows


def forcing_coeffs(h: SpectralField | None, control: SpectralField | None,
                   mask: LocalizationMask | None):
    f = None
    if h is not None:
        f = h.coeffs
    if control is not None:
        cc = control.coeffs if mask is None else mask.multiply(control.coeffs)
        f = cc if f is None else f + cc
    return f


def step(u: SpectralField, dt: float, forcing: SpectralField | None = None,
         shift: SpectralField | None = None, params: CglParams = CglParams(),
         options: SolverOptions | None = None, nonlinear: bool = True) -> SpectralField:
    """One ETD2RK step of the shifted equation; ``zeta`` is frozen over the step."""
    integ = Integrator(u.grid, params, options, nonlinear=nonlinear)
    integ._check(u.coeffs, 0.0)
    f = None if forcing is None else forcing.coeffs
    z = None if shift is None else shift.coeffs
    lz = None if z is None else integ.symbol * z
    c = integ.step(u.coeffs, float(dt), f, z, lz)
    integ._check(c, float(dt))
    return SpectralField(u.grid, c)


def solve(u0: SpectralField, schedule: ControlSchedule | Sequence[ControlSegment], params: CglParams,
          mask: LocalizationMask | None = None, h: SpectralField | None = None,
          options: SolverOptions | None = None, record: str = "segments", t0: float = 0.0,
          nonlinear: bool = True) -> Trajectory:
    """Integrate the shifted CGL system along a schedule.

    ``record`` is ``"segments"`` (state after every segment), ``"steps"``
    (after every step) or ``"final"``.  On blow-up the raised :class:`BlowUp`
    carries the partial trajectory with ``blowup_time`` set.
    """
    if isinstance(schedule, ControlSchedule):
        segments = schedule.segments
    else:
        segments = list(schedule)
    integ = Integrator(u0.grid, params, options, nonlinear=nonlinear)
    grid = u0.grid
    traj = Trajectory([t0], [u0])

    def rec_step(t, c):
        traj.times.append(t)
        traj.states.append(SpectralField(grid, c))

    c = u0.coeffs
    t = t0
    try:
        for seg in segments:
            f = forcing_coeffs(h, seg.control, mask)
            z = None if seg.shift is None else seg.shift.coeffs
            c, _ = integ.advance(c, seg.duration, f, z, t0=t,
                                 callback=rec_step if record == "steps" else None)
            t += seg.duration
            if record == "segments":
                traj.times.append(t)
                traj.states.append(SpectralField(grid, c))
    except BlowUp as exc:
        traj.blowup_time = exc.time
        exc.trajectory = traj
        raise
    if record == "final":
        traj.times.append(t)
        traj.states.append(SpectralField(grid, c))
    return traj


def noise_schedule(path, grid: TorusGrid) -> ControlSchedule:
    """Piecewise-constant schedule reproducing a sampled noise path."""
    dt = 1.0 / path.n_cells
    return ControlSchedule([ControlSegment(dt, path.field_at_cell(i, grid), kind="noise")
                            for i in range(path.n_cells)])


def time_one_map(u: SpectralField, path, params: CglParams, mask: LocalizationMask | None = None,
                 h: SpectralField | None = None, options: SolverOptions | None = None) -> SpectralField:
    """``S(u, eta) = R_1(u, 0, h + chi * eta)`` for a sampled noise path on [0, 1]."""
    return solve(u, noise_schedule(path, u.grid), params, mask=mask, h=h, options=options,
                 record="final").final
