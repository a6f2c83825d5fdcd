"""Linearization of CGL along a reference trajectory.

Forward problem (zero initial state)::

    dv/dt + L v + Q(u~(t); v) = chi g,        v(0) = 0,      A_T g := v(T)

Backward adjoint problem::

    dw/ds - L* w - Q*(u~(s); w) = 0,          w(T) = w0

so that ``(A_T g, w0) = int_0^T (chi g(s), w(s)) ds`` for the real L^2
product ``(u, v) = Re int u conj(v)``.  Both are integrated with ETD2RK on the
uniform mesh that carries the reference trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.integrate import simpson

from .dynamics import CglParams, Integrator, SolverOptions, _phi_functions, linear_symbol
from .errors import GridMismatch, NonFinite, ValidationError
from .saturation import FrequencySet
from .spectral import LocalizationMask, SpectralField, TorusGrid, coeff_inner, constant_mask, dealiaser


# ---------------------------------------------------------------------------
# Q and its adjoint


def q_coeffs(u: np.ndarray, v: np.ndarray, grid: TorusGrid, params: CglParams) -> np.ndarray:
    """Projected ``Q(u; v) = ic((p+1)|u|^{2p} v + p |u|^{2p-2} u^2 conj(v))``."""
    dz = dealiaser(grid, params.q)
    U = dz.physical(u)
    V = dz.physical(v)
    p = params.p
    m = U.real**2 + U.imag**2
    out = (p + 1) * m**p * V + p * m ** (p - 1) * U**2 * np.conj(V)
    return dz.project(1j * params.c * out)


def q_adjoint_coeffs(u: np.ndarray, w: np.ndarray, grid: TorusGrid, params: CglParams) -> np.ndarray:
    """Projected ``Q*(u; w) = ic(-(p+1)|u|^{2p} w + p |u|^{2p-2} u^2 conj(w))``."""
    dz = dealiaser(grid, params.q)
    U = dz.physical(u)
    W = dz.physical(w)
    p = params.p
    m = U.real**2 + U.imag**2
    out = -(p + 1) * m**p * W + p * m ** (p - 1) * U**2 * np.conj(W)
    return dz.project(1j * params.c * out)


def apply_Q(u: SpectralField, v: SpectralField, params: CglParams) -> SpectralField:
    if u.grid != v.grid:
        raise GridMismatch("u and v live on different grids")
    return SpectralField(u.grid, q_coeffs(u.coeffs, v.coeffs, u.grid, params))


def apply_Q_adjoint(u: SpectralField, w: SpectralField, params: CglParams) -> SpectralField:
    if u.grid != w.grid:
        raise GridMismatch("u and w live on different grids")
    return SpectralField(u.grid, q_adjoint_coeffs(u.coeffs, w.coeffs, u.grid, params))


# ---------------------------------------------------------------------------
# reference trajectory


@dataclass
class LinearizationContext:
    """Reference ``u~`` sampled on a uniform mesh of ``[0, T]``.

    ``states[j]`` is ``u~(j * dt)``; build one with :meth:`from_initial`.
    """

    grid: TorusGrid
    params: CglParams
    mask: LocalizationMask
    T: float
    states: np.ndarray

    def __post_init__(self):
        if self.states.shape[1:] != self.grid.shape:
            raise GridMismatch("reference states do not match the grid")
        if not np.all(np.isfinite(self.states)):
            raise NonFinite("reference trajectory is not finite")

    @classmethod
    def from_initial(cls, u0: SpectralField, T: float, nsteps: int, params: CglParams,
                     mask: LocalizationMask | None = None, h: SpectralField | None = None,
                     options: SolverOptions | None = None) -> "LinearizationContext":
        """Run the nonlinear equation from ``u0`` with fixed step ``T / nsteps``."""
        if not T > 0 or nsteps < 1:
            raise ValidationError("need T > 0 and nsteps >= 1")
        integ = Integrator(u0.grid, params, options)
        f = None if h is None else h.coeffs
        states = integ.run_uniform(u0.coeffs, T / nsteps, nsteps, (lambda j: f) if f is not None else None)
        return cls(u0.grid, params, mask or constant_mask(u0.grid), T, states)

    @property
    def nsteps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def dt(self) -> float:
        return self.T / self.nsteps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nsteps + 1)

    @cached_property
    def _forward_coeffs(self):
        return self._etd(adjoint=False)

    @cached_property
    def _backward_coeffs(self):
        return self._etd(adjoint=True)

    def _etd(self, adjoint):
        lam = linear_symbol(self.grid, self.params, adjoint=adjoint)
        e, p1, p2 = _phi_functions(-lam * self.dt)
        return e, self.dt * p1, self.dt * p2


# ---------------------------------------------------------------------------
# controls


@dataclass
class SlotControl:
    """Piecewise-constant control ``g`` on ``n_slots`` equal slots of ``[0, T]``.

    ``slots`` has shape ``(n_slots, *batch, *grid.shape)``; the batch axes are
    solved simultaneously.
    """

    slots: np.ndarray

    @property
    def n_slots(self) -> int:
        return self.slots.shape[0]

    @classmethod
    def constant(cls, g: SpectralField) -> "SlotControl":
        return cls(g.coeffs[None])

    def slot_of_step(self, j: int, nsteps: int) -> int:
        return j * self.n_slots // nsteps


def _check_slots(ctx: LinearizationContext, g: SlotControl):
    if ctx.nsteps % g.n_slots:
        raise ValidationError(f"{ctx.nsteps} steps cannot be split into {g.n_slots} slots")


def solve_linearized(ctx: LinearizationContext, g: SlotControl | SpectralField,
                     return_path: bool = False):
    """``v(T) = A_T g`` (coefficient array; batched when ``g`` is)."""
    if isinstance(g, SpectralField):
        g = SlotControl.constant(g)
    _check_slots(ctx, g)
    grid, params = ctx.grid, ctx.params
    e, h1, h2 = ctx._forward_coeffs
    forcing = np.array([ctx.mask.multiply(s) for s in g.slots])
    v = np.zeros(g.slots.shape[1:], dtype=complex)
    path = [v] if return_path else None
    for j in range(ctx.nsteps):
        f = forcing[g.slot_of_step(j, ctx.nsteps)]
        n0 = f - q_coeffs(ctx.states[j], v, grid, params)
        a = e * v + h1 * n0
        n1 = f - q_coeffs(ctx.states[j + 1], a, grid, params)
        v = a + h2 * (n1 - n0)
        if return_path:
            path.append(v)
    if not np.all(np.isfinite(v)):
        raise NonFinite("linearized solution is not finite")
    return np.array(path) if return_path else v


def solve_adjoint(ctx: LinearizationContext, w0: SpectralField | np.ndarray) -> np.ndarray:
    """Backward solution ``w(s_j)`` on the reference mesh, shape ``(nsteps + 1, ...)``.

    With ``tau = T - s`` the problem reads ``dw/dtau = -L* w - Q*(u~(T - tau); w)``.
    """
    grid, params = ctx.grid, ctx.params
    w = np.asarray(w0.coeffs if isinstance(w0, SpectralField) else w0, dtype=complex)
    e, h1, h2 = ctx._backward_coeffs
    N = ctx.nsteps
    out = np.empty((N + 1,) + w.shape, dtype=complex)
    out[N] = w
    for j in range(N, 0, -1):
        n0 = -q_adjoint_coeffs(ctx.states[j], w, grid, params)
        a = e * w + h1 * n0
        n1 = -q_adjoint_coeffs(ctx.states[j - 1], a, grid, params)
        w = a + h2 * (n1 - n0)
        out[j - 1] = w
    if not np.all(np.isfinite(out)):
        raise NonFinite("adjoint solution is not finite")
    return out


def duality_pairing(ctx: LinearizationContext, g: SlotControl, w_path: np.ndarray):
    """``int_0^T (chi g(s), w(s)) ds`` by composite Simpson on each slot.

    Batch axes of ``g`` and ``w_path`` pair elementwise.
    """
    _check_slots(ctx, g)
    per = ctx.nsteps // g.n_slots
    if per % 2:
        raise ValidationError("Simpson quadrature needs an even number of steps per slot")
    total = 0.0
    for i in range(g.n_slots):
        cg = ctx.mask.multiply(g.slots[i])
        seg = w_path[i * per: (i + 1) * per + 1]
        vals = coeff_inner(cg[None], seg, ctx.grid)
        total = total + simpson(vals, dx=ctx.dt, axis=0)
    return float(total) if np.ndim(total) == 0 else total


# ---------------------------------------------------------------------------
# Gramian


def real_basis(grid: TorusGrid, freqs: FrequencySet | Sequence[Sequence[int]],
               normalized: bool = False) -> tuple[np.ndarray, list[str]]:
    """Real basis ``cos, i cos, sin, i sin`` of ``H(freqs)`` (no sin for ``l = 0``)."""
    modes = freqs.sorted() if isinstance(freqs, FrequencySet) else [tuple(k) for k in freqs]
    cols, names = [], []
    for l in modes:
        for kind in ("cos", "sin"):
            if kind == "sin" and not any(l):
                continue
            f = SpectralField.cos_mode(grid, l) if kind == "cos" else SpectralField.sin_mode(grid, l)
            c = f.coeffs
            if normalized:
                c = c / np.sqrt(np.real(coeff_inner(c, c, grid)))
            cols += [c, 1j * c]
            names += [f"{kind}{l}", f"i{kind}{l}"]
    return np.array(cols), names


@dataclass
class GramianReport:
    singular_values: np.ndarray
    matrix: np.ndarray
    row_labels: list[str]
    col_labels: list[str]

    @property
    def sigma_min(self) -> float:
        return float(self.singular_values[-1]) if self.singular_values.size else 0.0

    def mode_response(self) -> dict[str, float]:
        """Norm of every probe row across all controls."""
        return {lab: float(np.linalg.norm(row)) for lab, row in zip(self.row_labels, self.matrix)}

    def to_dict(self) -> dict:
        return {"singular_values": [float(x) for x in self.singular_values],
                "sigma_min": self.sigma_min,
                "shape": list(self.matrix.shape),
                "mode_response": self.mode_response()}


def gramian(ctx: LinearizationContext, H: FrequencySet, n_time_slots: int,
            probe: FrequencySet | Sequence[Sequence[int]]) -> GramianReport:
    """Probe matrix of ``A_T`` on slot-indicator x real-basis controls."""
    grid = ctx.grid
    probe_modes = probe.sorted() if isinstance(probe, FrequencySet) else [tuple(k) for k in probe]
    for k in probe_modes:
        grid.index(k)
    ctrl, ctrl_names = real_basis(grid, H)
    nb = len(ctrl)
    ncol = n_time_slots * nb
    slots = np.zeros((n_time_slots, ncol) + grid.shape, dtype=complex)
    labels = []
    for i in range(n_time_slots):
        slots[i, i * nb:(i + 1) * nb] = ctrl
        labels += [f"slot{i}:{nm}" for nm in ctrl_names]
    v = solve_linearized(ctx, SlotControl(slots))
    rows, row_names = real_basis(grid, probe_modes, normalized=True)
    G = np.real(coeff_inner(rows[:, None], v[None, :], grid))
    sv = np.linalg.svd(G, compute_uv=False)
    return GramianReport(sv, G, row_names, labels)


def obstruction_check(ctx: LinearizationContext, l: Sequence[int], H: FrequencySet,
                      n_time_slots: int = 4, n_samples: int = 8,
                      rng: np.random.Generator | None = None) -> float:
    """Largest relative response of ``A_T g`` at frequency ``l`` over random ``g``.

    The response is the norm of the projection on ``{cos, i cos, sin, i sin}``
    of ``l`` divided by ``||A_T g||``.  Returns 0 when every response vanishes.
    """
    rng = rng or np.random.default_rng(0)
    grid = ctx.grid
    ctrl, _ = real_basis(grid, H)
    w = rng.standard_normal((n_time_slots, n_samples, len(ctrl)))
    slots = np.tensordot(w, ctrl, axes=1)
    v = solve_linearized(ctx, SlotControl(slots))
    rows, _ = real_basis(grid, [tuple(l)], normalized=True)
    proj = np.real(coeff_inner(rows[:, None], v[None, :], grid))
    resp = np.sqrt(np.sum(proj**2, axis=0))
    norms = np.sqrt(np.real(coeff_inner(v, v, grid)))
    ok = norms > 0
    if not ok.any():
        return 0.0
    return float(np.max(resp[ok] / norms[ok]))
