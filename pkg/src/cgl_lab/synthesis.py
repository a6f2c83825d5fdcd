"""Constructive control synthesis by impulses and large shifts.

Two mechanisms move the state of the controlled equation:

* an impulse ``delta^{-1} eta`` held for a short time ``delta`` adds
  ``chi * eta``;
* a large constant shift ``delta^{-1/q} zeta`` held for ``delta`` harvests
  ``-B(zeta)``.

Shifts are realised without a shifted equation: a constant shift ``zeta``
satisfies ``R_t(u, zeta, f) = R_t(u + zeta, 0, f) - zeta``, so a shifted run
becomes "add the shift by a (recursive) impulse, free run, remove the shift".
Nesting this maneuver ``N`` times reaches ``chi^{q^N} eta`` for ``eta`` in the
level-``N`` span of the nonlinear saturation chain.

Every plan is an ordinary list of :class:`~cgl_lab.dynamics.ControlSegment`
(impulses and free runs), and replaying it through
:func:`~cgl_lab.dynamics.solve` reproduces the planner's states bit for bit.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .dynamics import (
    CglParams,
    ControlSchedule,
    ControlSegment,
    Integrator,
    SolverOptions,
    Trajectory,
    forcing_coeffs,
    nonlinear_coeffs,
    solve,
)
from .errors import (
    BlowUp,
    BudgetExceeded,
    FrequencyOutOfBox,
    HoldFailure,
    IllConditioned,
    NotInSpan,
    SaturationInsufficient,
    ToleranceUnreachable,
    ValidationError,
)
from .saturation import FrequencySet, SaturationChain, chain_nonlinear, lattice_closure
from .spectral import (
    LocalizationMask,
    SpectralField,
    TorusGrid,
    coeff_sobolev_norm,
    constant_mask,
    frequency_mask,
)

log = logging.getLogger(__name__)

#: Stricter step control than plain simulation: maneuvers pass through states
#: of size ``delta^{-1/q}`` and must be resolved within each short segment.
SYNTHESIS_OPTIONS = SolverOptions(dt_max=1e-2, forcing_cfl=0.1, nonlinear_cfl=0.02, min_substeps=8)

DELTAS = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)


# ---------------------------------------------------------------------------
# plans


def _sparse(c: np.ndarray | None, grid: TorusGrid) -> list | None:
    if c is None:
        return None
    out = []
    for idx in zip(*np.nonzero(c)):
        k = [int(grid.wavenumbers[(a,) + idx]) for a in range(grid.d)]
        out.append(k + [float(c[idx].real), float(c[idx].imag)])
    return out


def _dense(entries: list | None, grid: TorusGrid) -> SpectralField | None:
    if entries is None:
        return None
    c = np.zeros(grid.shape, dtype=complex)
    for e in entries:
        k = tuple(int(v) for v in e[: grid.d])
        c[grid.index(k)] += complex(e[grid.d], e[grid.d + 1])
    return SpectralField(grid, c)


def segment_to_dict(seg: ControlSegment, grid: TorusGrid) -> dict:
    return {
        "kind": seg.kind,
        "duration": float(seg.duration),
        "control": _sparse(None if seg.control is None else seg.control.coeffs, grid),
        "shift": _sparse(None if seg.shift is None else seg.shift.coeffs, grid),
    }


def segment_from_dict(d: dict, grid: TorusGrid) -> ControlSegment:
    return ControlSegment(float(d["duration"]), _dense(d.get("control"), grid), _dense(d.get("shift"), grid),
                          d.get("kind", "free_run"))


@dataclass
class SynthesisPlan:
    """Segments plus what the planner expects them to do.

    ``final`` is the state obtained by the planner's own replay and ``errors``
    the error figures measured on it.
    """

    u0: SpectralField
    segments: list[ControlSegment]
    predicted_target: SpectralField
    budget: float
    trace: list[dict] = field(default_factory=list)
    final: SpectralField | None = None
    errors: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def schedule(self) -> ControlSchedule:
        return ControlSchedule(list(self.segments))

    def to_dict(self) -> dict:
        g = self.u0.grid
        return {
            "duration": self.duration,
            "budget": self.budget,
            "n_segments": len(self.segments),
            "segments": [segment_to_dict(s, g) for s in self.segments],
            "u0": _sparse(self.u0.coeffs, g),
            "predicted_target": _sparse(self.predicted_target.coeffs, g),
            "errors": self.errors,
            "info": self.info,
            "trace": self.trace,
        }

    @classmethod
    def from_dict(cls, d: dict, grid: TorusGrid) -> "SynthesisPlan":
        return cls(_dense(d["u0"], grid), [segment_from_dict(s, grid) for s in d["segments"]],
                   _dense(d["predicted_target"], grid), float(d["budget"]), list(d.get("trace", [])),
                   errors=dict(d.get("errors", {})), info=dict(d.get("info", {})))


def replay(plan: SynthesisPlan, params: CglParams, mask: LocalizationMask | None = None,
           h: SpectralField | None = None, options: SolverOptions | None = None,
           record: str = "segments") -> Trajectory:
    """Run a plan through the solver with no planner state."""
    return solve(plan.u0, plan.schedule, params, mask=mask, h=h,
                 options=options or SYNTHESIS_OPTIONS, record=record)


def _empty_plan(u0: SpectralField, budget: float) -> SynthesisPlan:
    return SynthesisPlan(u0, [], u0, budget, final=u0, errors={"final": 0.0})


# ---------------------------------------------------------------------------
# impulse primitive


def impulse_limit_probe(u0: SpectralField, eta: SpectralField, zeta: SpectralField,
                        deltas: Sequence[float], params: CglParams, mask: LocalizationMask | None = None,
                        h: SpectralField | None = None, options: SolverOptions | None = None) -> list[dict]:
    """Distance of ``R_delta(u0, delta^{-1/q} zeta, h + delta^{-1} chi eta)`` to its limit.

    The limit is ``u0 + chi eta - B(zeta)``; errors are ``H^s`` norms.  A run
    that blows up is reported with ``error = inf`` instead of aborting the table.
    """
    grid = u0.grid
    mask = mask or constant_mask(grid)
    q = params.q
    limit = u0.coeffs + mask.multiply(eta.coeffs) - nonlinear_coeffs(zeta.coeffs, grid, params)[0]
    scale = float(coeff_sobolev_norm(limit - u0.coeffs, grid, params.s))
    rows = []
    for delta in deltas:
        seg = ControlSegment(float(delta), eta / delta, zeta * delta ** (-1.0 / q), kind="shifted_run")
        try:
            out = solve(u0, [seg], params, mask=mask, h=h, options=options or SYNTHESIS_OPTIONS,
                        record="final").final
            err = float(coeff_sobolev_norm(out.coeffs - limit, grid, params.s))
            status = "ok"
        except BlowUp:
            err, status = float("inf"), "blowup"
        rows.append({"delta": float(delta), "error": err, "target_norm": scale,
                     "relative": err / scale if scale > 0 else err, "status": status})
    return rows


def attain_step0(u0: SpectralField, eta: SpectralField, eps: float, params: CglParams,
                 mask: LocalizationMask | None = None, h: SpectralField | None = None,
                 deltas: Sequence[float] = DELTAS, options: SolverOptions | None = None,
                 norm_s: float | None = None) -> SynthesisPlan:
    """Single impulse ``eta / delta`` over ``delta`` reaching ``u0 + chi eta`` within ``eps``."""
    grid = u0.grid
    mask = mask or constant_mask(grid)
    s = params.s if norm_s is None else norm_s
    target = SpectralField(grid, u0.coeffs + mask.multiply(eta.coeffs))
    if not np.any(eta.coeffs):
        return _empty_plan(u0, 0.0)
    trace = []
    for delta in deltas:
        seg = ControlSegment(float(delta), eta / delta, kind="impulse")
        out = solve(u0, [seg], params, mask=mask, h=h, options=options or SYNTHESIS_OPTIONS,
                    record="final").final
        err = float(coeff_sobolev_norm(out.coeffs - target.coeffs, grid, s))
        trace.append({"stage": "step0", "delta": float(delta), "error": err})
        if err < eps:
            return SynthesisPlan(u0, [seg], target, float(delta), trace, out, {"final": err},
                                 {"N": 0, "delta": float(delta)})
    raise ToleranceUnreachable(f"impulse error {err:.3g} >= {eps:.3g} at delta = {deltas[-1]:g}")


# ---------------------------------------------------------------------------
# decomposition into B-images


def real_functions(grid: TorusGrid, freqs: FrequencySet) -> tuple[np.ndarray, list[str]]:
    """Coefficients of the real functions ``cos<l,x>, sin<l,x>`` (no sin for ``l = 0``)."""
    out, names = [], []
    for l in freqs.sorted():
        out.append(SpectralField.cos_mode(grid, l).coeffs)
        names.append(f"cos{l}")
        if any(l):
            out.append(SpectralField.sin_mode(grid, l).coeffs)
            names.append(f"sin{l}")
    return np.array(out), names


def _check_box(grid: TorusGrid, freqs: FrequencySet):
    if freqs.max_abs() > grid.kmax:
        raise FrequencyOutOfBox(f"chain level reaches |k| = {freqs.max_abs()} beyond the grid box")


def decomposition_dictionary(grid: TorusGrid, freqs: FrequencySet, params: CglParams):
    """Real fields ``sum_{j in S} e_j s_j`` over subsets ``|S| <= q`` and signs ``s_1 = +1``."""
    basis, _ = real_functions(grid, freqs)
    q = params.q
    zetas = []
    for size in range(1, min(q, len(basis)) + 1):
        for subset in itertools.combinations(range(len(basis)), size):
            for signs in itertools.product((1.0, -1.0), repeat=size - 1):
                sg = (1.0,) + signs
                zetas.append(sum(sv * basis[j] for sv, j in zip(sg, subset)))
    zetas = np.array(zetas)
    images = nonlinear_coeffs(zetas, grid, params)[0]
    return zetas, images


def _absorb(alpha: complex, q: int) -> complex:
    """Factor ``f`` with ``B(f zeta) = alpha B(zeta)``: ``|f| = |alpha|^{1/q}``, ``arg f = arg alpha``."""
    if alpha.imag == 0.0:
        return float(np.sign(alpha.real) * abs(alpha.real) ** (1.0 / q))
    return abs(alpha) ** (1.0 / q) * np.exp(1j * np.angle(alpha))


def decompose_target(eta: SpectralField, chain: SaturationChain, N: int, params: CglParams,
                     tol: float = 1e-8, ridge: float = 1e-12) -> list[SpectralField]:
    """Fields ``zeta_i`` in the level ``N - 1`` span with ``sum_i B(zeta_i) = eta``.

    Each ``zeta_i`` is a dictionary field times a complex factor absorbed via
    ``B(f zeta) = |f|^q (f / |f|) B(zeta)``.
    """
    if N < 1 or N > chain.depth:
        raise ValidationError(f"level N must lie in [1, {chain.depth}]")
    grid = eta.grid
    target = eta.coeffs
    tnorm = np.linalg.norm(target)
    if tnorm == 0:
        return []
    lvl = chain.level(N)
    _check_box(grid, lvl)
    outside = target * ~frequency_mask(grid, lvl)
    if np.linalg.norm(outside) > tol * tnorm:
        raise NotInSpan(f"target has relative mass {np.linalg.norm(outside) / tnorm:.3g} outside level {N}")
    zetas, images = decomposition_dictionary(grid, chain.level(N - 1), params)
    D = images.reshape(len(images), -1).T
    b = target.ravel()
    _, R, piv = scipy.linalg.qr(D, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > 1e-10 * diag[0]))
    cols = piv[:rank]
    A = D[:, cols]
    lhs = np.vstack([A, np.sqrt(ridge) * np.eye(rank)])
    rhs = np.concatenate([b, np.zeros(rank)])
    alpha, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    res = np.linalg.norm(A @ alpha - b) / tnorm
    if res > tol:
        raise IllConditioned(f"dictionary least-squares residual {res:.3g} exceeds {tol:g}")
    keep = np.abs(alpha) > 1e-13 * np.max(np.abs(alpha))
    q = params.q
    return [SpectralField(grid, _absorb(complex(a), q) * zetas[j]) for a, j in zip(alpha[keep], cols[keep])]


# ---------------------------------------------------------------------------
# recursive maneuvers


def open_loop_segments(eta: SpectralField, N: int, delta: float, chain: SaturationChain,
                       params: CglParams, inner_ratio: float = 1e-2) -> list[ControlSegment]:
    """Segments that add ``chi^{q^N} eta`` (to leading order in ``delta``).

    Level 0 is the impulse ``eta / delta`` held for ``delta``.  Level ``N``
    decomposes ``eta = sum B(zeta_i)`` and, for each term, adds the shift
    ``-A chi^{q^{N-1}} zeta_i`` with ``A = delta^{-1/q}`` one level down (time
    scale ``inner_ratio * delta``), free runs for ``delta`` (harvesting
    ``+chi^{q^N} B(zeta_i)`` because ``B`` is odd) and removes the shift again.
    """
    if not np.any(eta.coeffs):
        return []
    if N == 0:
        return [ControlSegment(float(delta), eta / delta, kind="impulse")]
    A = delta ** (-1.0 / params.q)
    segs: list[ControlSegment] = []
    for zeta in decompose_target(eta, chain, N, params):
        shift = zeta * (-A)
        segs += open_loop_segments(shift, N - 1, delta * inner_ratio, chain, params, inner_ratio)
        segs.append(ControlSegment(float(delta), kind="free_run"))
        segs += open_loop_segments(-shift, N - 1, delta * inner_ratio, chain, params, inner_ratio)
    return segs


def _level_columns(grid: TorusGrid, freqs: FrequencySet, mask: LocalizationMask, power: int):
    """Complex exponentials of ``+-freqs`` and their images under ``chi^power``."""
    sym = sorted(FrequencySet(freqs, grid.d).symmetric())
    basis = np.zeros((len(sym),) + grid.shape, dtype=complex)
    for i, k in enumerate(sym):
        basis[(i,) + grid.index(k)] = 1.0
    return basis, mask.multiply(basis, power)


def _weighted_lstsq(cols: np.ndarray, rhs: np.ndarray, grid: TorusGrid, s: float):
    w = np.sqrt((1.0 + grid.k2) ** s).ravel()
    A = cols.reshape(len(cols), -1).T * w[:, None]
    coef, *_ = np.linalg.lstsq(A, rhs.ravel() * w, rcond=None)
    return coef


def attain_recursive(u0: SpectralField, N: int, eta: SpectralField, eps: float, T0: float,
                     params: CglParams, mask: LocalizationMask | None = None, h: SpectralField | None = None,
                     chain: SaturationChain | None = None, I: FrequencySet | None = None,
                     deltas: Sequence[float] = DELTAS, max_corrections: int = 5,
                     inner_ratio: float = 1e-2, options: SolverOptions | None = None,
                     norm_s: float | None = None) -> SynthesisPlan:
    """Plan reaching ``u0 + chi^{q^N} eta`` within ``eps`` in total time ``<= T0``.

    For each candidate ``delta`` (largest first) the open-loop plan is replayed
    and its miss is fitted by ``chi^{q^N}`` times a level-``N`` correction that
    is added to the commanded ``eta`` (at most ``max_corrections`` times).
    """
    grid = u0.grid
    mask = mask or constant_mask(grid)
    options = options or SYNTHESIS_OPTIONS
    s = params.s if norm_s is None else norm_s
    if N < 0:
        raise ValidationError("N must be >= 0")
    if chain is None:
        chain = chain_nonlinear(I or FrequencySet.standard(grid.d), max(N, 1), params.p, clip=grid.kmax)
    if N > chain.depth:
        raise ValidationError(f"chain has only {chain.depth} levels")
    if not np.any(eta.coeffs):
        return _empty_plan(u0, T0)
    if N == 0:
        plan = attain_step0(u0, eta, eps, params, mask, h, deltas, options, norm_s)
        if plan.duration > T0:
            raise BudgetExceeded(f"impulse needs {plan.duration:g} > budget {T0:g}")
        plan.budget = T0
        return plan
    power = params.q**N
    target = u0.coeffs + mask.multiply(eta.coeffs, power)
    _, cols = _level_columns(grid, chain.level(N), mask, power)
    basis, _ = _level_columns(grid, chain.level(N), mask, 0)
    trace = []
    best = None
    integ_opts = options
    for delta in deltas:
        command = eta
        prev = np.inf
        for it in range(max_corrections + 1):
            segs = open_loop_segments(command, N, delta, chain, params, inner_ratio)
            dur = float(sum(sg.duration for sg in segs))
            if dur > T0:
                trace.append({"stage": f"level{N}", "delta": float(delta), "iteration": it,
                              "error": None, "note": f"duration {dur:g} exceeds budget"})
                break
            try:
                out = solve(u0, segs, params, mask=mask, h=h, options=integ_opts, record="final").final
            except BlowUp as exc:
                trace.append({"stage": f"level{N}", "delta": float(delta), "iteration": it,
                              "error": None, "note": f"blow-up: {exc}"})
                break
            miss = target - out.coeffs
            err = float(coeff_sobolev_norm(miss, grid, s))
            trace.append({"stage": f"level{N}", "delta": float(delta), "iteration": it, "error": err,
                          "n_segments": len(segs), "duration": dur})
            log.debug("level %d delta %g iteration %d error %.3e", N, delta, it, err)
            if best is None or err < best[0]:
                best = (err, segs, out, delta, it)
            if err < eps:
                plan = SynthesisPlan(u0, segs, SpectralField(grid, target), T0, trace, out, {"final": err},
                                     {"N": N, "delta": float(delta), "corrections": it,
                                      "n_terms": sum(1 for sg in segs if sg.kind == "free_run")})
                return plan
            if err > 0.9 * prev:
                break
            prev = err
            coef = _weighted_lstsq(cols, miss, grid, s)
            command = command + SpectralField(grid, np.tensordot(coef, basis, axes=1))
    if best is None and trace and all(t.get("note", "").startswith("duration") for t in trace):
        raise BudgetExceeded("no candidate delta fits in the time budget")
    msg = "no candidate" if best is None else f"best error {best[0]:.3g} at delta = {best[3]:g}"
    raise ToleranceUnreachable(f"level-{N} maneuver missed tolerance {eps:.3g}: {msg}")


# ---------------------------------------------------------------------------
# steering


def indicator_errors(state: np.ndarray, u0: SpectralField, u1: SpectralField, mask: LocalizationMask) -> dict:
    """Grid-quadrature ``L^2`` errors of ``state`` against ``u0 + 1_O u1``."""
    grid = u0.grid
    dv = grid.cell_volume
    vals = SpectralField(grid, state).values
    O = mask.interior
    want = u0.values + np.where(O, u1.values, 0.0)
    diff = vals - want
    change = vals - u0.values
    ref = float(np.sqrt(np.sum(np.abs(np.where(O, u1.values, 0.0)) ** 2) * dv))
    inside = float(np.sqrt(np.sum(np.abs(diff[O]) ** 2) * dv))
    outside = float(np.sqrt(np.sum(np.abs(change[~O]) ** 2) * dv))
    total = float(np.sqrt(np.sum(np.abs(diff) ** 2) * dv))
    return {"inside": inside, "outside_change": outside, "total": total, "target_norm": ref,
            "inside_relative": inside / ref if ref else inside,
            "outside_relative": outside / ref if ref else outside}


def fit_indicator_target(u1: SpectralField, mask: LocalizationMask, chain: SaturationChain, N: int,
                         params: CglParams) -> tuple[SpectralField, float]:
    """Least-squares ``eta`` in level ``N`` with ``chi^{q^N} eta ~ 1_O u1`` on the whole torus.

    Returns ``eta`` and the grid ``L^2`` residual.
    """
    grid = u1.grid
    power = params.q**N
    basis, cols = _level_columns(grid, chain.level(N), mask, power)
    want = np.where(mask.interior, u1.values, 0.0)
    colvals = np.fft.ifftn(cols, axes=grid.axes) * grid.size
    A = colvals.reshape(len(cols), -1).T
    coef, *_ = np.linalg.lstsq(A, want.ravel(), rcond=None)
    res = float(np.linalg.norm(A @ coef - want.ravel()) * np.sqrt(grid.cell_volume))
    return SpectralField(grid, np.tensordot(coef, basis, axes=1)), res


def steer_indicator(u0: SpectralField, u1: SpectralField, eps: float, T0: float, params: CglParams,
                    mask: LocalizationMask, h: SpectralField | None = None, I: FrequencySet | None = None,
                    N_max: int = 2, options: SolverOptions | None = None, **kw) -> SynthesisPlan:
    """Plan reaching ``u0 + 1_O u1`` within ``eps`` in ``L^2`` (grid quadrature).

    The smallest level ``N <= N_max`` whose fitted ``chi^{q^N} eta`` is within
    ``eps / 2`` of ``1_O u1`` is handed to :func:`attain_recursive` with
    tolerance ``eps / 2`` in ``L^2``.
    """
    grid = u0.grid
    if not mask.interior.any():
        from .errors import EmptyInterior
        raise EmptyInterior("mask interior is empty")
    if not np.any(u1.coeffs):
        plan = _empty_plan(u0, T0)
        plan.errors = indicator_errors(u0.coeffs, u0, u1, mask)
        return plan
    I = I or FrequencySet.standard(grid.d)
    chain = chain_nonlinear(I, N_max, params.p, clip=grid.kmax)
    fits = []
    for N in range(N_max + 1):
        if chain.level(N).max_abs() > grid.kmax // 2 and N > 0:
            fits.append({"N": N, "residual": None, "note": "level exceeds half the grid box"})
            break
        eta, res = fit_indicator_target(u1, mask, chain, N, params)
        fits.append({"N": N, "residual": res})
        if res < eps / 2:
            break
    else:
        raise SaturationInsufficient(f"no level up to {N_max} fits the target within {eps / 2:.3g}")
    if fits[-1]["residual"] is None or fits[-1]["residual"] >= eps / 2:
        raise SaturationInsufficient(f"no level up to {N_max} fits the target within {eps / 2:.3g}")
    plan = attain_recursive(u0, N, eta, eps / 2, T0, params, mask, h, chain=chain, options=options,
                            norm_s=0, **kw)
    plan.trace = [{"stage": "fit", **f} for f in fits] + plan.trace
    plan.errors.update(indicator_errors(plan.final.coeffs, u0, u1, mask))
    plan.info["fit_residual"] = fits[-1]["residual"]
    return plan


def spectral_leak(states: Sequence[SpectralField] | np.ndarray, I: FrequencySet, grid: TorusGrid) -> float:
    """Largest ``L^2`` norm of the part of any state outside the lattice spanned by ``I``."""
    allowed = frequency_mask(grid, lattice_closure(I, grid.kmax).symmetric())
    worst = 0.0
    for u in states:
        c = u.coeffs if isinstance(u, SpectralField) else u
        worst = max(worst, float(coeff_sobolev_norm(np.where(allowed, 0, c), grid, 0)))
    return worst


def steer_full(u0: SpectralField, u1: SpectralField, eps: float, T: float, params: CglParams,
               h: SpectralField | None = None, I: FrequencySet | None = None, N_max: int = 2,
               hold_chunk: float = 0.05, min_chunk: float = 1e-4, options: SolverOptions | None = None,
               mask: LocalizationMask | None = None, **kw) -> SynthesisPlan:
    """Steer to ``u1`` and stay within ``eps`` (``H^s``) until exactly time ``T``.

    Re-steers whenever the state leaves the ball of radius ``eps / 4`` around
    ``u1`` and free runs in chunks that keep it inside ``eps / 2``.  Each
    re-steer targets ``u1`` with tolerance ``eps / 8``.
    """
    grid = u0.grid
    mask = mask or constant_mask(grid)
    if not mask.is_constant or mask.M != 1.0:
        raise ValidationError("full-space steering requires chi = 1")
    options = options or SYNTHESIS_OPTIONS
    I = I or FrequencySet.standard(grid.d)
    chain = chain_nonlinear(I, N_max, params.p, clip=grid.kmax)
    integ = Integrator(grid, params, options)
    f = forcing_coeffs(h, None, None)
    s = params.s

    def dist(c):
        return float(coeff_sobolev_norm(c - u1.coeffs, grid, s))

    segments: list[ControlSegment] = []
    trace: list[dict] = []
    t = 0.0
    c = u0.coeffs
    chunk = hold_chunk
    steers = 0
    while T - t > 1e-12 * max(T, 1.0):
        remaining = T - t
        err = dist(c)
        if err >= eps / 4:
            plan = _resteer(SpectralField(grid, c), u1, eps / 8, remaining, params, mask, h, chain, N_max,
                            options, kw)
            if plan.duration >= remaining:
                raise HoldFailure(f"re-steering needs {plan.duration:g} but only {remaining:g} is left")
            segments += plan.segments
            t += plan.duration
            c = plan.final.coeffs
            steers += 1
            trace.append({"stage": "steer", "t": t, "error": dist(c), "N": plan.info.get("N"),
                          "delta": plan.info.get("delta")})
            chunk = hold_chunk
            continue
        dt = min(chunk, remaining)
        c_new, _ = integ.advance(c, dt, f)
        if dist(c_new) < eps / 2:
            segments.append(ControlSegment(dt, kind="free_run"))
            c = c_new
            t += dt
            trace.append({"stage": "hold", "t": t, "error": dist(c)})
            continue
        if err < eps / 8 and chunk / 2 >= min_chunk:
            chunk /= 2
            continue
        if err < eps / 8:
            raise HoldFailure(f"state escapes the hold ball within {chunk:g}")
        plan = _resteer(SpectralField(grid, c), u1, eps / 8, remaining, params, mask, h, chain, N_max,
                        options, kw)
        if plan.duration >= remaining:
            raise HoldFailure(f"re-steering needs {plan.duration:g} but only {remaining:g} is left")
        segments += plan.segments
        t += plan.duration
        c = plan.final.coeffs
        steers += 1
        trace.append({"stage": "steer", "t": t, "error": dist(c), "N": plan.info.get("N"),
                      "delta": plan.info.get("delta")})
    final = SpectralField(grid, c)
    out = SynthesisPlan(u0, segments, u1, T, trace, final, {"final": dist(c)},
                        {"steers": steers, "T": T})
    if out.errors["final"] >= eps:
        raise ToleranceUnreachable(f"final error {out.errors['final']:.3g} >= {eps:g}")
    return out


def _resteer(state: SpectralField, u1: SpectralField, tol: float, budget: float, params: CglParams,
             mask: LocalizationMask, h, chain: SaturationChain, N_max: int, options, kw) -> SynthesisPlan:
    grid = state.grid
    d = u1.coeffs - state.coeffs
    for N in range(N_max + 1):
        eta = d * frequency_mask(grid, chain.level(N).symmetric())
        if float(coeff_sobolev_norm(d - eta, grid, params.s)) < tol / 2:
            break
    else:
        raise SaturationInsufficient(f"displacement is not within {tol / 2:.3g} of level {N_max}")
    return attain_recursive(state, N, SpectralField(grid, eta), tol, budget, params, mask, h, chain=chain,
                            options=options, **kw)
