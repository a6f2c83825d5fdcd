"""Markov chain ``u_k = S(u_{k-1}, eta_k)`` driven by Haar noise, and its statistics.

Ensembles are advanced as one batch: all members share the step size (the
smallest admissible one across the batch), which keeps results reproducible
for a given ``(seed, member count)``.  Distances between empirical laws are
lower bounds of the dual-Lipschitz distance obtained from a fixed dictionary
of bounded Lipschitz test functions of a few Fourier coordinates.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import curve_fit

from .dynamics import CglParams, Integrator, SolverOptions, lyapunov_coeffs
from .errors import BlowUp, GridMismatch, InsufficientData, NonFinite, ValidationError
from .haar import HaarNoiseSpec, NoisePath, noise_rng, sample_noise, trig_basis
from .spectral import LocalizationMask, SpectralField, TorusGrid

log = logging.getLogger(__name__)


@dataclass
class Ensemble:
    """Members stored as one coefficient array ``(M, *grid.shape)``.

    ``ids`` are the member stream ids used to key the noise RNG; members
    excluded after a blow-up keep their ids out of the array.
    """

    grid: TorusGrid
    coeffs: np.ndarray
    k: int = 0
    label: str = ""
    seed: int = 0
    ids: np.ndarray | None = None
    excluded: list = field(default_factory=list)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape[1:] != self.grid.shape:
            raise GridMismatch("member arrays do not match the grid")
        if self.coeffs.shape[0] < 2:
            raise ValidationError("an ensemble needs at least two members")
        if self.ids is None:
            self.ids = np.arange(self.coeffs.shape[0])

    @classmethod
    def from_field(cls, u0: SpectralField, members: int, label: str = "", seed: int = 0) -> "Ensemble":
        return cls(u0.grid, np.repeat(u0.coeffs[None], members, axis=0), 0, label, seed)

    @property
    def size(self) -> int:
        return self.coeffs.shape[0]

    @property
    def members(self) -> list[SpectralField]:
        return [SpectralField(self.grid, c) for c in self.coeffs]

    def provenance(self) -> dict:
        return {"label": self.label, "seed": self.seed, "k": self.k, "members": self.size,
                "excluded": list(self.excluded)}


def _noise_forcing(paths: Sequence[NoisePath], grid: TorusGrid, mask: LocalizationMask | None,
                   h: SpectralField | None) -> np.ndarray:
    """Forcing ``h + chi eta(t)`` per member and cell, shape ``(cells, M, *grid.shape)``."""
    basis = trig_basis(grid, paths[0].spec.modes) * grid.in_box
    amp = np.array([p.scaled_paths() for p in paths])  # (M, modes, 2, cells)
    amp = amp.reshape(len(paths), -1, amp.shape[-1])
    f = np.einsum("mbc,b...->cm...", amp, basis)
    if mask is not None:
        f = mask.multiply(f)
    if h is not None:
        f = f + h.coeffs
    return f


def _advance_batch(integ: Integrator, c: np.ndarray, forcing: np.ndarray, dt: float) -> np.ndarray:
    for f in forcing:
        c, _ = integ.advance(c, dt, f)
    return c


def markov_step(ens: Ensemble, spec: HaarNoiseSpec, params: CglParams, mask: LocalizationMask | None = None,
                h: SpectralField | None = None, options: SolverOptions | None = None,
                stream: str = "independent", ensemble_key: int = 0) -> Ensemble:
    """Advance every member by one unit of time under its own noise path.

    The path of member ``i`` at step ``k`` comes from the stream
    ``(seed, ensemble_key, id_i, k)``; with ``stream="coupled"`` the ensemble
    key is dropped so that ensembles sharing a seed see the same noise
    (common random numbers).  A member whose run blows up is excluded with a
    warning.
    """
    if stream not in ("independent", "coupled"):
        raise ValidationError("stream must be 'independent' or 'coupled'")
    grid = ens.grid
    integ = Integrator(grid, params, options)
    paths = []
    for i in ens.ids:
        key = (int(i), ens.k) if stream == "coupled" else (ensemble_key, int(i), ens.k)
        paths.append(sample_noise(spec, noise_rng(ens.seed, *key)))
    forcing = _noise_forcing(paths, grid, mask, h)
    dt = 1.0 / spec.n_cells
    try:
        new = _advance_batch(integ, ens.coeffs, forcing, dt)
        keep = np.ones(ens.size, bool)
    except (BlowUp, NonFinite):
        new = np.empty_like(ens.coeffs)
        keep = np.ones(ens.size, bool)
        for m in range(ens.size):
            try:
                new[m] = _advance_batch(integ, ens.coeffs[m], forcing[:, m], dt)
            except (BlowUp, NonFinite):
                keep[m] = False
                warnings.warn(f"member {int(ens.ids[m])} blew up at step {ens.k}; excluded", RuntimeWarning)
    excluded = list(ens.excluded) + [int(i) for i in ens.ids[~keep]]
    return Ensemble(grid, new[keep], ens.k + 1, ens.label, ens.seed, ens.ids[keep], excluded)


# ---------------------------------------------------------------------------
# test functions


def coordinate_modes(grid: TorusGrid, n_modes: int = 5) -> list[tuple[int, ...]]:
    """The ``n_modes`` lowest frequencies ordered by ``|k|^2`` then lexicographically."""
    box = sorted(grid.mode_box(), key=lambda k: (sum(v * v for v in k), [-v for v in k]))
    return box[:n_modes]


def h1_coordinates(coeffs: np.ndarray, grid: TorusGrid, modes: Sequence[Sequence[int]]) -> np.ndarray:
    """``(2 pi)^{d/2} sqrt(1 + |k|^2) (Re, Im) uhat(k)``; each is 1-Lipschitz in ``H^1``.

    The full coordinate vector is 1-Lipschitz in the Euclidean norm as well.
    """
    scale = np.sqrt(grid.volume)
    cols = []
    for k in modes:
        w = scale * np.sqrt(1.0 + sum(v * v for v in k))
        z = coeffs[(Ellipsis,) + grid.index(k)]
        cols += [w * z.real, w * z.imag]
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class TestFunction:
    """``value(x)`` on coordinate vectors with certified ``sup + Lip`` bound."""

    __test__ = False

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    sup: float
    lip: float

    @property
    def bound(self) -> float:
        return self.sup + self.lip

    def __call__(self, x):
        return self.fn(x)


def clamped_linear(j: int, centre: float = 0.0) -> TestFunction:
    return TestFunction(f"clamp[{j}]-{centre:g}", lambda x: 0.5 * np.clip(x[..., j] - centre, -1, 1), 0.5, 0.5)


def radial(idx: Sequence[int], centre: Sequence[float], R: float = 1.0) -> TestFunction:
    a = 1.0 / (1.0 + R)
    idx = list(idx)
    c = np.asarray(centre, float)
    return TestFunction(f"radial{idx}-R{R:g}",
                        lambda x: a * np.minimum(np.linalg.norm(x[..., idx] - c, axis=-1), R), a * R, a)


def product(f: TestFunction, g: TestFunction) -> TestFunction:
    """Scaled product with ``sup = sup_f sup_g / 3`` and ``Lip <= (sup_f Lip_g + sup_g Lip_f) / 3``."""
    return TestFunction(f"({f.name})*({g.name})", lambda x: f(x) * g(x) / 3.0,
                        f.sup * g.sup / 3.0, (f.sup * g.lip + g.sup * f.lip) / 3.0)


@dataclass
class TestFunctionDictionary:
    __test__ = False

    modes: list
    entries: list[TestFunction]

    def __post_init__(self):
        if not self.entries:
            raise ValidationError("dictionary is empty")
        for e in self.entries:
            if e.bound > 1.0 + 1e-12:
                raise ValidationError(f"entry {e.name} has bound {e.bound} > 1")

    def __len__(self):
        return len(self.entries)

    def coordinates(self, coeffs: np.ndarray, grid: TorusGrid) -> np.ndarray:
        return h1_coordinates(coeffs, grid, self.modes)

    def evaluate(self, ens: Ensemble) -> np.ndarray:
        """Values ``(entries, members)``."""
        x = self.coordinates(ens.coeffs, ens.grid)
        return np.array([e(x) for e in self.entries])

    def means(self, ens: Ensemble) -> np.ndarray:
        return np.mean(self.evaluate(ens), axis=1)

    def certified_on(self, ens: Ensemble) -> bool:
        """Certified bounds hold globally, hence on the ensemble's bounding box."""
        x = self.coordinates(ens.coeffs, ens.grid)
        return all(np.all(np.abs(e(x)) <= e.sup + 1e-12) for e in self.entries)


def default_dictionary(grid: TorusGrid, n_modes: int = 5, size: int = 64, seed: int = 0) -> TestFunctionDictionary:
    """Clamped linear, radial and product functionals of the lowest ``n_modes`` coordinates."""
    modes = coordinate_modes(grid, n_modes)
    m = 2 * len(modes)
    rng = np.random.default_rng(seed)
    entries: list[TestFunction] = [clamped_linear(j) for j in range(m)]
    entries += [clamped_linear(j, 0.5) for j in range(m)]
    pairs = list(itertools.combinations(range(m), 2))
    n_rad = (size - len(entries)) // 2
    for i in rng.permutation(len(pairs))[:n_rad]:
        entries.append(radial(pairs[i], rng.uniform(-0.5, 0.5, 2), R=1.0))
    base = [clamped_linear(j) for j in range(m)]
    while len(entries) < size:
        a, b = rng.choice(m, 2, replace=False)
        entries.append(product(base[a], base[b]))
    return TestFunctionDictionary(modes, entries[:size])


def dual_lipschitz_estimate(a: Ensemble, b: Ensemble, dictionary: TestFunctionDictionary) -> float:
    """``max_f |mean_a f - mean_b f|``, a lower bound of the dual-Lipschitz distance."""
    if a.grid != b.grid:
        raise GridMismatch("ensembles live on different grids")
    return float(np.max(np.abs(dictionary.means(a) - dictionary.means(b))))


# ---------------------------------------------------------------------------
# fits and monitors


@dataclass
class MixingFit:
    sigma: float
    C: float
    r_squared: float
    n_points: int
    window: tuple[int, int]

    @property
    def mixing(self) -> bool:
        # slopes at round-off level count as flat
        return self.sigma > 1e-10

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "C": self.C, "r_squared": self.r_squared, "n_points": self.n_points,
                "window": list(self.window), "mixing": self.mixing}


def mixing_rate_fit(distances: Sequence[float], burn_in: int = 0, floor: float = 0.0,
                    ks: Sequence[int] | None = None) -> MixingFit:
    """Least-squares fit ``log d_k = log C - sigma k`` over points above ``floor``.

    Only the leading run of points after ``burn_in`` that stay above the floor
    enters the fit.  A constant series gives ``sigma = 0`` and ``r^2 = 1``.
    """
    d = np.asarray(distances, float)
    k = np.arange(len(d)) if ks is None else np.asarray(ks, float)
    sel = np.arange(len(d)) >= burn_in
    above = d > floor
    idx = np.nonzero(sel)[0]
    run = []
    for i in idx:
        if not above[i]:
            break
        run.append(i)
    if len(run) < 5:
        raise InsufficientData(f"only {len(run)} points above the noise floor {floor:g}")
    kk, y = k[run], np.log(d[run])
    slope, intercept = np.polyfit(kk, y, 1)
    resid = y - (slope * kk + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return MixingFit(float(-slope), float(np.exp(intercept)), r2, len(run), (int(kk[0]), int(kk[-1])))


def lyapunov_monitor(ens: Ensemble, params: CglParams) -> dict:
    vals = lyapunov_coeffs(ens.coeffs, ens.grid, params)
    q = np.quantile(vals, [0.25, 0.5, 0.75, 0.95])
    return {"k": ens.k, "mean": float(np.mean(vals)), "max": float(np.max(vals)), "min": float(np.min(vals)),
            "q25": float(q[0]), "median": float(q[1]), "q75": float(q[2]), "q95": float(q[3])}


def lyapunov_bound_fit(means: Sequence[float], H0: float) -> dict:
    """Fit ``m_k = c^k (1 + H0) + C`` with ``0 <= c < 1`` and ``C >= 0``.

    Returns the fitted constants and the largest violation of the bound by the
    data (non-positive when the fitted curve dominates the series).
    """
    m = np.asarray(means, float)
    k = np.arange(len(m), dtype=float)

    def model(k, c, C):
        return c**k * (1.0 + H0) + C

    (c, C), _ = curve_fit(model, k, m, p0=(0.5, max(m[-1], 1e-12)), bounds=([0.0, 0.0], [1.0, np.inf]))
    slack = m - model(k, c, C)
    C_cover = C + max(0.0, float(np.max(slack)))
    return {"c": float(c), "C": float(C), "C_cover": C_cover, "max_violation": float(np.max(slack))}


# ---------------------------------------------------------------------------
# experiments


@dataclass
class MixingRun:
    rows: list[dict]
    fit: MixingFit | None
    bound: dict | None
    provenance: dict


def run_mixing(u0_a: SpectralField, u0_b: SpectralField, spec: HaarNoiseSpec, params: CglParams,
               steps: int, members: int, seed: int, mask: LocalizationMask | None = None,
               h: SpectralField | None = None, stream: str = "coupled",
               dictionary: TestFunctionDictionary | None = None, floor: float | None = None,
               options: SolverOptions | None = None, burn_in: int = 0) -> MixingRun:
    """Two ensembles from ``u0_a`` and ``u0_b``; distance and Lyapunov series for ``k = 0..steps``.

    With ``floor=None`` the fit floor is ``3 / sqrt(members)`` times the
    largest dictionary sup-norm (a Monte Carlo scale) for independent streams
    and 0 for coupled ones.
    """
    grid = u0_a.grid
    dictionary = dictionary or default_dictionary(grid)
    a = Ensemble.from_field(u0_a, members, "a", seed)
    b = Ensemble.from_field(u0_b, members, "b", seed)
    rows = []
    for k in range(steps + 1):
        if k:
            a = markov_step(a, spec, params, mask, h, options, stream, ensemble_key=0)
            b = markov_step(b, spec, params, mask, h, options, stream, ensemble_key=1)
        la, lb = lyapunov_monitor(a, params), lyapunov_monitor(b, params)
        rows.append({"k": k, "distance": dual_lipschitz_estimate(a, b, dictionary),
                     "mean_H": 0.5 * (la["mean"] + lb["mean"]), "max_H": max(la["max"], lb["max"]),
                     "mean_H_a": la["mean"], "mean_H_b": lb["mean"]})
        log.debug("k=%d distance=%.3e", k, rows[-1]["distance"])
    if floor is None:
        floor = 0.0 if stream == "coupled" else 3.0 * max(e.sup for e in dictionary.entries) / np.sqrt(members)
    try:
        fit = mixing_rate_fit([r["distance"] for r in rows], burn_in=burn_in, floor=floor)
    except InsufficientData:
        fit = None
    H0 = max(rows[0]["mean_H_a"], rows[0]["mean_H_b"])
    try:
        bound = lyapunov_bound_fit([max(r["mean_H_a"], r["mean_H_b"]) for r in rows], H0)
    except (RuntimeError, ValueError):
        bound = None
    prov = {"a": a.provenance(), "b": b.provenance(), "stream": stream, "floor": floor,
            "dictionary_size": len(dictionary)}
    return MixingRun(rows, fit, bound, prov)


def tail_ensemble(u0: SpectralField, spec: HaarNoiseSpec, params: CglParams, members: int, seed: int,
                  burn_in: int = 50, mask: LocalizationMask | None = None, h: SpectralField | None = None,
                  options: SolverOptions | None = None) -> Ensemble:
    """Stationary-law proxy: one chain sampled every step after ``burn_in`` steps."""
    grid = u0.grid
    pair = Ensemble.from_field(u0, 2, "tail", seed)
    samples = []
    for k in range(burn_in + members):
        pair = markov_step(pair, spec, params, mask, h, options)
        if k >= burn_in:
            samples.append(pair.coeffs[0])
    return Ensemble(grid, np.array(samples), pair.k, "tail", seed)
