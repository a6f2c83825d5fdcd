"""Bounded Haar-type noise on [0, 1] and an observability diagnostic.

A scalar path is ``xi_0 h_0(t) + sum_{j<=j_max} sum_m j^{-decay} xi_{jm} h_{jm}(t)``
with i.i.d. bounded ``xi``; the space-time noise attaches four independent
scalar paths (real/imaginary parts of the cos and sin coefficients) to every
frequency of the base set.  Paths are piecewise constant on a uniform mesh of
``2^(j_max + 3)`` cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AmplitudeNonPositive, IndexOutOfRange, ValidationError
from .saturation import FrequencySet
from .spectral import SpectralField, TorusGrid


@dataclass(frozen=True)
class ScalarLaw:
    """Law of the i.i.d. coefficients.

    ``"triangular"`` is the symmetric triangular density on ``[-radius, radius]``
    (Lipschitz, positive at zero); ``"point"`` is the point mass at zero.
    """

    kind: str = "triangular"
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in ("triangular", "point"):
            raise ValidationError(f"unknown law {self.kind!r}")
        if not 0 < self.radius < np.inf:
            raise ValidationError("law support radius must be positive and finite")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "point":
            return np.zeros(size)
        return rng.triangular(-self.radius, 0.0, self.radius, size=size)

    def density(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if self.kind == "point":
            raise ValidationError("the point mass has no density")
        return np.clip(1.0 - np.abs(x) / self.radius, 0.0, None) / self.radius


@dataclass(frozen=True)
class HaarNoiseSpec:
    """Haar noise ``sum_l b_c^l eta_c^l(t) cos<l,x> + b_s^l eta_s^l(t) sin<l,x>``.

    ``amps_cos`` / ``amps_sin`` list one positive amplitude per frequency of
    ``I`` in ``I.sorted()`` order (a scalar is broadcast).
    """

    I: FrequencySet
    amps_cos: tuple = (1.0,)
    amps_sin: tuple = (1.0,)
    decay: float = 2.0
    law: ScalarLaw = ScalarLaw()
    j_max: int = 3
    m_max: int | None = None

    def __post_init__(self):
        n = len(self.I)
        for name in ("amps_cos", "amps_sin"):
            a = tuple(float(v) for v in np.atleast_1d(getattr(self, name)))
            if len(a) == 1:
                a = a * n
            if len(a) != n:
                raise ValidationError(f"{name} needs 1 or {n} entries")
            if any(not v > 0 for v in a):
                raise AmplitudeNonPositive(f"{name} must be positive")
            object.__setattr__(self, name, a)
        if not self.decay > 1:
            raise ValidationError("decay must be > 1")
        if self.j_max < 0:
            raise ValidationError("j_max must be >= 0")
        if self.m_max is not None and self.m_max < 1:
            raise ValidationError("m_max must be >= 1")

    @property
    def modes(self) -> list[tuple[int, ...]]:
        return self.I.sorted()

    @property
    def n_cells(self) -> int:
        return 2 ** (self.j_max + 3)

    def shifts(self, j: int) -> int:
        m = 2 ** (j - 1)
        return m if self.m_max is None else min(m, self.m_max)

    @property
    def n_coefficients(self) -> int:
        return 1 + sum(self.shifts(j) for j in range(1, self.j_max + 1))

    def sup_bound(self) -> float:
        """Triangle-inequality bound on ``sup_t |scalar path|``."""
        r = self.law.radius
        return r * (1.0 + sum(j ** (-self.decay) * 2 ** ((j - 1) / 2) for j in range(1, self.j_max + 1)))


def haar_basis(j: int, m: int, t) -> np.ndarray:
    """Haar father function (``j = 0``) or wavelet ``h_{jm}`` on [0, 1)."""
    t = np.asarray(t, float)
    if j == 0:
        if m != 0:
            raise IndexOutOfRange("the father function has m = 0")
        return np.where((t >= 0) & (t < 1), 1.0, 0.0)
    if j < 0 or not 0 <= m < 2 ** (j - 1):
        raise IndexOutOfRange(f"invalid Haar index (j={j}, m={m})")
    width = 2.0 ** (-(j - 1))
    a = m * width
    amp = 2.0 ** ((j - 1) / 2)
    first = (t >= a) & (t < a + width / 2)
    second = (t >= a + width / 2) & (t < a + width)
    return amp * first - amp * second


def haar_index(spec: HaarNoiseSpec) -> list[tuple[int, int]]:
    """``(j, m)`` labels in coefficient order, starting with the father function."""
    return [(0, 0)] + [(j, m) for j in range(1, spec.j_max + 1) for m in range(spec.shifts(j))]


def haar_design(spec: HaarNoiseSpec) -> np.ndarray:
    """Matrix ``(n_coefficients, n_cells)`` of weighted wavelets on the cell mesh."""
    t = (np.arange(spec.n_cells) + 0.5) / spec.n_cells
    rows = []
    for j, m in haar_index(spec):
        w = 1.0 if j == 0 else j ** (-spec.decay)
        rows.append(w * haar_basis(j, m, t))
    return np.array(rows)


def sample_scalar_process(spec: HaarNoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """One scalar path on [0, 1): cell values on the uniform mesh."""
    xi = spec.law.sample(rng, spec.n_coefficients)
    return xi @ haar_design(spec)


@dataclass
class NoisePath:
    """Sampled noise on [0, 1].

    ``xi`` has shape ``(n_modes, 4, n_coefficients)`` with the four real
    processes ordered (cos re, cos im, sin re, sin im); ``coeff_paths`` are the
    corresponding complex cell values ``eta_c^l`` and ``eta_s^l`` with shape
    ``(n_modes, 2, n_cells)``.
    """

    spec: HaarNoiseSpec
    xi: np.ndarray
    coeff_paths: np.ndarray = field(init=False)

    def __post_init__(self):
        real = np.einsum("mpc,cn->mpn", self.xi, haar_design(self.spec))
        self.coeff_paths = real[:, 0::2] + 1j * real[:, 1::2]

    @property
    def n_cells(self) -> int:
        return self.spec.n_cells

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_cells) / self.n_cells

    def scaled_paths(self) -> np.ndarray:
        """``b_c^l eta_c^l`` and ``b_s^l eta_s^l``, shape ``(n_modes, 2, n_cells)``."""
        amps = np.array([self.spec.amps_cos, self.spec.amps_sin]).T
        return self.coeff_paths * amps[:, :, None]

    def field_at_cell(self, i: int, grid: TorusGrid) -> SpectralField:
        basis = trig_basis(grid, self.spec.modes)
        return SpectralField(grid, np.tensordot(self.scaled_paths()[:, :, i].ravel(), basis, axes=1))

    def field_at(self, t: float, grid: TorusGrid) -> SpectralField:
        i = min(int(np.floor(t * self.n_cells)), self.n_cells - 1)
        return self.field_at_cell(i, grid)

    def real_coordinates(self) -> tuple[np.ndarray, list[str]]:
        """Real coordinate paths of ``eta(t)`` in {cos, i cos, sin, i sin} (no sin for l = 0)."""
        sp = self.scaled_paths()
        rows, names = [], []
        for a, l in enumerate(self.spec.modes):
            for b, tag in enumerate(("cos", "sin")):
                if tag == "sin" and not any(l):
                    continue
                rows += [sp[a, b].real, sp[a, b].imag]
                names += [f"{tag}{l}", f"i{tag}{l}"]
        return np.array(rows), names

    def to_rows(self) -> list[list[float]]:
        """CSV rows ``t, Re/Im of every coefficient path``."""
        sp = self.coeff_paths
        out = []
        for i, t in enumerate(self.times):
            row = [float(t)]
            for a in range(sp.shape[0]):
                for b in range(2):
                    row += [float(sp[a, b, i].real), float(sp[a, b, i].imag)]
            out.append(row)
        return out

    def csv_header(self) -> list[str]:
        head = ["t"]
        for l in self.spec.modes:
            tag = "_".join(map(str, l))
            head += [f"cos{tag}_re", f"cos{tag}_im", f"sin{tag}_re", f"sin{tag}_im"]
        return head


def trig_basis(grid: TorusGrid, modes: Sequence[Sequence[int]]) -> np.ndarray:
    """Coefficient arrays of ``cos<l,x>, sin<l,x>`` interleaved per mode."""
    out = []
    for l in modes:
        out.append(SpectralField.cos_mode(grid, l).coeffs)
        out.append(SpectralField.sin_mode(grid, l).coeffs)
    return np.array(out)


def sample_noise(spec: HaarNoiseSpec, rng: np.random.Generator) -> NoisePath:
    xi = spec.law.sample(rng, (len(spec.modes), 4, spec.n_coefficients))
    return NoisePath(spec, xi)


def noise_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream keyed by e.g. ``(member, step)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


# ---------------------------------------------------------------------------
# abstract (H4) form


def series_H4(b: Sequence[float], basis: Sequence, xi: Sequence[float]):
    """``sum_j b_j xi_j e_j`` for a finite orthonormal list ``e_j``."""
    b = np.asarray(b, float)
    xi = np.asarray(xi, float)
    if len(b) != len(basis) or len(xi) != len(basis):
        raise ValidationError("b, basis and xi must have the same length")
    if np.any(b <= 0):
        raise AmplitudeNonPositive("amplitudes b_j must be positive")
    if np.any(np.abs(xi) > 1):
        raise ValidationError("|xi_j| must not exceed 1")
    total = None
    for bj, xj, e in zip(b, xi, basis):
        term = bj * xj * e
        total = term if total is None else total + term
    return total


def h4_representation(spec: HaarNoiseSpec, grid: TorusGrid):
    """Amplitudes and orthonormal space-time basis of the Haar noise.

    Returns ``(b, basis, labels)`` where ``basis[j]`` is an array of shape
    ``(n_cells, *grid coefficient shape)`` orthonormal in ``L^2(0, 1; L^2)``
    and ``sample = sum_j b_j (xi_j / R) basis[j]`` with ``|xi_j / R| <= 1``.
    """
    R = spec.law.radius
    design_t = []
    tcell = (np.arange(spec.n_cells) + 0.5) / spec.n_cells
    for j, m in haar_index(spec):
        design_t.append((1.0 if j == 0 else j ** (-spec.decay), haar_basis(j, m, tcell)))
    b, basis, labels = [], [], []
    for a, l in enumerate(spec.modes):
        for kind, amp in (("cos", spec.amps_cos[a]), ("sin", spec.amps_sin[a])):
            if kind == "sin" and not any(l):
                continue
            sp = SpectralField.cos_mode(grid, l) if kind == "cos" else SpectralField.sin_mode(grid, l)
            norm = np.sqrt(np.sum(np.abs(sp.coeffs) ** 2) * grid.volume)
            for phase, tag in ((1.0, "re"), (1j, "im")):
                e_space = phase * sp.coeffs / norm
                for (w, h), (j, m) in zip(design_t, haar_index(spec)):
                    b.append(amp * w * R * norm)
                    basis.append(h[:, None] * e_space.ravel()[None, :])
                    labels.append((tuple(l), kind, tag, j, m))
    return np.array(b), basis, labels


# ---------------------------------------------------------------------------
# observability


@dataclass
class ObservabilityReport:
    sigma_min: float
    sigma_max: float
    n_unknowns: int
    n_rows: int
    null_vector: np.ndarray
    tol: float

    @property
    def relative(self) -> float:
        return self.sigma_min / self.sigma_max if self.sigma_max > 0 else 0.0

    @property
    def evidence_observable(self) -> bool:
        return self.sigma_max > 0 and self.relative > self.tol

    def to_dict(self) -> dict:
        return {"sigma_min": self.sigma_min, "sigma_max": self.sigma_max, "relative": self.relative,
                "n_unknowns": self.n_unknowns, "n_rows": self.n_rows,
                "evidence_observable": self.evidence_observable}


def hat_functions(t: np.ndarray, T: float, n_nodes: int) -> np.ndarray:
    """Piecewise-linear nodal basis on [0, T], shape ``(n_nodes, len(t))``."""
    if n_nodes < 2:
        raise ValidationError("need at least two nodes")
    nodes = np.linspace(0.0, T, n_nodes)
    h = nodes[1] - nodes[0]
    return np.clip(1.0 - np.abs(t[None, :] - nodes[:, None]) / h, 0.0, None)


def observability_diagnostic(path: NoisePath, T: float = 1.0, n_nodes: int = 2,
                             tol: float = 1e-8) -> ObservabilityReport:
    """Smallest singular value of ``(a, b) -> sum_l a_l zeta^l - b`` on a finite ansatz.

    ``a_l`` and ``b`` range over continuous piecewise-linear functions with
    ``n_nodes`` nodes on [0, T].  A positive value is evidence (not proof) that
    the sampled path admits only the trivial annihilator within the ansatz.
    """
    if not 0 < T <= 1:
        raise ValidationError("T must lie in (0, 1]")
    coords, _ = path.real_coordinates()
    ncell = path.n_cells
    use = int(np.floor(T * ncell + 1e-9))
    if use < 1:
        raise ValidationError("T shorter than one noise cell")
    t = (np.arange(use) + 0.5) / ncell
    hats = hat_functions(t, T, n_nodes)
    blocks = [hats * z[None, :use] for z in coords] + [-hats]
    G = np.concatenate(blocks, axis=0).T * np.sqrt(1.0 / ncell)
    _, sv, vt = np.linalg.svd(G, full_matrices=True)
    n_unknowns = G.shape[1]
    if G.shape[0] < n_unknowns:
        smin = 0.0
    else:
        smin = float(sv[-1])
    return ObservabilityReport(smin, float(sv[0]) if sv.size else 0.0, n_unknowns, G.shape[0], vt[-1], tol)
