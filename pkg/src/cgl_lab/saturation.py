"""Frequency-set algebra for trigonometric control subspaces.

A finite ``I`` in Z^d stands for ``H(I) = span{cos<l,x>, sin<l,x> : l in I}``.
Products of trigonometric functions add and subtract frequencies, so both
saturation chains can be tracked on frequency supports alone:

* linear chain:    ``F_j = F_{j-1} + (+-I)``       (products with one factor from H)
* nonlinear chain: ``F_j = F_{j-1} + ... + F_{j-1}``  (q = 2p + 1 factors)

Sets are stored up to sign: ``k`` and ``-k`` index the same cos/sin pair.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from sympy import Matrix, ZZ
from sympy.matrices.normalforms import invariant_factors

from .errors import EmptyInterior, ValidationError
from .spectral import LocalizationMask, TorusGrid


def canonical(k: Sequence[int]) -> tuple[int, ...]:
    """Representative of ``{k, -k}`` whose first nonzero entry is positive."""
    k = tuple(int(v) for v in k)
    for v in k:
        if v != 0:
            return k if v > 0 else tuple(-w for w in k)
    return k


class FrequencySet:
    """Finite set of integer vectors, kept as one representative per +- pair."""

    __slots__ = ("d", "reps")

    def __init__(self, freqs: Iterable[Sequence[int]], d: int | None = None):
        reps = frozenset(canonical(k) for k in freqs)
        dims = {len(k) for k in reps}
        if d is None:
            if len(dims) != 1:
                raise ValidationError("frequency set must be nonempty with a common dimension")
            d = dims.pop()
        elif dims - {d}:
            raise ValidationError(f"frequencies must have dimension {d}")
        self.d = d
        self.reps = reps

    @classmethod
    def standard(cls, d: int) -> "FrequencySet":
        """``{0, e_1, ..., e_d}``."""
        return cls([(0,) * d] + [tuple(int(i == j) for j in range(d)) for i in range(d)], d)

    def symmetric(self) -> set[tuple[int, ...]]:
        return self.reps | {tuple(-v for v in k) for k in self.reps}

    def sorted(self) -> list[tuple[int, ...]]:
        return sorted(self.reps, key=lambda k: (sum(abs(v) for v in k), k))

    @property
    def has_zero(self) -> bool:
        return (0,) * self.d in self.reps

    def __contains__(self, k) -> bool:
        return canonical(k) in self.reps

    def __iter__(self):
        return iter(self.sorted())

    def __len__(self):
        return len(self.reps)

    def __le__(self, other: "FrequencySet") -> bool:
        return self.reps <= other.reps

    def __eq__(self, other):
        return isinstance(other, FrequencySet) and self.reps == other.reps

    def __hash__(self):
        return hash(self.reps)

    def __repr__(self):
        return f"FrequencySet({self.sorted()})"

    def max_abs(self) -> int:
        return max((max(abs(v) for v in k) for k in self.reps), default=0)

    def clip(self, radius: int) -> "FrequencySet":
        return FrequencySet([k for k in self.reps if max(abs(v) for v in k) <= radius], self.d)

    def real_dimension(self) -> int:
        """Real dimension of ``H(I)`` as a space of complex-valued functions."""
        zero = 1 if self.has_zero else 0
        return 2 * zero + 4 * (len(self.reps) - zero)


def _sumset(a: set, b: set) -> set:
    return {tuple(x + y for x, y in zip(u, v)) for u in a for v in b}


# ---------------------------------------------------------------------------
# generator test


def is_generator(I: FrequencySet) -> bool:
    """True iff the integer span of ``I`` is all of Z^d (Smith normal form test)."""
    vecs = [k for k in I.reps if any(k)]
    if not vecs:
        return False
    factors = [abs(int(f)) for f in invariant_factors(Matrix(vecs), domain=ZZ) if f != 0]
    return len(factors) == I.d and all(f == 1 for f in factors)


def lattice_closure(I: FrequencySet, radius: int) -> FrequencySet:
    """Integer combinations of ``I`` inside ``[-radius, radius]^d`` (breadth-first).

    The search runs in a box enlarged by twice the largest generator entry so
    that walks may leave the target box before returning to it.
    """
    if radius < 1:
        raise ValidationError("radius must be >= 1")
    d = I.d
    steps = [k for k in I.symmetric() if any(k)]
    outer = radius + 2 * I.max_abs()
    start = (0,) * d
    seen = {start}
    frontier = [start]
    while frontier:
        nxt = []
        for u in frontier:
            for s in steps:
                v = tuple(a + b for a, b in zip(u, s))
                if v not in seen and max(abs(x) for x in v) <= outer:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    inside = [v for v in seen if max(abs(x) for x in v) <= radius]
    return FrequencySet(inside, d)


def box_set(d: int, radius: int) -> FrequencySet:
    return FrequencySet(itertools.product(range(-radius, radius + 1), repeat=d), d)


# ---------------------------------------------------------------------------
# chains


@dataclass
class SaturationChain:
    base: FrequencySet
    levels: list[FrequencySet]
    kind: str = "linear"
    p: int | None = None

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    def level(self, j: int) -> FrequencySet:
        return self.levels[j]

    def is_monotone(self) -> bool:
        return all(a <= b for a, b in zip(self.levels, self.levels[1:]))


def _require_zero(I: FrequencySet):
    if not I.has_zero:
        raise ValidationError("the base set must contain the zero vector")


def chain_linear(I: FrequencySet, j_max: int, clip: int | None = None) -> SaturationChain:
    """Supports of ``H_j = span{eta, zeta*xi : eta, zeta in H_{j-1}, xi in H}``."""
    _require_zero(I)
    gens = I.symmetric()
    cur = set(gens)
    levels = [FrequencySet(cur, I.d)]
    for _ in range(j_max):
        cur = cur | _sumset(cur, gens)
        if clip is not None:
            cur = {k for k in cur if max(abs(v) for v in k) <= clip}
        levels.append(FrequencySet(cur, I.d))
    return SaturationChain(I, levels, "linear")


def chain_nonlinear(I: FrequencySet, j_max: int, p: int, clip: int | None = None) -> SaturationChain:
    """Supports of ``H'_j = span{zeta_1 ... zeta_q : zeta_l in H'_{j-1}}``, q = 2p + 1."""
    _require_zero(I)
    q = 2 * p + 1
    cur = set(I.symmetric())
    levels = [FrequencySet(cur, I.d)]
    for _ in range(j_max):
        prev = cur
        acc = set(prev)
        for _ in range(q - 1):
            acc = _sumset(acc, prev)
            if clip is not None:
                acc = {k for k in acc if max(abs(v) for v in k) <= clip}
        cur = acc
        levels.append(FrequencySet(cur, I.d))
    return SaturationChain(I, levels, "nonlinear", p)


# ---------------------------------------------------------------------------
# polarisation


def polarization_weights(q: int) -> list[tuple[tuple[int, ...], float]]:
    """Sign patterns and weights with ``prod_l z_l = sum_e w_e (sum_l e_l z_l)^q``.

    ``w_e = prod(e) / (q! 2^q)``; this is the finite-difference form of the
    mixed partial derivative of ``(sum x_l z_l)^q`` at the origin.
    """
    scale = 1.0 / (math.factorial(q) * 2**q)
    return [(eps, float(np.prod(eps)) * scale) for eps in itertools.product((1, -1), repeat=q)]


def polarize_product(zetas: Sequence[np.ndarray], p: int) -> list[tuple[tuple[int, ...], float]]:
    """Weights reconstructing the pointwise product of ``q = 2p + 1`` real fields."""
    q = 2 * p + 1
    if len(zetas) != q:
        raise ValidationError(f"need exactly {q} factors, got {len(zetas)}")
    for z in zetas:
        if np.iscomplexobj(z) and np.max(np.abs(np.imag(z))) > 1e-12 * max(1.0, np.max(np.abs(z))):
            raise ValidationError("polarisation factors must be real-valued")
    return polarization_weights(q)


def reconstruct_product(zetas: Sequence[np.ndarray], weights) -> np.ndarray:
    """Evaluate ``sum_e w_e (sum_l e_l zeta_l)^q`` pointwise."""
    q = len(zetas)
    out = np.zeros_like(np.asarray(zetas[0], dtype=float))
    for eps, w in weights:
        comb = sum(e * np.real(z) for e, z in zip(eps, zetas))
        out = out + w * comb**q
    return out


# ---------------------------------------------------------------------------
# saturation diagnostic


def _exponential_columns(grid: TorusGrid, freqs: Iterable[Sequence[int]], where: np.ndarray) -> np.ndarray:
    x = grid.points[:, where]  # (d, npts)
    cols = [np.exp(1j * np.tensordot(np.array(k, float), x, axes=1)) for k in freqs]
    return np.array(cols).T


def probe_dictionary(grid: TorusGrid, mask: LocalizationMask, n_modes: int = 2,
                     n_bumps: int = 4, rng_seed: int = 0) -> list[tuple[str, np.ndarray]]:
    """Single modes ``|k_i| <= n_modes`` and narrow bumps centred in the interior."""
    probes = []
    for k in itertools.product(range(-n_modes, n_modes + 1), repeat=grid.d):
        vals = np.exp(1j * np.tensordot(np.array(k, float), grid.points, axes=1))
        probes.append((f"mode{k}", vals))
    idx = np.argwhere(mask.interior)
    rng = np.random.default_rng(rng_seed)
    chosen = idx[rng.choice(len(idx), size=min(n_bumps, len(idx)), replace=False)]
    width = 2 * grid.spacing
    for c in chosen:
        centre = np.array([grid.points[(i,) + tuple(c)] for i in range(grid.d)])
        diff = np.angle(np.exp(1j * (grid.points - centre.reshape((-1,) + (1,) * grid.d))))
        vals = np.exp(-np.sum(diff**2, axis=0) / (2 * width**2)).astype(complex)
        probes.append((f"bump{tuple(int(v) for v in c)}", vals))
    return probes


@dataclass
class SaturationReport:
    base: list
    kind: str
    generator: bool
    level_counts: list[int]
    residuals: list[float]
    probe_residuals: list[dict] = field(default_factory=list)

    @property
    def decreasing(self) -> bool:
        r = self.residuals
        return all(b <= a + 1e-12 for a, b in zip(r, r[1:]))

    def to_dict(self) -> dict:
        return {
            "base": [list(k) for k in self.base],
            "kind": self.kind,
            "generator": self.generator,
            "level_counts": self.level_counts,
            "residuals": self.residuals,
            "decreasing": self.decreasing,
            "probe_residuals": self.probe_residuals,
        }


def saturation_diagnostic(I: FrequencySet, mask: LocalizationMask, j_max: int, kind: str = "nonlinear",
                          p: int = 1, probes=None) -> SaturationReport:
    """Least-squares density test of each chain level restricted to the interior.

    For every level the relative ``L^2(O)`` residual of each probe after
    projection onto the level's span (sampled on the interior points) is
    computed; the reported residual is the worst probe.
    """
    grid = mask.grid
    where = mask.interior
    if not where.any():
        raise EmptyInterior("mask interior is empty")
    clip = grid.kmax
    if kind == "linear":
        chain = chain_linear(I, j_max, clip=clip)
    elif kind == "nonlinear":
        chain = chain_nonlinear(I, j_max, p, clip=clip)
    else:
        raise ValidationError(f"unknown chain kind {kind!r}")
    if probes is None:
        probes = probe_dictionary(grid, mask)
    residuals, details = [], []
    for lvl in chain.levels:
        A = _exponential_columns(grid, sorted(lvl.symmetric()), where)
        worst = 0.0
        per = {}
        for name, vals in probes:
            b = vals[where]
            coef, *_ = np.linalg.lstsq(A, b, rcond=None)
            res = float(np.linalg.norm(A @ coef - b) / max(np.linalg.norm(b), 1e-300))
            per[name] = res
            worst = max(worst, res)
        residuals.append(worst)
        details.append(per)
    return SaturationReport(I.sorted(), kind, is_generator(I), [len(l) for l in chain.levels],
                            residuals, details)
