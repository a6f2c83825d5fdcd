"""Experiment configuration: YAML documents validated by a strict schema.

Every block is optional and defaults are filled in; unknown keys are errors.
Violations are reported one per line, anchored to the YAML line of the
offending key when the document came from text.

Fields are given as lists of terms, e.g.::

    u0:
      - {kind: const, amp: 0.5}
      - {kind: cos, k: [1], amp: 0.5}

with ``kind`` one of ``const``, ``cos``, ``sin``, ``exp`` and ``amp`` real or
``[re, im]``.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticError, field_validator, model_validator

from .errors import ConfigInvalid


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


Amp = Union[float, tuple[float, float]]


class Term(_Strict):
    kind: Literal["const", "cos", "sin", "exp"] = "cos"
    k: list[int] = Field(default_factory=list)
    amp: Amp = 1.0

    @property
    def complex_amp(self) -> complex:
        a = self.amp
        return complex(a[0], a[1]) if isinstance(a, tuple) else complex(a)


FieldSpec = list[Term]


class GridConfig(_Strict):
    d: Literal[1, 2, 3] = 1
    n: int = 64

    @field_validator("n")
    @classmethod
    def _pow2(cls, v):
        if v < 8 or v & (v - 1):
            raise ValueError("n must be a power of two >= 8")
        return v


class ParamsConfig(_Strict):
    nu: float = Field(0.1, gt=0, description="viscosity")
    gamma: float = 0.1
    c: float = Field(1.0, gt=0)
    p: int = Field(1, ge=1)
    s: int = 1

    @field_validator("gamma")
    @classmethod
    def _gamma(cls, v):
        if not v >= 0:
            raise ValueError("gamma must be >= 0")
        return v


class MaskConfig(_Strict):
    kind: Literal["plateau", "constant"] = "plateau"
    plateau: list[tuple[float, float]] = Field(default_factory=lambda: [(math.pi / 2, 3 * math.pi / 2)])
    width: float = Field(0.3, gt=0)
    M: float = Field(1.0, gt=0)


class NoiseConfig(_Strict):
    modes: Optional[list[list[int]]] = None
    amps_cos: Union[float, list[float]] = 1.0
    amps_sin: Union[float, list[float]] = 1.0
    decay: float = 2.0
    law: Literal["triangular", "point"] = "triangular"
    radius: float = Field(1.0, gt=0)
    j_max: int = Field(3, ge=0)
    m_max: Optional[int] = Field(None, ge=1)

    @field_validator("decay")
    @classmethod
    def _decay(cls, v):
        if not v > 1:
            raise ValueError("decay must be > 1")
        return v

    @field_validator("amps_cos", "amps_sin")
    @classmethod
    def _amps(cls, v):
        vals = v if isinstance(v, list) else [v]
        if any(not a > 0 for a in vals):
            raise ValueError("amplitudes must be > 0")
        return v


class SolverConfig(_Strict):
    dt_max: float = Field(1e-2, gt=0)
    forcing_cfl: float = Field(0.1, gt=0)
    nonlinear_cfl: float = Field(0.1, gt=0)
    min_substeps: int = Field(1, ge=1)


class SaturateConfig(_Strict):
    I: Optional[list[list[int]]] = None
    j_max: int = Field(4, ge=0)
    kind: Literal["linear", "nonlinear"] = "nonlinear"
    diagnostic: bool = True
    diagnostic_levels: int = Field(2, ge=0)


class SolveConfig(_Strict):
    u0: FieldSpec = Field(default_factory=list)
    control: FieldSpec = Field(default_factory=list)
    h: FieldSpec = Field(default_factory=list)
    T: float = Field(1.0, gt=0)
    samples: int = Field(20, ge=1)
    solver: SolverConfig = Field(default_factory=SolverConfig)


class ProbeLimitConfig(_Strict):
    u0: FieldSpec = Field(default_factory=list)
    eta: FieldSpec = Field(default_factory=lambda: [Term(kind="cos", k=[1], amp=1.0)])
    zeta: FieldSpec = Field(default_factory=list)
    deltas: list[float] = Field(default_factory=lambda: [1e-1, 1e-2, 1e-3])
    normalize: bool = True

    @field_validator("deltas")
    @classmethod
    def _deltas(cls, v):
        if not v or any(not d > 0 for d in v):
            raise ValueError("deltas must be positive")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("deltas must be decreasing")
        return v


class SteerConfig(_Strict):
    mode: Literal["indicator", "full"] = "indicator"
    I: Optional[list[list[int]]] = None
    u0: FieldSpec = Field(default_factory=list)
    u1: FieldSpec = Field(default_factory=lambda: [Term(kind="const", amp=0.1), Term(kind="cos", k=[2], amp=0.1)])
    h: FieldSpec = Field(default_factory=list)
    eps: Optional[float] = Field(None, gt=0)
    eps_relative: float = Field(0.05, gt=0)
    T: float = Field(1.0, gt=0)
    N_max: int = Field(2, ge=0)
    hold_chunk: float = Field(0.05, gt=0)


class GramianConfig(_Strict):
    u0: FieldSpec = Field(default_factory=lambda: [Term(kind="const", amp=1.5), Term(kind="cos", k=[1], amp=1.5),
                                                   Term(kind="sin", k=[1], amp=0.75)])
    h: FieldSpec = Field(default_factory=list)
    H: Optional[list[list[int]]] = None
    T: float = Field(1.0, gt=0)
    nsteps: int = Field(1024, ge=1)
    n_time_slots: int = Field(32, ge=1)
    probe_kmax: int = Field(8, ge=0)
    localized: bool = False

    @model_validator(mode="after")
    def _slots(self):
        if self.nsteps % self.n_time_slots:
            raise ValueError("nsteps must be a multiple of n_time_slots")
        return self


class MixConfig(_Strict):
    u0_a: FieldSpec = Field(default_factory=list)
    u0_b: FieldSpec = Field(default_factory=lambda: [Term(kind="const", amp=0.5), Term(kind="cos", k=[1], amp=0.5)])
    members: int = Field(256, ge=2)
    steps: int = Field(30, ge=1)
    stream: Literal["coupled", "independent"] = "coupled"
    localized: bool = True
    burn_in: int = Field(0, ge=0)
    floor: Optional[float] = Field(None, ge=0)


class ExperimentConfig(_Strict):
    seed: int = 0
    output: str = "out"
    grid: GridConfig = Field(default_factory=GridConfig)
    params: ParamsConfig = Field(default_factory=ParamsConfig)
    mask: MaskConfig = Field(default_factory=MaskConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    saturate: SaturateConfig = Field(default_factory=SaturateConfig)
    solve: SolveConfig = Field(default_factory=SolveConfig)
    probe_limit: ProbeLimitConfig = Field(default_factory=ProbeLimitConfig, alias="probe-limit")
    steer: SteerConfig = Field(default_factory=SteerConfig)
    gramian: GramianConfig = Field(default_factory=GramianConfig)
    mix: MixConfig = Field(default_factory=MixConfig)

    @model_validator(mode="after")
    def _cross(self):
        if not self.params.s > self.grid.d / 2:
            raise ValueError("params.s must be > d/2")
        return self

    def normalized(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


# ---------------------------------------------------------------------------
# loading


def _node_line(node, loc) -> Optional[int]:
    """1-based line of the YAML node addressed by a pydantic location tuple."""
    line = None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == key or (isinstance(key, str) and k.value == key.replace("_", "-")):
                    line = k.start_mark.line + 1
                    nxt = v
                    break
            if nxt is None:
                return line if line is not None else node.start_mark.line + 1
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            break
    return line


def _messages(err: PydanticError, root=None) -> list[str]:
    out = []
    for e in err.errors():
        loc = tuple(x for x in e["loc"] if not (isinstance(x, str) and x.startswith("function-after")))
        path = ".".join(str(x) for x in loc) or "<root>"
        msg = e["msg"]
        if msg.startswith("Value error, "):
            msg = msg[len("Value error, "):]
        line = _node_line(root, loc) if root is not None else None
        out.append(f"{path}: {msg}" + (f" (line {line})" if line else ""))
    return out


def validate(doc: Any, root=None) -> ExperimentConfig:
    """Validate a parsed document; raises :class:`ConfigInvalid` listing every violation."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigInvalid("the configuration must be a mapping")
    try:
        return ExperimentConfig.model_validate(doc)
    except PydanticError as exc:
        raise ConfigInvalid(_messages(exc, root)) from None


def loads(text: str) -> ExperimentConfig:
    try:
        root = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"YAML syntax error: {exc}") from None
    return validate(doc, root)


def load(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid(f"cannot read {p}: {exc}") from None
    return loads(text)


# ---------------------------------------------------------------------------
# builders


def build_field(grid, terms: FieldSpec):
    from .spectral import SpectralField

    c = np.zeros(grid.shape, dtype=complex)
    for t in terms:
        a = t.complex_amp
        if t.kind == "const":
            c = c + SpectralField.constant(grid, a).coeffs
            continue
        k = tuple(t.k)
        if len(k) != grid.d:
            raise ConfigInvalid(f"frequency {list(k)} has wrong dimension for d={grid.d}")
        ctor = {"cos": SpectralField.cos_mode, "sin": SpectralField.sin_mode,
                "exp": SpectralField.exponential}[t.kind]
        c = c + ctor(grid, k, a).coeffs
    return SpectralField(grid, c)
