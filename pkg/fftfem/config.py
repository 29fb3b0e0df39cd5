"""Validated configuration models.

User-facing inputs (meshes, problems and command-line runs) are described by
pydantic models so that invalid values are rejected before any computation
starts.
"""

import json
import math
import os
import pathlib
from typing import Any, Dict, List, Literal, Optional, Tuple

import pydantic

MAX_ORDER = 16
MAX_DIMS = 3

Algorithm = Literal["a", "b"]
Command = Literal["solve", "convergence", "bench", "selftest", "spectrum"]
Preset = Literal["skew", "sines"]


class Mesh1D(pydantic.BaseModel):
    """Uniform mesh of ``elements`` order-``order`` elements on ``[0, length]``."""

    model_config = pydantic.ConfigDict(frozen=True)

    length: float = pydantic.Field(default=1.0, gt=0)
    """Interval length ``X``."""

    elements: int = pydantic.Field(ge=2)
    """Number of elements ``K``."""

    order: int = pydantic.Field(ge=1, le=MAX_ORDER)
    """Polynomial order ``n`` of the Lagrange elements."""

    @property
    def step(self) -> float:
        return self.length / self.elements

    @property
    def dof_count(self) -> int:
        """Number of unknowns ``nK - 1`` along this axis."""
        return self.order * self.elements - 1


def alpha_lower_bound(lengths: List[float]) -> float:
    """Returns ``-pi^2 * sum(X_i^-2)``; the reaction constant must exceed it."""
    return -(math.pi**2) * math.fsum(x**-2 for x in lengths)


class ProblemSpec(pydantic.BaseModel):
    """The discrete boundary-value problem ``-Δu + αu = f`` with ``u|∂Ω = 0``."""

    model_config = pydantic.ConfigDict(frozen=True)

    meshes: Tuple[Mesh1D, ...]
    """One mesh per axis; the number of meshes is the dimension ``N``."""

    alpha: float = 0.0
    """Reaction constant."""

    algorithm: Algorithm = "a"
    """``"a"``: diagonalize every axis. ``"b"``: diagonalize axes 2..N and use
    banded solves along axis 1."""

    @pydantic.field_validator("meshes")
    @classmethod
    def validate_meshes(cls, val):
        if not 1 <= len(val) <= MAX_DIMS:
            raise ValueError(
                f"Between 1 and {MAX_DIMS} axes are supported, got {len(val)}"
            )
        return val

    @pydantic.model_validator(mode="after")
    def validate_alpha(self):
        bound = alpha_lower_bound([m.length for m in self.meshes])
        if not self.alpha > bound:
            raise ValueError(
                f"alpha={self.alpha!r} must exceed {bound!r} "
                "for the operator to be positive definite"
            )
        return self

    @property
    def dims(self) -> int:
        return len(self.meshes)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(m.dof_count for m in self.meshes)

    @property
    def dof_count(self) -> int:
        return math.prod(self.shape)


def _is_power_of_two(k: int) -> bool:
    return k >= 2 and (k & (k - 1)) == 0


class RunConfig(pydantic.BaseModel):
    """Everything the ``fftfem`` command line accepts.

    For ``solve`` the ``elements``, ``orders`` and ``lengths`` lists are per
    axis (a single value is broadcast to every axis).  For ``convergence`` and
    ``bench`` the ``elements`` and ``orders`` lists are sweeps applied to all
    axes alike.
    """

    model_config = pydantic.ConfigDict(extra="forbid")

    cmd: Command = "solve"
    """Subcommand to run."""

    dims: int = pydantic.Field(default=2, ge=1, le=MAX_DIMS)
    """Spatial dimension ``N``."""

    elements: List[int] = [8]
    """Element counts ``K``."""

    orders: List[int] = [2]
    """Element orders ``n``."""

    lengths: List[float] = [1.0]
    """Box side lengths ``X_i``."""

    alpha: float = 1.0
    """Reaction constant."""

    algorithm: Algorithm = "a"
    """Solution algorithm for ``solve`` and ``convergence``; ``bench`` times
    both."""

    threads: Optional[int] = pydantic.Field(default=None, ge=1)
    """Worker threads for FFTs and pencil sweeps; defaults to the CPU count."""

    out: Optional[str] = None
    """Output path.  A ``.json`` suffix selects JSON records, anything else
    CSV.  Without a path the CSV is written to standard output."""

    cache_dir: Optional[str] = None
    """Directory of the spectral-basis cache.  ``"none"`` disables caching."""

    preset: Preset = "skew"
    """Manufactured solution used by ``solve`` and ``convergence``."""

    repeat: int = pydantic.Field(default=3, ge=1)
    """Number of timed repetitions per ``bench`` cell (the median is kept)."""

    verbosity: int = 0
    """Logging verbosity: negative is quieter, positive is more verbose."""

    @pydantic.field_validator("elements")
    @classmethod
    def validate_elements(cls, val):
        if not val:
            raise ValueError("At least one element count is required")
        for k in val:
            if k < 2:
                raise ValueError(f"Element count must be at least 2, got {k}")
        return val

    @pydantic.field_validator("orders")
    @classmethod
    def validate_orders(cls, val):
        if not val:
            raise ValueError("At least one order is required")
        for n in val:
            if not 1 <= n <= MAX_ORDER:
                raise ValueError(f"Order must lie in [1, {MAX_ORDER}], got {n}")
        return val

    @pydantic.field_validator("lengths")
    @classmethod
    def validate_lengths(cls, val):
        if not val or any(not x > 0 for x in val):
            raise ValueError(f"Box lengths must be positive, got {val!r}")
        return val

    @pydantic.model_validator(mode="after")
    def validate_run(self):
        if self.cmd == "solve":
            for name in ("elements", "orders", "lengths"):
                values = getattr(self, name)
                if len(values) not in (1, self.dims):
                    raise ValueError(
                        f"{name} needs 1 or {self.dims} values, got {values!r}"
                    )
        elif len(self.lengths) not in (1, self.dims):
            raise ValueError(
                f"lengths needs 1 or {self.dims} values, got {self.lengths!r}"
            )
        if self.cmd in ("convergence", "bench"):
            bad = [k for k in self.elements if not _is_power_of_two(k)]
            if bad:
                raise ValueError(f"Sweep element counts must be powers of two: {bad}")
        if self.cmd in ("solve", "convergence"):
            if self.preset == "skew" and (
                self.dims != 2 or any(x != 1.0 for x in self.axis_lengths)
            ):
                raise ValueError(
                    'The "skew" preset is defined on the unit square only'
                )
        bound = alpha_lower_bound(self.axis_lengths)
        if not self.alpha > bound:
            raise ValueError(f"alpha={self.alpha!r} must exceed {bound!r}")
        return self

    @property
    def axis_lengths(self) -> List[float]:
        return _broadcast(self.lengths, self.dims)

    @property
    def thread_count(self) -> int:
        return self.threads or os.cpu_count() or 1

    def problem(
        self,
        elements: Optional[int] = None,
        order: Optional[int] = None,
        algorithm: Optional[Algorithm] = None,
    ) -> ProblemSpec:
        """Builds the problem of one run.

        Without arguments the per-axis ``elements``/``orders`` lists are used;
        sweeps pass a single ``elements``/``order`` applied to every axis.
        """
        if elements is None:
            ks = _broadcast(self.elements, self.dims)
        else:
            ks = [elements] * self.dims
        if order is None:
            ns = _broadcast(self.orders, self.dims)
        else:
            ns = [order] * self.dims
        meshes = tuple(
            Mesh1D(length=x, elements=k, order=n)
            for x, k, n in zip(self.axis_lengths, ks, ns)
        )
        return ProblemSpec(
            meshes=meshes, alpha=self.alpha, algorithm=algorithm or self.algorithm
        )


def _broadcast(values: List[Any], dims: int) -> List[Any]:
    if len(values) == 1:
        return list(values) * dims
    return list(values)


def load_config_file(path: str) -> Dict[str, Any]:
    """Reads a JSON config file into a dict of `RunConfig` fields."""
    content = json.loads(pathlib.Path(path).read_text(encoding="utf-8"))
    if not isinstance(content, dict):
        raise ValueError(f"Config file {path!r} must contain a JSON object")
    return content
