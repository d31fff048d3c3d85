"""Finite-difference stencil matrix generators and right-hand-side builders.

All generators discretize on a regular grid over the unit square/cube with
Dirichlet boundaries and lexicographic, x-fastest node numbering (so the
bandwidth is about nx). Convection terms use centered differences; the
recirculating field is ``(cx, cy) = c * (2y(1-x^2), -2x(1-y^2))`` evaluated
on the grid mapped to [-1, 1]^2. The anisotropic variant scales the
y-direction couplings of the 5-point stencil by a stretch ratio, which
drives the condition number up with the ratio.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import CsrMatrix, coo_to_csr

__all__ = [
    "StencilKind",
    "StencilSpec",
    "RhsKind",
    "RhsSpec",
    "generate",
    "stencil_counts",
    "make_rhs",
    "parse_stencil_spec",
    "parse_rhs_spec",
]


class StencilKind(Enum):
    LAPLACE2D = "laplace2d"
    LAPLACE3D = "laplace3d"
    CONVDIFF2D = "convdiff2d"
    STRETCHED2D = "stretched2d"
    BIHARMONIC2D = "biharmonic2d"
    STAR2D = "star2d"
    RECIRC2D = "recirc2d"


@dataclass(frozen=True)
class StencilSpec:
    """Generator description: stencil kind, grid points per dimension, knobs.

    ``convection`` is the field magnitude for the convection-diffusion
    kinds; ``stretch`` is the anisotropy ratio for the stretched grid.
    """

    kind: StencilKind
    nx: int
    convection: float = 1.0
    stretch: float = 1.0e4

    def __post_init__(self) -> None:
        if self.nx < 2:
            raise ValueError("nx must be at least 2")

    @property
    def name(self) -> str:
        return f"{self.kind.value}:{self.nx}"


class RhsKind(Enum):
    ONES = "ones"
    FROM_FILE = "file"
    RANDOM_UNIFORM01 = "uniform"
    RANDOM_NORMAL = "normal"


@dataclass(frozen=True)
class RhsSpec:
    """Right-hand-side description; deterministic for a fixed (kind, seed, n)."""

    kind: RhsKind
    seed: int = 0
    path: str | None = None

    def __post_init__(self) -> None:
        if self.kind is RhsKind.FROM_FILE and not self.path:
            raise ValueError("file right-hand side needs a path")


# stencil tables: offset (dx, dy[, dz]) -> coefficient (before convection)
_STENCILS_2D = {
    StencilKind.LAPLACE2D: {(0, 0): 4.0, (-1, 0): -1.0, (1, 0): -1.0,
                            (0, -1): -1.0, (0, 1): -1.0},
    StencilKind.STAR2D: {(0, 0): 8.0, (-1, 0): -1.0, (1, 0): -1.0,
                         (0, -1): -1.0, (0, 1): -1.0, (-1, -1): -1.0,
                         (1, -1): -1.0, (-1, 1): -1.0, (1, 1): -1.0},
    StencilKind.BIHARMONIC2D: {(0, 0): 20.0, (-1, 0): -8.0, (1, 0): -8.0,
                               (0, -1): -8.0, (0, 1): -8.0, (-1, -1): 2.0,
                               (1, -1): 2.0, (-1, 1): 2.0, (1, 1): 2.0,
                               (-2, 0): 1.0, (2, 0): 1.0, (0, -2): 1.0,
                               (0, 2): 1.0},
}


def _offsets(spec: StencilSpec) -> list[tuple[int, ...]]:
    if spec.kind is StencilKind.LAPLACE3D:
        return [(0, 0, 0), (-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0),
                (0, 0, -1), (0, 0, 1)]
    if spec.kind in _STENCILS_2D:
        return list(_STENCILS_2D[spec.kind])
    # convection-diffusion and stretched kinds share the 5-point pattern
    return list(_STENCILS_2D[StencilKind.LAPLACE2D])


def stencil_counts(spec: StencilSpec) -> tuple[int, int]:
    """Size and structural nonzero count, computed without materializing.

    Each offset contributes one entry per node whose shifted neighbor is
    still inside the grid, so nnz is the sum over offsets of
    prod(nx - |offset component|).
    """
    nx = spec.nx
    n = nx ** (3 if spec.kind is StencilKind.LAPLACE3D else 2)
    nnz = 0
    for off in _offsets(spec):
        count = 1
        for d in off:
            count *= nx - abs(d)
        nnz += count
    return n, nnz


def generate(spec: StencilSpec) -> CsrMatrix:
    """Materialize the stencil matrix in fp64 canonical CSR."""
    if spec.kind is StencilKind.LAPLACE3D:
        return _generate_3d(spec)
    return _generate_2d(spec)


def _convection_field(spec: StencilSpec, xh: np.ndarray, yh: np.ndarray):
    """Per-node convection components on the grid mapped to [-1, 1]^2."""
    c = spec.convection
    if spec.kind is StencilKind.CONVDIFF2D:
        return np.full_like(xh, c), np.zeros_like(yh)
    if spec.kind is StencilKind.RECIRC2D:
        return c * 2.0 * yh * (1.0 - xh ** 2), -c * 2.0 * xh * (1.0 - yh ** 2)
    return np.zeros_like(xh), np.zeros_like(yh)


def _generate_2d(spec: StencilSpec) -> CsrMatrix:
    nx = spec.nx
    n = nx * nx
    ix = np.tile(np.arange(nx), nx)
    iy = np.repeat(np.arange(nx), nx)
    idx = iy * nx + ix

    h = 1.0 / (nx + 1)
    xh = 2.0 * (ix + 1) * h - 1.0
    yh = 2.0 * (iy + 1) * h - 1.0
    cx, cy = _convection_field(spec, xh, yh)
    # centered first differences, scaled like the h^2-scaled Laplacian
    dx_term = cx * (h / 2.0)
    dy_term = cy * (h / 2.0)

    if spec.kind is StencilKind.STRETCHED2D:
        s = spec.stretch
        base = {(0, 0): np.full(n, 2.0 + 2.0 * s), (-1, 0): np.full(n, -1.0),
                (1, 0): np.full(n, -1.0), (0, -1): np.full(n, -s),
                (0, 1): np.full(n, -s)}
    elif spec.kind in (StencilKind.CONVDIFF2D, StencilKind.RECIRC2D):
        base = {(0, 0): np.full(n, 4.0),
                (-1, 0): -1.0 - dx_term, (1, 0): -1.0 + dx_term,
                (0, -1): -1.0 - dy_term, (0, 1): -1.0 + dy_term}
    else:
        table = _STENCILS_2D[spec.kind]
        base = {off: np.full(n, val) for off, val in table.items()}

    rows, cols, vals = [], [], []
    for (dx, dy), coeff in base.items():
        keep = ((ix + dx >= 0) & (ix + dx < nx) & (iy + dy >= 0) & (iy + dy < nx))
        rows.append(idx[keep])
        cols.append(idx[keep] + dy * nx + dx)
        vals.append(np.broadcast_to(coeff, (n,))[keep].astype(np.float64))
    return coo_to_csr(n, n, np.concatenate(rows), np.concatenate(cols),
                      np.concatenate(vals))


def _generate_3d(spec: StencilSpec) -> CsrMatrix:
    nx = spec.nx
    n = nx ** 3
    ix = np.tile(np.arange(nx), nx * nx)
    iy = np.tile(np.repeat(np.arange(nx), nx), nx)
    iz = np.repeat(np.arange(nx), nx * nx)
    idx = (iz * nx + iy) * nx + ix
    entries = [((0, 0, 0), 6.0), ((-1, 0, 0), -1.0), ((1, 0, 0), -1.0),
               ((0, -1, 0), -1.0), ((0, 1, 0), -1.0), ((0, 0, -1), -1.0),
               ((0, 0, 1), -1.0)]
    rows, cols, vals = [], [], []
    for (dx, dy, dz), coeff in entries:
        keep = ((ix + dx >= 0) & (ix + dx < nx) & (iy + dy >= 0) & (iy + dy < nx)
                & (iz + dz >= 0) & (iz + dz < nx))
        rows.append(idx[keep])
        cols.append(idx[keep] + (dz * nx + dy) * nx + dx)
        vals.append(np.full(int(keep.sum()), coeff))
    return coo_to_csr(n, n, np.concatenate(rows), np.concatenate(cols),
                      np.concatenate(vals))


def make_rhs(spec: RhsSpec, n: int) -> np.ndarray:
    """Build an fp64 right-hand side of length n."""
    if spec.kind is RhsKind.ONES:
        return np.ones(n, dtype=np.float64)
    if spec.kind is RhsKind.RANDOM_UNIFORM01:
        return np.random.default_rng(spec.seed).random(n)
    if spec.kind is RhsKind.RANDOM_NORMAL:
        return np.random.default_rng(spec.seed).standard_normal(n)
    from .io import load_rhs
    vec = load_rhs(spec.path)
    if vec.shape != (n,):
        raise ValueError(f"right-hand side length {vec.shape[0]} does not match n={n}")
    return vec


def parse_stencil_spec(text: str) -> StencilSpec:
    """Parse 'kind:nx[:key=value,...]', e.g. 'laplace2d:50' or
    'recirc2d:1500:convection=2'."""
    parts = text.strip().split(":")
    if len(parts) < 2:
        raise ValueError(f"generator spec {text!r} must look like kind:nx")
    try:
        kind = StencilKind(parts[0].lower())
    except ValueError:
        names = ", ".join(k.value for k in StencilKind)
        raise ValueError(f"unknown generator kind {parts[0]!r}; expected one of {names}")
    nx = int(parts[1])
    kwargs = {}
    if len(parts) > 2 and parts[2]:
        for item in parts[2].split(","):
            key, _, value = item.partition("=")
            if key not in ("convection", "stretch"):
                raise ValueError(f"unknown generator parameter {key!r}")
            kwargs[key] = float(value)
    return StencilSpec(kind, nx, **kwargs)


def parse_rhs_spec(text: str, seed: int = 0) -> RhsSpec:
    """Parse 'ones', 'uniform', 'normal', or 'file:PATH'."""
    text = text.strip()
    if text.startswith("file:"):
        return RhsSpec(RhsKind.FROM_FILE, seed, text[5:])
    try:
        return RhsSpec(RhsKind(text.lower()), seed)
    except ValueError:
        raise ValueError(f"unknown right-hand-side kind {text!r}; "
                         "expected ones|uniform|normal|file:PATH")
