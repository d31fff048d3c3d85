"""Matrix Market ingestion, RHS loading, CSV emission, and run configuration.

Matrix files are coordinate-format Matrix Market, real, general or
symmetric; symmetric storage is expanded to the full pattern and duplicate
coordinates are summed. Values always parse in fp64: lower-precision copies
are made later through the explicit conversion, so there is a single source
of truth for every matrix.

The run-configuration grammar is one ``key = value`` pair per line, with
``#`` comments. Recognized keys: matrix, gen, solver, m, rtol, max_iters,
precond, precond_fp32, rcm, rhs, switch_iter, seed, out, allow_fp32_tol.
``solver`` is one
of double|single|ir|fd; ``precond`` is none, ``jacobi:K``, or ``poly:D``;
``rhs`` is ones|uniform|normal|file:PATH; ``gen`` uses the generator
grammar (kind:nx[:key=value,...]).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import CsrMatrix, coo_to_csr, validate_csr
from .gen import RhsKind, RhsSpec, StencilSpec, parse_rhs_spec, parse_stencil_spec
from .solvers import HistoryEntry, SolveReport

__all__ = [
    "MatrixMarketError",
    "ConfigError",
    "SolverKind",
    "PrecondSpec",
    "RunConfig",
    "load_matrix_market",
    "write_matrix_market",
    "load_rhs",
    "write_convergence_csv",
    "read_convergence_csv",
    "write_summary_csv",
    "parse_run_config",
    "format_run_config",
    "load_run_config",
]

# an fp32 solve cannot meaningfully target tolerances below this floor
FP32_RTOL_FLOOR = 1e-6


class MatrixMarketError(ValueError):
    """Malformed or unsupported Matrix Market content."""


class ConfigError(ValueError):
    """Invalid run configuration."""


def load_matrix_market(path) -> CsrMatrix:
    """Read a coordinate real general/symmetric Matrix Market file as fp64 CSR.

    Indices are converted from 1-based to 0-based, symmetric storage is
    mirrored, duplicates are summed, and rows are sorted into canonical
    form. Pattern, complex, and array headers are rejected.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        tokens = header.lower().split()
        if len(tokens) < 4 or tokens[0] != "%%matrixmarket" or tokens[1] != "matrix":
            raise MatrixMarketError(f"{path}: not a Matrix Market matrix file")
        layout, kind = tokens[2], tokens[3]
        symmetry = tokens[4] if len(tokens) > 4 else "general"
        if layout != "coordinate" or kind not in ("real", "integer"):
            raise MatrixMarketError(
                f"{path}: unsupported format '{layout} {kind}' "
                "(only coordinate real/integer is supported)")
        if symmetry not in ("general", "symmetric"):
            raise MatrixMarketError(
                f"{path}: unsupported symmetry '{symmetry}' "
                "(only general or symmetric)")
        n_rows = n_cols = nnz_decl = -1
        rows: list[int] = []
        cols: list[int] = []
        vals: list[float] = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("%"):
                continue
            parts = line.split()
            if n_rows < 0:
                try:
                    n_rows, n_cols, nnz_decl = int(parts[0]), int(parts[1]), int(parts[2])
                except (ValueError, IndexError):
                    raise MatrixMarketError(f"{path}:{lineno}: malformed size line")
                continue
            try:
                r, c = int(parts[0]), int(parts[1])
                v = float(parts[2])
            except (ValueError, IndexError):
                raise MatrixMarketError(f"{path}:{lineno}: malformed entry")
            if not (1 <= r <= n_rows and 1 <= c <= n_cols):
                raise MatrixMarketError(
                    f"{path}:{lineno}: index ({r}, {c}) out of range "
                    f"for a {n_rows}x{n_cols} matrix")
            rows.append(r - 1)
            cols.append(c - 1)
            vals.append(v)
    if n_rows < 0:
        raise MatrixMarketError(f"{path}: missing size line")
    if len(vals) != nnz_decl:
        raise MatrixMarketError(
            f"{path}: header declares {nnz_decl} entries, found {len(vals)}")
    r = np.asarray(rows, dtype=np.int64)
    c = np.asarray(cols, dtype=np.int64)
    v = np.asarray(vals, dtype=np.float64)
    if symmetry == "symmetric":
        off = r != c
        r, c, v = (np.concatenate([r, c[off]]), np.concatenate([c, r[off]]),
                   np.concatenate([v, v[off]]))
    A = coo_to_csr(n_rows, n_cols, r, c, v, sum_duplicates=True)
    return validate_csr(A)


def write_matrix_market(A: CsrMatrix, path) -> None:
    """Write coordinate real general Matrix Market, 1-based, fp64 round-trip safe."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{A.n_rows} {A.n_cols} {A.nnz}\n")
        rows = np.repeat(np.arange(A.n_rows), np.diff(A.row_ptr))
        for r, c, v in zip(rows, A.col_idx, A.values):
            fh.write(f"{r + 1} {c + 1} {float(v):.17g}\n")


def load_rhs(path) -> np.ndarray:
    """Load a dense fp64 vector: Matrix Market array format or plain text."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if first.lower().startswith("%%matrixmarket"):
            tokens = first.lower().split()
            if tokens[2] != "array" or tokens[3] not in ("real", "integer"):
                raise MatrixMarketError(f"{path}: expected an array real vector")
            data = []
            size_seen = False
            for line in fh:
                line = line.strip()
                if not line or line.startswith("%"):
                    continue
                if not size_seen:
                    size_seen = True  # "n 1" size line
                    continue
                data.append(float(line.split()[0]))
            return np.asarray(data, dtype=np.float64)
        data = []
        for line in [first] + fh.readlines():
            line = line.strip()
            if line and not line.startswith(("%", "#")):
                data.extend(float(t) for t in line.split())
        return np.asarray(data, dtype=np.float64)


# ---------------------------------------------------------------------------
# result CSVs


def write_convergence_csv(report: SolveReport, path) -> None:
    """Per-iteration residual history; explicit entries blank off-boundary."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "implicit_relres", "explicit_relres", "phase"])
        for entry in report.residual_history:
            writer.writerow([
                entry.iteration,
                repr(entry.implicit),
                "" if entry.explicit is None else repr(entry.explicit),
                entry.phase,
            ])


def read_convergence_csv(path) -> list[HistoryEntry]:
    entries = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            entries.append(HistoryEntry(
                int(row[0]), float(row[1]),
                None if row[2] == "" else float(row[2]), row[3]))
    return entries


SUMMARY_FIELDS = ["name", "n", "nnz", "solver", "precond", "time_s", "iters",
                  "converged", "loss_of_accuracy"]


def write_summary_csv(rows: list[dict], path) -> None:
    """Solver-comparison summary, one solve per row."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in SUMMARY_FIELDS})


# ---------------------------------------------------------------------------
# run configuration


class SolverKind(Enum):
    DOUBLE = "double"
    SINGLE = "single"
    IR = "ir"
    FD = "fd"


@dataclass(frozen=True)
class PrecondSpec:
    """``none``, ``jacobi:K`` (block size), or ``poly:D`` (degree)."""

    kind: str = "none"
    param: int = 0

    def __str__(self) -> str:
        return self.kind if self.kind == "none" else f"{self.kind}:{self.param}"

    @classmethod
    def parse(cls, text: str) -> "PrecondSpec":
        text = text.strip().lower()
        if text in ("", "none"):
            return cls()
        name, _, param = text.partition(":")
        if name not in ("jacobi", "poly") or not param:
            raise ConfigError(f"bad preconditioner {text!r}; "
                              "expected none, jacobi:K, or poly:D")
        value = int(param)
        if name == "jacobi" and value < 1:
            raise ConfigError("block size must be positive")
        if name == "poly" and value < 0:
            raise ConfigError("polynomial degree must be nonnegative")
        return cls(name, value)


@dataclass
class RunConfig:
    """Full description of one experiment."""

    solver: SolverKind
    matrix: str | None = None
    gen: StencilSpec | None = None
    m: int = 50
    rtol: float = 1e-10
    max_iters: int = 100_000
    precond: PrecondSpec = field(default_factory=PrecondSpec)
    precond_fp32: bool = False
    rcm: bool = False
    rhs: RhsSpec = field(default_factory=lambda: RhsSpec(RhsKind.ONES))
    switch_iter: int = 0
    seed: int = 0
    out: str | None = None
    allow_fp32_tol: bool = False

    def validate(self) -> "RunConfig":
        if (self.matrix is None) == (self.gen is None):
            raise ConfigError("exactly one of matrix= or gen= is required")
        if self.m < 1:
            raise ConfigError("m must be positive")
        if not 0.0 < self.rtol < 1.0:
            raise ConfigError("rtol must be in (0, 1)")
        if self.solver is SolverKind.FD and self.switch_iter % self.m != 0:
            raise ConfigError(
                f"switch_iter={self.switch_iter} is not a multiple of m={self.m}")
        if (self.solver is SolverKind.SINGLE and self.rtol < FP32_RTOL_FLOOR
                and not self.allow_fp32_tol):
            raise ConfigError(
                f"an fp32 solve cannot target rtol={self.rtol:g} "
                f"(floor ~{FP32_RTOL_FLOOR:g}); set allow_fp32_tol=true to override")
        return self


_CONFIG_KEYS = ("matrix", "gen", "solver", "m", "rtol", "max_iters", "precond",
                "precond_fp32", "rcm", "rhs", "switch_iter", "seed", "out",
                "allow_fp32_tol")

_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False,
         "no": False}


def parse_run_config(text: str) -> RunConfig:
    """Parse the key=value grammar into a validated :class:`RunConfig`."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip().lower(), value.strip()
        if not eq:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    if not values.get("solver"):
        raise ConfigError("solver required")
    try:
        solver = SolverKind(values["solver"].lower())
    except ValueError:
        raise ConfigError(f"unknown solver {values['solver']!r}; "
                          "expected double|single|ir|fd")
    seed = int(values.get("seed", "0"))
    cfg = RunConfig(
        solver=solver,
        matrix=values.get("matrix") or None,
        gen=parse_stencil_spec(values["gen"]) if values.get("gen") else None,
        m=int(values.get("m", "50")),
        rtol=float(values.get("rtol", "1e-10")),
        max_iters=int(values.get("max_iters", "100000")),
        precond=PrecondSpec.parse(values.get("precond", "none")),
        precond_fp32=_parse_bool(values.get("precond_fp32", "false")),
        rcm=_parse_bool(values.get("rcm", "false")),
        rhs=parse_rhs_spec(values.get("rhs", "ones"), seed),
        switch_iter=int(values.get("switch_iter", "0")),
        seed=seed,
        out=values.get("out") or None,
        allow_fp32_tol=_parse_bool(values.get("allow_fp32_tol", "false")),
    )
    return cfg.validate()


def _parse_bool(text: str) -> bool:
    try:
        return _BOOL[text.strip().lower()]
    except KeyError:
        raise ConfigError(f"expected a boolean, got {text!r}")


def format_run_config(cfg: RunConfig) -> str:
    """Serialize a config so that parse(format(cfg)) round-trips."""
    lines = [f"solver = {cfg.solver.value}"]
    if cfg.matrix:
        lines.append(f"matrix = {cfg.matrix}")
    if cfg.gen:
        extra = ""
        if cfg.gen.kind.value in ("convdiff2d", "recirc2d"):
            extra = f":convection={cfg.gen.convection!r}"
        elif cfg.gen.kind.value == "stretched2d":
            extra = f":stretch={cfg.gen.stretch!r}"
        lines.append(f"gen = {cfg.gen.kind.value}:{cfg.gen.nx}{extra}")
    lines.append(f"m = {cfg.m}")
    lines.append(f"rtol = {cfg.rtol!r}")
    lines.append(f"max_iters = {cfg.max_iters}")
    lines.append(f"precond = {cfg.precond}")
    lines.append(f"precond_fp32 = {str(cfg.precond_fp32).lower()}")
    lines.append(f"rcm = {str(cfg.rcm).lower()}")
    if cfg.rhs.kind is RhsKind.FROM_FILE:
        lines.append(f"rhs = file:{cfg.rhs.path}")
    else:
        lines.append(f"rhs = {cfg.rhs.kind.value}")
    lines.append(f"switch_iter = {cfg.switch_iter}")
    lines.append(f"seed = {cfg.seed}")
    if cfg.out:
        lines.append(f"out = {cfg.out}")
    if cfg.allow_fp32_tol:
        lines.append("allow_fp32_tol = true")
    return "\n".join(lines) + "\n"


def load_run_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_run_config(fh.read())
