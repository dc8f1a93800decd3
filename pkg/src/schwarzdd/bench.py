"""Configuration-driven benchmark harness and CLI.

Configs are flat key-value text files with dotted section keys
(`krylov.restart = 30`); every key can be overridden on the command line as
`--key value`. A run assembles the requested problem, builds the two-phase
Schwarz preconditioner, solves a manufactured system b = A x* with GMRES,
and reports sizes, timings, iteration counts, and the true relative error
against x*. Sweeps vary one axis at a time and share problem assembly when
the operator is unchanged. Reports are written as CSV (fixed column order)
or JSON; both round-trip through the reader utilities, the CSV
byte-identically.

The device count is a reporting label that groups subdomains for the
subdomains-per-device axis. It never changes the numerics.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .decomposition import box_partition, decompose
from .krylov import KrylovConfig, gmres
from .local_solvers import SolverSpec
from .model_problems import Grid3D, assemble_elasticity3d, assemble_laplace3d
from .schwarz import SchwarzConfig, setup_numeric, setup_symbolic

PROBLEM_KINDS = ("laplace3d", "elasticity3d")
COARSE_MODES = ("none", "gdsw", "rgdsw")
SWEEP_AXES = ("subdomains", "ilu_level", "overlap", "precision",
              "local_solver", "devices")

CSV_COLUMNS = ("problem", "n", "px", "py", "pz", "overlap", "coarse",
               "local_solver", "ordering", "precision", "n_coarse",
               "iterations", "converged", "t_symbolic", "t_numeric",
               "t_solve", "true_error", "error_msg")

_DEFAULT_KEYS = {
    "problem.kind": "laplace3d",
    "problem.nx": "9",
    "problem.ny": "9",
    "problem.nz": "9",
    "problem.boundary": "dirichlet",
    "problem.e": "1.0",
    "problem.nu": "0.3",
    "partition.px": "2",
    "partition.py": "2",
    "partition.pz": "2",
    "overlap": "1",
    "coarse": "rgdsw",
    "local_solver.method": "exact_lu",
    "local_solver.fill_level": "0",
    "local_solver.factor_sweeps": "3",
    "local_solver.trisolve_iters": "5",
    "local_solver.diag_shift": "0.0",
    "ordering": "nested_dissection",
    "precision": "double",
    "krylov.restart": "30",
    "krylov.rel_tol": "1e-7",
    "krylov.max_iters": "500",
    "krylov.variant": "classic",
    "krylov.orthogonalization": "mgs",
    "devices": "1",
    "threads": "1",
    "seed": "0",
}


@dataclass(frozen=True)
class RunConfig:
    kind: str = "laplace3d"
    nx: int = 9
    ny: int = 9
    nz: int = 9
    boundary: str = "dirichlet"
    e_mod: float = 1.0
    nu: float = 0.3
    px: int = 2
    py: int = 2
    pz: int = 2
    overlap: int = 1
    coarse: str = "rgdsw"
    solver: SolverSpec = SolverSpec()
    ordering: str = "nested_dissection"
    precision: str = "double"
    krylov: KrylovConfig = KrylovConfig()
    devices: int = 1
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.coarse not in COARSE_MODES:
            raise ValueError(f"unknown coarse mode {self.coarse!r}")
        for name in ("px", "py", "pz", "devices", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.overlap < 0:
            raise ValueError("overlap must be nonnegative")
        if self.coarse == "rgdsw":
            split_axes = sum(p >= 2 for p in (self.px, self.py, self.pz))
            if split_axes < 2:
                raise ValueError(
                    "rgdsw needs at least 2 subdomains per axis in at "
                    "least 2 axes; use gdsw for slab partitions")

    @classmethod
    def from_keys(cls, keys: dict) -> "RunConfig":
        merged = dict(_DEFAULT_KEYS)
        for key, value in keys.items():
            key = key.strip()
            if key == "local_solver":
                # compact form, e.g. ilu_k(2) or fast_ilu(0,3,5)
                spec = parse_solver_token(str(value), SolverSpec())
                merged["local_solver.method"] = spec.method
                merged["local_solver.fill_level"] = str(spec.fill_level)
                merged["local_solver.factor_sweeps"] = str(spec.factor_sweeps)
                merged["local_solver.trisolve_iters"] = \
                    str(spec.trisolve_iters)
                continue
            if key not in _DEFAULT_KEYS:
                raise ValueError(f"unknown config key {key!r}")
            merged[key] = str(value)

        def as_int(key):
            try:
                return int(merged[key])
            except ValueError:
                raise ValueError(f"config key {key} needs an integer, got "
                                 f"{merged[key]!r}") from None

        def as_float(key):
            try:
                return float(merged[key])
            except ValueError:
                raise ValueError(f"config key {key} needs a number, got "
                                 f"{merged[key]!r}") from None

        solver = SolverSpec(
            method=merged["local_solver.method"],
            fill_level=as_int("local_solver.fill_level"),
            factor_sweeps=as_int("local_solver.factor_sweeps"),
            trisolve_iters=as_int("local_solver.trisolve_iters"),
            diag_shift=as_float("local_solver.diag_shift"))
        krylov = KrylovConfig(
            restart=as_int("krylov.restart"),
            rel_tol=as_float("krylov.rel_tol"),
            max_iters=as_int("krylov.max_iters"),
            variant=merged["krylov.variant"],
            orthogonalization=merged["krylov.orthogonalization"])
        return cls(
            kind=merged["problem.kind"],
            nx=as_int("problem.nx"), ny=as_int("problem.ny"),
            nz=as_int("problem.nz"),
            boundary=merged["problem.boundary"],
            e_mod=as_float("problem.e"), nu=as_float("problem.nu"),
            px=as_int("partition.px"), py=as_int("partition.py"),
            pz=as_int("partition.pz"),
            overlap=as_int("overlap"),
            coarse=merged["coarse"],
            solver=solver,
            ordering=merged["ordering"],
            precision=merged["precision"],
            krylov=krylov,
            devices=as_int("devices"),
            threads=as_int("threads"),
            seed=as_int("seed"))

    def to_keys(self) -> dict:
        """Flat dotted-key echo with native value types."""
        return {
            "problem.kind": self.kind,
            "problem.nx": self.nx, "problem.ny": self.ny,
            "problem.nz": self.nz,
            "problem.boundary": self.boundary,
            "problem.e": self.e_mod, "problem.nu": self.nu,
            "partition.px": self.px, "partition.py": self.py,
            "partition.pz": self.pz,
            "overlap": self.overlap,
            "coarse": self.coarse,
            "local_solver.method": self.solver.method,
            "local_solver.fill_level": self.solver.fill_level,
            "local_solver.factor_sweeps": self.solver.factor_sweeps,
            "local_solver.trisolve_iters": self.solver.trisolve_iters,
            "local_solver.diag_shift": self.solver.diag_shift,
            "ordering": self.ordering,
            "precision": self.precision,
            "krylov.restart": self.krylov.restart,
            "krylov.rel_tol": self.krylov.rel_tol,
            "krylov.max_iters": self.krylov.max_iters,
            "krylov.variant": self.krylov.variant,
            "krylov.orthogonalization": self.krylov.orthogonalization,
            "devices": self.devices,
            "threads": self.threads,
            "seed": self.seed,
        }


@dataclass
class RunRecord:
    config: RunConfig
    n: int = 0
    n_interface: int = 0
    n_coarse: int = 0
    iterations: int = 0
    converged: bool = False
    t_symbolic: float = 0.0
    t_numeric: float = 0.0
    t_solve: float = 0.0
    peak_factor_nnz: int = 0
    max_local_size: int = 0
    device_subdomains: list = field(default_factory=list)
    true_error: float | None = None
    error_msg: str = ""
    solution: np.ndarray | None = field(default=None, repr=False,
                                        compare=False)


def parse_solver_token(token: str, base: SolverSpec) -> SolverSpec:
    """Compact local-solver syntax: exact_lu | ilu_k(k) |
    fast_ilu(k,sweeps,iters); omitted arguments keep the base values."""
    token = token.strip()
    if "(" in token:
        if not token.endswith(")"):
            raise ValueError(f"malformed local solver {token!r}")
        name = token[:token.index("(")].strip()
        inner = token[token.index("(") + 1:-1].strip()
        try:
            args = [int(a) for a in inner.split(",")] if inner else []
        except ValueError:
            raise ValueError(f"malformed local solver {token!r}") from None
    else:
        name, args = token, []
    if name == "exact_lu":
        if args:
            raise ValueError("exact_lu takes no arguments")
        return dataclasses.replace(base, method="exact_lu")
    if name == "ilu_k":
        if len(args) > 1:
            raise ValueError("ilu_k takes at most one argument (fill level)")
        fill = args[0] if args else base.fill_level
        return dataclasses.replace(base, method="ilu_k", fill_level=fill)
    if name == "fast_ilu":
        if len(args) > 3:
            raise ValueError(
                "fast_ilu takes at most (fill, sweeps, trisolve_iters)")
        fill = args[0] if len(args) > 0 else base.fill_level
        sweeps = args[1] if len(args) > 1 else base.factor_sweeps
        iters = args[2] if len(args) > 2 else base.trisolve_iters
        return dataclasses.replace(base, method="fast_ilu", fill_level=fill,
                                   factor_sweeps=sweeps,
                                   trisolve_iters=iters)
    raise ValueError(f"unknown local solver {name!r}")


def format_solver(spec: SolverSpec) -> str:
    if spec.method == "exact_lu":
        return "exact_lu"
    if spec.method == "ilu_k":
        return f"ilu_k({spec.fill_level})"
    return (f"fast_ilu({spec.fill_level},{spec.factor_sweeps},"
            f"{spec.trisolve_iters})")


def parse_config_file(path: str) -> dict:
    keys = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(
                    f"{path}:{lineno}: expected 'key = value', got "
                    f"{raw.strip()!r}")
            key, value = line.split("=", 1)
            keys[key.strip()] = value.strip()
    return keys


def assemble_problem(cfg: RunConfig):
    grid = Grid3D(cfg.nx, cfg.ny, cfg.nz)
    if cfg.kind == "laplace3d":
        return assemble_laplace3d(grid, boundary=cfg.boundary)
    return assemble_elasticity3d(grid, e_mod=cfg.e_mod, nu=cfg.nu,
                                 boundary=cfg.boundary)


def _device_groups(cfg: RunConfig) -> list:
    n_sub = cfg.px * cfg.py * cfg.pz
    base, rem = divmod(n_sub, cfg.devices)
    return [base + 1] * rem + [base] * (cfg.devices - rem)


def _factor_nnz(fac) -> int:
    return len(fac.l_values) + len(fac.u_values)


def run_single(cfg: RunConfig, keep_solution: bool = False,
               _assembled=None) -> RunRecord:
    """Assemble, decompose, set up the preconditioner (both phases), and
    solve b = A x* for a seeded pseudo-random x*. Any error becomes a
    failure record instead of an exception."""
    rec = RunRecord(config=cfg, device_subdomains=_device_groups(cfg))
    try:
        prob = _assembled if _assembled is not None else \
            assemble_problem(cfg)
        rec.n = prob.a.nrows
        part = box_partition(prob.grid, cfg.px, cfg.py, cfg.pz)
        mode = None if cfg.coarse == "none" else cfg.coarse
        dec = decompose(prob.a, part, overlap_layers=cfg.overlap,
                        coarse_mode=mode)
        if dec.structure is not None:
            rec.n_interface = len(dec.structure.interface)
        rec.max_local_size = max(len(s) for s in dec.overlap.sets)

        scfg = SchwarzConfig(local=cfg.solver, use_coarse=mode is not None,
                             precision=cfg.precision, ordering=cfg.ordering,
                             threads=cfg.threads)
        t0 = time.perf_counter()
        skel = setup_symbolic(prob.a, dec, scfg)
        rec.t_symbolic = time.perf_counter() - t0
        t0 = time.perf_counter()
        pre = setup_numeric(skel, prob.a,
                            nullspace=prob.nullspace if mode else None)
        rec.t_numeric = time.perf_counter() - t0

        if pre.coarse is not None:
            rec.n_coarse = pre.coarse.a0.nrows
        factors = list(pre.local_factorizations)
        if pre.coarse is not None:
            factors.append(pre.coarse.a0_factorization)
        rec.peak_factor_nnz = max(_factor_nnz(f) for f in factors)

        rng = np.random.default_rng(cfg.seed)
        x_star = rng.standard_normal(rec.n)
        b = prob.a @ x_star
        x, rep = gmres(prob.a, pre, b, cfg.krylov)
        rec.iterations = rep.iterations
        rec.converged = rep.converged
        rec.t_solve = rep.timings.solve
        rec.true_error = float(np.linalg.norm(x - x_star) /
                               np.linalg.norm(x_star))
        if keep_solution:
            rec.solution = x
    except Exception as err:
        rec.error_msg = f"{type(err).__name__}: " + \
            " ".join(str(err).split())
        rec.converged = False
    return rec


def _apply_axis(base: RunConfig, axis: str, value: str) -> RunConfig:
    if axis == "subdomains":
        total = int(value)
        p = round(total ** (1.0 / 3.0))
        if p ** 3 != total:
            raise ValueError(
                f"subdomain count {total} is not a perfect cube")
        return dataclasses.replace(base, px=p, py=p, pz=p)
    if axis == "ilu_level":
        return dataclasses.replace(
            base, solver=dataclasses.replace(base.solver,
                                             fill_level=int(value)))
    if axis == "overlap":
        return dataclasses.replace(base, overlap=int(value))
    if axis == "precision":
        return dataclasses.replace(base, precision=str(value))
    if axis == "local_solver":
        return dataclasses.replace(
            base, solver=parse_solver_token(str(value), base.solver))
    if axis == "devices":
        return dataclasses.replace(base, devices=int(value))
    raise ValueError(f"unknown sweep axis {axis!r}")


def run_sweep(base: RunConfig, axis: str, values: list) -> list:
    """One run_single per axis value; failures become records and the sweep
    continues. Problem assembly is shared across values that leave the
    operator unchanged."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}")
    if axis == "ilu_level" and base.solver.method == "exact_lu":
        raise ValueError("ilu_level sweep needs an ilu_k or fast_ilu base "
                         "local solver")
    if not values:
        raise ValueError("sweep needs at least one value")
    assembled = {}
    records = []
    for value in values:
        try:
            cfg = _apply_axis(base, axis, value)
        except (ValueError, TypeError) as err:
            rec = RunRecord(config=base,
                            device_subdomains=_device_groups(base))
            rec.error_msg = f"{type(err).__name__}: " + \
                " ".join(str(err).split())
            records.append(rec)
            continue
        sig = (cfg.kind, cfg.nx, cfg.ny, cfg.nz, cfg.boundary, cfg.e_mod,
               cfg.nu)
        if sig not in assembled:
            assembled[sig] = assemble_problem(cfg)
        records.append(run_single(cfg, _assembled=assembled[sig]))
    return records


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

def record_row(rec: RunRecord) -> dict:
    """Flat CSV row form of a record."""
    cfg = rec.config
    return {
        "problem": cfg.kind,
        "n": rec.n,
        "px": cfg.px, "py": cfg.py, "pz": cfg.pz,
        "overlap": cfg.overlap,
        "coarse": cfg.coarse,
        "local_solver": format_solver(cfg.solver),
        "ordering": cfg.ordering,
        "precision": cfg.precision,
        "n_coarse": rec.n_coarse,
        "iterations": rec.iterations,
        "converged": rec.converged,
        "t_symbolic": rec.t_symbolic,
        "t_numeric": rec.t_numeric,
        "t_solve": rec.t_solve,
        "true_error": rec.true_error,
        "error_msg": rec.error_msg,
    }


def record_dict(rec: RunRecord) -> dict:
    """Full JSON form of a record."""
    return {
        "config": rec.config.to_keys(),
        "n": rec.n,
        "n_interface": rec.n_interface,
        "n_coarse": rec.n_coarse,
        "iterations": rec.iterations,
        "converged": rec.converged,
        "timings": {"symbolic": rec.t_symbolic, "numeric": rec.t_numeric,
                    "solve": rec.t_solve},
        "peak_factor_nnz": rec.peak_factor_nnz,
        "max_local_size": rec.max_local_size,
        "device_subdomains": list(rec.device_subdomains),
        "true_error": rec.true_error,
        "error_msg": rec.error_msg,
    }


_INT_COLUMNS = ("n", "px", "py", "pz", "overlap", "n_coarse", "iterations")
_FLOAT_COLUMNS = ("t_symbolic", "t_numeric", "t_solve", "true_error")


def _format_cell(col: str, value) -> str:
    if value is None:
        return ""
    if col == "converged":
        return "true" if value else "false"
    if col in _FLOAT_COLUMNS:
        return repr(float(value))
    return str(value)


def emit_report(records: list, path: str, fmt: str = "csv"):
    """Write records (RunRecord objects or previously read rows/dicts)."""
    if not records:
        raise ValueError("no records to report")
    if fmt == "csv":
        rows = [r if isinstance(r, dict) else record_row(r)
                for r in records]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for row in rows:
                writer.writerow([_format_cell(c, row[c])
                                 for c in CSV_COLUMNS])
    elif fmt == "json":
        payload = [r if isinstance(r, dict) else record_dict(r)
                   for r in records]
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def read_csv_report(path: str) -> list:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(CSV_COLUMNS):
            raise ValueError(f"unexpected CSV header in {path}")
        for raw in reader:
            row = {}
            for col in CSV_COLUMNS:
                cell = raw[col]
                if col in _INT_COLUMNS:
                    row[col] = int(cell)
                elif col in _FLOAT_COLUMNS:
                    row[col] = float(cell) if cell != "" else None
                elif col == "converged":
                    row[col] = cell == "true"
                else:
                    row[col] = cell
            rows.append(row)
    return rows


def read_json_report(path: str) -> list:
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _summary_line(rec: RunRecord) -> str:
    cfg = rec.config
    head = (f"{cfg.kind} {cfg.nx}x{cfg.ny}x{cfg.nz} "
            f"part={cfg.px}x{cfg.py}x{cfg.pz} coarse={cfg.coarse} "
            f"solver={format_solver(cfg.solver)} precision={cfg.precision}")
    if rec.error_msg:
        return f"{head}: FAILED {rec.error_msg}"
    err = "" if rec.true_error is None else f" true_error={rec.true_error:.3e}"
    return (f"{head}: iterations={rec.iterations} "
            f"converged={'true' if rec.converged else 'false'}"
            f"{err} t_setup={rec.t_symbolic + rec.t_numeric:.3f}s "
            f"t_solve={rec.t_solve:.3f}s")


def _parse_overrides(extra: list) -> dict:
    overrides = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) <= 2:
            raise ValueError(f"expected --key value pairs, got {tok!r}")
        if i + 1 >= len(extra):
            raise ValueError(f"override {tok!r} is missing a value")
        overrides[tok[2:]] = extra[i + 1]
        i += 2
    return overrides


def split_values(text: str) -> list:
    """Comma-split that respects parentheses, for local_solver tokens."""
    out, cur, depth = [], [], 0
    for ch in text:
        if ch == "," and depth == 0:
            out.append("".join(cur).strip())
            cur = []
            continue
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        cur.append(ch)
    out.append("".join(cur).strip())
    return [tok for tok in out if tok]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="schwarzdd",
        description="Two-level Schwarz preconditioner benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="flat key-value config file")
        p.add_argument("--output", help="report file path")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--threads", type=int)
        p.add_argument("--seed", type=int)
        if name == "sweep":
            p.add_argument("--axis", required=True, choices=SWEEP_AXES)
            p.add_argument("--values", required=True,
                           help="comma-separated axis values")

    args, extra = parser.parse_known_args(argv)
    try:
        keys = parse_config_file(args.config)
        keys.update(_parse_overrides(extra))
        if args.threads is not None:
            keys["threads"] = str(args.threads)
        if args.seed is not None:
            keys["seed"] = str(args.seed)
        cfg = RunConfig.from_keys(keys)
        if args.command == "solve":
            records = [run_single(cfg)]
        else:
            records = run_sweep(cfg, args.axis, split_values(args.values))
    except (ValueError, TypeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2

    for rec in records:
        print(_summary_line(rec))
    if args.output:
        emit_report(records, args.output, args.format)
    return 0 if all(r.converged for r in records) else 1


if __name__ == "__main__":
    sys.exit(main())
