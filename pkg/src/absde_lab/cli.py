"""Batch front end: solve, check, convergence, validate.

Configuration is a single strict JSON document (unknown keys are errors).
Shape:

    {
      "problem":  {"builtin": "<catalog name>", ...factory overrides...}
                  or {"generator": "<expr>", "T": 1.0, "K": 0.5,
                      "terminal_xi": "<expr>", "terminal_eta": "<expr>",
                      "lambda": "<expr>", "delta": 0.5 | {"kind": ...},
                      "zeta": ..., "constants": {"C": ..., "gamma": ...,
                      "alpha_holder": ..., "L": ...}},
      "numerics": {"n_T": ..., "n_paths": ..., "seed": 0,
                   "scheme": "implicit", "antithetic": false,
                   "inner_tol": 1e-10, "inner_max_iter": 50,
                   "basis": {"kind": "polynomial", "degree": 3, "n_bins": 20,
                             "ridge": 1e-10}},
      "strategy": "auto",
      "outputs":  {"summary_path": ..., "slices_path": ...,
                   "diagnostics_path": ..., "study_path": ...},
      "study":    {"grids": [8, 16, 32], "paths": [10000],
                   "reference": "auto" | "self" | <number>}
    }

Exit codes: 0 success, 1 validation failures, 2 configuration errors,
3 solver errors.  Summary JSON for a fixed config and seed is byte-identical
across runs except for the "timings" entry.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import inspect
import json
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np

from . import solver_quadratic as sq
from .catalog import (
    PROBLEMS,
    builtin_problem,
    compile_generator,
    compile_lambda,
    reference_y0,
    terminal_from_expr,
)
from .condexp import BasisSpec
from .constants import applicability_report
from .diagnostics import estimate_terminal_norms, z2_norm_estimate
from .paths import coarsen_ensemble, simulate_brownian
from .problem import DelaySpec, ProblemSpec, StructuralConstants
from .solver_lipschitz import NumericsSpec


class ConfigError(ValueError):
    """Bad configuration document; maps to exit code 2."""


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

_TOP_KEYS = {"problem", "numerics", "strategy", "outputs", "study"}
_NUMERICS_KEYS = {"n_T", "n_paths", "seed", "scheme", "antithetic",
                  "inner_tol", "inner_max_iter", "basis"}
_BASIS_KEYS = {"kind", "degree", "n_bins", "ridge"}
_INLINE_PROBLEM_KEYS = {"generator", "T", "K", "terminal_xi", "terminal_eta",
                        "lambda", "delta", "zeta", "constants"}
_CONSTANTS_KEYS = {"C", "gamma", "alpha_holder", "L"}
_OUTPUT_KEYS = {"summary_path", "slices_path", "diagnostics_path", "study_path"}
_STUDY_KEYS = {"grids", "paths", "reference"}


def _reject_unknown(mapping: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown key(s) {', '.join(map(repr, unknown))} in {where}; "
            f"allowed: {', '.join(sorted(allowed))}"
        )


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    _reject_unknown(cfg, _TOP_KEYS, "config root")
    for key in ("problem", "numerics"):
        if key not in cfg:
            raise ConfigError(f"config is missing the required {key!r} block")
        if not isinstance(cfg[key], dict):
            raise ConfigError(f"config block {key!r} must be a JSON object")
    return cfg


def _delay_from(value, where: str) -> DelaySpec:
    if isinstance(value, (int, float)):
        return DelaySpec("constant", a=float(value))
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be a number or an object")
    _reject_unknown(value, {"kind", "a", "b", "values", "density_l"}, where)
    kw = dict(value)
    kind = kw.pop("kind", "constant")
    if "values" in kw:
        kw["values"] = tuple(float(v) for v in kw["values"])
    try:
        return DelaySpec(kind, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {where}: {exc}") from None


def build_problem(block: dict):
    """Returns (ProblemSpec, descriptor dict used in outputs, closed-form Y0 or None)."""
    if "builtin" in block:
        name = block["builtin"]
        if name not in PROBLEMS:
            raise ConfigError(
                f"unknown builtin problem {name!r}; "
                f"available: {', '.join(sorted(PROBLEMS))}"
            )
        overrides = {k: v for k, v in block.items() if k != "builtin"}
        allowed = set(inspect.signature(PROBLEMS[name]).parameters)
        _reject_unknown(overrides, allowed, f"problem.builtin {name!r} overrides")
        try:
            problem = builtin_problem(name, **overrides)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad overrides for builtin {name!r}: {exc}") from None
        desc = {"builtin": name, **overrides}
        return problem, desc, reference_y0(name, **overrides)

    _reject_unknown(block, _INLINE_PROBLEM_KEYS, "problem")
    if "generator" not in block or "T" not in block:
        raise ConfigError("inline problem needs at least 'generator' and 'T'")
    cons_block = block.get("constants", {})
    if not isinstance(cons_block, dict):
        raise ConfigError("problem.constants must be an object")
    _reject_unknown(cons_block, _CONSTANTS_KEYS, "problem.constants")
    try:
        generator = compile_generator(block["generator"], name="config")
        lam = compile_lambda(block["lambda"]) if "lambda" in block else None
        xi_src = block.get("terminal_xi", "0")
        eta_src = block.get("terminal_eta", "0")
        problem = ProblemSpec(
            T=float(block["T"]),
            K=float(block.get("K", 0.0)),
            generator=generator,
            terminal_xi=terminal_from_expr("config_xi", xi_src),
            terminal_eta=terminal_from_expr("config_eta", eta_src),
            lambda_term=lam,
            delta_shift=_delay_from(block.get("delta", 0.0), "problem.delta"),
            zeta_shift=_delay_from(block.get("zeta", 0.0), "problem.zeta"),
            constants=StructuralConstants(**{k: float(v) for k, v in cons_block.items()}),
        )
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"cannot build problem from config: {exc}") from None
    return problem, dict(block), None


def build_numerics(block: dict, seed_override: Optional[int]) -> NumericsSpec:
    _reject_unknown(block, _NUMERICS_KEYS, "numerics")
    for key in ("n_T", "n_paths"):
        if key not in block:
            raise ConfigError(f"numerics is missing the required key {key!r}")
    basis_block = block.get("basis", {})
    if not isinstance(basis_block, dict):
        raise ConfigError("numerics.basis must be an object")
    _reject_unknown(basis_block, _BASIS_KEYS, "numerics.basis")
    try:
        basis = BasisSpec(**basis_block)
        seed = int(block.get("seed", 0)) if seed_override is None else int(seed_override)
        return NumericsSpec(
            n_T=int(block["n_T"]),
            n_paths=int(block["n_paths"]),
            basis=basis,
            seed=seed,
            scheme=block.get("scheme", "implicit"),
            inner_tol=float(block.get("inner_tol", 1e-10)),
            inner_max_iter=int(block.get("inner_max_iter", 50)),
            antithetic=bool(block.get("antithetic", False)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad numerics: {exc}") from None


def _strategy_from(cfg: dict) -> str:
    strategy = cfg.get("strategy", "auto")
    if strategy not in sq.STRATEGIES:
        raise ConfigError(
            f"unknown strategy {strategy!r}; expected one of {sq.STRATEGIES}"
        )
    return strategy


def _outputs_from(cfg: dict) -> dict:
    block = cfg.get("outputs", {})
    if not isinstance(block, dict):
        raise ConfigError("outputs must be an object")
    _reject_unknown(block, _OUTPUT_KEYS, "outputs")
    return block


def _worker_count(jobs: int) -> int:
    cap = os.environ.get("ABSDE_LAB_THREADS")
    if cap is not None:
        try:
            jobs = min(jobs, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"ABSDE_LAB_THREADS must be an integer, got {cap!r}")
    return max(1, jobs)


# ---------------------------------------------------------------------------
# serialization helpers
# ---------------------------------------------------------------------------


def _jsonable(obj):
    """Recursively convert numpy/mpmath/dataclass values into strict JSON types."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else repr(f)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    if obj is None or isinstance(obj, str):
        return obj
    try:
        return float(obj)  # mpmath.mpf and similar scalar types
    except (TypeError, ValueError):
        return repr(obj)


def _emit_json(doc: dict, path: Optional[str]) -> None:
    text = json.dumps(_jsonable(doc), indent=2, allow_nan=False) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_csv(header, rows, path: Optional[str]) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        writer.writerows(rows)


def _summary_doc(result, problem, seed: int, timings: dict) -> dict:
    norms = z2_norm_estimate(result.solution)
    applicability = applicability_report(problem, estimate_terminal_norms(problem))
    md = result.solution.metadata
    return {
        "Y0_mean": md["y0_mean"],
        "Y0_stderr": md["y0_stderr"],
        "outer_iterations": result.outer_iterations,
        "norms": {"y_sup": norms.y_sup, "z_z2": norms.z_z2},
        "certified": result.certified,
        "applicability": applicability,
        "seed": seed,
        "strategy": result.strategy,
        "timings": timings,
    }


def _slice_rows(solution):
    norms = z2_norm_estimate(solution)
    rows = []
    for i, t in enumerate(solution.grid.times):
        y = solution.Y[i][:, 0]
        z = solution.Z[i]
        rows.append([
            f"{float(t):.12g}",
            f"{float(y.mean()):.12g}",
            f"{float(y.std()):.12g}",
            f"{float(np.abs(z).mean()):.12g}",
            f"{float(norms.per_slice_z2[i]):.12g}",
        ])
    return rows


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def run_solve(args) -> int:
    cfg = load_config(args.config)
    problem, _desc, _ref = build_problem(cfg["problem"])
    numerics = build_numerics(cfg["numerics"], args.seed)
    strategy = _strategy_from(cfg)
    outputs = _outputs_from(cfg)

    start = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = sq.solve(problem, numerics, strategy=strategy)
    except Exception as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    timings = {"solve_seconds": round(time.perf_counter() - start, 3)}

    _emit_json(_summary_doc(result, problem, numerics.seed, timings),
               outputs.get("summary_path"))
    if outputs.get("slices_path"):
        _emit_csv(["t", "y_mean", "y_std", "z_abs_mean", "z2_slice"],
                  _slice_rows(result.solution), outputs["slices_path"])
    if outputs.get("diagnostics_path"):
        _emit_json({"diagnostics": result.diagnostics,
                    "metadata": result.solution.metadata,
                    "outer_diffs": result.outer_diffs},
                   outputs["diagnostics_path"])
    return 0


def run_check(args) -> int:
    cfg = load_config(args.config)
    problem, desc, _ref = build_problem(cfg["problem"])
    outputs = _outputs_from(cfg)
    norms = estimate_terminal_norms(problem)
    cons = problem.constants
    doc = {
        "problem": desc,
        "constants": {
            "C": cons.C,
            "gamma": cons.gamma,
            "alpha_holder": cons.alpha_holder,
            "L": problem.density_constant(),
            "T": problem.T,
            "K": problem.K,
        },
        "applicability": applicability_report(problem, norms),
    }
    _emit_json(doc, outputs.get("summary_path"))
    return 0


def _study_cells(cfg: dict) -> tuple:
    study = cfg.get("study")
    if not isinstance(study, dict):
        raise ConfigError("convergence needs a 'study' block with 'grids' and 'paths'")
    _reject_unknown(study, _STUDY_KEYS, "study")
    grids = sorted(int(g) for g in study.get("grids", []))
    paths = sorted(int(p) for p in study.get("paths", []))
    if not grids or not paths:
        raise ConfigError("study.grids and study.paths must be nonempty lists")
    finest = grids[-1]
    for g in grids:
        if finest % g:
            raise ConfigError(
                f"study grid {g} does not divide the finest grid {finest}; "
                "common random numbers need nested grids"
            )
    return grids, paths, study.get("reference", "auto")


def run_convergence(args) -> int:
    cfg = load_config(args.config)
    problem, desc, closed_form = build_problem(cfg["problem"])
    numerics = build_numerics(cfg["numerics"], args.seed)
    strategy = _strategy_from(cfg)
    outputs = _outputs_from(cfg)
    grids, paths, reference = _study_cells(cfg)

    if reference == "auto":
        if closed_form is None:
            raise ConfigError(
                "no closed-form reference for this problem; set study.reference "
                "to \"self\" (finest-cell reference) or to a number"
            )
        ref_value: Optional[float] = float(closed_form)
    elif reference == "self":
        ref_value = None  # filled from the finest cell below
    elif isinstance(reference, (int, float)):
        ref_value = float(reference)
    else:
        raise ConfigError("study.reference must be \"auto\", \"self\", or a number")

    finest = grids[-1]
    fine_ensembles = {
        p: simulate_brownian(problem.grid(finest), problem.d, p, numerics.seed,
                             antithetic=numerics.antithetic)
        for p in paths
    }

    def solve_cell(cell):
        n_T, n_paths = cell
        ens = coarsen_ensemble(fine_ensembles[n_paths], finest // n_T)
        num = dataclasses.replace(numerics, n_T=n_T, n_paths=n_paths)
        start = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = sq.solve(problem, num, strategy=strategy, ensemble=ens)
        ms = (time.perf_counter() - start) * 1e3
        md = result.solution.metadata
        return cell, md["y0_mean"], md["y0_stderr"], ms

    cells = [(g, p) for g in grids for p in paths]
    workers = _worker_count(args.jobs)
    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                solved = list(pool.map(solve_cell, cells))
        else:
            solved = [solve_cell(c) for c in cells]
    except Exception as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3

    by_cell = {cell: (y0, se, ms) for cell, y0, se, ms in solved}
    if ref_value is None:
        ref_value = by_cell[(finest, paths[-1])][0]
    rows = []
    for cell in cells:
        y0, se, ms = by_cell[cell]
        rows.append([
            cell[0], cell[1],
            f"{y0:.12g}", f"{se:.12g}",
            f"{abs(y0 - ref_value):.12g}", f"{ms:.1f}",
        ])
    _emit_csv(["n_T", "n_paths", "Y0", "stderr", "abs_error", "runtime_ms"],
              rows, outputs.get("study_path"))
    return 0


def run_validate(args) -> int:
    from . import validation

    results = validation.run(args.filter)
    if not results:
        print(f"no criteria match filter {args.filter!r}", file=sys.stderr)
        return 2
    width = max(len(r["tag"]) for r in results)
    failures = 0
    for r in results:
        mark = "PASS" if r["passed"] else "FAIL"
        failures += not r["passed"]
        print(f"{r['number']:>3}  {r['tag']:<{width}}  {mark}  "
              f"{r['seconds']:>6.1f}s  {r['detail']}")
    total = len(results)
    print(f"{total - failures} of {total} criteria passed")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="absde-lab",
        description="Monte Carlo solvers and applicability checks for "
                    "anticipated BSDEs with quadratic growth.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run one solve and write artifacts")
    check = sub.add_parser("check", help="report theorem applicability and constants")
    conv = sub.add_parser("convergence", help="run a refinement study with "
                                              "common random numbers")
    val = sub.add_parser("validate", help="run the acceptance criteria")

    for p in (solve, check, conv):
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--seed", type=int, default=None,
                       help="override numerics.seed")
    conv.add_argument("--jobs", type=int, default=1,
                      help="parallel study cells (capped by ABSDE_LAB_THREADS)")
    val.add_argument("--filter", default=None, help="run only criteria with this tag")

    solve.set_defaults(fn=run_solve)
    check.set_defaults(fn=run_check)
    conv.set_defaults(fn=run_convergence)
    val.set_defaults(fn=run_validate)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
