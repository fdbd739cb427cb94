"""Command-line front end.

Every subcommand runs one or more tasks against a covering described in a
JSON config and writes one JSON report per task plus CSV side files.  Exit
status: 0 when every asserted check passed, 2 when one failed, 1 on a
configuration or I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

OUT_ENV = "ADMBMO_OUT_DIR"
SAMPLING_TASKS = {"equivalence", "mass_absorption", "concentration", "endpoint",
                  "tensor_check", "bmo_norm", "czo_apply", "matrix_bmo", "lp_ratio"}


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# constructions


def _constructions():
    from . import covering as cv

    def from_file(path):
        from .io import covering_from_doc, load_json

        return covering_from_doc(load_json(path))

    return {
        "three_cell": lambda **kw: cv.three_cell_covering(),
        "corona_finite": cv.corona_covering_finite,
        "corona_infinite": cv.corona_covering_infinite,
        "doubling_r2": cv.doubling_covering_r2,
        "annuli_mu_beta": cv.annuli_covering_mu_beta,
        "maximal_cube_exp": cv.maximal_cube_covering_exp,
        "file": from_file,
    }


def build_construction(spec: dict):
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigError("construction must be an object with a name")
    table = _constructions()
    name = spec["name"]
    if name not in table:
        raise ConfigError(f"unknown construction {name!r}")
    try:
        return table[name](**(spec.get("parameters") or {}))
    except (TypeError, ValueError, KeyError, OSError) as exc:
        raise ConfigError(f"construction {name!r}: {exc}") from exc


class Context:
    def __init__(self, config: dict, seed, tolerance: float):
        self.config = config
        self.seed = seed
        self.tolerance = tolerance
        self._cov = None

    @property
    def covering(self):
        if self._cov is None:
            if "construction" not in self.config:
                raise ConfigError("this task needs a construction")
            self._cov = build_construction(self.config["construction"])
        return self._cov


# ---------------------------------------------------------------------------
# helpers for task inputs


def _function(ctx: Context, spec, n_cells: int, space=None):
    import numpy as np

    spec = spec or {"kind": "random"}
    kind = spec.get("kind", "random")
    if kind == "values":
        f = np.asarray(spec["values"], dtype=float)
        if len(f) != n_cells:
            raise ConfigError("function length does not match the cell count")
        return f
    if kind == "random":
        rng = np.random.default_rng(ctx.seed)
        return rng.standard_normal(n_cells)
    if kind == "signs":
        rng = np.random.default_rng(ctx.seed)
        return rng.choice([-1.0, 1.0], size=n_cells)
    if kind == "rademacher":
        from .norms import rademacher_sum

        return rademacher_sum(space, int(spec.get("k_max", 8)))
    if kind == "csv":
        from .io import read_csv

        rows = sorted(read_csv(spec["path"]), key=lambda r: int(r["cell"]))
        return np.array([float(r["value"]) for r in rows])
    raise ConfigError(f"unknown function kind {kind!r}")


def _operator(ctx: Context, spec):
    from . import czo

    cov = ctx.covering
    spec = spec or {"kind": "martingale_transform"}
    kind = spec.get("kind")
    side = spec.get("side", "a")
    filt = cov.filtration(side)
    if kind == "hilbert":
        return czo.KernelOperator(czo.truncated_hilbert(cov.space))
    if kind == "kernel_csv":
        from .io import load_kernel_csv

        return czo.KernelOperator(load_kernel_csv(spec["path"], cov.space))
    if kind in ("martingale_transform", "block"):
        n = len(filt.completed())
        xi = spec.get("xi") or [(-1) ** k for k in range(n)]
        mt = czo.MartingaleTransform(filt, xi)
        if kind == "block":
            return czo.KernelOperator(czo.kernel_of_matrix(mt.matrix(), cov.space))
        return mt
    if kind == "haar_shift":
        haar = czo.HaarSystem(filt)
        r, s = spec.get("complexity", [0, 0])
        return czo.random_haar_shift(haar, int(r), int(s), seed=ctx.seed or 0,
                                     scale=float(spec.get("scale", 1.0)))
    raise ConfigError(f"unknown operator kind {kind!r}")


def _kernel(op):
    from . import czo

    if isinstance(op, czo.KernelOperator):
        return op.kernel
    return czo.kernel_of_matrix(op.matrix(), op.space)


def _expect(report: dict, expect: dict, tol: float) -> list:
    fails = []
    for key, want in (expect or {}).items():
        got = report.get(key)
        if isinstance(want, (int, float)) and not isinstance(want, bool):
            if got is None or abs(float(got) - float(want)) > tol * max(1.0, abs(float(want))):
                fails.append(f"{key}: expected {want}, got {got}")
        elif got != want:
            fails.append(f"{key}: expected {want!r}, got {got!r}")
    return fails


# ---------------------------------------------------------------------------
# tasks; each returns (report, failures, csv side files)


def task_build_covering(ctx, spec):
    from .io import covering_to_doc

    cov = ctx.covering
    return covering_to_doc(cov), [], {}


def task_admissibility(ctx, spec):
    cov = ctx.covering
    res = cov.result
    rep = {"c": cov.c_value, "side": cov.achieving_side,
           "trivial_intersection": cov.trivial_intersection, "admissible": cov.admissible,
           "construction": cov.construction, "cells": cov.space.n_cells}
    if res is not None:
        rep.update(sup_a=res.sup_a, sup_b=res.sup_b, terminal_a=res.terminal_a,
                   terminal_b=res.terminal_b)
    fails = []
    if spec.get("assert") and not cov.admissible:
        fails.append(f"covering not admissible (c = {cov.c_value})")
    files = {}
    if res is not None and spec.get("table"):
        files["atoms.csv"] = (["side", "atom", "sum"],
                              [(r["side"], r["atom"], r["sum"]) for r in res.table()])
    return rep, fails, files


def task_contraction(ctx, spec):
    import warnings

    from .interpolation import contraction_norm

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = contraction_norm(ctx.covering, spec.get("method", "auto")).as_dict()
    fails = []
    if spec.get("assert"):
        if not rep["sigma"] < 1:
            fails.append(f"sigma = {rep['sigma']} is not < 1")
        if not rep["sigma"] <= rep["bound"] + ctx.tolerance:
            fails.append(f"sigma = {rep['sigma']} exceeds sqrt(c) = {rep['bound']}")
        if abs(rep["sigma"] - rep["sigma_adjoint"]) > 1e-10:
            fails.append("adjoint norm mismatch")
    return rep, fails, {}


def task_equivalence(ctx, spec):
    import warnings

    from .interpolation import contraction_norm, equivalence_exact_p2, equivalence_ratio

    cov = ctx.covering
    p = float(spec.get("p", 2.0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cr = contraction_norm(cov)
    samp = equivalence_ratio(cov, p, spec.get("sampler", "random-gaussian"),
                             int(spec.get("trials", 1000)), ctx.seed)
    rep = {"p": p, "sigma": cr.sigma, "c": cr.c_value, "sampled_sup_ratio": samp.sup_ratio,
           "sampled_min_ratio": samp.min_ratio, "lower_bound": samp.lower_bound,
           "lower_ok": samp.lower_ok, "samples": samp.samples, "skipped": samp.skipped}
    fails = []
    if p == 2:
        ex = equivalence_exact_p2(cov, cr.sigma)
        rep.update(sup_ratio=ex.sup_ratio, bound=ex.bound, gap=ex.gap,
                   witness=None if ex.witness is None else ex.witness.tolist())
        if spec.get("assert") and ex.sup_ratio > ex.bound + ctx.tolerance:
            fails.append(f"sup ratio {ex.sup_ratio} exceeds 1/(1-sigma) = {ex.bound}")
    else:
        rep.update(sup_ratio=samp.sup_ratio,
                   witness=None if samp.witness is None else samp.witness.tolist())
    if spec.get("assert") and not samp.lower_ok:
        fails.append("a sample fell below the lower bound")
    return rep, fails, {}


def task_mass_absorption(ctx, spec):
    from dataclasses import asdict

    from .interpolation import mass_absorption_check

    st = mass_absorption_check(ctx.covering, int(spec.get("m", 1)), float(spec.get("p", 4.0)),
                               int(spec.get("trials", 1000)), ctx.seed)
    rep = asdict(st)
    fails = ["a sample fell below 1/2"] if spec.get("assert") and not st.lower_ok else []
    return rep, fails, {}


def task_concentration(ctx, spec):
    import numpy as np

    from .covering import concentration_check

    cov = ctx.covering
    side = spec.get("side") or cov.achieving_side
    p = cov.partition(side)
    pool = [j for j in range(p.n_atoms) if j not in p.excluded]
    rng = np.random.default_rng(ctx.seed)
    worst, bad = 0.0, 0
    trials = int(spec.get("trials", 1000))
    for _ in range(trials):
        k = int(rng.integers(1, len(pool) + 1)) if pool else 0
        fam = rng.choice(pool, size=k, replace=False) if k else []
        r = concentration_check(cov, fam, side)
        if r.rhs > 0:
            worst = max(worst, r.lhs / r.rhs)
        bad += not r.holds
    rep = {"side": side, "c": cov.c_value, "trials": trials, "violations": bad,
           "max_ratio": worst}
    fails = [f"{bad} families violate the inequality"] if spec.get("assert") and bad else []
    return rep, fails, {}


def task_bmo_norm(ctx, spec):
    from .norms import bmo_ab_norm, bmo_norm

    cov = ctx.covering
    f = _function(ctx, spec.get("function"), cov.space.n_cells, cov.space)
    variant = spec.get("variant", "BMO")
    side = spec.get("side", "ab")
    p = float(spec.get("p", 2.0))
    if side == "ab":
        val = bmo_ab_norm(f, cov, variant, p)
    elif side in ("a", "b"):
        val = bmo_norm(f, cov.filtration(side), variant, p)
    else:
        raise ConfigError("side must be a, b or ab")
    rep = {"norm": val, "variant": variant, "p": p,
           "filtration_id": f"{cov.construction}:{side}"}
    return rep, [], {}


def task_jn_profile(ctx, spec):
    import numpy as np

    from .filtration import dyadic_filtration
    from .norms import jn_profile, rademacher_sum
    from .space import WeightFamily, build_grid_space

    cells = int(spec.get("cells", 256))
    levels = int(spec.get("levels", cells.bit_length()))
    sp = build_grid_space([0, 1], cells, WeightFamily.lebesgue())
    filt = dyadic_filtration(sp, levels)
    f = rademacher_sum(sp, int(spec.get("k_max", levels - 1)))
    lo, hi, k = spec.get("lam", [0.25, 10.0, 40])
    prof = jn_profile(f, filt, np.linspace(lo, hi, int(k)))
    rep = {"norm": prof.norm, "variant": "BMO", "c_hat": prof.c_hat, "r2": prof.r2,
           "intercept": prof.intercept, "domination_constant": prof.domination_constant(),
           "dominated_unit_prefactor": prof.dominated(), "filtration_id": f"dyadic:{cells}:{levels}"}
    fails = []
    if spec.get("assert"):
        if not prof.c_hat > 0:
            fails.append("decay rate not positive")
        if not prof.r2 >= float(spec.get("min_r2", 0.9)):
            fails.append(f"R^2 = {prof.r2} below threshold")
    return rep, fails, {"profile.csv": (["lambda", "ratio"], prof.rows())}


def task_czo_apply(ctx, spec):
    from .norms import lp_norm

    op = _operator(ctx, spec.get("operator"))
    f = _function(ctx, spec.get("function"), op.space.n_cells, op.space)
    g = op.apply(f)
    rep = {"operator": op.kind, "l2_in": lp_norm(f, op.space, 2), "l2_out": lp_norm(g, op.space, 2)}
    rows = [(i, float(v)) for i, v in enumerate(g)]
    return rep, [], {"output.csv": (["cell", "value"], rows)}


def task_hormander(ctx, spec):
    from . import czo

    op = _operator(ctx, spec.get("operator"))
    ker = _kernel(op)
    mode = spec.get("mode", "atomic")
    if mode == "atomic":
        rep = {"mode": mode, "constant": czo.hormander_constant_atomic(ker, ctx.covering)}
    elif mode == "metric":
        alphas = spec.get("alpha", [2.0])
        rep = {"mode": mode, "alpha": alphas,
               "constant": [czo.hormander_constant_metric(ker, float(a)) for a in alphas]}
    else:
        raise ConfigError("mode must be atomic or metric")
    rep["operator"] = op.kind
    return rep, [], {}


def task_endpoint(ctx, spec):
    from .czo import linfty_bmo_estimate

    op = _operator(ctx, spec.get("operator"))
    est = linfty_bmo_estimate(op, ctx.covering, int(spec.get("trials", 1000)), ctx.seed,
                              spec.get("variant", "BMO"))
    rep = {"operator": op.kind, "lower_bound": est.lower_bound, "exhaustive": est.exhaustive,
           "evaluated": est.evaluated, "witness": est.witness.tolist()}
    return rep, [], {}


def task_lp_ratio(ctx, spec):
    from .czo import lp_ratio_profile

    op = _operator(ctx, spec.get("operator"))
    rows = lp_ratio_profile(op, spec.get("p", [1.5, 2, 3, 4]), int(spec.get("trials", 200)),
                            ctx.seed)
    return {"operator": op.kind, "profile": rows}, [], {
        "lp_ratio.csv": (["p", "sup_ratio"], [(r["p"], r["sup_ratio"]) for r in rows])}


def _matrix_function(ctx, spec, n_cells):
    import numpy as np

    from .ncbmo import MatrixFunction

    spec = spec or {"kind": "random", "m": 2}
    if spec.get("kind") == "csv":
        from .io import load_matrix_csv

        return load_matrix_csv(spec["path"], n_cells)
    if spec.get("kind", "random") == "random":
        return MatrixFunction.random(n_cells, int(spec.get("m", 2)), np.random.default_rng(ctx.seed))
    raise ConfigError("matrix function kind must be random or csv")


def task_matrix_bmo(ctx, spec):
    from .ncbmo import matrix_bmo_norm

    cov = ctx.covering
    F = _matrix_function(ctx, spec.get("function"), cov.space.n_cells)
    side = spec.get("side", "max")
    variant = spec.get("variant", "BMO")
    filt_side = spec.get("filtration", "a")
    val = matrix_bmo_norm(F, cov.filtration(filt_side), variant, side)
    rep = {"norm": val, "m": F.m, "side": side, "variant": variant,
           "filtration_id": f"{cov.construction}:{filt_side}"}
    return rep, [], {}


def task_tensor_check(ctx, spec):
    from .ncbmo import tensor_contraction_check

    rows, fails = [], []
    for m in spec.get("m", [1, 2, 3]):
        r = tensor_contraction_check(ctx.covering, int(m), ctx.seed)
        rows.append({"m": r.m, "sigma_matrix": r.sigma_matrix, "sigma_scalar": r.sigma_scalar,
                     "sampled_ratio": r.sampled_ratio, "match": r.match})
        if spec.get("assert", True) and not r.match:
            fails.append(f"m = {m}: {r.sigma_matrix} != {r.sigma_scalar}")
    return {"results": rows}, fails, {}


TASKS = {
    "build_covering": task_build_covering,
    "admissibility": task_admissibility,
    "contraction": task_contraction,
    "equivalence": task_equivalence,
    "mass_absorption": task_mass_absorption,
    "concentration": task_concentration,
    "bmo_norm": task_bmo_norm,
    "jn_profile": task_jn_profile,
    "czo_apply": task_czo_apply,
    "hormander": task_hormander,
    "endpoint": task_endpoint,
    "lp_ratio": task_lp_ratio,
    "matrix_bmo": task_matrix_bmo,
    "tensor_check": task_tensor_check,
}

SUBCOMMANDS = {
    "build-covering": "build_covering",
    "check-admissible": "admissibility",
    "contraction": "contraction",
    "equivalence": "equivalence",
    "mass-absorption": "mass_absorption",
    "bmo-norm": "bmo_norm",
    "jn-profile": "jn_profile",
    "czo-apply": "czo_apply",
    "hormander": "hormander",
    "endpoint": "endpoint",
    "matrix-bmo": "matrix_bmo",
    "tensor-check": "tensor_check",
}


# ---------------------------------------------------------------------------
# orchestration


def _task_list(config: dict) -> list:
    tasks = config.get("tasks", [])
    if not isinstance(tasks, list):
        raise ConfigError("tasks must be a list")
    out = []
    for t in tasks:
        if isinstance(t, str):
            t = {"task": t}
        if not isinstance(t, dict) or t.get("task") not in TASKS:
            raise ConfigError(f"unknown task {t!r}")
        out.append(t)
    return out


def run(config: dict, out_dir: Path, seed=None, tolerance=None) -> int:
    """Execute the config's tasks in order and write the reports."""
    from .io import csv_text, dumps

    tasks = _task_list(config)
    seed = config.get("seed") if seed is None else seed
    if seed is None and any(t["task"] in SAMPLING_TASKS for t in tasks):
        raise ConfigError("a seed is required for sampling tasks")
    tol = float(config.get("tolerance", 1e-9) if tolerance is None else tolerance)
    ctx = Context(config, None if seed is None else int(seed), tol)
    reports, failures, writes = [], [], {}
    for i, spec in enumerate(tasks):
        name = spec["task"]
        try:
            result, fails, files = TASKS[name](ctx, spec)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"task {name!r}: {exc}") from exc
        if isinstance(result, dict):
            fails = list(fails) + _expect(result, spec.get("expect"), tol)
        entry = {"index": i, "task": name, "status": "failed" if fails else "ok",
                 "failures": fails, "result": result}
        reports.append(entry)
        failures += [{"index": i, "task": name, "message": m} for m in fails]
        writes[f"{i:02d}_{name}.json"] = dumps(entry)
        for fname, (header, rows) in files.items():
            writes[f"{i:02d}_{name}_{fname}"] = csv_text(header, rows)
    summary = {"reports": reports, "failures": failures, "seed": seed, "tolerance": tol}
    writes["report.json"] = dumps(summary)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for fname, text in writes.items():
            (out_dir / fname).write_text(text)
    except OSError as exc:
        raise ConfigError(f"cannot write reports: {exc}") from exc
    sys.stdout.write(dumps([{"task": r["task"], "status": r["status"], "result": _brief(r["result"])}
                            for r in reports]))
    return 2 if failures else 0


def _brief(result):
    """Scalar fields only, so stdout stays readable."""
    if not isinstance(result, dict):
        return result
    return {k: v for k, v in result.items() if not isinstance(v, (list, dict))}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="master seed for all samplers")
    common.add_argument("--out", help=f"output directory (overridden by ${OUT_ENV})")
    common.add_argument("--threads", type=int, help="cap on BLAS worker threads")
    common.add_argument("--tolerance", type=float, help="tolerance for asserted checks")
    common.add_argument("--construction", help="construction name, replacing the config's")
    common.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                        help="construction parameter (JSON value); repeatable")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="task option (JSON value); repeatable")
    common.add_argument("--assert", dest="assert_", action="store_true",
                        help="turn the task's invariant into an exit-status check")
    p = argparse.ArgumentParser(prog="admbmo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run every task of a config")
    for cmd, task in SUBCOMMANDS.items():
        sub.add_parser(cmd, parents=[common], help=f"run the {task} task")
    return p


def _kv(items):
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"expected KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k] = _parse_value(v)
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        config = {}
        if args.config:
            try:
                config = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config: {exc}") from exc
            if not isinstance(config, dict):
                raise ConfigError("config must be a JSON object")
        if args.construction:
            config["construction"] = {"name": args.construction, "parameters": {}}
        if args.param:
            config.setdefault("construction", {"name": "three_cell"})
            config["construction"].setdefault("parameters", {})
            config["construction"]["parameters"].update(_kv(args.param))
        if args.command != "run":
            task = SUBCOMMANDS[args.command]
            spec = dict(config.get(task, {}))
            for t in config.get("tasks", []):
                if isinstance(t, dict) and t.get("task") == task:
                    spec.update(t)
            spec.update(_kv(args.set))
            spec["task"] = task
            if args.assert_:
                spec["assert"] = True
            config["tasks"] = [spec]
        out = os.environ.get(OUT_ENV) or args.out or config.get("output", {}).get("dir") or "."
        return run(config, Path(out), args.seed, args.tolerance)
    except ConfigError as exc:
        sys.stderr.write(f"admbmo: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
