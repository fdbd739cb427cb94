"""JSON and CSV documents for spaces, partitions, filtrations, kernels and matrix functions."""

from __future__ import annotations

import csv
import io
import json
import math
import re
from pathlib import Path

import numpy as np

from .filtration import AtomicPartition, Filtration
from .space import MeasureSpace, WeightFamily, build_custom_space, build_grid_space


def _num(x):
    """Plain Python value with floats kept at full precision."""
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x) or math.isinf(x):
            return str(x)
        return _FloatToken(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.ndarray):
        return [_num(v) for v in x.tolist()]
    if isinstance(x, dict):
        return {str(k): _num(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_num(v) for v in x]
    return x


class _FloatToken(str):
    def __new__(cls, x):
        return super().__new__(cls, f"@@F:{x:.17g}@@")


_TOKEN = re.compile(r'"@@F:([^@]+)@@"')


def dumps(doc) -> str:
    """Deterministic JSON: sorted keys, floats with 17 significant digits."""
    text = json.dumps(_num(doc), sort_keys=True, indent=2)
    return _TOKEN.sub(lambda m: _json_float(m.group(1)), text) + "\n"


def _json_float(s: str) -> str:
    # keep a decimal point or exponent so readers see a float
    return s if any(ch in s for ch in ".en") else s + ".0"


def fmt(x) -> str:
    return f"{float(x):.17g}"


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# spaces


def space_from_doc(doc: dict) -> MeasureSpace:
    """Build a space from {dimension, domain, cells_per_side, family, parameters}
    or from {family: custom, weights | weights_csv}."""
    fam = doc.get("family", "lebesgue")
    params = doc.get("parameters", {}) or {}
    truncated = bool(doc.get("truncated", False))
    if fam == "custom":
        if "weights" in doc:
            return build_custom_space(doc["weights"], truncated=truncated)
        if "weights_csv" in doc:
            return load_weights_csv(doc["weights_csv"], truncated=truncated)
        raise ValueError("custom space needs weights or weights_csv")
    family = {
        "lebesgue": lambda: WeightFamily.lebesgue(),
        "power_law": lambda: WeightFamily.power_law(params["beta"]),
        "exp_decay": lambda: WeightFamily.exp_decay(params["alpha"]),
        "exp_growth": lambda: WeightFamily.exp_growth(params["alpha"]),
    }
    if fam not in family:
        raise ValueError(f"unknown weight family {fam!r}")
    dom = doc["domain"]
    dim = doc.get("dimension")
    if dim is not None and np.asarray(dom).ndim == 1 and dim > 1:
        dom = [dom] * dim
    return build_grid_space(dom, int(doc["cells_per_side"]), family[fam](), truncated=truncated)


def space_to_doc(space: MeasureSpace) -> dict:
    doc = {"family": space.family.kind, "parameters": space.family.parameters(),
           "truncated": space.truncated, "cells": space.n_cells}
    if space.family.kind == "custom":
        doc["weights"] = space.weights.tolist()
    else:
        doc["dimension"] = space.dimension
        doc["domain"] = [list(p) for p in zip(*space.domain)]
        if space.grid_shape is not None and len(set(space.grid_shape)) == 1:
            doc["cells_per_side"] = space.grid_shape[0]
    return doc


def load_weights_csv(path, truncated: bool = False) -> MeasureSpace:
    rows = read_csv(path)
    rows.sort(key=lambda r: int(r["index"]))
    idx = [int(r["index"]) for r in rows]
    if idx != list(range(len(idx))):
        raise ValueError("weight indices must be 0..n-1")
    return build_custom_space([float(r["weight"]) for r in rows], truncated=truncated)


# ---------------------------------------------------------------------------
# partitions and filtrations


def partition_to_doc(p: AtomicPartition) -> dict:
    return {"atoms": [a.tolist() for a in p.atoms], "distinguished": p.distinguished,
            "terminal": p.terminal, "label": p.label}


def partition_from_doc(space: MeasureSpace, doc: dict) -> AtomicPartition:
    return AtomicPartition.from_atoms(space, doc["atoms"], distinguished=doc.get("distinguished"),
                                      terminal=doc.get("terminal"), label=doc.get("label"))


def filtration_to_doc(f: Filtration) -> dict:
    return {"levels": [partition_to_doc(l) for l in f.levels]}


def filtration_from_doc(space: MeasureSpace, doc: dict) -> Filtration:
    return Filtration([partition_from_doc(space, l) for l in doc["levels"]])


def covering_to_doc(cov) -> dict:
    return {"space": space_to_doc(cov.space), "a": filtration_to_doc(cov.filt_a),
            "b": filtration_to_doc(cov.filt_b), "metadata": cov.metadata()}


def covering_from_doc(doc: dict):
    from .covering import AdmissibleCovering

    sp = space_from_doc(doc["space"])
    fa, fb = filtration_from_doc(sp, doc["a"]), filtration_from_doc(sp, doc["b"])
    meta = doc.get("metadata", {})
    return AdmissibleCovering(sp, fa.first, fb.first, fa, fb,
                              construction=meta.get("construction", "custom"),
                              parameters=meta.get("parameters", {}))


# ---------------------------------------------------------------------------
# kernels and matrix functions


def load_kernel_csv(path, space: MeasureSpace):
    from .czo import Kernel

    k = np.zeros((space.n_cells, space.n_cells))
    for r in read_csv(path):
        k[int(r["x"]), int(r["y"])] = float(r["value"])
    return Kernel(k, space)


def save_kernel_csv(path, ker):
    n = ker.values.shape[0]
    rows = [(x, y, float(ker.values[x, y].real)) for x in range(n) for y in range(n)
            if x != y and ker.values[x, y] != 0]
    write_csv(path, ["x", "y", "value"], rows)


def load_matrix_csv(path, n_cells: int):
    from .ncbmo import MatrixFunction

    rows = read_csv(path)
    m = 1 + max(max(int(r["row"]), int(r["col"])) for r in rows)
    v = np.zeros((n_cells, m, m), dtype=complex)
    for r in rows:
        v[int(r["cell"]), int(r["row"]), int(r["col"])] = complex(float(r["re"]), float(r["im"]))
    return MatrixFunction(v)


def save_matrix_csv(path, F):
    n, m, _ = F.values.shape
    rows = [(c, i, j, float(F.values[c, i, j].real), float(F.values[c, i, j].imag))
            for c in range(n) for i in range(m) for j in range(m)]
    write_csv(path, ["cell", "row", "col", "re", "im"], rows)


def load_json(path):
    return json.loads(Path(path).read_text())


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()
