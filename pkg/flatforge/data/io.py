"""
Text and CSV formats for loop elements, flow samples, immersion data and
spectral reports. Floats go out in their shortest round-tripping form, so
reading a written element back is bit-exact.
"""
import logging
import os

import numpy as np
import pandas as pd

from flatforge.algebra.loop_algebra import LoopElement
from flatforge.errors import FlatforgeError, LoopAlgebraError

logger = logging.getLogger(__name__)

CSV_OPTIONS = dict(index=False, float_format="%.17g", lineterminator="\n", na_rep="nan")


def dumps_loop(X: LoopElement) -> str:
    lines = [f"# loop-element m={X.m} lo={X.lo} hi={X.hi} real={'true' if X.real else 'false'}"]
    for i, coefficient in X.as_dict().items():
        lines.append(f"degree {i}")
        for row in coefficient:
            lines.append(" ".join(f"{float(v.real)!r},{float(v.imag)!r}" for v in row))
    return "\n".join(lines) + "\n"


def loads_loop(text: str) -> LoopElement:
    lines = [line.strip() for line in text.strip().splitlines() if line.strip()]
    if not lines or not lines[0].startswith("# loop-element"):
        raise LoopAlgebraError("missing '# loop-element' header")
    header = dict(item.split("=", 1) for item in lines[0].split()[2:])
    m, lo, hi = int(header["m"]), int(header["lo"]), int(header["hi"])
    stack = np.zeros((hi - lo + 1, m, m), dtype=complex)
    pos = 1
    for i in range(lo, hi + 1):
        if lines[pos] != f"degree {i}":
            raise LoopAlgebraError(f"expected 'degree {i}', got {lines[pos]!r}")
        for r in range(m):
            pairs = lines[pos + 1 + r].split()
            if len(pairs) != m:
                raise LoopAlgebraError(f"degree {i} row {r} has {len(pairs)} entries, expected {m}")
            for c, pair in enumerate(pairs):
                re, im = pair.split(",")
                stack[i - lo, r, c] = complex(float(re), float(im))
        pos += 1 + m
    return LoopElement(lo, stack, header["real"] == "true")


def write_text(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="\n") as handle:
        handle.write(text)
    logger.info("wrote %s", path)


def write_csv(frame: pd.DataFrame, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, **CSV_OPTIONS)
    logger.info("wrote %s", path)


def _t_columns(t):
    return {f"t{d + 1}": float(v) for d, v in enumerate(t)}


def flow_samples_text(flow) -> str:
    chunks = []
    for index in sorted(flow.samples):
        t = flow.point(index)
        chunks.append("# t = " + " ".join(repr(float(v)) for v in t) + "\n" + dumps_loop(flow.samples[index]))
    return "".join(chunks)


def residual_table(flow) -> pd.DataFrame:
    rows = []
    for index in sorted(flow.residuals):
        residual = flow.residuals[index]
        row = _t_columns(flow.point(index))
        row.update({"norm_drift": residual.norm_drift, "max_charpoly_drift": residual.charpoly_drift})
        rows.append(row)
    return pd.DataFrame(rows)


def immersion_table(samples) -> pd.DataFrame:
    rows = []
    for index in sorted(samples):
        sample = samples[index]
        row = _t_columns(sample.t)
        row.update({f"f{k + 1}": float(v) for k, v in enumerate(sample.f)})
        row.update({
            "imm_det": sample.imm_det,
            "omega_residual": sample.omega_residual,
            "eta_residual": sample.eta_residual,
        })
        rows.append(row)
    return pd.DataFrame(rows)


def mesh_text(grid, samples) -> str:
    """Grid shape header, then one line of f coordinates per point in index order."""
    lines = [
        "# mesh shape=" + "x".join(map(str, grid.counts)) + f" dim={len(next(iter(samples.values())).f)}",
        "# lower=" + " ".join(repr(v) for v in grid.lower) + f" spacing={grid.spacing!r}",
    ]
    for index in sorted(samples):
        lines.append(" ".join(map(str, index)) + " " + " ".join(repr(float(v)) for v in samples[index].f))
    return "\n".join(lines) + "\n"


def read_mesh(path):
    """Mesh file back as {grid index: f}."""
    points = {}
    axes = None
    with open(path) as handle:
        for line in handle:
            if line.startswith("# mesh"):
                shape = line.split("shape=")[1].split()[0]
                axes = len(shape.split("x"))
                continue
            if line.startswith("#") or not line.strip():
                continue
            if axes is None:
                raise FlatforgeError(f"{path}: mesh header missing")
            parts = line.split()
            points[tuple(int(v) for v in parts[:axes])] = np.array([float(v) for v in parts[axes:]])
    return points


def mu_table(mu_samples) -> pd.DataFrame:
    rows = []
    for sample in mu_samples:
        for pair in sample.pairs:
            rows.append({
                "i": sample.i,
                "z_re": sample.z.real,
                "z_im": sample.z.imag,
                "w_re": pair.w.real,
                "w_im": pair.w.imag,
                "mu_re": pair.mu.real,
                "mu_im": pair.mu.imag,
                "residual": pair.residual,
            })
    return pd.DataFrame(rows)


def spectral_report_text(record, drift=None) -> str:
    """One line per c_k listing (degree, re, im) triples, then the regularity block."""
    lines = []
    for k, c in enumerate(record.charpoly):
        triples = " ".join(f"({i}, {float(c.coefficient(i).real)!r}, {float(c.coefficient(i).imag)!r})" for i in range(c.lo, c.hi + 1))
        lines.append(f"c_{k}: {triples}")
    regular = record.regular
    lines.append(f"regular: {regular.status.value}")
    for reason in regular.reasons:
        lines.append(f"reason: {reason}")
    if regular.genus_estimate is not None:
        lines.append(f"genus_estimate: {regular.genus_estimate}")
    lines.append(f"branch_points: {len(regular.branch_points)}")
    if regular.symmetry_nodes:
        lines.append("symmetry_nodes: " + " ".join(repr(complex(z)) for z in regular.symmetry_nodes))
    if drift is not None:
        lines.append(f"max_isospectral_drift: {max(drift.values()) if drift else 0.0!r}")
    return "\n".join(lines) + "\n"
