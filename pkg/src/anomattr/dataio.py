"""Dataset ingestion, standardization, result serialization, and SVG plots.

File formats:

* CSV: UTF-8, comma separated, one header row naming the columns, last column
  is the target.  No thousands separators.
* Result JSON: ``{schema_version, config, anomaly_scores, methods: {name:
  {scores, distribution?}}, diagnostics}``; emitted bytes are deterministic
  for identical inputs (sorted keys, shortest round-trip float formatting).
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "CsvFormatError",
    "Standardization",
    "TestSet",
    "RunConfig",
    "load_csv",
    "standardize",
    "delta_to_raw_units",
    "emit_result_json",
    "emit_litmus_svg",
    "emit_distribution_svg",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1


class CsvFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Standardization:
    """Per-variable (mean, std) with a record of where the statistics came
    from: ``user_supplied`` or ``test_set_estimated``."""

    mean: np.ndarray
    std: np.ndarray
    provenance: str

    def __post_init__(self):
        if self.provenance not in ("user_supplied", "test_set_estimated"):
            raise ValueError(f"unknown provenance {self.provenance!r}")


@dataclass
class TestSet:
    """Observed samples (x^t, y^t) to detect and explain.

    ``x`` has shape (n_test, dimension); ``standardization`` is None for raw
    data and records the applied statistics otherwise.
    """

    __test__ = False  # not a pytest class despite the name

    x: np.ndarray
    y: np.ndarray
    variable_names: list[str]
    standardization: Standardization | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.ndim != 2:
            raise ValueError("x must be a 2-d array (n_test, dimension)")
        if self.y.shape != (self.x.shape[0],):
            raise ValueError("y must have one entry per sample")
        if len(self.variable_names) != self.x.shape[1]:
            raise ValueError("one variable name per column required")

    @property
    def n_test(self) -> int:
        return self.x.shape[0]

    @property
    def dimension(self) -> int:
        return self.x.shape[1]

    def select(self, indices) -> "TestSet":
        indices = list(indices)
        return TestSet(
            self.x[indices], self.y[indices], self.variable_names, self.standardization
        )


@dataclass
class RunConfig:
    """Echo of everything needed to reproduce a CLI run."""

    model: str
    methods: list[str]
    seed: int
    data: str = ""
    indices: list[int] = field(default_factory=list)
    collective: bool = False
    hyperparams: dict = field(default_factory=dict)
    output_dir: str = ""

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "methods": list(self.methods),
            "seed": self.seed,
            "data": self.data,
            "indices": list(self.indices),
            "collective": self.collective,
            "hyperparams": dict(self.hyperparams),
            "output_dir": self.output_dir,
        }


def load_csv(path) -> TestSet:
    """Parse a dataset CSV: header row, feature columns, last column target."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise CsvFormatError(f"{path}: empty file")
    header = [c.strip() for c in rows[0]]
    if len(header) < 2:
        raise CsvFormatError(f"{path}: need at least one feature column and a target")

    def _numeric(cell: str) -> bool:
        try:
            float(cell)
        except ValueError:
            return False
        return True

    if all(_numeric(c) for c in header):
        raise CsvFormatError(f"{path}: missing header row (first row is numeric)")

    width = len(header)
    data = np.empty((len(rows) - 1, width))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise CsvFormatError(
                f"{path}: row {i} has {len(row)} cells, expected {width}"
            )
        for j, cell in enumerate(row):
            try:
                data[i - 2, j] = float(cell)
            except ValueError:
                raise CsvFormatError(
                    f"{path}: non-numeric value {cell!r} at row {i}, column "
                    f"{header[j]!r}"
                ) from None
    return TestSet(data[:, :-1], data[:, -1], header[:-1])


def standardize(ts: TestSet, stats: tuple | None = None) -> TestSet:
    """Shift/scale the x columns to zero mean, unit variance; y is untouched.

    ``stats`` is an optional (mean, std) pair of per-variable arrays.  When
    omitted the statistics are estimated from the test set itself (population
    std), which is the only option without training data; a warning flags the
    provenance.  The inverse transform for perturbations is
    :func:`delta_to_raw_units`.
    """
    if stats is not None:
        mean = np.asarray(stats[0], dtype=float)
        std = np.asarray(stats[1], dtype=float)
        provenance = "user_supplied"
    else:
        mean = ts.x.mean(axis=0)
        std = ts.x.std(axis=0)
        provenance = "test_set_estimated"
        warnings.warn(
            "standardization statistics estimated from the test set itself; "
            "supply external statistics if available",
            stacklevel=2,
        )
    if mean.shape != (ts.dimension,) or std.shape != (ts.dimension,):
        raise ValueError("stats must provide one (mean, std) per variable")
    bad = np.nonzero(std <= 0)[0]
    if bad.size:
        raise ValueError(
            f"zero standard deviation for variable {ts.variable_names[bad[0]]!r}"
        )
    return TestSet(
        (ts.x - mean) / std,
        ts.y.copy(),
        ts.variable_names,
        Standardization(mean, std, provenance),
    )


def delta_to_raw_units(delta, ts: TestSet) -> np.ndarray:
    """Map a perturbation from standardized units back to raw input units."""
    delta = np.asarray(delta, dtype=float)
    if ts.standardization is None:
        return delta.copy()
    return delta * ts.standardization.std


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    return obj


def emit_result_json(results: dict, path) -> None:
    """Write a versioned result document with deterministic bytes.

    ``results`` supplies ``config``, ``anomaly_scores``, ``methods`` and
    ``diagnostics``; missing sections default to empty.  Floats are written in
    shortest round-trip form, so a reload reproduces the scores bit-exactly.
    """
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config": _jsonify(results.get("config", {})),
        "anomaly_scores": _jsonify(results.get("anomaly_scores", [])),
        "methods": _jsonify(results.get("methods", {})),
        "diagnostics": _jsonify(results.get("diagnostics", {})),
    }
    text = json.dumps(doc, sort_keys=True, indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# SVG emission
# ---------------------------------------------------------------------------

_NEG_COLOR = "rgb(33,102,172)"   # blue
_POS_COLOR = "rgb(178,24,43)"    # red
_PALETTE = [
    "#1b6ca8", "#c0392b", "#1e8449", "#8e44ad", "#d68910",
    "#17a589", "#884ea0", "#2e4053", "#a04000", "#5d6d7e",
]


def _fmt(v: float) -> str:
    return format(float(v), ".6g")


def emit_litmus_svg(results: dict[str, np.ndarray], path, variable_names=None) -> None:
    """Render a signed color-matrix plot: one row per method, one column per
    variable.  Each row is normalized by its max absolute score (0/0 -> 0);
    negative scores are blue, positive red, cell opacity tracks magnitude, so
    a zero score renders white.
    """
    if not results:
        raise ValueError("need at least one method")
    methods = list(results.keys())
    ncol = len(np.atleast_1d(next(iter(results.values()))))
    if ncol < 1:
        raise ValueError("need at least one variable")
    if variable_names is None:
        variable_names = [f"x{i + 1}" for i in range(ncol)]

    cell, label_w, top = 34, 90, 46
    width = label_w + ncol * cell + 10
    height = top + len(methods) * cell + 10
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for j, name in enumerate(variable_names):
        out.append(
            f'<text x="{label_w + j * cell + cell / 2:.1f}" y="{top - 8}" '
            f'text-anchor="middle">{name}</text>'
        )
    for i, method in enumerate(methods):
        scores = np.atleast_1d(np.asarray(results[method], dtype=float))
        if scores.shape[0] != ncol:
            raise ValueError(f"method {method!r} has {scores.shape[0]} scores, expected {ncol}")
        peak = np.max(np.abs(scores))
        normalized = scores / peak if peak > 0 else np.zeros_like(scores)
        y = top + i * cell
        out.append(
            f'<text x="{label_w - 6}" y="{y + cell / 2 + 4:.1f}" '
            f'text-anchor="end">{method}</text>'
        )
        for j, v in enumerate(normalized):
            color = _NEG_COLOR if v < 0 else _POS_COLOR
            out.append(
                f'<rect x="{label_w + j * cell}" y="{y}" width="{cell}" '
                f'height="{cell}" fill="{color}" fill-opacity="{_fmt(abs(v))}" '
                f'stroke="#888" stroke-width="0.5"/>'
            )
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def emit_distribution_svg(dists, map_point, path, variable_names=None) -> None:
    """Render per-variable score distributions as curves on shared axes, with
    a marker at each variable's MAP point."""
    dists = list(dists)
    if not dists:
        raise ValueError("need at least one distribution")
    map_point = np.asarray(map_point, dtype=float)
    if variable_names is None:
        variable_names = [f"x{d.variable_index + 1}" for d in dists]
    grid = dists[0].grid
    gmin, gmax = float(grid[0]), float(grid[-1])
    for d in dists:
        if abs(float(d.grid[0]) - gmin) > 1e-12 or abs(float(d.grid[-1]) - gmax) > 1e-12:
            raise ValueError("all distributions must share one grid range")
    pmax = max(float(np.max(d.probs)) for d in dists)
    pmax = pmax if pmax > 0 else 1.0

    width, height, ml, mr, mt, mb = 560, 320, 56, 140, 20, 40
    pw, ph = width - ml - mr, height - mt - mb

    def sx(v):
        return ml + (v - gmin) / (gmax - gmin) * pw

    def sy(p):
        return mt + (1.0 - p / pmax) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{ml}" y="{height - 10}">{_fmt(gmin)}</text>',
        f'<text x="{ml + pw}" y="{height - 10}" text-anchor="end">{_fmt(gmax)}</text>',
        f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">perturbation</text>',
    ]
    for k, d in enumerate(dists):
        color = _PALETTE[k % len(_PALETTE)]
        pts = " ".join(
            f"{sx(g):.2f},{sy(p):.2f}" for g, p in zip(d.grid, d.probs)
        )
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        mk = map_point[d.variable_index]
        nearest = int(np.argmin(np.abs(d.grid - mk)))
        out.append(
            f'<circle cx="{sx(d.grid[nearest]):.2f}" cy="{sy(d.probs[nearest]):.2f}" '
            f'r="3.5" fill="{color}"/>'
        )
        ly = mt + 14 + 16 * k
        out.append(
            f'<rect x="{width - mr + 10}" y="{ly - 9}" width="12" height="12" fill="{color}"/>'
        )
        out.append(
            f'<text x="{width - mr + 27}" y="{ly}" class="legend">{variable_names[k]}</text>'
        )
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
