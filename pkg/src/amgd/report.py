"""Multi-seed aggregation, log-log slope fits and deterministic CSV emission."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

Z_90 = 1.645
FLOAT_FMT = "%.17g"


class NonpositiveValue(ValueError):
    pass


class InsufficientPoints(ValueError):
    pass


class IoFailure(OSError):
    pass


class EmptyReport(ValueError):
    pass


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    residual: float
    window: tuple
    n_points: int


def fit_loglog_slope(ks, vals, window: Optional[tuple] = None) -> SlopeFit:
    """Ordinary least squares of ``log(val)`` on ``log(k)`` for ``k`` inside ``window``.

    ``window`` is an inclusive ``(lo, hi)`` range of ``k``; ``None`` drops the
    first decade, i.e. keeps ``k >= 10 * ks[0]``. ``residual`` is the RMS
    misfit in log space.
    """
    ks = np.asarray(ks, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if ks.shape != vals.shape or ks.ndim != 1:
        raise ValueError("ks and vals must be 1-D sequences of equal length")
    if len(ks) > 1 and np.any(np.diff(ks) <= 0):
        raise ValueError("ks must be strictly increasing")
    if window is None:
        window = (10.0 * ks[0], np.inf) if len(ks) else (0.0, np.inf)
    lo, hi = window
    mask = (ks >= lo) & (ks <= hi)
    if mask.sum() < 4:
        raise InsufficientPoints(f"{int(mask.sum())} points in window {window}; need at least 4")
    kk, vv = ks[mask], vals[mask]
    if np.any(vv <= 0) or np.any(kk <= 0):
        raise NonpositiveValue("log-log fit needs positive k and values")
    X = np.log(kk)
    Y = np.log(vv)
    design = np.column_stack([X, np.ones_like(X)])
    (slope, intercept), *_ = np.linalg.lstsq(design, Y, rcond=None)
    resid = Y - (slope * X + intercept)
    return SlopeFit(float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))),
                    (float(lo), float(hi)), int(mask.sum()))


def confidence_band(curves: np.ndarray, z: float = Z_90):
    """Pointwise mean and ``mean +/- z * s / sqrt(n)`` across seeds (rows)."""
    curves = np.atleast_2d(np.asarray(curves, dtype=float))
    n = curves.shape[0]
    mean = curves.mean(axis=0)
    if n < 2:
        return mean, mean.copy(), mean.copy()
    half = z * curves.std(axis=0, ddof=1) / np.sqrt(n)
    return mean, mean - half, mean + half


@dataclass
class ExperimentReport:
    """Per-seed metric curves on a shared index grid plus their aggregate."""

    ks: np.ndarray
    curves: np.ndarray  # shape (n_seeds, n_points)
    seeds: Sequence[int]
    metric_name: str
    index_name: str = "k"
    mean_name: str = "mean"
    slope: Optional[SlopeFit] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ks = np.asarray(self.ks)
        self.curves = np.atleast_2d(np.asarray(self.curves, dtype=float))
        if self.curves.size and self.curves.shape != (len(self.seeds), len(self.ks)):
            raise ValueError(f"curves shape {self.curves.shape} does not match "
                             f"{len(self.seeds)} seeds x {len(self.ks)} points")

    @property
    def band(self):
        return confidence_band(self.curves)

    @property
    def mean(self):
        return self.band[0]

    def fit(self, window=None) -> SlopeFit:
        self.slope = fit_loglog_slope(self.ks, self.mean, window)
        return self.slope


def aggregate(ks, per_seed: dict, metric_name: str, **kwargs) -> ExperimentReport:
    seeds = list(per_seed)
    curves = np.array([per_seed[s] for s in seeds], dtype=float)
    return ExperimentReport(np.asarray(ks), curves, seeds, metric_name, **kwargs)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return FLOAT_FMT % float(v)


def _write_csv(path: Path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) if not isinstance(v, str) else v for v in r])
    except OSError as err:
        raise IoFailure(f"cannot write {path}: {err}") from err


def _curve_rows(report: ExperimentReport, idx):
    mean, lo, hi = report.band
    for i in idx:
        yield [report.ks[i], mean[i], lo[i], hi[i], *report.curves[:, i]]


def _plot_indices(n, max_points=200):
    if n <= max_points:
        return list(range(n))
    idx = np.unique(np.round(np.geomspace(1, n, max_points)).astype(int) - 1)
    return idx.tolist()


def emit_report(report: ExperimentReport, out_dir) -> list:
    """Write ``curves.csv``, ``slopes.csv``, ``plot_data.csv`` and ``metadata.json``.

    ``plot_data.csv`` shares the curves schema, thinned to at most 200
    log-spaced rows. Output bytes depend only on the report contents.
    """
    if report.curves.size == 0 or len(report.seeds) == 0:
        raise EmptyReport("report has no seed curves")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise IoFailure(f"cannot create {out}: {err}") from err
    header = [report.index_name, report.mean_name, "ci_low", "ci_high"] + [f"seed_{s}" for s in report.seeds]
    paths = [out / "curves.csv", out / "slopes.csv", out / "plot_data.csv", out / "metadata.json"]
    _write_csv(paths[0], header, _curve_rows(report, range(len(report.ks))))
    slope_rows = []
    if report.slope is not None:
        s = report.slope
        slope_rows.append([report.metric_name, s.slope, s.intercept, s.residual, s.window[0], s.window[1], s.n_points])
    _write_csv(paths[1], ["metric", "slope", "intercept", "residual", "window_lo", "window_hi", "n_points"], slope_rows)
    _write_csv(paths[2], header, _curve_rows(report, _plot_indices(len(report.ks))))
    meta = dict(report.metadata, metric=report.metric_name, seeds=[int(s) for s in report.seeds])
    try:
        paths[3].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    except OSError as err:
        raise IoFailure(f"cannot write {paths[3]}: {err}") from err
    return paths


def read_curves(path) -> ExperimentReport:
    """Parse a ``curves.csv`` back into a report (the aggregate columns are recomputed)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    seeds = [int(h[len("seed_"):]) for h in header[4:]]
    data = np.array([[float(v) for v in r] for r in body]) if body else np.empty((0, len(header)))
    ks = data[:, 0]
    if np.all(ks == np.round(ks)):
        ks = ks.astype(np.int64)
    return ExperimentReport(ks, data[:, 4:].T, seeds, metric_name="", index_name=header[0], mean_name=header[1])


def write_trace_csv(traces, path) -> None:
    """Long-format optimizer diagnostics: ``k, metric_name, value, seed``."""
    rows = []
    for tr in traces:
        for k, v in zip(tr.metric_ks, tr.metric_values):
            rows.append([k, tr.metric_name or "", v, "" if tr.seed is None else tr.seed])
    _write_csv(Path(path), ["k", "metric_name", "value", "seed"], rows)
