"""Rectangular evaluation grids and gridded density fields.

A :class:`DensityField` is the common currency between the truth
estimators, the mixture evaluator and the divergence metrics: PDF values
on a 1D or 2D rectangular grid plus enough metadata (axis ranges, labels,
trapezoidal integral) to compare two fields safely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["GridAxis", "GridSpec", "DensityField", "auto_grid"]


@dataclass(frozen=True)
class GridAxis:
    """One grid dimension: `n` equispaced points on [lo, hi]."""

    lo: float
    hi: float
    n: int
    label: str = ""

    def __post_init__(self):
        if not (self.hi > self.lo):
            raise ValueError(f"grid axis needs hi > lo, got [{self.lo}, {self.hi}]")
        if self.n < 2:
            raise ValueError("grid axis needs at least 2 points")

    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)


@dataclass(frozen=True)
class GridSpec:
    axes: tuple[GridAxis, ...]

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(ax.n for ax in self.axes)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(ax.label for ax in self.axes)

    def points(self) -> list[np.ndarray]:
        return [ax.points() for ax in self.axes]

    def mesh(self) -> list[np.ndarray]:
        return list(np.meshgrid(*self.points(), indexing="ij"))

    def flat_points(self) -> np.ndarray:
        """All grid nodes as a (prod(shape), ndim) array in C order."""
        mesh = self.mesh()
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def same_geometry(self, other: "GridSpec") -> bool:
        if self.ndim != other.ndim:
            return False
        return all(
            a.lo == b.lo and a.hi == b.hi and a.n == b.n
            for a, b in zip(self.axes, other.axes)
        )

    def describe(self) -> str:
        return ",".join(f"{ax.label}[{ax.lo:g}:{ax.hi:g}:{ax.n}]" for ax in self.axes)


# numpy renamed trapz; support both lines
_trapz = getattr(np, "trapezoid", None) or np.trapz


def trapezoid_integral(values: np.ndarray, grid: GridSpec) -> float:
    """Trapezoidal quadrature of a gridded function over the whole grid."""
    acc = np.asarray(values, dtype=float)
    for axis in reversed(range(grid.ndim)):
        acc = _trapz(acc, grid.axes[axis].points(), axis=axis)
    return float(acc)


@dataclass
class DensityField:
    """PDF values on a grid, with the stored trapezoidal integral."""

    grid: GridSpec
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if np.any(self.values < 0):
            raise ValueError("density values must be nonnegative")
        self.meta.setdefault("integral", trapezoid_integral(self.values, self.grid))

    @property
    def integral(self) -> float:
        return float(self.meta["integral"])

    def renormalized(self) -> "DensityField":
        """Rescale so the on-grid trapezoidal integral is exactly 1."""
        z = trapezoid_integral(self.values, self.grid)
        if z <= 0:
            raise ValueError("cannot renormalize a field with zero mass")
        meta = dict(self.meta)
        meta["integral"] = 1.0
        return DensityField(self.grid, self.values / z, meta)

    # -- persistence ------------------------------------------------------

    def to_csv(self, path: str | Path) -> Path:
        """Write axis columns plus a density column, C-order rows.

        A sibling ``<name>.json`` file records the grid and metadata.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        pts = self.grid.flat_points()
        vals = self.values.ravel()
        labels = [lab if lab else f"dim{i}" for i, lab in enumerate(self.grid.labels)]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(labels + ["density"]) + "\n")
            for row, v in zip(pts, vals):
                cells = [f"{c:.17g}" for c in row] + [f"{v:.17g}"]
                fh.write(",".join(cells) + "\n")
        meta = {
            "grid": [
                {"lo": ax.lo, "hi": ax.hi, "n": ax.n, "label": ax.label}
                for ax in self.grid.axes
            ],
        }
        meta.update(_json_safe(self.meta))
        with open(path.with_suffix(".json"), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @staticmethod
    def from_csv(path: str | Path) -> "DensityField":
        path = Path(path)
        with open(path.with_suffix(".json"), "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        axes = tuple(
            GridAxis(a["lo"], a["hi"], a["n"], a["label"]) for a in meta.pop("grid")
        )
        grid = GridSpec(axes)
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        values = data[:, -1].reshape(grid.shape)
        return DensityField(grid, values, meta)


def auto_grid(
    samples: np.ndarray,
    labels: tuple[str, ...] | None = None,
    span_sigma: float = 6.0,
    points: int | tuple[int, ...] | None = None,
) -> GridSpec:
    """Grid covering mean +/- span_sigma standard deviations per dimension.

    Wide tails are the regime of interest, so the default span is generous;
    callers pass the truth-ensemble samples so the same grid serves both the
    reference and the recovered density.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.ndim != 2:
        raise ValueError("samples must be (n, d)")
    d = samples.shape[1]
    if points is None:
        points = 200 if d == 1 else 100
    if isinstance(points, int):
        points = (points,) * d
    if labels is None:
        labels = tuple(f"dim{i}" for i in range(d))
    mu = samples.mean(axis=0)
    sd = samples.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    axes = tuple(
        GridAxis(float(m - span_sigma * s), float(m + span_sigma * s), int(n), lab)
        for m, s, n, lab in zip(mu, sd, points, labels)
    )
    return GridSpec(axes)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj
