"""Second-order equivalent-circuit cell model with SoC lookup tables."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np


class SocDomainError(ValueError):
    """SoC (or OCV) outside the tabulated range."""

    def __init__(self, value: float, what: str = "SoC", lo: float = 0.0, hi: float = 1.0):
        super().__init__(f"{what} {value!r} outside [{lo}, {hi}]")
        self.value = value


def _as_table(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError(f"{name}: need a 1-D table with at least two entries")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite entry")
    return arr


def _check_soc(z: float) -> float:
    z = float(z)
    if not 0.0 <= z <= 1.0:
        raise SocDomainError(z)
    return z


def _segment(x: np.ndarray, z: float) -> int:
    """Index k of the segment [x[k], x[k+1]] holding z; right segment at knots."""
    k = int(np.searchsorted(x, z, side="right")) - 1
    return min(max(k, 0), x.size - 2)


@dataclass(frozen=True, eq=False)
class OcvCurve:
    soc_breakpoints: np.ndarray
    ocv_values: np.ndarray

    def __post_init__(self):
        x = _as_table(self.soc_breakpoints, "soc_breakpoints")
        y = _as_table(self.ocv_values, "ocv_values")
        if x.size != y.size:
            raise ValueError("OCV table: soc and ocv lengths differ")
        if np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0):
            raise ValueError("OCV table must be strictly increasing in SoC and OCV")
        if x[0] != 0 or x[-1] != 1:
            raise ValueError("SoC breakpoints must run from 0 to 1")
        object.__setattr__(self, "soc_breakpoints", x)
        object.__setattr__(self, "ocv_values", y)

    @classmethod
    def from_csv(cls, path: str | Path) -> "OcvCurve":
        with open(path, newline="") as fh:
            rows = [r for r in csv.DictReader(fh)]
        return cls([float(r["soc"]) for r in rows], [float(r["ocv"]) for r in rows])

    def value(self, z: float) -> float:
        z = _check_soc(z)
        x, y = self.soc_breakpoints, self.ocv_values
        k = _segment(x, z)
        return float(y[k] + (y[k + 1] - y[k]) * (z - x[k]) / (x[k + 1] - x[k]))

    def slope(self, z: float) -> float:
        z = _check_soc(z)
        x, y = self.soc_breakpoints, self.ocv_values
        k = _segment(x, z)
        return float((y[k + 1] - y[k]) / (x[k + 1] - x[k]))

    def inverse(self, v: float) -> float:
        x, y = self.soc_breakpoints, self.ocv_values
        v = float(v)
        if not y[0] <= v <= y[-1]:
            raise SocDomainError(v, "OCV", float(y[0]), float(y[-1]))
        if v == y[-1]:
            return float(x[-1])
        k = _segment(y, v)
        return float(x[k] + (x[k + 1] - x[k]) * (v - y[k]) / (y[k + 1] - y[k]))


@dataclass(frozen=True)
class CellParams:
    """Cell parameters resolved at one SoC."""

    r0: float
    r1: float
    c1: float
    r2: float
    c2: float
    k_v: float
    capacity: float

    @property
    def tau1(self) -> float:
        return self.r1 * self.c1

    @property
    def tau2(self) -> float:
        return self.r2 * self.c2


@dataclass(frozen=True, eq=False)
class CellModel:
    """ECM cell: OCV source, series R0 and two RC pairs, all tabulated over SoC.

    ``capacity`` is in A*s.  Resistance/capacitance tables share ``soc_grid``.
    """

    capacity: float
    ocv: OcvCurve
    soc_grid: np.ndarray
    r0: np.ndarray
    r1: np.ndarray
    c1: np.ndarray
    r2: np.ndarray
    c2: np.ndarray
    name: str = "cell"

    def __post_init__(self):
        if not self.capacity > 0:
            raise ValueError("capacity must be positive")
        grid = _as_table(self.soc_grid, "soc_grid")
        if np.any(np.diff(grid) <= 0) or grid[0] > 0 or grid[-1] < 1:
            raise ValueError("soc_grid must be increasing and span [0, 1]")
        object.__setattr__(self, "soc_grid", grid)
        for name in ("r0", "r1", "c1", "r2", "c2"):
            arr = _as_table(getattr(self, name), name)
            if arr.size != grid.size:
                raise ValueError(f"{name}: length differs from soc_grid")
            object.__setattr__(self, name, arr)
        if np.any(self.r0 < 0) or np.any(self.r1 <= 0) or np.any(self.r2 <= 0):
            raise ValueError("resistances must be >= 0 (R1, R2 > 0 for finite time constants)")
        if np.any(self.c1 <= 0) or np.any(self.c2 <= 0):
            raise ValueError("capacitances must be positive")

    @classmethod
    def constant(cls, capacity: float, ocv: OcvCurve, r0: float, r1: float, c1: float,
                 r2: float, c2: float, name: str = "cell") -> "CellModel":
        grid = [0.0, 1.0]
        return cls(capacity, ocv, grid, [r0] * 2, [r1] * 2, [c1] * 2, [r2] * 2, [c2] * 2, name)

    @classmethod
    def from_dict(cls, data: dict, name: str = "cell") -> "CellModel":
        soc = data["soc"]
        ocv_soc = data.get("ocv_soc", soc)
        return cls(
            capacity=float(data["capacity_As"]),
            ocv=OcvCurve(ocv_soc, data["ocv"]),
            soc_grid=soc,
            r0=data["r0"], r1=data["r1"], c1=data["c1"], r2=data["r2"], c2=data["c2"],
            name=data.get("name", name),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "CellModel":
        path = Path(path)
        data = json.loads(path.read_text())
        if "ocv_csv" in data:
            curve = OcvCurve.from_csv(path.parent / data["ocv_csv"])
            data = dict(data, ocv_soc=list(curve.soc_breakpoints), ocv=list(curve.ocv_values))
        return cls.from_dict(data, name=path.stem)

    def ocv_at(self, z: float) -> float:
        return self.ocv.value(z)

    def params_at(self, z: float) -> CellParams:
        z = _check_soc(z)
        g = self.soc_grid
        return CellParams(
            r0=float(np.interp(z, g, self.r0)),
            r1=float(np.interp(z, g, self.r1)),
            c1=float(np.interp(z, g, self.c1)),
            r2=float(np.interp(z, g, self.r2)),
            c2=float(np.interp(z, g, self.c2)),
            k_v=self.ocv.slope(z),
            capacity=self.capacity,
        )


def ocv(model: CellModel, z: float) -> float:
    return model.ocv.value(z)


def ocv_slope(model: CellModel, z: float) -> float:
    return model.ocv.slope(z)


def soc_from_ocv(model: CellModel, v: float) -> float:
    return model.ocv.inverse(v)


def params_at(model: CellModel, z: float) -> CellParams:
    return model.params_at(z)


def load_fixture(name: str) -> CellModel:
    """Load a bundled cell: ``"linear"`` or ``"icr18650"``."""
    ref = resources.files("rbs.data").joinpath(f"cell_{name}.json")
    if not ref.is_file():
        raise FileNotFoundError(f"no bundled cell fixture {name!r}")
    return CellModel.from_dict(json.loads(ref.read_text()), name=name)


def resolve_cells(models: Sequence[CellModel], socs: Sequence[float]) -> list[CellParams]:
    if len(models) != len(socs):
        raise ValueError("one SoC per cell model required")
    return [m.params_at(z) for m, z in zip(models, socs)]
