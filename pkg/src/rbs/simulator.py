"""Time stepping of a reconfigurable pack under a load profile and SSV schedule."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cell import CellModel
from .network import SwitchSpec, assemble, cell_voltages, current_from_power, discretize, \
    terminal_voltage
from .topology import DesignMask, Ssv, SwitchParams, as_ssv, mask_filter

log = logging.getLogger(__name__)

LOAD_KINDS = ("power", "current")

# warning flags recorded per sample
FLAG_SOC_LOW = "soc_low"
FLAG_SOC_HIGH = "soc_high"


class SimulationError(RuntimeError):
    """A step failed; carries the sampling index and the underlying error."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class LoadSegment:
    kind: str
    value: float
    duration: float | None = None   # None: lasts until the end of the run

    def __post_init__(self):
        if self.kind not in LOAD_KINDS:
            raise ValueError(f"load kind must be one of {LOAD_KINDS}, got {self.kind!r}")
        if not np.isfinite(self.value):
            raise ValueError("load value must be finite")
        if self.duration is not None and not self.duration > 0:
            raise ValueError("segment duration must be positive")


@dataclass(frozen=True)
class LoadProfile:
    """Contiguous load segments starting at t = 0; only the last may be open-ended."""

    segments: tuple[LoadSegment, ...]

    def __post_init__(self):
        if not self.segments:
            raise ValueError("load profile needs at least one segment")
        if any(s.duration is None for s in self.segments[:-1]):
            raise ValueError("only the last load segment may be open-ended")

    @classmethod
    def constant_power(cls, p: float) -> "LoadProfile":
        return cls((LoadSegment("power", p),))

    @classmethod
    def constant_current(cls, i: float) -> "LoadProfile":
        return cls((LoadSegment("current", i),))

    @classmethod
    def from_dict(cls, data: dict) -> "LoadProfile":
        if "segments" in data:
            return cls(tuple(LoadSegment(s["kind"], float(s["value"]), s.get("duration_s"))
                             for s in data["segments"]))
        return cls((LoadSegment(data["kind"], float(data["value"])),))

    def to_dict(self) -> dict:
        return {"segments": [{"kind": s.kind, "value": s.value, "duration_s": s.duration}
                             for s in self.segments]}

    def at(self, t: float) -> tuple[str, float]:
        start = 0.0
        for seg in self.segments:
            if seg.duration is None or t < start + seg.duration - 1e-12:
                return seg.kind, seg.value
            start += seg.duration
        raise ValueError(f"load profile ends before t = {t}")


@dataclass(frozen=True)
class ReconfigSchedule:
    steps: tuple[tuple[float, Ssv], ...]

    @classmethod
    def from_pairs(cls, pairs) -> "ReconfigSchedule":
        return cls(tuple((float(d), as_ssv(s)) for d, s in pairs))

    @property
    def horizon(self) -> float:
        return float(sum(d for d, _ in self.steps))

    def validate(self, dt: float, n_cells: int, mask=None) -> list[int]:
        """Samples per step; checks durations, SSV lengths and design admissibility."""
        counts = []
        for k, (dur, ssv) in enumerate(self.steps):
            if not dur > 0:
                raise ValueError(f"schedule step {k}: duration must be positive")
            q = dur / dt
            if abs(q - round(q)) > 1e-9 * max(1.0, q):
                raise ValueError(f"schedule step {k}: duration {dur} is not a multiple of dt={dt}")
            as_ssv(ssv, n_cells)
            if mask is not None and not mask_filter(ssv, mask):
                raise ValueError(f"schedule step {k}: SSV not realisable in the design")
            counts.append(int(round(q)))
        return counts


@dataclass
class StepResult:
    X: np.ndarray
    soc: np.ndarray
    i_t: float
    I_B: np.ndarray
    V_B: np.ndarray
    v_t: float
    flags: tuple[str, ...]


def initial_state(models: Sequence[CellModel], soc: Sequence[float]) -> np.ndarray:
    """Rest state: OCVs at the given SoCs, RC branch currents zero."""
    v = [m.ocv_at(z) for m, z in zip(models, soc)]
    n = len(models)
    return np.concatenate([v, np.zeros(2 * n)])


def _resolve(models, soc):
    flags = []
    params = []
    for m, z in zip(models, soc):
        if z < 0.0:
            flags.append(FLAG_SOC_LOW)
        elif z > 1.0:
            flags.append(FLAG_SOC_HIGH)
        params.append(m.params_at(min(max(float(z), 0.0), 1.0)))
    return params, tuple(sorted(set(flags)))


def step(
    models: Sequence[CellModel],
    X,
    soc,
    ssv: Sequence[int],
    load: tuple[str, float],
    dt: float,
    method: str = "euler",
    switches: SwitchSpec = SwitchParams(),
    *,
    refine: int = 2,
) -> StepResult:
    """Advance one sampling interval.

    Parameters come from the SoCs at the start of the interval; ``i_t`` is
    fixed over the interval (explicit in the load).  The returned ``I_B``,
    ``V_B``, ``v_t`` are the outputs at the start of the interval.  SoC moves
    with the OCV states, ``dz = dV / k_V``, which is coulomb counting
    (``dz = -i_B dt / Q``, discharge positive) for either discretisation.
    """
    X = np.asarray(X, dtype=float)
    soc = np.asarray(soc, dtype=float)
    n = len(models)
    params, flags = _resolve(models, soc)
    ss = assemble(params, ssv, switches, refine=refine)
    kind, value = load
    i_t = current_from_power(ss, X, value) if kind == "power" else float(value)
    I_B = ss.C_IB @ X + ss.D_IB * i_t
    V_B = cell_voltages(ss, X, i_t)
    v_t = terminal_voltage(ss, X, i_t)
    A_d, B_d = discretize(ss, dt, method)
    X_new = A_d @ X + B_d * i_t
    k_v = np.array([p.k_v for p in params])
    soc_new = soc + (X_new[:n] - X[:n]) / k_v
    return StepResult(X_new, soc_new, float(i_t), I_B, V_B, float(v_t), flags)


@dataclass
class SimTrace:
    n_cells: int
    t: list[float] = field(default_factory=list)
    X: list[np.ndarray] = field(default_factory=list)
    I_B: list[np.ndarray] = field(default_factory=list)
    V_B: list[np.ndarray] = field(default_factory=list)
    v_t: list[float] = field(default_factory=list)
    i_t: list[float] = field(default_factory=list)
    soc: list[np.ndarray] = field(default_factory=list)
    flags: list[tuple[str, ...]] = field(default_factory=list)
    step_index: list[int] = field(default_factory=list)
    final_X: np.ndarray | None = None
    final_soc: np.ndarray | None = None
    error: dict | None = None

    def __len__(self):
        return len(self.t)

    @property
    def ok(self) -> bool:
        return self.error is None

    def arrays(self) -> dict[str, np.ndarray]:
        n = self.n_cells
        return {
            "t": np.array(self.t),
            "v_t": np.array(self.v_t),
            "i_t": np.array(self.i_t),
            "I_B": np.array(self.I_B).reshape(-1, n),
            "V_B": np.array(self.V_B).reshape(-1, n),
            "soc": np.array(self.soc).reshape(-1, n),
            "X": np.array(self.X).reshape(-1, 3 * n),
        }

    def csv_header(self) -> list[str]:
        n = self.n_cells
        return (["t", "v_t", "i_t"] + [f"i_b_{k}" for k in range(1, n + 1)]
                + [f"v_b_{k}" for k in range(1, n + 1)] + [f"soc_{k}" for k in range(1, n + 1)]
                + ["flags"])

    def to_csv(self, fh=None) -> str | None:
        """Write the trace as CSV to ``fh``; returns the text when ``fh`` is None."""
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_header())
        for k in range(len(self.t)):
            row = [self.t[k], self.v_t[k], self.i_t[k], *self.I_B[k], *self.V_B[k], *self.soc[k]]
            w.writerow([repr(float(x)) for x in row] + [";".join(self.flags[k])])
        return buf.getvalue() if fh is None else None


@dataclass
class Scenario:
    models: list[CellModel]
    schedule: ReconfigSchedule
    load: LoadProfile
    initial_soc: np.ndarray
    dt: float = 0.1
    method: str = "euler"
    switches: SwitchSpec = SwitchParams()
    mask: DesignMask | Sequence[int] | None = None
    initial_X: np.ndarray | None = None

    def __post_init__(self):
        self.initial_soc = np.asarray(self.initial_soc, dtype=float)
        if self.initial_soc.shape != (len(self.models),):
            raise ValueError("one initial SoC per cell required")
        if np.any(self.initial_soc < 0) or np.any(self.initial_soc > 1):
            raise ValueError("initial SoCs must lie in [0, 1]")
        if not self.dt > 0:
            raise ValueError("dt must be positive")


def run(sc: Scenario, *, refine: int = 2) -> SimTrace:
    """Simulate the whole schedule; a failing step ends the run with ``trace.error`` set."""
    n = len(sc.models)
    counts = sc.schedule.validate(sc.dt, n, sc.mask)
    X = initial_state(sc.models, sc.initial_soc) if sc.initial_X is None else np.asarray(sc.initial_X, float)
    soc = sc.initial_soc.copy()
    trace = SimTrace(n)
    k = 0
    for s_idx, ((_, ssv), n_samples) in enumerate(zip(sc.schedule.steps, counts)):
        for _ in range(n_samples):
            t = k * sc.dt
            try:
                res = step(sc.models, X, soc, ssv, sc.load.at(t), sc.dt, sc.method,
                           sc.switches, refine=refine)
            except Exception as exc:   # recorded, never raised: partial trace is kept
                err = SimulationError(k, exc)
                log.info("simulation aborted: %s", err)
                trace.error = {"step": k, "decision_step": s_idx, "type": type(exc).__name__,
                               "message": str(exc)}
                trace.final_X, trace.final_soc = X, soc
                return trace
            trace.t.append(t)
            trace.X.append(X)
            trace.I_B.append(res.I_B)
            trace.V_B.append(res.V_B)
            trace.v_t.append(res.v_t)
            trace.i_t.append(res.i_t)
            trace.soc.append(soc)
            trace.flags.append(res.flags)
            trace.step_index.append(s_idx)
            X, soc = res.X, res.soc
            k += 1
    trace.final_X, trace.final_soc = X, soc
    return trace
