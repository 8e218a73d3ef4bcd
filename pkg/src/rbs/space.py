"""Feasible configuration space: enumeration, SSV mapping, deduplication, counts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

from .topology import (
    CellFlag,
    CpsDescriptor,
    CspDescriptor,
    Ssv,
    mask_filter,
    n_switches,
    ssv_from_config,
)

B, S, P_BGN, P_MID, P_END = CellFlag.B, CellFlag.S, CellFlag.P_BGN, CellFlag.P_MID, CellFlag.P_END

NAIVE_LIMIT = 8

# sub-list indices of the DP table
ONLY_BGN, ENDS_S, ENDS_END, MID_TRANS, BGN_TRANS, END_TRANS = range(6)


class EmptyRangeError(ValueError):
    pass


def voltage_bounds(
    v_min: float,
    v_max: float,
    n_cells: int,
    *,
    v_nom: float | None = None,
    v_cell_min: float | None = None,
    v_cell_max: float | None = None,
    mode: str = "nominal",
) -> tuple[int, int]:
    """Range of normalised system voltages admissible for ``[v_min, v_max]``."""
    if not 0 < v_min <= v_max:
        raise ValueError("need 0 < v_min <= v_max")
    if mode == "nominal":
        if not v_nom or v_nom <= 0:
            raise ValueError("nominal mode needs a positive v_nom")
        lo, hi = math.floor(v_min / v_nom), math.ceil(v_max / v_nom)
    elif mode == "extended":
        if not (v_cell_min and v_cell_max) or v_cell_min <= 0 or v_cell_max <= 0:
            raise ValueError("extended mode needs positive v_cell_min and v_cell_max")
        lo, hi = math.floor(v_min / v_cell_min), math.ceil(v_max / v_cell_max)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    lo, hi = max(lo, 1), min(hi, n_cells)
    if lo > hi:
        raise EmptyRangeError(f"empty normalised voltage range after clamping: ({lo}, {hi})")
    return lo, hi


# -- series-then-parallel ----------------------------------------------------

def csp_count(n_cells: int, v: int, max_modules: int | None = None) -> int:
    top = n_cells // v
    if max_modules is not None:
        top = min(top, max_modules)
    return sum(math.comb(n_cells, k * v) for k in range(2, top + 1))


def enumerate_csp(n_cells: int, v: int, max_modules: int | None = None) -> list[CspDescriptor]:
    """All series-then-parallel configurations with ``v`` cells per series module.

    Picking ``k * v`` participating cells fixes the modules, since cells are
    taken in index order.  ``max_modules`` caps the number of parallel strings.
    """
    if not 1 <= v <= n_cells:
        raise ValueError(f"normalised voltage {v} outside 1..{n_cells}")
    top = n_cells // v
    if max_modules is not None:
        top = min(top, max_modules)
    out = []
    for k in range(2, top + 1):
        for chosen in combinations(range(1, n_cells + 1), k * v):
            mods = tuple(chosen[j * v:(j + 1) * v] for j in range(k))
            out.append(CspDescriptor(n_cells, mods))
    return out


# -- parallel-then-series: dynamic programme ----------------------------------

Entry = tuple[tuple[CellFlag, ...], tuple[int, ...]]


def vl_table(n_cells: int) -> dict[tuple[int, int, int], list[Entry]]:
    """The DP table ``VL[i][j][k]`` as a dict keyed by ``(i, j, k)``.

    Entries are ``(flags, mid_starts)``; ``mid_starts`` remembers where each
    middle parallel module begins so adjacent ones stay distinguishable.
    """
    if n_cells < 1:
        raise ValueError("n_cells must be >= 1")
    VL: dict[tuple[int, int, int], list[Entry]] = {}

    def get(i, j, k):
        return VL.get((i, j, k), ())

    def put(i, j, k, items):
        if items:
            VL.setdefault((i, j, k), []).extend(items)

    def app(entries, flag, times=1):
        return [(f + (flag,) * times, st) for f, st in entries]

    put(1, 1, ENDS_S, [((S,), ())])
    put(1, 1, BGN_TRANS, [((P_BGN,), ())])
    for i in range(2, n_cells + 1):
        for j in range(1, i + 1):
            if j == 1:
                all_bypass = (B,) * (i - 1)
                put(i, j, ENDS_S, [(all_bypass + (S,), ())])
                put(i, j, BGN_TRANS, [(all_bypass + (P_BGN,), ())])
            put(i, j, ONLY_BGN, app(get(i - 1, j, ONLY_BGN), B))
            put(i, j, ONLY_BGN, app([*get(i - 1, j, ONLY_BGN), *get(i - 1, j, BGN_TRANS)], P_BGN))
            put(i, j, ENDS_S, app(get(i - 1, j, ENDS_S), B))
            prev = [*get(i - 1, j - 1, ONLY_BGN), *get(i - 1, j - 1, ENDS_S),
                    *get(i - 1, j - 1, MID_TRANS)]
            put(i, j, ENDS_S, app(prev, S))
            put(i, j, ENDS_END, app(get(i - 1, j, ENDS_END), B))
            put(i, j, ENDS_END, app([*get(i - 1, j, ENDS_END), *get(i - 1, j, END_TRANS)], P_END))
            put(i, j, MID_TRANS, app(get(i - 1, j, MID_TRANS), B))
            for n_mp in range(2, i):
                src = [*get(i - n_mp, j - 1, ONLY_BGN), *get(i - n_mp, j - 1, ENDS_S),
                       *get(i - n_mp, j - 1, MID_TRANS)]
                put(i, j, MID_TRANS,
                    [(f + (P_MID,) * n_mp, st + (len(f),)) for f, st in src])
            put(i, j, BGN_TRANS, app(get(i - 1, j, BGN_TRANS), B))
            put(i, j, END_TRANS, app(get(i - 1, j, END_TRANS), B))
            put(i, j, END_TRANS, app(prev, P_END))
    return VL


def enumerate_cps(n_cells: int, v_range: Iterable[int] | None = None) -> dict[int, list[CpsDescriptor]]:
    """Returnable parallel-then-series descriptors, keyed by normalised voltage."""
    VL = vl_table(n_cells)
    vs = range(1, n_cells + 1) if v_range is None else v_range
    return {
        v: [CpsDescriptor(f, st) for k in (ONLY_BGN, ENDS_S, ENDS_END) for f, st in VL.get((n_cells, v, k), ())]
        for v in vs
    }


def naive_cps(n_cells: int, v: int) -> list[CpsDescriptor]:
    """Independent brute-force generator of parallel-then-series descriptors.

    Walks the cells left to right with an explicit module grammar and no
    shared sub-results.  Exponential; refuses ``n_cells > NAIVE_LIMIT``.
    """
    if n_cells > NAIVE_LIMIT:
        raise ValueError(f"naive enumeration limited to {NAIVE_LIMIT} cells")
    out: list[CpsDescriptor] = []
    # states: start, bgn1 (one P_bgn so far), bgn, S, mid, end1, end
    accepting = {"bgn", "S", "end"}

    def walk(flags: list, starts: list, volts: int, state: str):
        pos = len(flags)
        if volts > v:
            return
        if pos == n_cells:
            if state in accepting and volts == v:
                out.append(CpsDescriptor(tuple(flags), tuple(starts)))
            return
        walk(flags + [B], starts, volts, state)
        if state == "start":
            walk(flags + [S], starts, volts + 1, "S")
            walk(flags + [P_BGN], starts, volts + 1, "bgn1")
        elif state in ("bgn1", "bgn"):
            walk(flags + [P_BGN], starts, volts, "bgn")
        elif state in ("end1", "end"):
            walk(flags + [P_END], starts, volts, "end")
        if state in ("bgn", "S", "mid"):
            walk(flags + [S], starts, volts + 1, "S")
            walk(flags + [P_END], starts, volts + 1, "end1")
            for size in range(2, n_cells - pos + 1):
                walk(flags + [P_MID] * size, starts + [pos], volts + 1, "mid")

    walk([], [], 0, "start")
    return out


# -- feasible space -----------------------------------------------------------

@dataclass
class FeasibleSpace:
    n_cells: int
    design: str
    buckets: dict[int, list[Ssv]]
    origins: dict[Ssv, object] = field(default_factory=dict, repr=False)

    @property
    def counts(self) -> dict[int, int]:
        return {v: len(s) for v, s in self.buckets.items()}

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def ratio(self) -> float:
        return self.total / 2 ** n_switches(self.n_cells)

    def ssvs(self, v_min: int = 1, v_max: int | None = None) -> list[Ssv]:
        v_max = self.n_cells if v_max is None else v_max
        return [s for v in sorted(self.buckets) if v_min <= v <= v_max for s in self.buckets[v]]

    def voltage_of(self, ssv: Sequence[int]) -> int:
        key = tuple(ssv)
        for v, lst in self.buckets.items():
            if key in set(lst):
                return v
        raise KeyError("SSV not in feasible space")

    def to_json(self) -> dict:
        return {
            "schema": 1,
            "n_cells": self.n_cells,
            "design": self.design,
            "per_voltage": [
                {"v": v, "count": len(self.buckets[v]), "ssvs": [list(s) for s in self.buckets[v]]}
                for v in sorted(self.buckets)
            ],
            "total": self.total,
            "ratio": self.ratio,
        }

    @classmethod
    def from_json(cls, data: dict) -> "FeasibleSpace":
        buckets = {int(e["v"]): [tuple(s) for s in e["ssvs"]] for e in data["per_voltage"]}
        return cls(int(data["n_cells"]), data.get("design", "a"), buckets)


def build_space(
    n_cells: int,
    v_range: tuple[int, int] | None = None,
    mask: Sequence[int] | None = None,
    *,
    design: str = "a",
    max_series_modules: int | None = 2,
) -> FeasibleSpace:
    """Deduplicated feasible SSVs of both configuration families, per voltage.

    ``max_series_modules`` caps the number of parallel strings in a
    series-then-parallel configuration; ``None`` admits all of them.
    """
    lo, hi = v_range if v_range is not None else (1, n_cells)
    if not 1 <= lo <= hi <= n_cells:
        raise ValueError(f"invalid voltage range ({lo}, {hi}) for {n_cells} cells")
    cps = enumerate_cps(n_cells, range(lo, hi + 1))
    seen: set[Ssv] = set()
    buckets: dict[int, list[Ssv]] = {}
    origins: dict[Ssv, object] = {}
    for v in range(lo, hi + 1):
        bucket = []
        descs: list = list(cps[v])
        descs += enumerate_csp(n_cells, v, max_series_modules)
        for d in descs:
            ssv = ssv_from_config(d, n_cells)
            if ssv in seen:
                continue
            if mask is not None and not mask_filter(ssv, mask):
                continue
            seen.add(ssv)
            bucket.append(ssv)
            origins[ssv] = d
        buckets[v] = bucket
    return FeasibleSpace(n_cells, design, buckets, origins)


def count(n_cells: int, v: int | None = None, **kw) -> dict:
    """Counts per voltage, total and ratio to the complete space."""
    if not 2 <= n_cells <= 16:
        raise ValueError("count supports 2 <= n_cells <= 16")
    rng = (v, v) if v is not None else None
    space = build_space(n_cells, rng, **kw)
    return {"counts": space.counts, "total": space.total, "ratio": space.ratio,
            "complete": 2 ** n_switches(n_cells)}
