"""Switch layout of the fully switched (design "a") pack and SSV construction.

Every cell ``n`` owns five switches ``S1..S5`` except the last one, which only
has ``S3`` and ``S5``::

    S1_n : p_n  <-> p_{n+1}   (positive bus link)
    S2_n : n_n  <-> p_{n+1}   (series link)
    S3_n : n_n  <-> T-
    S4_n : n_n  <-> n_{n+1}   (negative bus link)
    S5_n : p_n  <-> T+

A switch state vector (SSV) is serialised cell-major, switch-minor, so the
vector has ``5 * n_cells - 3`` entries.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

Ssv = tuple[int, ...]


class MappingError(ValueError):
    """A configuration descriptor cannot be translated into an SSV."""


@dataclass(frozen=True)
class SwitchParams:
    r_ds_on: float = 4e-3
    r_ds_off: float = 2e6
    r_wire: float = 4e-3

    def __post_init__(self):
        if not (0 < self.r_ds_on < self.r_ds_off):
            raise ValueError("need 0 < r_ds_on < r_ds_off")
        if self.r_wire < 0:
            raise ValueError("r_wire must be non-negative")


def switch_resistance(s: int, p: SwitchParams) -> float:
    """Branch resistance of one switch (plus its wire) for state ``s``."""
    if s not in (0, 1):
        raise ValueError(f"switch state must be 0 or 1, got {s!r}")
    return s * p.r_ds_on + (1 - s) * p.r_ds_off + p.r_wire


def n_switches(n_cells: int) -> int:
    if n_cells < 1:
        raise ValueError("n_cells must be >= 1")
    return 5 * n_cells - 3


def flat_index(n: int, m: int, n_cells: int) -> int:
    """Position of switch ``S^m_n`` (both 1-based) in the serialised SSV."""
    if not 1 <= n <= n_cells:
        raise IndexError(f"cell index {n} outside 1..{n_cells}")
    if n < n_cells:
        if not 1 <= m <= 5:
            raise IndexError(f"switch index {m} outside 1..5")
        return 5 * (n - 1) + (m - 1)
    if m == 3:
        return 5 * (n - 1)
    if m == 5:
        return 5 * (n - 1) + 1
    raise IndexError(f"last cell only carries switches 3 and 5, got {m}")


def switch_labels(n_cells: int) -> list[tuple[int, int]]:
    """``(n, m)`` for every SSV position, in order."""
    out = [(n, m) for n in range(1, n_cells) for m in range(1, 6)]
    return out + [(n_cells, 3), (n_cells, 5)]


def as_ssv(bits: Iterable[int], n_cells: int | None = None) -> Ssv:
    ssv = tuple(int(b) for b in bits)
    if any(b not in (0, 1) for b in ssv):
        raise ValueError("SSV entries must be 0 or 1")
    if (len(ssv) + 3) % 5 or len(ssv) < 2:
        raise ValueError(f"SSV length {len(ssv)} is not of the form 5N-3")
    if n_cells is not None and len(ssv) != n_switches(n_cells):
        raise ValueError(f"SSV length {len(ssv)} != {n_switches(n_cells)} for {n_cells} cells")
    return ssv


def ssv_cells(ssv: Sequence[int]) -> int:
    return (len(ssv) + 3) // 5


def cell_bits(ssv: Sequence[int], n: int) -> tuple[int, int, int, int, int]:
    """The 5-bit pattern of cell ``n`` (1-based); absent switches read as 0."""
    n_cells = ssv_cells(ssv)
    if n < n_cells:
        return tuple(int(b) for b in ssv[5 * (n - 1): 5 * n])
    base = 5 * (n_cells - 1)
    return (0, 0, int(ssv[base]), 0, int(ssv[base + 1]))


# Cell SSVs (S1..S5) for each cell-module position & connection pattern.
CELL_SSV_TABLE: dict[int, tuple[int, int, int, int, int]] = {
    1: (0, 1, 0, 0, 1),
    2: (0, 1, 0, 0, 0),
    3: (0, 0, 1, 0, 0),
    4: (0, 0, 0, 1, 1),
    5: (1, 0, 0, 1, 0),
    6: (1, 0, 1, 0, 0),
    7: (1, 0, 0, 0, 0),
    8: (0, 0, 0, 1, 0),
}

CELL_SSV_DESCRIPTIONS: dict[int, str] = {
    1: "first cell of a series module in C_sp; series module at the start of C_ps; "
       "last cell of the leading parallel module of C_ps",
    2: "middle cell of a series module in C_sp; series module inside C_ps; "
       "last cell of a middle parallel module of C_ps",
    3: "last cell of a series module in C_sp; last series module of C_ps; "
       "last cell of the trailing parallel module of C_ps",
    4: "first/middle cell of the leading parallel module of C_ps",
    5: "first/middle cell of a middle parallel module of C_ps",
    6: "first/middle cell of the trailing parallel module of C_ps",
    7: "bypassed cell on the positive bus (series path of C_ps, middle/trailing "
       "parallel module, inside a series module of C_sp)",
    8: "bypassed cell on the negative bus (leading parallel module of C_ps, "
       "outside the series modules of C_sp)",
}

# A cell wired straight to both terminals: the T+ bit of row 1 plus the T- bit
# of row 3.  Needed for one-cell paths (lone cell, all-parallel pack).
DIRECT_CELL_SSV = (0, 0, 1, 0, 1)


class CellFlag(str, enum.Enum):
    P_BGN = "P_bgn"
    P_MID = "P_mid"
    P_END = "P_end"
    S = "S"
    B = "B"

    def __repr__(self):
        return self.value


@dataclass(frozen=True)
class CspDescriptor:
    """Series-then-parallel configuration: equal-length series modules in parallel.

    ``modules`` holds 1-based cell indices; cells not listed are bypassed.
    """

    n_cells: int
    modules: tuple[tuple[int, ...], ...]

    @property
    def voltage(self) -> int:
        return len(self.modules[0])

    def __str__(self):
        return " || ".join("(" + " ".join(map(str, m)) + ")" for m in self.modules)

    def validate(self) -> None:
        if len(self.modules) < 2:
            raise MappingError("a C_sp needs at least two series modules")
        v = len(self.modules[0])
        if v < 1 or any(len(m) != v for m in self.modules):
            raise MappingError("series modules of a C_sp must have equal length")
        flat = [c for m in self.modules for c in m]
        if any(b <= a for a, b in zip(flat, flat[1:])):
            raise MappingError("C_sp cell indices must be strictly increasing")
        if flat[0] < 1 or flat[-1] > self.n_cells:
            raise MappingError("C_sp cell index out of range")


@dataclass(frozen=True)
class CpsDescriptor:
    """Parallel-then-series configuration as a vector of cell flags.

    Adjacent middle parallel modules share the ``P_mid`` flag, so
    ``mid_starts`` records the 0-based cell position where each of them starts.
    When it is empty every maximal ``P_mid`` run is one module.
    """

    flags: tuple[CellFlag, ...]
    mid_starts: tuple[int, ...] = ()

    @property
    def n_cells(self) -> int:
        return len(self.flags)

    @property
    def voltage(self) -> int:
        return sum(1 for kind, _ in cps_modules(self) if kind != "bypass")

    def __str__(self):
        parts = []
        for i, f in enumerate(self.flags):
            if i in self.mid_starts and i > 0:
                parts.append("|")
            parts.append(f.value)
        return "[" + " ".join(parts) + "]"


ConfigDescriptor = Union[CspDescriptor, CpsDescriptor]


def cps_modules(desc: CpsDescriptor) -> list[tuple[str, list[int]]]:
    """Split a C_ps flag vector into ordered modules.

    Returns ``(kind, cells)`` pairs with kind in ``{"bgn", "S", "mid", "end"}``
    and 0-based cell positions.  Raises :class:`MappingError` when the flags
    violate the C_ps grammar.
    """
    flags = desc.flags
    n = len(flags)
    starts = set(desc.mid_starts)
    modules: list[tuple[str, list[int]]] = []
    bgn = [i for i, f in enumerate(flags) if f is CellFlag.P_BGN]
    end = [i for i, f in enumerate(flags) if f is CellFlag.P_END]
    others = [i for i, f in enumerate(flags) if f in (CellFlag.S, CellFlag.P_MID)]
    if bgn:
        if len(bgn) < 2:
            raise MappingError(f"{desc}: leading parallel module needs >= 2 cells")
        if others and others[0] < bgn[-1] or end and end[0] < bgn[-1]:
            raise MappingError(f"{desc}: P_bgn cells must precede all other modules")
        modules.append(("bgn", bgn))
    i = 0
    while i < n:
        f = flags[i]
        if f is CellFlag.S:
            modules.append(("S", [i]))
            i += 1
        elif f is CellFlag.P_MID:
            block = [i]
            i += 1
            while i < n and flags[i] is CellFlag.P_MID and i not in starts:
                block.append(i)
                i += 1
            if len(block) < 2:
                raise MappingError(f"{desc}: middle parallel module needs >= 2 cells")
            modules.append(("mid", block))
        else:
            i += 1
    if end:
        if len(end) < 2:
            raise MappingError(f"{desc}: trailing parallel module needs >= 2 cells")
        if others and others[-1] > end[0]:
            raise MappingError(f"{desc}: P_end cells must follow all other modules")
        modules.append(("end", end))
    if not modules:
        raise MappingError(f"{desc}: no active cell")
    kinds = [k for k, _ in modules]
    if "mid" in kinds and (kinds[0] == "mid" or kinds[-1] == "mid"):
        raise MappingError(f"{desc}: a middle parallel module cannot open or close the pack")
    if "bgn" in kinds[1:] or "end" in kinds[:-1]:
        raise MappingError(f"{desc}: misplaced parallel module")
    return modules


def _cps_patterns(desc: CpsDescriptor) -> list[tuple[int, ...]]:
    modules = cps_modules(desc)
    n = desc.n_cells
    pattern: list[tuple[int, ...] | None] = [None] * n
    first_kind, first_cells = modules[0]
    single = len(modules) == 1

    for idx, (kind, cells) in enumerate(modules):
        is_first, is_last = idx == 0, idx == len(modules) - 1
        if kind == "bgn":
            for c in cells:
                if single:
                    pattern[c] = DIRECT_CELL_SSV
                else:
                    pattern[c] = CELL_SSV_TABLE[1 if c == cells[-1] else 4]
        elif kind == "S":
            c = cells[0]
            if is_first and is_last:
                pattern[c] = DIRECT_CELL_SSV
            elif is_first:
                pattern[c] = CELL_SSV_TABLE[1]
            elif is_last:
                pattern[c] = CELL_SSV_TABLE[3]
            else:
                pattern[c] = CELL_SSV_TABLE[2]
        elif kind == "mid":
            for c in cells:
                pattern[c] = CELL_SSV_TABLE[2 if c == cells[-1] else 5]
        else:
            for c in cells:
                pattern[c] = CELL_SSV_TABLE[3 if c == cells[-1] else 6]

    # Bypassed cells ahead of (or inside) a leading parallel module ride the
    # negative bus; every other bypassed cell rides the positive bus.
    neg_bus_until = first_cells[-1] if first_kind == "bgn" else -1
    if first_kind == "bgn" and single:
        neg_bus_until = n
    for c in range(n):
        if pattern[c] is None:
            pattern[c] = CELL_SSV_TABLE[8 if c < neg_bus_until else 7]
    return pattern


def _csp_patterns(desc: CspDescriptor) -> list[tuple[int, ...]]:
    desc.validate()
    n = desc.n_cells
    pattern: list[tuple[int, ...] | None] = [None] * n
    for mod in desc.modules:
        cells = [c - 1 for c in mod]
        if len(cells) == 1:
            pattern[cells[0]] = DIRECT_CELL_SSV
            continue
        for k, c in enumerate(cells):
            row = 1 if k == 0 else 3 if k == len(cells) - 1 else 2
            pattern[c] = CELL_SSV_TABLE[row]
        for c in range(cells[0] + 1, cells[-1]):
            if pattern[c] is None:
                pattern[c] = CELL_SSV_TABLE[7]
    return [p if p is not None else CELL_SSV_TABLE[8] for p in pattern]


def ssv_from_patterns(patterns: Sequence[Sequence[int]]) -> Ssv:
    """Concatenate per-cell 5-bit patterns; the last cell keeps only S3, S5."""
    n = len(patterns)
    bits: list[int] = []
    for i, p in enumerate(patterns):
        if i < n - 1:
            bits.extend(p)
        else:
            bits.extend((p[2], p[4]))
    return tuple(int(b) for b in bits)


def ssv_from_config(desc: ConfigDescriptor, n_cells: int | None = None) -> Ssv:
    """Translate a configuration descriptor into the full SSV."""
    if n_cells is not None and n_cells != desc.n_cells:
        raise MappingError(f"descriptor has {desc.n_cells} cells, expected {n_cells}")
    if isinstance(desc, CspDescriptor):
        patterns = _csp_patterns(desc)
    elif isinstance(desc, CpsDescriptor):
        patterns = _cps_patterns(desc)
    else:
        raise MappingError(f"unknown descriptor type {type(desc).__name__}")
    return ssv_from_patterns(patterns)


# -- design masks -------------------------------------------------------------

@dataclass(frozen=True)
class DesignMask:
    """Which design-(a) branches a reduced design keeps.

    ``available`` marks switches that physically exist; ``wired`` marks
    branches that a design replaces by a permanent connection (no switch, so
    no native bit, but always conducting).
    """

    available: tuple[int, ...]
    wired: tuple[int, ...] = ()
    name: str = ""

    def __post_init__(self):
        avail = as_ssv(self.available)
        wired = as_ssv(self.wired) if self.wired else (0,) * len(avail)
        if len(wired) != len(avail):
            raise ValueError("wired and available masks differ in length")
        if any(a and w for a, w in zip(avail, wired)):
            raise ValueError("a branch cannot be both a switch and a fixed wire")
        object.__setattr__(self, "available", avail)
        object.__setattr__(self, "wired", wired)

    @property
    def n_cells(self) -> int:
        return ssv_cells(self.available)

    @property
    def n_native(self) -> int:
        return sum(self.available)

    def admits(self, ssv: Sequence[int]) -> bool:
        """Absent branches open, wired branches closed."""
        if len(ssv) != len(self.available):
            raise ValueError(f"SSV length {len(ssv)} != mask length {len(self.available)}")
        return all((a or w or not s) and (s or not w)
                   for s, a, w in zip(ssv, self.available, self.wired))

    def compress(self, ssv: Sequence[int]) -> tuple[int, ...]:
        """Design-native bits (switches only, in SSV order)."""
        if not self.admits(ssv):
            raise ValueError("SSV is not realisable in this design")
        return tuple(int(s) for s, a in zip(ssv, self.available) if a)

    def expand(self, native: Sequence[int]) -> Ssv:
        if len(native) != self.n_native:
            raise ValueError(f"design has {self.n_native} switches, got {len(native)} bits")
        it = iter(native)
        return tuple(int(next(it)) if a else int(w) for a, w in zip(self.available, self.wired))


def mask_filter(ssv: Sequence[int], mask: Sequence[int] | DesignMask) -> bool:
    """True when every closed switch of ``ssv`` exists in ``mask``.

    A :class:`DesignMask` additionally requires its wired branches closed.
    """
    if isinstance(mask, DesignMask):
        return mask.admits(ssv)
    if len(ssv) != len(mask):
        raise ValueError(f"SSV length {len(ssv)} != mask length {len(mask)}")
    return all(m or not s for s, m in zip(ssv, mask))


def _masks_file(path: str | Path | None) -> dict:
    if path:
        return json.loads(Path(path).read_text())
    return json.loads(resources.files("rbs.data").joinpath("masks.json").read_text())


def available_designs(path: str | Path | None = None) -> list[str]:
    return sorted(_masks_file(path)["designs"])


_RULE_CODES = {"n": (1, 0), "0": (0, 0), "w": (0, 1)}


def _from_rule(rule: dict, n_cells: int) -> tuple[list[int], list[int]]:
    if n_cells < 2:
        raise ValueError("design rules need at least two cells")
    chunks = [rule.get("first", rule["cell"])] + [rule["cell"]] * (n_cells - 2) + [rule["last"]]
    codes = "".join(chunks)
    try:
        pairs = [_RULE_CODES[c] for c in codes]
    except KeyError as e:
        raise ValueError(f"bad design rule code {e.args[0]!r}") from None
    return [a for a, _ in pairs], [w for _, w in pairs]


def load_design(design: str, n_cells: int, path: str | Path | None = None) -> DesignMask:
    """Design mask for ``n_cells`` from the mask file (bundled one by default).

    An entry holds a per-cell ``rule`` (strings over ``n``: switch, ``0``:
    absent, ``w``: fixed wire; keys ``first``, ``cell``, ``last``) and/or
    ``explicit`` arrays keyed by cell count.
    """
    data = _masks_file(path)
    try:
        entry = data["designs"][design]
    except KeyError:
        raise KeyError(f"unknown design {design!r}") from None
    explicit = entry.get("explicit", {}).get(str(n_cells))
    if explicit is not None:
        if isinstance(explicit, dict):
            return DesignMask(tuple(explicit["available"]), tuple(explicit.get("wired", ())), design)
        return DesignMask(tuple(explicit), (), design)
    if "rule" not in entry:
        raise KeyError(f"design {design!r} has no mask for {n_cells} cells")
    avail, wired = _from_rule(entry["rule"], n_cells)
    return DesignMask(as_ssv(avail, n_cells), as_ssv(wired, n_cells), design)


def design_mask(design: str, n_cells: int, path: str | Path | None = None) -> tuple[int, ...]:
    """The ``available`` vector of a design (1 = switch physically present)."""
    return load_design(design, n_cells, path).available


def compress(ssv: Sequence[int], mask: Sequence[int] | DesignMask) -> tuple[int, ...]:
    """Drop the positions a design does not switch (its own numbering)."""
    if isinstance(mask, DesignMask):
        return mask.compress(ssv)
    if not mask_filter(ssv, mask):
        raise ValueError("SSV closes a switch the design does not have")
    return tuple(int(s) for s, m in zip(ssv, mask) if m)


def expand(native: Sequence[int], mask: Sequence[int] | DesignMask) -> Ssv:
    """Inverse of :func:`compress`."""
    if isinstance(mask, DesignMask):
        return mask.expand(native)
    if len(native) != sum(mask):
        raise ValueError(f"design has {sum(mask)} switches, got {len(native)} bits")
    it = iter(native)
    return tuple(int(next(it)) if m else 0 for m in mask)
