"""File formats: scenario and problem JSON, atomic writes."""

from __future__ import annotations

import json
import os
import tempfile
from importlib import resources
from pathlib import Path
from typing import Any

from .cell import CellModel, load_fixture
from .optimizer import ControlProblem, GaParams
from .simulator import LoadProfile, ReconfigSchedule, Scenario
from .space import build_space
from .topology import DesignMask, SwitchParams, as_ssv, load_design

SCHEMA = 1


class ConfigError(ValueError):
    """Malformed or inconsistent input file."""

    def __init__(self, message: str, path: str | None = None):
        super().__init__(message)
        self.path = path


def atomic_write(path: str | Path, text: str) -> None:
    """Write via a temp file in the target directory and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def read_json(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})", str(path)) from None


def bundled(name: str) -> dict:
    return json.loads(resources.files("rbs.data").joinpath(name).read_text())


def load_cell_ref(ref: str, base: Path | None = None) -> CellModel:
    """``"fixture:<name>"`` or a path to a cell JSON file."""
    if ref.startswith("fixture:"):
        return load_fixture(ref.split(":", 1)[1])
    p = Path(ref)
    if base is not None and not p.is_absolute():
        p = base / p
    if not p.is_file():
        raise FileNotFoundError(f"no such cell file: {p}")
    return CellModel.from_json(p)


def load_cells(spec, base: Path | None = None) -> list[CellModel]:
    if isinstance(spec, dict):
        model = load_cell_ref(spec["ref"], base)
        return [model] * int(spec["count"])
    if isinstance(spec, list) and spec:
        cache: dict[str, CellModel] = {}
        out = []
        for ref in spec:
            if ref not in cache:
                cache[ref] = load_cell_ref(ref, base)
            out.append(cache[ref])
        return out
    raise ConfigError("cells must be {ref, count} or a non-empty list of refs")


def load_mask(data: dict, n_cells: int, base: Path | None = None) -> DesignMask | None:
    design = data.get("design")
    if "mask" in data:
        m = data["mask"]
        if isinstance(m, dict):
            return DesignMask(tuple(m["available"]), tuple(m.get("wired", ())), design or "custom")
        return DesignMask(tuple(m), (), design or "custom")
    if design:
        masks = data.get("masks_file")
        path = (base / masks) if masks and base else masks
        return load_design(design, n_cells, path)
    return None


def switch_params(data: dict) -> SwitchParams:
    sw = data.get("switches", {})
    return SwitchParams(**{k: float(v) for k, v in sw.items()})


def _check_schema(data: dict, where: str) -> None:
    if data.get("schema", SCHEMA) != SCHEMA:
        raise ConfigError(f"{where}: unsupported schema {data.get('schema')!r}")


def scenario_from_dict(data: dict, base: Path | None = None) -> Scenario:
    _check_schema(data, "scenario")
    models = load_cells(data["cells"], base)
    n = len(models)
    mask = load_mask(data, n, base)
    steps = []
    space = None
    for k, item in enumerate(data.get("schedule", [])):
        dur = float(item["duration_s"])
        if "ssv" in item:
            ssv = as_ssv(item["ssv"], n)
        elif "native" in item:
            if mask is None:
                raise ConfigError(f"schedule[{k}]: native bits need a design")
            ssv = mask.expand(item["native"])
        elif "config_index" in item:
            if space is None:
                space = build_space(n, mask=mask).ssvs()
            idx = int(item["config_index"])
            if not 0 <= idx < len(space):
                raise ConfigError(f"schedule[{k}]: config_index {idx} outside 0..{len(space) - 1}")
            ssv = space[idx]
        else:
            raise ConfigError(f"schedule[{k}]: need one of ssv, native, config_index")
        steps.append((dur, ssv))
    return Scenario(
        models=models,
        schedule=ReconfigSchedule(tuple(steps)),
        load=LoadProfile.from_dict(data["load"]),
        initial_soc=data["initial_soc"],
        dt=float(data.get("dt_s", 0.1)),
        method=data.get("method", "euler"),
        switches=switch_params(data),
        mask=mask,
    )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return scenario_from_dict(read_json(path), path.parent)


def replay_scenario(cell_ref: str | None = None, dt: float | None = None) -> Scenario:
    """The bundled twelve-configuration replay on three cells."""
    rp = bundled("replay.json")
    data = {
        "cells": {"ref": cell_ref or "fixture:icr18650", "count": rp["n_cells"]},
        "design": rp["design"],
        "dt_s": dt or rp["dt_s"],
        "initial_soc": rp["initial_soc"],
        "load": rp["load"],
        "schedule": [{"duration_s": rp["duration_s"], "native": c} for c in rp["configs"]],
    }
    return scenario_from_dict(data, Path.cwd())


def problem_from_dict(data: dict, base: Path | None = None, *, complete: bool = False):
    """Returns ``(ControlProblem, GaParams, space)``; ``space`` is None for the complete space."""
    _check_schema(data, "problem")
    sc = data["scenario"]
    if isinstance(sc, str):
        p = Path(sc) if base is None or Path(sc).is_absolute() else base / sc
        sc = read_json(p)
        sc_base = p.parent
    else:
        sc_base = base
    models = load_cells(sc["cells"], sc_base)
    n = len(models)
    mask = load_mask(sc, n, sc_base)
    if mask is None:
        mask = load_design("a", n)
    v_lo = int(data.get("v_norm_min", 1))
    v_hi = int(data.get("v_norm_max", n))
    space = None if complete else build_space(n, (v_lo, v_hi), mask=mask)
    load = LoadProfile.from_dict(sc["load"]).segments[0]
    problem = ControlProblem(
        models=models,
        initial_soc=sc["initial_soc"],
        n_steps=int(data["n_steps"]),
        step_duration=float(data["step_duration_s"]),
        load=(load.kind, load.value),
        candidates=None if complete else space.ssvs(),
        mask=mask,
        soc_min=float(data.get("soc_min", 0.05)),
        soc_max=float(data.get("soc_max", 1.0)),
        c_rate_max=float(data.get("c_rate_max", 6.0)),
        dt=float(sc.get("dt_s", 1.0)),
        method=sc.get("method", "zoh"),
        switches=switch_params(sc),
        penalty=float(data.get("penalty", 10.0)),
        refine=int(data.get("refine", 0)),
    )
    return problem, GaParams.from_dict(data.get("ga", {})), space


def load_problem(path: str | Path, *, complete: bool = False):
    path = Path(path)
    return problem_from_dict(read_json(path), path.parent, complete=complete)
