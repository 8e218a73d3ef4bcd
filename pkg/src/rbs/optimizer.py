"""SoC-balancing reconfiguration control solved with a genetic algorithm."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cell import CellModel
from .network import PowerInfeasibleError
from .simulator import initial_state, step
from .topology import DesignMask, Ssv, SwitchParams

log = logging.getLogger(__name__)

INFEASIBLE = float("inf")


def soc_imbalance(socs: Sequence[float]) -> float:
    """Total unused SoC: ``sum(z) - N * min(z)``."""
    z = np.asarray(socs, dtype=float)
    if z.size == 0:
        raise ValueError("soc_imbalance of an empty vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("SoCs must be finite")
    return float(z.sum() - z.size * z.min())


@dataclass(frozen=True)
class GaParams:
    pop_size: int = 100
    generations: int = 220
    p_crossover: float = 0.8
    p_mutation: float = 0.1
    seed: int = 0
    elitism: int = 1
    tournament: int = 2

    def __post_init__(self):
        if self.pop_size < 2:
            raise ValueError("population must have at least two individuals")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        for name in ("p_crossover", "p_mutation"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0 <= self.elitism < self.pop_size:
            raise ValueError("elitism must be in [0, pop_size)")
        if self.tournament < 1:
            raise ValueError("tournament size must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "GaParams":
        alias = {"pop": "pop_size", "gens": "generations", "pc": "p_crossover", "pm": "p_mutation"}
        return cls(**{alias.get(k, k): v for k, v in d.items()})


@dataclass
class ControlProblem:
    """Choose one SSV per decision step to minimise the terminal SoC imbalance.

    Genes index ``candidates``.  With ``candidates=None`` the genes instead
    enumerate every native switch pattern of ``mask`` (the complete space).
    """

    models: list[CellModel]
    initial_soc: np.ndarray
    n_steps: int
    step_duration: float
    load: tuple[str, float]
    candidates: Sequence[Ssv] | None
    mask: DesignMask | None = None
    soc_min: float = 0.05
    soc_max: float = 1.0
    c_rate_max: float = 6.0
    dt: float = 1.0
    method: str = "zoh"
    switches: SwitchParams = SwitchParams()
    penalty: float = 10.0
    refine: int = 0

    def __post_init__(self):
        self.initial_soc = np.asarray(self.initial_soc, dtype=float)
        if not self.soc_min < self.soc_max:
            raise ValueError("soc_min must be below soc_max")
        if not self.c_rate_max > 0:
            raise ValueError("c_rate_max must be positive")
        if self.n_steps < 1:
            raise ValueError("need at least one decision step")
        q = self.step_duration / self.dt
        if abs(q - round(q)) > 1e-9 * max(q, 1.0):
            raise ValueError("step duration must be a multiple of dt")
        if self.candidates is None:
            if self.mask is None:
                raise ValueError("the complete space needs a design mask")
        elif len(self.candidates) == 0:
            raise ValueError("empty feasible space for the requested voltage range")

    @property
    def samples_per_step(self) -> int:
        return int(round(self.step_duration / self.dt))

    @property
    def n_options(self) -> int:
        if self.candidates is None:
            return 2 ** self.mask.n_native
        return len(self.candidates)

    @property
    def current_limits(self) -> np.ndarray:
        return np.array([self.c_rate_max * m.capacity / 3600.0 for m in self.models])

    def decode(self, gene: int) -> Ssv:
        gene = int(gene)
        if not 0 <= gene < self.n_options:
            raise IndexError(f"gene {gene} outside 0..{self.n_options - 1}")
        if self.candidates is not None:
            return tuple(self.candidates[gene])
        k = self.mask.n_native
        bits = [(gene >> (k - 1 - b)) & 1 for b in range(k)]
        return self.mask.expand(bits)


@dataclass
class Evaluation:
    fitness: float
    imbalance: float
    violation: float
    final_soc: np.ndarray | None
    aborted: dict | None = None
    step_violations: list[float] = field(default_factory=list)


@dataclass
class _Node:
    X: np.ndarray
    soc: np.ndarray
    violation: float
    steps: list[float]
    aborted: dict | None


class Evaluator:
    """Fitness with a prefix cache: shared leading genes are simulated once."""

    def __init__(self, problem: ControlProblem, max_cache: int = 200_000):
        self.problem = problem
        self.max_cache = max_cache
        self._cache: dict[tuple[int, ...], _Node] = {}
        self.simulated_steps = 0

    def _advance(self, node: _Node, gene: int) -> _Node:
        pb = self.problem
        if node.aborted:
            return node
        ssv = pb.decode(gene)
        X, soc = node.X, node.soc
        limits = pb.current_limits
        worst = 0.0
        try:
            for _ in range(pb.samples_per_step):
                res = step(pb.models, X, soc, ssv, pb.load, pb.dt, pb.method, pb.switches,
                           refine=pb.refine)
                X, soc = res.X, res.soc
                if not (np.all(np.isfinite(X)) and np.all(np.isfinite(soc))):
                    raise FloatingPointError("non-finite state")
                over_i = np.maximum(np.abs(res.I_B) - limits, 0.0) / limits
                over_z = np.maximum(pb.soc_min - soc, 0.0) + np.maximum(soc - pb.soc_max, 0.0)
                worst = max(worst, float(over_i.sum() + over_z.sum()))
        except (PowerInfeasibleError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            self.simulated_steps += 1
            return _Node(X, soc, node.violation, node.steps,
                         {"decision_step": len(node.steps), "type": type(exc).__name__,
                          "message": str(exc)})
        self.simulated_steps += 1
        return _Node(X, soc, node.violation + worst, node.steps + [worst], None)

    def __call__(self, chromosome: Sequence[int]) -> Evaluation:
        pb = self.problem
        genes = tuple(int(g) for g in chromosome)
        if len(genes) != pb.n_steps:
            raise ValueError(f"chromosome has {len(genes)} genes, expected {pb.n_steps}")
        node = _Node(initial_state(pb.models, pb.initial_soc), pb.initial_soc.copy(), 0.0, [], None)
        for k in range(len(genes)):
            key = genes[:k + 1]
            hit = self._cache.get(key)
            if hit is None:
                hit = self._advance(node, genes[k])
                if len(self._cache) >= self.max_cache:
                    self._cache.clear()
                self._cache[key] = hit
            node = hit
        if node.aborted:
            return Evaluation(INFEASIBLE, float("nan"), float("inf"), None, node.aborted, node.steps)
        imb = soc_imbalance(node.soc)
        return Evaluation(imb + pb.penalty * node.violation, imb, node.violation, node.soc,
                          None, node.steps)


def evaluate(chromosome: Sequence[int], problem: ControlProblem) -> Evaluation:
    return Evaluator(problem)(chromosome)


@dataclass
class GaResult:
    best: np.ndarray
    best_fitness: float
    history: list[float]
    best_eval: Evaluation
    evaluations: int


def _tournament(rng, fitness: np.ndarray, size: int) -> int:
    picks = rng.integers(0, fitness.size, size)
    return int(picks[np.argmin(fitness[picks])])


def ga_run(problem: ControlProblem, params: GaParams = GaParams(),
           evaluator: Evaluator | None = None) -> GaResult:
    """Generational GA: tournament selection, one-point crossover, resampling
    mutation and elitism.  ``history[g]`` is the best fitness after generation g
    (``history[0]`` is the initial population)."""
    if problem.n_options < 1:
        raise ValueError("empty search space")
    ev = evaluator or Evaluator(problem)
    rng = np.random.default_rng(params.seed)
    P, K, n_opt = params.pop_size, problem.n_steps, problem.n_options

    def genes(shape):
        # complete spaces can exceed int64 bounds; draw per-gene otherwise
        return rng.integers(0, n_opt, size=shape, dtype=np.int64)

    pop = genes((P, K))
    evals = [ev(ind) for ind in pop]
    fit = np.array([e.fitness for e in evals])
    n_eval = P
    history = [float(fit.min())]
    for gen in range(params.generations):
        order = np.argsort(fit, kind="stable")
        children = [pop[i].copy() for i in order[:params.elitism]]
        while len(children) < P:
            a = pop[_tournament(rng, fit, params.tournament)].copy()
            b = pop[_tournament(rng, fit, params.tournament)].copy()
            if K > 1 and rng.random() < params.p_crossover:
                cut = int(rng.integers(1, K))
                a[cut:], b[cut:] = b[cut:].copy(), a[cut:].copy()
            for child in (a, b):
                hit = rng.random(K) < params.p_mutation
                if hit.any():
                    child[hit] = genes(int(hit.sum()))
                if len(children) < P:
                    children.append(child)
        pop = np.array(children)
        evals = [ev(ind) for ind in pop]
        fit = np.array([e.fitness for e in evals])
        n_eval += P
        history.append(float(fit.min()))
        log.debug("generation %d best %.6g", gen + 1, history[-1])
    best = int(np.argmin(fit))
    return GaResult(pop[best].copy(), float(fit[best]), history, evals[best], n_eval)


def exhaustive_single_step(problem: ControlProblem) -> tuple[int, Evaluation]:
    """Brute-force optimum for ``n_steps == 1`` (test oracle for the GA)."""
    if problem.n_steps != 1:
        raise ValueError("exhaustive search only supports one decision step")
    ev = Evaluator(problem)
    results = [(g, ev([g])) for g in range(problem.n_options)]
    return min(results, key=lambda r: r[1].fitness)
