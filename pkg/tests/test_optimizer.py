import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rbs.cell import load_fixture
from rbs.optimizer import (
    INFEASIBLE,
    ControlProblem,
    Evaluator,
    GaParams,
    evaluate,
    exhaustive_single_step,
    ga_run,
    soc_imbalance,
)
from rbs.space import build_space
from rbs.topology import CellFlag, CpsDescriptor, load_design, ssv_from_config

S, B = CellFlag.S, CellFlag.B


@pytest.fixture(scope="module")
def icr():
    return load_fixture("icr18650")


def small_problem(icr, soc=(0.8, 0.7, 0.75), n_steps=3, **kw):
    n = len(soc)
    space = build_space(n, (1, n))
    kw.setdefault("dt", 10.0)
    return ControlProblem([icr] * n, soc, n_steps, 20.0, ("power", 6.0), space.ssvs(), **kw)


class TestImbalance:
    def test_examples(self):
        assert soc_imbalance([0.5, 0.5, 0.5]) == 0.0
        assert soc_imbalance([0.9, 0.8]) == pytest.approx(0.1)
        z = [0.66, 0.65, 0.65, 0.64, 0.63, 0.63, 0.62, 0.61, 0.61, 0.60]
        assert soc_imbalance(z) == pytest.approx(0.30, abs=1e-12)

    @pytest.mark.parametrize("bad", [[], [0.1, float("nan")], [float("inf")]])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            soc_imbalance(bad)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=12))
    def test_non_negative_and_zero_iff_equal(self, z):
        v = soc_imbalance(z)
        assert v >= 0
        assert (v == 0) == (len(set(z)) == 1)


class TestGaParams:
    def test_defaults(self):
        p = GaParams()
        assert (p.pop_size, p.generations, p.p_crossover, p.p_mutation) == (100, 220, 0.8, 0.1)

    def test_aliases(self):
        p = GaParams.from_dict({"pop": 10, "gens": 3, "pc": 0.5, "pm": 0.2, "seed": 4})
        assert (p.pop_size, p.generations, p.p_crossover, p.p_mutation, p.seed) == (10, 3, 0.5, 0.2, 4)

    @pytest.mark.parametrize("kw", [dict(pop_size=1), dict(p_crossover=1.5), dict(p_mutation=-0.1),
                                    dict(generations=-1), dict(elitism=100), dict(tournament=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            GaParams(**kw)


class TestControlProblem:
    def test_bounds_and_rates(self, icr):
        with pytest.raises(ValueError):
            small_problem(icr, soc_min=0.5, soc_max=0.4)
        with pytest.raises(ValueError):
            small_problem(icr, c_rate_max=0.0)
        with pytest.raises(ValueError):
            small_problem(icr, n_steps=0)
        with pytest.raises(ValueError):
            small_problem(icr, dt=3.0)

    def test_empty_space_is_a_setup_error(self, icr):
        with pytest.raises(ValueError, match="empty"):
            ControlProblem([icr] * 2, [0.5, 0.5], 1, 1.0, ("power", 1.0), [], dt=1.0)

    def test_current_limit(self, icr):
        pb = small_problem(icr)
        np.testing.assert_allclose(pb.current_limits, 12.0)

    def test_complete_space_decoding(self, icr):
        mask = load_design("d", 3)
        pb = ControlProblem([icr] * 3, [0.5] * 3, 1, 10.0, ("power", 1.0), None, mask, dt=10.0)
        assert pb.n_options == 2 ** 7
        assert mask.compress(pb.decode(0b1000001)) == (1, 0, 0, 0, 0, 0, 1)
        with pytest.raises(IndexError):
            pb.decode(2 ** 7)
        with pytest.raises(ValueError):
            ControlProblem([icr] * 3, [0.5] * 3, 1, 10.0, ("power", 1.0), None, dt=10.0)


class TestEvaluate:
    def test_balanced_identical_cells(self, icr):
        pb = small_problem(icr, soc=(0.6, 0.6, 0.6))
        series = pb.candidates.index(ssv_from_config(CpsDescriptor((S, S, S))))
        ev = evaluate([series] * 3, pb)
        assert ev.imbalance == pytest.approx(0.0, abs=1e-6)
        assert ev.violation == 0.0 and ev.fitness == pytest.approx(ev.imbalance)

    def test_bypassing_the_lowest_cell_helps(self, icr):
        z = [0.66, 0.65, 0.65, 0.64, 0.63, 0.63, 0.62, 0.61, 0.61, 0.60]
        space = build_space(10, (4, 10), mask=load_design("d", 10))
        ssvs = space.ssvs()
        pb = ControlProblem([icr] * 10, z, 5, 20.0, ("power", 70.0), ssvs,
                            load_design("d", 10), dt=10.0)
        all_series = ssvs.index(ssv_from_config(CpsDescriptor((S,) * 10)))
        skip_last = ssvs.index(ssv_from_config(CpsDescriptor((S,) * 9 + (B,))))
        a = evaluate([all_series] * 5, pb)
        b = evaluate([skip_last] * 5, pb)
        assert b.imbalance < a.imbalance

    def test_soc_floor_penalty_dominates(self, icr):
        # starting just above the floor, six steps at 6 W cross it
        soc = (0.054, 0.054, 0.054)
        pb = small_problem(icr, soc=soc, n_steps=6)
        series = pb.candidates.index(ssv_from_config(CpsDescriptor((S, S, S))))
        long = evaluate([series] * 6, pb)
        short_pb = small_problem(icr, soc=soc, n_steps=1)
        short = evaluate([series], short_pb)
        assert short.violation == 0
        assert long.violation > 0
        assert long.fitness > short.fitness

    def test_abort_is_infinite_not_a_crash(self, icr):
        pb = ControlProblem([icr] * 2, [0.5, 0.5], 2, 10.0, ("power", 1e5),
                            build_space(2).ssvs(), dt=10.0)
        ev = evaluate([0, 1], pb)
        assert ev.fitness == INFEASIBLE
        assert ev.aborted["type"] == "PowerInfeasibleError"
        assert ev.aborted["decision_step"] == 0

    def test_wrong_length(self, icr):
        with pytest.raises(ValueError):
            evaluate([0], small_problem(icr))

    def test_cache_matches_fresh_evaluation(self, icr):
        pb = small_problem(icr)
        ev = Evaluator(pb)
        rng = np.random.default_rng(0)
        for _ in range(10):
            c = rng.integers(0, pb.n_options, 3)
            assert ev(c).fitness == evaluate(c, pb).fitness
        ev.max_cache = 2
        c = [1, 2, 3]
        assert ev(c).fitness == evaluate(c, pb).fitness


class TestGa:
    def test_single_step_matches_exhaustive(self, icr):
        pb = small_problem(icr, n_steps=1)
        g_best, e_best = exhaustive_single_step(pb)
        res = ga_run(pb, GaParams(pop_size=20, generations=15, seed=3))
        assert res.best_fitness == pytest.approx(e_best.fitness, abs=1e-12)

    def test_exhaustive_needs_one_step(self, icr):
        with pytest.raises(ValueError):
            exhaustive_single_step(small_problem(icr))

    def test_history_is_non_increasing_and_deterministic(self, icr):
        pb = small_problem(icr)
        params = GaParams(pop_size=12, generations=8, seed=11)
        a = ga_run(pb, params)
        b = ga_run(pb, params)
        assert len(a.history) == 9
        assert all(y <= x for x, y in zip(a.history, a.history[1:]))
        assert a.history == b.history
        assert np.array_equal(a.best, b.best)
        assert a.best_fitness == a.history[-1]
        assert a.evaluations == 12 * 9

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000))
    def test_genes_stay_in_range(self, seed):
        pb = small_problem(load_fixture("icr18650"), n_steps=2)
        res = ga_run(pb, GaParams(pop_size=6, generations=3, seed=seed, p_mutation=0.9))
        assert np.all((0 <= res.best) & (res.best < pb.n_options))

    def test_improves_on_random_start(self, icr):
        pb = small_problem(icr, n_steps=3)
        res = ga_run(pb, GaParams(pop_size=20, generations=10, seed=0))
        assert res.history[-1] <= res.history[0]
        assert res.best_eval.imbalance < soc_imbalance(pb.initial_soc)
