import numpy as np
import pytest
from scipy import stats

from bbo_forge import optimizers as opt
from bbo_forge import space as sp

from conftest import random_space


def unit_line(space_id="u"):
    return sp.SearchSpace(space_id, (sp.uniform("x", 0.0, 1.0),))


class TestDispatch:
    def test_unknown_kind(self):
        with pytest.raises(KeyError):
            opt.make_optimizer("HEBO", unit_line(), 0)

    def test_rs_delegates_to_uniform(self):
        o = opt.make_optimizer("RS", unit_line(), 7)
        first = o.suggest()
        rng = np.random.default_rng(7)
        assert first == sp.sample_uniform(unit_line(), rng)


class TestSharedProperties:
    @pytest.mark.parametrize("kind", opt.KINDS)
    def test_suggestions_always_valid(self, kind):
        rng = np.random.default_rng(11)
        for rep in range(10):
            space = random_space(rng)
            o = opt.make_optimizer(kind, space, rep)
            for t in range(12):
                config = o.suggest()
                space.validate(config)
                o.observe(config, float(rng.normal()))

    @pytest.mark.parametrize("kind", opt.KINDS)
    def test_determinism(self, kind):
        space = sp.SearchSpace(
            "d", (sp.uniform("x", 0, 1), sp.log_uniform("y", 0.01, 1), sp.categorical("c", 3))
        )
        runs = []
        for _ in range(2):
            o = opt.make_optimizer(kind, space, 123)
            out = []
            for t in range(15):
                config = o.suggest()
                out.append(config)
                o.observe(config, float(sum(config[:2])))
            runs.append(out)
        assert runs[0] == runs[1]

    def test_rs_uniformity_chi_square(self):
        o = opt.make_optimizer("RS", unit_line(), 5)
        xs = np.array([o.suggest()[0] for _ in range(10_000)])
        counts, _ = np.histogram(xs, bins=20, range=(0, 1))
        assert stats.chisquare(counts).pvalue > 0.01


class TestREA:
    def test_population_capacity_and_eviction_order(self):
        o = opt.RegularizedEvolution(unit_line(), 0, population_size=2)
        o.observe((0.1,), 5.0)
        o.observe((0.2,), 3.0)
        o.observe((0.3,), 4.0)  # evicts the oldest, not the worst
        assert [c for c, _ in o.population] == [(0.2,), (0.3,)]
        assert len(o.population) <= 2

    def test_population_never_exceeds_capacity(self):
        rng = np.random.default_rng(3)
        o = opt.RegularizedEvolution(unit_line(), 0, population_size=10)
        for _ in range(50):
            c = o.suggest()
            o.observe(c, float(rng.normal()))
            assert len(o.population) <= 10

    def test_tournament_picks_best(self):
        o = opt.RegularizedEvolution(unit_line(), 0, tournament_size=2)
        o.observe((0.2,), 1.0)
        o.observe((0.9,), 5.0)
        # single parameter: mutation always resamples x, so parent identity shows
        # through only via determinism; tournament over the full population must
        # select the lower-objective member as parent.
        members = list(o.population)
        parent = min(members, key=lambda m: m[1])[0]
        assert parent == (0.2,)

    def test_one_param_space_always_mutates_that_param(self):
        o = opt.RegularizedEvolution(unit_line(), 1)
        o.observe((0.5,), 1.0)
        for _ in range(50):
            c = o.suggest()
            assert 0.0 <= c[0] <= 1.0

    def test_mutation_dimension_is_uniform(self):
        space = sp.SearchSpace("two", (sp.uniform("a", 0, 1), sp.uniform("b", 0, 1)))
        o = opt.RegularizedEvolution(space, 2, population_size=1, tournament_size=1)
        parent = (0.25, 0.75)
        o.observe(parent, 0.0)
        n = 10_000
        changed_a = 0
        for _ in range(n):
            c = o.suggest()
            if c[0] != parent[0]:
                changed_a += 1
        # binomial(n, 0.5) within 3 sigma
        sigma = 0.5 * np.sqrt(n)
        assert abs(changed_a - n / 2) < 3 * sigma

    def test_uniform_fallback_before_any_observation(self):
        o = opt.RegularizedEvolution(unit_line(), 9)
        assert 0.0 <= o.suggest()[0] <= 1.0


class TestTPE:
    def test_degenerate_equal_objectives_falls_back(self):
        o = opt.TPE(unit_line(), 0)
        for x in (0.1, 0.3, 0.5, 0.7, 0.9):
            o.observe((x,), 1.0)
        for _ in range(20):
            assert 0.0 <= o.suggest()[0] <= 1.0  # uniform fallback, still valid

    def test_candidates_concentrate_near_good_point(self):
        wins = 0
        for seed in range(1000):
            o = opt.TPE(unit_line(), seed, gamma=0.5, n_init=2)
            o.observe((0.1,), 0.0)
            o.observe((0.9,), 1.0)
            x = o.suggest()[0]
            if abs(x - 0.1) < abs(x - 0.9):
                wins += 1
        assert wins >= 950

    def test_pool_of_one_returned(self):
        o = opt.TPE(unit_line(), 0, pool_size=1, n_init=2, gamma=0.5)
        o.observe((0.1,), 0.0)
        o.observe((0.9,), 1.0)
        assert isinstance(o.suggest()[0], float)

    def test_threshold_shifts_with_new_observations(self):
        o = opt.TPE(unit_line(), 0, gamma=0.5)
        for x, y in [((0.1,), 1.0), ((0.2,), 2.0), ((0.3,), 3.0), ((0.4,), 4.0)]:
            o.observe(x, y)
        before = o.split_threshold()
        o.observe((0.5,), 0.0)
        after = o.split_threshold()
        assert after == np.quantile([1.0, 2.0, 3.0, 4.0, 0.0], 0.5)
        assert after != before


class TestBORE:
    def test_separated_clusters(self):
        hits = 0
        trials = 200
        for seed in range(trials):
            o = opt.BORE(unit_line(), seed, gamma=0.25, pool_size=64)
            rng = np.random.default_rng(seed + 10_000)
            for _ in range(3):
                o.observe((float(np.clip(0.1 + 0.01 * rng.normal(), 0, 1)),), 0.0)
            for _ in range(9):
                o.observe((float(np.clip(0.9 + 0.01 * rng.normal(), 0, 1)),), 1.0)
            if abs(o.suggest()[0] - 0.1) < 0.2:
                hits += 1
        assert hits >= 0.95 * trials

    def test_degenerate_labels_fall_back(self):
        # n=1..3 below n_init, then gamma*4 -> 1 good of 4: never all/none with
        # defaults, so force the all-identical case through gamma=0
        o = opt.BORE(unit_line(), 0, gamma=0.0)
        for x in (0.1, 0.3, 0.5, 0.7):
            o.observe((x,), float(x))
        assert 0.0 <= o.suggest()[0] <= 1.0

    def test_pool_of_one(self):
        o = opt.BORE(unit_line(), 0, pool_size=1)
        for x in (0.1, 0.3, 0.5, 0.7):
            o.observe((x,), float(x))
        assert 0.0 <= o.suggest()[0] <= 1.0


class TestCQR:
    def test_zero_residuals_give_zero_offsets(self):
        o = opt.CQR(unit_line(), 0)
        for x in (0.1, 0.2, 0.3, 0.4, 0.5, 0.6):
            o.observe((x,), 2.0)
        assert np.allclose(o.conformal_offsets(), 0.0)

    def test_constant_history_returns_first_pool_member(self):
        o = opt.CQR(unit_line(), 42)
        for x in (0.1, 0.2, 0.3, 0.4, 0.5, 0.6):
            o.observe((x,), 2.0)
        # replay the rng to know which candidate came first in the pool
        twin = opt.CQR(unit_line(), 42)
        for x in (0.1, 0.2, 0.3, 0.4, 0.5, 0.6):
            twin.observe((x,), 2.0)
        _ = twin.rng.integers(len(twin.quantile_grid))
        first_member = sp.sample_uniform(unit_line(), twin.rng)
        assert o.suggest() == first_member

    def test_selects_low_region_on_linear_objective(self):
        selected = []
        for seed in range(100):
            o = opt.CQR(unit_line(), seed)
            rng = np.random.default_rng(seed + 500)
            for _ in range(40):
                x = float(rng.random())
                o.observe((x,), x)
            selected.append(o.suggest()[0])
        assert np.mean(selected) < 0.3
