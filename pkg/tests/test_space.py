import math

import numpy as np
import pytest
from scipy import stats

from bbo_forge import space as sp

from conftest import random_space


def figure_space() -> sp.SearchSpace:
    return sp.SearchSpace(
        "fig",
        (
            sp.log_uniform("a", 0.01, 1.0),
            sp.integer("b", 1, 5),
            sp.categorical("c", 2),
        ),
    )


class TestDomainInvariants:
    def test_bounds_must_be_ordered(self):
        with pytest.raises(ValueError):
            sp.uniform("x", 1.0, 1.0)
        with pytest.raises(ValueError):
            sp.log_uniform("x", 0.0, 1.0)
        with pytest.raises(ValueError):
            sp.integer("x", 3, 2)
        with pytest.raises(ValueError):
            sp.categorical("x", 0)

    def test_integer_lo_eq_hi_allowed(self):
        d = sp.integer("x", 2, 2)
        assert d.lo == d.hi == 2

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError):
            sp.SearchSpace("s", (sp.uniform("x", 0, 1), sp.uniform("x", 1, 2)))

    def test_empty_space_rejected(self):
        with pytest.raises(ValueError):
            sp.SearchSpace("s", ())


class TestSampling:
    def test_log_inverse_cdf_midpoint(self):
        # closed form: 0.01 * (1.0/0.01)^0.5 = 0.1
        space = sp.SearchSpace("s", (sp.log_uniform("a", 0.01, 1.0),))
        (v,) = sp.from_unit(space, (0.5,))
        assert v == pytest.approx(0.1, rel=1e-12)

    def test_samples_satisfy_invariants(self):
        rng = np.random.default_rng(0)
        for i in range(200):
            space = random_space(rng)
            config = sp.sample_uniform(space, rng)
            space.validate(config)  # must not raise

    def test_integer_upper_bound_inclusive(self):
        space = sp.SearchSpace("s", (sp.integer("n", 1, 5),))
        rng = np.random.default_rng(1)
        seen = {sp.sample_uniform(space, rng)[0] for _ in range(2000)}
        assert seen == {1, 2, 3, 4, 5}

    def test_categorical_equal_mass(self):
        space = sp.SearchSpace("s", (sp.categorical("c", 2),))
        rng = np.random.default_rng(2)
        draws = [sp.sample_uniform(space, rng)[0] for _ in range(4000)]
        assert set(draws) == {0, 1}
        assert abs(np.mean(draws) - 0.5) < 0.05

    def test_log_uniform_ks(self):
        # ln(sample) should be uniform on [ln lo, ln hi]
        space = sp.SearchSpace("s", (sp.log_uniform("a", 1e-3, 10.0),))
        rng = np.random.default_rng(3)
        xs = np.array([sp.sample_uniform(space, rng)[0] for _ in range(10_000)])
        u = (np.log(xs) - math.log(1e-3)) / (math.log(10.0) - math.log(1e-3))
        assert stats.kstest(u, "uniform").pvalue > 0.01


class TestUnitTransforms:
    def test_log_midpoint(self):
        space = figure_space()
        u = sp.to_unit(space, (0.1, 1, 0))
        assert u[0] == pytest.approx(0.5, rel=1e-12)

    def test_linear_examples(self):
        space = sp.SearchSpace("s", (sp.uniform("x", 1, 5),))
        assert sp.to_unit(space, (1.0,))[0] == 0.0
        assert sp.to_unit(space, (3.0,))[0] == pytest.approx(0.5)
        assert sp.from_unit(space, (0.5,))[0] == pytest.approx(3.0)

    def test_integer_rounding(self):
        space = sp.SearchSpace("s", (sp.integer("n", 1, 5),))
        assert sp.from_unit(space, (0.49,))[0] == 3

    def test_out_of_range_raises(self):
        space = sp.SearchSpace("s", (sp.uniform("x", 0, 1),))
        with pytest.raises(ValueError):
            sp.to_unit(space, (1.5,))
        with pytest.raises(ValueError):
            sp.from_unit(space, (1.0001,))

    def test_round_trip_identity(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            space = random_space(rng)
            config = sp.sample_uniform(space, rng)
            back = sp.from_unit(space, sp.to_unit(space, config))
            for p, a, b in zip(space.parameters, config, back):
                if p.kind in (sp.INTEGER, sp.CATEGORICAL):
                    assert a == b
                else:
                    assert b == pytest.approx(a, rel=1e-9, abs=1e-12)

    def test_degenerate_integer_maps_to_zero(self):
        space = sp.SearchSpace("s", (sp.integer("n", 3, 3),))
        assert sp.to_unit(space, (3,)) == (0.0,)
        assert sp.from_unit(space, (0.0,)) == (3,)


class TestCanonicalOrder:
    def test_numeric_first(self):
        space = figure_space()
        assert sp.canonical_order(space) == (0, 1, 2)

    def test_swap(self):
        space = sp.SearchSpace("s", (sp.categorical("c", 2), sp.uniform("x", 0, 1)))
        assert sp.canonical_order(space) == (1, 0)

    def test_all_categorical_identity(self):
        space = sp.SearchSpace("s", (sp.categorical("c", 2), sp.categorical("d", 3)))
        assert sp.canonical_order(space) == (0, 1)

    def test_idempotent_valid_permutation(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            space = random_space(rng)
            order = sp.canonical_order(space)
            assert sorted(order) == list(range(space.dim))
            reordered = sp.SearchSpace("r", tuple(space.parameters[i] for i in order))
            assert sp.canonical_order(reordered) == tuple(range(space.dim))


class TestHeader:
    def test_reference_layout(self):
        expected = (
            "<type>:<UNI>,<min_value>:0.01,<max_value>:1.0,<log-scale>&\n"
            "<type>:<INT>,<min_value>:1,<max_value>:5,<linear-scale>&\n"
            "<type>:<CATEGORICAL>,<categories>:[0, 1]"
        )
        assert sp.encode_space_header(figure_space()) == expected

    def test_single_linear_param(self):
        space = sp.SearchSpace("s", (sp.uniform("x", 0.0, 1.0),))
        assert (
            sp.encode_space_header(space)
            == "<type>:<UNI>,<min_value>:0.0,<max_value>:1.0,<linear-scale>"
        )

    def test_categorical_line(self):
        space = sp.SearchSpace("s", (sp.categorical("c", 2),))
        assert sp.encode_space_header(space) == "<type>:<CATEGORICAL>,<categories>:[0, 1]"

    def test_header_uses_canonical_order(self):
        space = sp.SearchSpace("s", (sp.categorical("c", 3), sp.uniform("x", 0, 2)))
        header = sp.encode_space_header(space)
        assert header.index("<UNI>") < header.index("<CATEGORICAL>")


class TestJson:
    def test_round_trip(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            space = random_space(rng)
            assert sp.loads_space(sp.dumps_space(space)) == space

    def test_config_dict_round_trip(self):
        space = figure_space()
        config = (0.05, 4, 1)
        assert space.config_from_dict(space.config_to_dict(config)) == config
