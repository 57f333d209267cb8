import math

import numpy as np
import pytest

from bbo_forge import bench
from bbo_forge import space as sp


class TestSynthetic:
    def test_forrester_at_zero(self):
        assert bench.evaluate_synthetic("forrester", (0.0,)) == pytest.approx(
            4.0 * math.sin(-4.0), rel=1e-12
        )

    def test_goldstein_price_minimum(self):
        assert bench.evaluate_synthetic("goldstein_price", (0.0, -1.0)) == pytest.approx(3.0)

    def test_branin_grid_minimum(self):
        # dense-grid brute force over the standard domain
        xs = np.linspace(-5, 10, 1000)
        ys = np.linspace(0, 15, 1000)
        gx, gy = np.meshgrid(xs, ys)
        b = 5.1 / (4 * np.pi**2)
        c = 5 / np.pi
        vals = (gy - b * gx**2 + c * gx - 6) ** 2 + 10 * (1 - 1 / (8 * np.pi)) * np.cos(gx) + 10
        assert vals.min() == pytest.approx(0.3979, abs=1e-2)

    def test_unknown_name(self):
        with pytest.raises(KeyError):
            bench.evaluate_synthetic("nope", (0.0,))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            bench.evaluate_synthetic("branin", (0.0,))

    def test_registry_against_independent_reimplementation(self):
        # high-precision re-implementations, written directly from the standard formulas
        def forrester(x):
            return (6 * x - 2) ** 2 * np.sin(12 * x - 4)

        def branin(x, y):
            return (
                (y - 5.1 / (4 * np.pi**2) * x**2 + 5 / np.pi * x - 6) ** 2
                + 10 * (1 - 1 / (8 * np.pi)) * np.cos(x)
                + 10
            )

        def eggholder(x, y):
            return -(y + 47) * np.sin(np.sqrt(abs(x / 2 + y + 47))) - x * np.sin(
                np.sqrt(abs(x - (y + 47)))
            )

        def goldstein_price(x, y):
            return (
                1 + (x + y + 1) ** 2 * (19 - 14 * x + 3 * x**2 - 14 * y + 6 * x * y + 3 * y**2)
            ) * (
                30
                + (2 * x - 3 * y) ** 2
                * (18 - 32 * x + 12 * x**2 + 48 * y - 36 * x * y + 27 * y**2)
            )

        refs = {
            "forrester": forrester,
            "branin": branin,
            "eggholder": eggholder,
            "goldstein_price": goldstein_price,
        }
        rng = np.random.default_rng(0)
        for name, ref in refs.items():
            task = bench.synthetic_task(name)
            for _ in range(100):
                config = sp.sample_uniform(task.space, rng)
                assert task.evaluate(config) == pytest.approx(float(ref(*config)), rel=1e-9)

    def test_register_extension_point(self):
        space = sp.SearchSpace("sq", (sp.uniform("x", -1.0, 1.0),))
        bench.register_synthetic("square_test_only", lambda x: x * x, space)
        assert bench.evaluate_synthetic("square_test_only", (0.5,)) == 0.25
        with pytest.raises(ValueError):
            bench.register_synthetic("square_test_only", lambda x: x, space)


def one_d_table() -> bench.OfflineTable:
    space = sp.SearchSpace("t", (sp.uniform("x", 0.0, 1.0),))
    return bench.OfflineTable(space, (((0.0,), 1.0), ((1.0,), 3.0)))


class TestSurrogate:
    def test_nearest_neighbor(self):
        s = bench.SurrogateBenchmark(one_d_table(), k=1)
        assert s.predict((0.1,)) == 1.0

    def test_k2_mean(self):
        s = bench.SurrogateBenchmark(one_d_table(), k=2)
        assert s.predict((0.7,)) == 2.0

    def test_exact_row_match(self):
        s = bench.SurrogateBenchmark(one_d_table(), k=1)
        assert s.predict((1.0,)) == 3.0

    def test_bounded_by_table_range(self):
        rng = np.random.default_rng(1)
        space = sp.SearchSpace(
            "m", (sp.uniform("x", 0, 1), sp.log_uniform("y", 0.1, 10), sp.categorical("c", 3))
        )
        rows = tuple((sp.sample_uniform(space, rng), float(rng.normal())) for _ in range(50))
        table = bench.OfflineTable(space, rows)
        ys = [y for _, y in rows]
        s = bench.SurrogateBenchmark(table, k=4)
        for _ in range(100):
            v = s.predict(sp.sample_uniform(space, rng))
            assert min(ys) - 1e-12 <= v <= max(ys) + 1e-12

    def test_k_equals_rows_gives_table_mean(self):
        table = one_d_table()
        s = bench.SurrogateBenchmark(table, k=len(table))
        assert s.predict((0.3,)) == pytest.approx(np.mean([y for _, y in table.rows]))

    def test_categorical_distance(self):
        space = sp.SearchSpace("c", (sp.categorical("c", 2),))
        table = bench.OfflineTable(space, (((0,), 5.0), ((1,), 9.0)))
        s = bench.SurrogateBenchmark(table, k=1)
        assert s.predict((0,)) == 5.0
        assert s.predict((1,)) == 9.0

    def test_knn_tie_at_kth_breaks_by_row_index(self):
        space = sp.SearchSpace("t", (sp.uniform("x", 0.0, 1.0),))
        # rows 1 and 2 are equidistant from the query; row 1 wins the k=2 slot
        table = bench.OfflineTable(space, (((0.5,), 0.0), ((0.4,), 10.0), ((0.6,), 20.0)))
        s = bench.SurrogateBenchmark(table, k=2)
        assert s.predict((0.5,)) == pytest.approx(5.0)


class TestMarginalBest:
    def test_group_means(self):
        space = sp.SearchSpace("g", (sp.categorical("p", 2), sp.categorical("q", 2)))
        rows = (
            ((0, 0), 1.0),
            ((0, 1), 3.0),
            ((1, 0), 2.0),
            ((1, 1), 1.0),
        )
        table = bench.OfflineTable(space, rows)
        assert bench.marginal_best(table, "p") == 1  # means: 2.0 vs 1.5

    def test_single_value(self):
        space = sp.SearchSpace("g", (sp.integer("p", 3, 3), sp.uniform("x", 0, 1)))
        table = bench.OfflineTable(space, (((3, 0.1), 1.0), ((3, 0.9), 2.0)))
        assert bench.marginal_best(table, "p") == 3

    def test_tie_breaks_low(self):
        space = sp.SearchSpace("g", (sp.categorical("p", 2), sp.categorical("q", 2)))
        rows = (((0, 0), 1.0), ((0, 1), 3.0), ((1, 0), 3.0), ((1, 1), 1.0))
        table = bench.OfflineTable(space, rows)
        assert bench.marginal_best(table, "p") == 0

    def test_unknown_param(self):
        with pytest.raises(KeyError):
            bench.marginal_best(one_d_table(), "nope")


class TestMaskTask:
    def make_table(self, seed=0, n=60):
        rng = np.random.default_rng(seed)
        space = sp.SearchSpace(
            "m3",
            (sp.uniform("a", 0, 1), sp.uniform("b", 0, 1), sp.categorical("c", 3)),
        )
        rows = tuple(
            (cfg, cfg[0] + 2 * cfg[1] + 0.1 * cfg[2])
            for cfg in (sp.sample_uniform(space, rng) for _ in range(n))
        )
        return bench.OfflineTable(space, rows)

    def test_masked_oracle_matches_parent(self):
        table = self.make_table()
        task = bench.mask_task(table, ["c"], k=3)
        assert task.space.names == ("a", "b")
        fixed = bench.marginal_best(table, "c")
        surrogate = bench.SurrogateBenchmark(table, k=3)
        rng = np.random.default_rng(1)
        for _ in range(25):
            config = sp.sample_uniform(task.space, rng)
            assert task.evaluate(config) == pytest.approx(
                surrogate.predict((config[0], config[1], fixed))
            )

    def test_task_id_records_mask(self):
        table = self.make_table()
        task = bench.mask_task(table, ["b", "c"])
        assert "mask" in task.id and "b" in task.id and "c" in task.id

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            bench.mask_task(self.make_table(), [])

    def test_full_mask_rejected(self):
        space = sp.SearchSpace("two", (sp.uniform("a", 0, 1), sp.uniform("b", 0, 1)))
        rng = np.random.default_rng(2)
        rows = tuple((sp.sample_uniform(space, rng), float(i)) for i in range(10))
        table = bench.OfflineTable(space, rows)
        with pytest.raises(ValueError):
            bench.mask_task(table, ["a", "b"])


class TestTableIO:
    def test_round_trip(self, tmp_path):
        table = one_d_table()
        path = tmp_path / "t.jsonl"
        bench.dump_offline_table(table, path)
        loaded = bench.load_offline_table(path)
        assert loaded.space == table.space
        assert loaded.rows == table.rows

    def test_constant_objective_rejected(self, tmp_path):
        path = tmp_path / "c.jsonl"
        space = sp.SearchSpace("t", (sp.uniform("x", 0.0, 1.0),))
        with open(path, "w") as f:
            f.write(sp.dumps_space(space) + "\n")
            f.write('{"config": {"x": 0.1}, "objective": 2.0}\n')
            f.write('{"config": {"x": 0.9}, "objective": 2.0}\n')
        with pytest.raises(bench.TableError, match="identical"):
            bench.load_offline_table(path)

    def test_out_of_range_row_named(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        space = sp.SearchSpace("t", (sp.uniform("x", 0.0, 1.0),))
        with open(path, "w") as f:
            f.write(sp.dumps_space(space) + "\n")
            f.write('{"config": {"x": 0.1}, "objective": 2.0}\n')
            f.write('{"config": {"x": 7.0}, "objective": 1.0}\n')
        with pytest.raises(bench.TableError, match="row 1"):
            bench.load_offline_table(path)

    def test_parse_failure(self, tmp_path):
        path = tmp_path / "garbage.jsonl"
        path.write_text("not json\n")
        with pytest.raises(bench.TableError):
            bench.load_offline_table(path)
