import numpy as np
import pytest

from seriesearch.core import ed2_batch, read_series_file, write_series_file
from seriesearch.errors import UsageError
from seriesearch.generate import (
    generate_noise_workload,
    generate_ood_workload,
    generate_random_walk,
)
from seriesearch.pscan import brute_force_knn, pscan, pscan_query

from conftest import random_walks


class TestRandomWalk:
    def test_deterministic_bytes(self, tmp_path):
        a = tmp_path / "a.bin"
        b = tmp_path / "b.bin"
        generate_random_walk(50, 32, seed=5, out_path=str(a))
        generate_random_walk(50, 32, seed=5, out_path=str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_different_seeds_differ(self, tmp_path):
        a = tmp_path / "a.bin"
        b = tmp_path / "b.bin"
        generate_random_walk(5, 32, seed=5, out_path=str(a))
        generate_random_walk(5, 32, seed=6, out_path=str(b))
        assert a.read_bytes() != b.read_bytes()

    def test_prefix_stability(self, tmp_path):
        # series i depends only on (seed, i): a longer file starts with the
        # shorter one
        a = tmp_path / "a.bin"
        b = tmp_path / "b.bin"
        generate_random_walk(10, 32, seed=9, out_path=str(a))
        generate_random_walk(30, 32, seed=9, out_path=str(b))
        assert b.read_bytes().startswith(a.read_bytes())

    def test_output_is_normalized(self, tmp_path):
        path = tmp_path / "d.bin"
        generate_random_walk(20, 256, seed=7, out_path=str(path))
        data = read_series_file(str(path), 256).astype(np.float64)
        assert np.all(np.abs(data.mean(axis=1)) < 1e-4)
        assert np.all(np.abs(data.std(axis=1) - 1.0) < 1e-4)

    def test_walks_are_autocorrelated(self, tmp_path):
        path = tmp_path / "d.bin"
        generate_random_walk(100, 256, seed=8, out_path=str(path))
        data = read_series_file(str(path), 256).astype(np.float64)
        lag1 = [np.corrcoef(s[:-1], s[1:])[0, 1] for s in data]
        assert float(np.median(lag1)) > 0.8


class TestNoiseWorkload:
    def test_rejects_out_of_range_variance(self, tmp_path):
        ds = tmp_path / "d.bin"
        generate_random_walk(10, 32, seed=1, out_path=str(ds))
        for bad in (0.0, 0.005, 0.5):
            with pytest.raises(UsageError):
                generate_noise_workload(str(ds), 32, 5, bad, 1, str(tmp_path / "q.bin"))

    def test_queries_normalized_and_deterministic(self, tmp_path):
        ds = tmp_path / "d.bin"
        generate_random_walk(50, 64, seed=2, out_path=str(ds))
        q1 = tmp_path / "q1.bin"
        q2 = tmp_path / "q2.bin"
        generate_noise_workload(str(ds), 64, 10, 0.05, 3, str(q1))
        generate_noise_workload(str(ds), 64, 10, 0.05, 3, str(q2))
        assert q1.read_bytes() == q2.read_bytes()
        queries = read_series_file(str(q1), 64).astype(np.float64)
        assert np.all(np.abs(queries.mean(axis=1)) < 1e-4)

    def test_more_noise_means_farther_queries(self, tmp_path):
        ds = tmp_path / "d.bin"
        generate_random_walk(200, 64, seed=4, out_path=str(ds))
        data = read_series_file(str(ds), 64)

        def mean_min_distance(sigma2):
            q = tmp_path / f"q{sigma2}.bin"
            generate_noise_workload(str(ds), 64, 30, sigma2, 5, str(q))
            queries = read_series_file(str(q), 64)
            return float(np.mean([ed2_batch(data, s).min() for s in queries]))

        assert mean_min_distance(0.01) < mean_min_distance(0.10)


class TestOodWorkload:
    def test_exclusion_and_counts(self, tmp_path):
        ds = tmp_path / "d.bin"
        generate_random_walk(100, 32, seed=6, out_path=str(ds))
        q = tmp_path / "q.bin"
        reduced = tmp_path / "r.bin"
        held, kept = generate_ood_workload(str(ds), 32, 10, 7, str(q), str(reduced))
        assert (held, kept) == (10, 90)
        queries = read_series_file(str(q), 32)
        remain = read_series_file(str(reduced), 32)
        assert len(queries) == 10 and len(remain) == 90
        query_rows = {row.tobytes() for row in queries}
        for row in remain:
            assert row.tobytes() not in query_rows
        # held-out plus remaining reconstructs the dataset as a multiset
        original = read_series_file(str(ds), 32)
        union = sorted(
            [r.tobytes() for r in queries] + [r.tobytes() for r in remain]
        )
        assert union == sorted(r.tobytes() for r in original)

    def test_rejects_count_over_dataset(self, tmp_path):
        ds = tmp_path / "d.bin"
        generate_random_walk(5, 32, seed=6, out_path=str(ds))
        with pytest.raises(UsageError):
            generate_ood_workload(str(ds), 32, 6, 1, str(tmp_path / "q"),
                                  str(tmp_path / "r"))


class TestPscan:
    def test_single_thread_equals_naive(self, tmp_path):
        data = random_walks(300, 32, 70)
        ds = tmp_path / "d.bin"
        write_series_file(str(ds), data)
        q = random_walks(1, 32, 71)[0]
        got = pscan_query(str(ds), 32, q, k=5, num_threads=1)
        want = brute_force_knn(data, q, 5)
        assert got.distances_sq() == want.distances_sq()
        assert got.entries() == want.entries()

    @pytest.mark.parametrize("threads", [1, 4, 8])
    def test_thread_counts_identical_distances(self, tmp_path, threads):
        data = random_walks(500, 32, 72)
        ds = tmp_path / "d.bin"
        write_series_file(str(ds), data)
        queries = random_walks(5, 32, 73)
        want = [brute_force_knn(data, q, 10).distances_sq() for q in queries]
        got = [
            rs.distances_sq()
            for rs in pscan(str(ds), 32, queries, k=10, num_threads=threads)
        ]
        assert got == want

    def test_chunked_reading_covers_everything(self, tmp_path):
        data = random_walks(700, 32, 74)
        ds = tmp_path / "d.bin"
        write_series_file(str(ds), data)
        q = random_walks(1, 32, 75)[0]
        got = pscan_query(str(ds), 32, q, k=3, num_threads=2, chunk_series=128)
        want = brute_force_knn(data, q, 3)
        assert got.distances_sq() == want.distances_sq()
