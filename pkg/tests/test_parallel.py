"""Blocked map-reduce: the deterministic path must be bitwise reproducible
and independent of thread count."""

import numpy as np
import pytest

from stylemetric.parallel import (DEFAULT_BLOCK, block_spans,
                                  map_reduce_blocks, resolve_threads,
                                  tree_reduce)


def test_block_spans_cover_range_without_overlap():
    spans = block_spans(100, 30)
    assert spans == [(0, 30), (30, 60), (60, 90), (90, 100)]
    spans = block_spans(60, 30)
    assert spans == [(0, 30), (30, 60)]


def test_block_spans_empty_input():
    assert block_spans(0, 10) == [(0, 0)]


def test_tree_reduce_single_value():
    assert tree_reduce([42.0], lambda a, b: a + b) == 42.0


def test_tree_reduce_is_pairwise_fixed_order():
    # with string concatenation the reduction tree shape is visible
    got = tree_reduce(list("abcdefg"), lambda a, b: f"({a}{b})")
    assert got == "((((ab)(cd))((ef)g)))"[1:-1]  # ((ab)(cd)) then ((ef)g)


def test_resolve_threads_explicit_wins(monkeypatch):
    monkeypatch.setenv("STYLEMETRIC_THREADS", "7")
    assert resolve_threads(3) == 3


def test_resolve_threads_env_fallback(monkeypatch):
    monkeypatch.setenv("STYLEMETRIC_THREADS", "5")
    assert resolve_threads(None) == 5
    monkeypatch.delenv("STYLEMETRIC_THREADS")
    assert resolve_threads(None) == 1


def test_resolve_threads_rejects_garbage_env(monkeypatch):
    monkeypatch.setenv("STYLEMETRIC_THREADS", "many")
    with pytest.raises(ValueError):
        resolve_threads(None)


def _sum_worker(values):
    def worker(lo, hi):
        return float(np.sum(values[lo:hi]))
    return worker


def test_deterministic_reduction_independent_of_thread_count():
    rng = np.random.default_rng(0)
    # values spanning many magnitudes make float addition order visible
    values = rng.standard_normal(200_000) * np.logspace(-8, 8, 200_000)
    results = set()
    for threads in (1, 2, 4, 8):
        s = map_reduce_blocks(len(values), _sum_worker(values),
                              lambda a, b: a + b, threads=threads,
                              deterministic=True, block_size=1024)
        results.add(s)
    assert len(results) == 1


def test_deterministic_reduction_independent_of_block_count_rerun():
    rng = np.random.default_rng(1)
    values = rng.standard_normal(50_000)
    a = map_reduce_blocks(len(values), _sum_worker(values), lambda x, y: x + y,
                          threads=4, deterministic=True, block_size=777)
    b = map_reduce_blocks(len(values), _sum_worker(values), lambda x, y: x + y,
                          threads=4, deterministic=True, block_size=777)
    assert a == b


def test_nondeterministic_mode_agrees_within_tolerance():
    rng = np.random.default_rng(2)
    values = rng.standard_normal(100_000)
    det = map_reduce_blocks(len(values), _sum_worker(values), lambda a, b: a + b,
                            threads=4, deterministic=True, block_size=4096)
    loose = map_reduce_blocks(len(values), _sum_worker(values), lambda a, b: a + b,
                              threads=4, deterministic=False, block_size=4096)
    assert loose == pytest.approx(det, rel=1e-8)


def test_single_block_matches_plain_sum():
    values = np.arange(10, dtype=np.float64)
    s = map_reduce_blocks(10, _sum_worker(values), lambda a, b: a + b,
                          threads=1, deterministic=True, block_size=DEFAULT_BLOCK)
    assert s == 45.0
