"""Deterministic block map-reduce for pair-parallel computations.

Work over m pairs is cut into fixed-size blocks (the block size is a constant,
never a function of the thread count), each block is mapped to a partial
value, and partials are combined with a fixed-order pairwise tree. The tree
order depends only on the number of blocks, so the result is identical for
any thread count. The nondeterministic mode folds partials as they complete,
which reorders floating-point sums; callers using it accept rounding-level
variation in exchange for not waiting on stragglers.
"""

import os
from concurrent.futures import ThreadPoolExecutor, as_completed

DEFAULT_BLOCK = 16384


def resolve_threads(threads=None) -> int:
    """Thread count from an explicit value, else STYLEMETRIC_THREADS, else 1."""
    if threads is not None and threads > 0:
        return int(threads)
    env = os.environ.get("STYLEMETRIC_THREADS", "").strip()
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValueError(f"STYLEMETRIC_THREADS={env!r} is not an integer") from None
        if value > 0:
            return value
    return 1


def block_spans(n: int, block_size: int = DEFAULT_BLOCK):
    """Fixed partition of range(n) into [start, stop) spans."""
    if n == 0:
        return [(0, 0)]
    return [(s, min(s + block_size, n)) for s in range(0, n, block_size)]


def tree_reduce(values, combine):
    """Pairwise reduction in a fixed order determined only by len(values)."""
    vals = list(values)
    if not vals:
        raise ValueError("tree_reduce over no values")
    while len(vals) > 1:
        merged = [combine(vals[k], vals[k + 1]) for k in range(0, len(vals) - 1, 2)]
        if len(vals) % 2:
            merged.append(vals[-1])
        vals = merged
    return vals[0]


def map_reduce_blocks(n, worker, combine, threads=1, deterministic=True,
                      block_size=DEFAULT_BLOCK):
    """Apply worker(start, stop) to each block and combine the partials.

    The single-thread path reduces with the same pairwise tree as the
    deterministic parallel path, so results never depend on thread count.
    """
    spans = block_spans(n, block_size)
    if threads <= 1 or len(spans) == 1:
        return tree_reduce([worker(s, e) for s, e in spans], combine)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(worker, s, e) for s, e in spans]
        if deterministic:
            return tree_reduce([f.result() for f in futures], combine)
        acc = None
        for fut in as_completed(futures):
            acc = fut.result() if acc is None else combine(acc, fut.result())
        return acc
