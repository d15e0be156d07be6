import numpy as np
import pytest
from hypothesis import given, strategies as st

from rsjd.rng import as_streams, block_ranges, block_streams, run_blocks, subseed


def test_streams_are_reproducible_and_distinct():
    a, b = block_streams(7, 3), block_streams(7, 3)
    assert np.array_equal(a.diffusion.random(5), b.diffusion.random(5))
    c = block_streams(7, 3)
    draws = [getattr(c, p).random(4) for p in ("diffusion", "jumps", "switching", "killing", "aux")]
    assert len({tuple(d) for d in draws}) == 5
    assert not np.array_equal(block_streams(7, 4).diffusion.random(5), block_streams(7, 3).diffusion.random(5))
    assert not np.array_equal(block_streams(8, 3).diffusion.random(5), block_streams(7, 3).diffusion.random(5))


def test_subseed_is_distinct_from_parent():
    s = subseed(5, 1)
    assert s == (5, 1) and subseed(s, 2) == (5, 1, 2)
    assert not np.array_equal(block_streams(s, 0).aux.random(3), block_streams(5, 0).aux.random(3))


def test_large_seed_and_negative_seed():
    block_streams(2**64 - 1, 0)
    with pytest.raises(ValueError):
        block_streams(-1, 0)


@given(st.integers(1, 50_000), st.integers(1, 9000))
def test_block_ranges_partition(n, size):
    r = block_ranges(n, size)
    assert r[0][0] == 0 and r[-1][1] == n
    assert all(a[1] == b[0] for a, b in zip(r, r[1:]))
    assert all(0 < s1 - s0 <= size for s0, s1 in r)


def test_block_ranges_rejects_empty():
    with pytest.raises(ValueError, match="n_paths must be >= 1"):
        block_ranges(0)


def test_run_blocks_is_worker_independent():
    fn = lambda b, s0, s1, streams: streams.aux.random(s1 - s0)
    one = np.concatenate(run_blocks(fn, 1000, 3, workers=1, block_size=128))
    four = np.concatenate(run_blocks(fn, 1000, 3, workers=4, block_size=128))
    assert np.array_equal(one, four)


def test_as_streams_accepts_generators():
    s = as_streams(np.random.default_rng(1))
    assert isinstance(s.jumps, np.random.Generator)
    assert as_streams(s) is s
