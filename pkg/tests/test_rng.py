import numpy as np

from cyclicfl.rng import substream


def test_same_key_same_draws():
    a = substream(7, "x", 1, 2).standard_normal(16)
    b = substream(7, "x", 1, 2).standard_normal(16)
    assert np.array_equal(a, b)


def test_different_keys_differ():
    base = substream(7, "x", 1, 2).standard_normal(16)
    for other in [substream(8, "x", 1, 2), substream(7, "y", 1, 2),
                  substream(7, "x", 2, 2), substream(7, "x", 1, 3),
                  substream(7, "x", 1)]:
        assert not np.array_equal(base, other.standard_normal(16))


def test_negative_seed_ok():
    a = substream(-3, "tag").integers(0, 1000, size=8)
    b = substream(-3, "tag").integers(0, 1000, size=8)
    assert np.array_equal(a, b)
