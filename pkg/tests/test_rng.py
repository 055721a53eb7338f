import numpy as np
import pytest

from ergodica.rng import RandomStream, as_generator, as_stream


def test_same_path_same_draws():
    a = RandomStream(5).substream("x", 3).generator().standard_normal(10)
    b = RandomStream(5).substream("x", 3).generator().standard_normal(10)
    assert np.array_equal(a, b)


def test_distinct_paths_differ():
    root = RandomStream(5)
    draws = {tuple(root.substream(k).generator().integers(0, 2**62, 4)) for k in range(50)}
    assert len(draws) == 50
    assert not np.array_equal(root.substream("a").generator().random(5), root.substream("b").generator().random(5))


def test_order_independence():
    root = RandomStream(9)
    first = [root.substream(k).generator().random() for k in range(5)]
    second = [root.substream(k).generator().random() for k in reversed(range(5))][::-1]
    assert first == second


def test_float_and_array_labels_are_stable():
    s1 = RandomStream(1).substream("cell", np.array([0.5, -1.0]))
    s2 = RandomStream(1).substream("cell", np.array([0.5, -1.0]))
    assert s1 == s2 and hash(s1) == hash(s2)
    assert s1 != RandomStream(1).substream("cell", np.array([0.5, -1.5]))


def test_conversions():
    g = np.random.default_rng(0)
    assert as_generator(g) is g
    assert isinstance(as_generator(3), np.random.Generator)
    assert as_stream(3) == RandomStream(3)
    with pytest.raises(TypeError):
        as_stream("seed")
    with pytest.raises(ValueError):
        RandomStream(-1)
    with pytest.raises(ValueError):
        RandomStream(0).substream(-2)
