import numpy as np

from halfline import rng


def test_chunk_bounds_cover_all_paths():
    bounds = rng.chunk_bounds(10, 4)
    assert bounds == ((0, 4), (4, 4), (8, 2))
    assert sum(n for _, n in bounds) == 10


def test_locate():
    assert rng.locate(0, 4) == (0, 0)
    assert rng.locate(9, 4) == (2, 1)


def test_streams_depend_only_on_seed_chunk_and_stream():
    a = rng.generator(11, 3, rng.NORMALS).standard_normal(5)
    b = rng.generator(11, 3, rng.NORMALS).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, rng.generator(11, 4, rng.NORMALS).standard_normal(5))
    assert not np.array_equal(a, rng.generator(11, 3, rng.UNIFORMS).standard_normal(5))
    assert not np.array_equal(a, rng.generator(12, 3, rng.NORMALS).standard_normal(5))


def test_chunk_streams_rows():
    streams = rng.ChunkStreams(5, 0, lanes=8)
    z, u = streams.step()
    assert z.shape == (8,) and u.shape == (8,)
    assert np.all((u >= 0) & (u < 1))
    z2, _ = streams.step()
    assert not np.array_equal(z, z2)
    again = rng.ChunkStreams(5, 0, lanes=8).step()[0]
    np.testing.assert_array_equal(z, again)
