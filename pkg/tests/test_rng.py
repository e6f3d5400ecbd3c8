"""Stream derivation: the documented spawn-key contract, verified raw."""

import numpy as np

from wfald import rng


def test_data_stream_matches_documented_derivation():
    """Namespace 1 with no further path, Philox bit generator."""
    expected = np.random.Generator(np.random.Philox(np.random.SeedSequence(7, spawn_key=(1,))))
    got = rng.data_generator(7)
    assert np.array_equal(got.standard_normal(8), expected.standard_normal(8))


def test_test_data_stream_uses_namespace_3():
    expected = np.random.Generator(np.random.Philox(np.random.SeedSequence(7, spawn_key=(3,))))
    got = rng.test_data_generator(7)
    assert np.array_equal(got.standard_normal(8), expected.standard_normal(8))


def test_run_streams_match_documented_derivation():
    """Root (2, pc_idx, snr_idx, replicate) splits into 5 children, then devices."""
    streams = rng.run_streams(5, 7, 2, grid_path=(1, 3))

    root = np.random.SeedSequence(5, spawn_key=(2, 1, 3, 7))
    flags_s, common_s, channel_s, gains_s, devices_s = root.spawn(5)

    def gen(seq):
        return np.random.Generator(np.random.Philox(seq))

    assert np.array_equal(streams.flags.random(4), gen(flags_s).random(4))
    assert np.array_equal(streams.common.standard_normal(4), gen(common_s).standard_normal(4))
    assert np.array_equal(streams.channel.standard_normal(4), gen(channel_s).standard_normal(4))
    assert np.array_equal(streams.gains.standard_normal(4), gen(gains_s).standard_normal(4))

    for k, dev in enumerate(devices_s.spawn(2)):
        b, n = dev.spawn(2)
        assert np.array_equal(streams.batch[k].random(4), gen(b).random(4))
        assert np.array_equal(streams.noise[k].standard_normal(4), gen(n).standard_normal(4))


def test_block_draw_equals_sequential_draws():
    """Drawing (n, d) at once consumes the stream like n draws of d.

    The engine relies on this to pre-draw whole-run blocks that replay
    exactly like a round-by-round reference.
    """
    a = rng.generator(rng.seed_sequence(3, rng.NS_RUN, 0, 0, 0))
    b = rng.generator(rng.seed_sequence(3, rng.NS_RUN, 0, 0, 0))
    block = a.standard_normal((17, 4))
    rows = np.stack([b.standard_normal(4) for _ in range(17)])
    assert np.array_equal(block, rows)

    c = rng.generator(rng.seed_sequence(3, rng.NS_RUN, 0, 0, 0))
    d = rng.generator(rng.seed_sequence(3, rng.NS_RUN, 0, 0, 0))
    block_u = c.random((9, 5))
    rows_u = np.stack([d.random(5) for _ in range(9)])
    assert np.array_equal(block_u, rows_u)


def test_replicates_get_distinct_streams():
    a = rng.run_streams(0, 0, 1)
    b = rng.run_streams(0, 1, 1)
    assert not np.array_equal(a.flags.random(8), b.flags.random(8))
    assert not np.array_equal(a.common.standard_normal(8), b.common.standard_normal(8))


def test_grid_positions_get_distinct_streams():
    a = rng.run_streams(0, 0, 1, grid_path=(0, 0))
    b = rng.run_streams(0, 0, 1, grid_path=(0, 1))
    assert not np.array_equal(a.channel.standard_normal(8), b.channel.standard_normal(8))


def test_streams_within_a_replicate_are_distinct():
    s = rng.run_streams(0, 0, 2)
    draws = [s.flags.random(6), s.common.random(6), s.channel.random(6),
             s.gains.random(6), s.batch[0].random(6), s.batch[1].random(6),
             s.noise[0].random(6), s.noise[1].random(6)]
    for i in range(len(draws)):
        for j in range(i + 1, len(draws)):
            assert not np.array_equal(draws[i], draws[j])


def test_derivation_is_call_order_independent():
    """Spawning the same path twice gives the same stream, fresh each time."""
    first = rng.run_streams(11, 2, 3, grid_path=(4, 5))
    consumed = first.common.standard_normal(100)
    again = rng.run_streams(11, 2, 3, grid_path=(4, 5))
    assert np.array_equal(consumed, again.common.standard_normal(100))
