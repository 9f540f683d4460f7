"""The generator must match the published SplitMix64 reference outputs
exactly; everything downstream (episode sampling, shuffles, resumption)
depends on it being stable across machines and languages."""

import numpy as np
import pytest

from edl.rng import SplitMix64, derive_seed


def test_reference_vectors_seed_zero():
    # First three outputs of SplitMix64 seeded with 0, from the public
    # domain reference implementation.
    g = SplitMix64(0)
    assert g.next_u64() == 0xE220A8397B1DCDAF
    assert g.next_u64() == 0x6E789E6AA1B965F4
    assert g.next_u64() == 0x06C45D188009454F


def test_seed_masked_to_64_bits():
    assert SplitMix64(1 << 64).next_u64() == SplitMix64(0).next_u64()
    assert SplitMix64(-1).next_u64() == SplitMix64(0xFFFFFFFFFFFFFFFF).next_u64()


def test_random_unit_interval_and_resolution():
    g = SplitMix64(123)
    xs = [g.random() for _ in range(1000)]
    assert all(0.0 <= x < 1.0 for x in xs)
    # top-53-bit construction: value * 2^53 is integral
    assert all(float(x * 2.0**53).is_integer() for x in xs)


def test_randrange_bounds_and_error():
    g = SplitMix64(7)
    draws = [g.randrange(6) for _ in range(2000)]
    assert set(draws) == {0, 1, 2, 3, 4, 5}
    with pytest.raises(ValueError):
        g.randrange(0)


def test_uniform_array_matches_scalar_stream():
    a = SplitMix64(42)
    b = SplitMix64(42)
    arr = a.uniform_array(-0.1, 0.1, 257)
    scalars = np.array([-0.1 + 0.2 * b.random() for _ in range(257)])
    assert np.array_equal(arr, scalars)
    assert a.state == b.state  # both consumed the same counter range


def test_shuffle_is_permutation_and_deterministic():
    items = list(range(20))
    g1 = SplitMix64(9)
    s1 = list(items)
    g1.shuffle(s1)
    g2 = SplitMix64(9)
    s2 = list(items)
    g2.shuffle(s2)
    assert s1 == s2
    assert sorted(s1) == items
    assert s1 != items  # astronomically unlikely to be identity


def test_state_roundtrip():
    g = SplitMix64(asint := 987654321)
    _ = [g.next_u64() for _ in range(5)]
    saved = g.state
    a = g.next_u64()
    g.set_state(saved)
    assert g.next_u64() == a
    assert asint == 987654321


def test_derive_seed_distinguishes_labels():
    assert derive_seed(1, "sl") != derive_seed(1, "rl")
    assert derive_seed(0, "episode", 3, 4) != derive_seed(0, "episode", 4, 3)
    # string folding includes the length, so a trailing NUL byte matters
    assert derive_seed("ab") != derive_seed("ab\x00")
    # strings and ints with the same bytes must not collide by construction
    assert derive_seed("a") != derive_seed(ord("a"))


def test_derive_seed_rejects_unknown_types():
    with pytest.raises(TypeError):
        derive_seed(1.5)
