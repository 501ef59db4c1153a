import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polarbp.polar import (PolarCode, bhattacharyya_parameters, bit_reversal_permutation,
                           construct_code, embed_message, encode, generator_matrix,
                           polar_transform)


def kron_power(N):
    F = np.array([[1, 0], [1, 1]], dtype=int)
    G = np.array([[1]], dtype=int)
    while G.shape[0] < N:
        G = np.kron(G, F)
    return G


def reverse_bits(i, n):
    return int(format(i, f"0{n}b")[::-1], 2) if n else 0


@pytest.mark.parametrize("N,expected", [(2, [0, 1]), (4, [0, 2, 1, 3]),
                                        (8, [0, 4, 2, 6, 1, 5, 3, 7])])
def test_bit_reversal_small(N, expected):
    assert bit_reversal_permutation(N).tolist() == expected


@pytest.mark.parametrize("n", range(0, 11))
def test_bit_reversal_is_an_involution(n):
    p = bit_reversal_permutation(2 ** n)
    assert np.array_equal(p[p], np.arange(2 ** n))
    assert p.tolist() == [reverse_bits(i, n) for i in range(2 ** n)]


def test_generator_small_cases():
    assert generator_matrix(1).tolist() == [[1]]
    assert generator_matrix(2).tolist() == [[1, 0], [1, 1]]
    F4 = [[1, 0, 0, 0], [1, 1, 0, 0], [1, 0, 1, 0], [1, 1, 1, 1]]
    assert generator_matrix(4).tolist() == [[row[c] for c in (0, 2, 1, 3)] for row in F4]


@pytest.mark.parametrize("N", [2, 4, 8, 16, 32, 64])
def test_generator_is_permuted_kron_and_self_inverse(N):
    G = generator_matrix(N)
    assert np.array_equal(G, kron_power(N)[:, bit_reversal_permutation(N)])
    assert np.array_equal((G.astype(int) @ G) % 2, np.eye(N, dtype=int))


@pytest.mark.parametrize("bad", [0, 3, 6, 12, -4])
def test_invalid_block_length(bad):
    with pytest.raises(ValueError):
        generator_matrix(bad)
    with pytest.raises(ValueError):
        construct_code(bad, 1)


@pytest.mark.parametrize("N,K", [(8, 0), (8, 9), (4, -1)])
def test_invalid_dimension(N, K):
    with pytest.raises(ValueError):
        construct_code(N, K)


def test_golden_frozen_set(code64, golden64):
    assert list(code64.frozen_set) == golden64["frozen_set"]
    assert list(code64.info_set) == golden64["info_set"]
    z = bhattacharyya_parameters(64, 0.0, 0.5)
    np.testing.assert_allclose(z, golden64["bhattacharyya"], rtol=1e-12, atol=0)
    # every frozen index is at least as unreliable as every information index
    assert z[code64.frozen_index].min() >= z[code64.info_index].max()


def test_small_constructions():
    assert construct_code(2, 2).info_set == (0, 1)
    assert construct_code(2, 2).frozen_set == ()
    assert construct_code(2, 1).info_set == (1,)
    assert construct_code(8, 4).info_set == (3, 5, 6, 7)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 7), snr=st.floats(-2, 6), data=st.data())
def test_construction_partitions_and_nests(n, snr, data):
    N = 2 ** n
    K = data.draw(st.integers(1, N))
    code = construct_code(N, K, snr)
    assert len(code.info_set) == K
    assert sorted(code.info_set + code.frozen_set) == list(range(N))
    assert code == construct_code(N, K, snr)
    if K < N:
        assert set(code.info_set) <= set(construct_code(N, K + 1, snr).info_set)


def test_code_json_roundtrip(code64):
    d = json.loads(code64.to_json())
    assert d["n"] == 6 and d["N"] == 64 and d["K"] == 32
    assert PolarCode.from_dict(d) == code64
    with pytest.raises(ValueError):
        PolarCode.from_dict({**d, "n": 5})


def test_encode_small_examples():
    code = construct_code(2, 2)
    # x = (u0 ^ u1, u1)
    assert encode(code, [1, 0]).tolist() == [1, 0]
    assert encode(code, [0, 1]).tolist() == [1, 1]
    assert encode(code, [1, 1]).tolist() == [0, 1]
    code = construct_code(64, 32)
    assert not encode(code, np.zeros(32, dtype=np.uint8)).any()


@pytest.mark.parametrize("N", [2, 4, 8, 16, 64])
def test_encode_matches_generator_oracle(N, rng):
    code = construct_code(N, N)
    msg = rng.integers(0, 2, size=(100, N), dtype=np.uint8)
    assert np.array_equal(encode(code, msg), (msg.astype(int) @ generator_matrix(N)) % 2)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 8))
def test_encoder_linearity(seed, n):
    N = 2 ** n
    code = construct_code(N, max(1, N // 2))
    r = np.random.default_rng(seed)
    a, b = r.integers(0, 2, size=(2, code.K), dtype=np.uint8)
    assert np.array_equal(encode(code, a ^ b), encode(code, a) ^ encode(code, b))


def test_transform_batches_and_keeps_input(rng):
    u = rng.integers(0, 2, size=(3, 5, 16), dtype=np.uint8)
    before = u.copy()
    x = polar_transform(u)
    assert np.array_equal(u, before)
    assert np.array_equal(x, (u.astype(int) @ kron_power(16)) % 2)


def test_message_validation(code8):
    with pytest.raises(ValueError):
        encode(code8, [0, 1, 0])
    with pytest.raises(ValueError):
        encode(code8, [0, 1, 2, 0])
    u = embed_message(code8, [1, 1, 1, 1])
    assert u[list(code8.frozen_set)].sum() == 0
