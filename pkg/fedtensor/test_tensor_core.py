"""
Tensor core tests: values, federations, virtual-global concatenation,
broadcasting and permutations
"""
import itertools

import numpy as np
import pytest

from fedtensor.modules.errors import ShapeError
from fedtensor.modules.tensor_core import (
    FederatedValue,
    Federation,
    TensorValue,
    broadcast_shape,
    broadcast_to,
    invert_permutation,
    permute,
    permute_shape,
    virtual_global,
)


def fed(arrays, record_axis=1, clients=None):
    clients = clients or tuple(f"c{i + 1}" for i in range(len(arrays)))
    return FederatedValue.from_arrays(Federation(clients), record_axis, [np.asarray(a, dtype=float) for a in arrays])


# ============================================
# Values
# ============================================

def test_tensor_value_is_read_only():
    t = TensorValue.from_flat((2, 2), [1, 2, 3, 4])
    assert t.shape == (2, 2)
    assert t.to_flat() == [1.0, 2.0, 3.0, 4.0]
    with pytest.raises(ValueError):
        t.array[0, 0] = 5.0


def test_from_flat_checks_length():
    with pytest.raises(ShapeError):
        TensorValue.from_flat((2, 3), [1.0] * 5)


def test_scalar_has_rank_zero():
    t = TensorValue.scalar(7.0)
    assert t.rank == 0
    assert t.to_flat() == [7.0]


def test_federation_rejects_empty_and_duplicates():
    with pytest.raises(ShapeError):
        Federation(())
    with pytest.raises(ShapeError):
        Federation(("a", "a"))


def test_federated_value_checks_nonrecord_shape():
    with pytest.raises(ShapeError):
        fed([np.zeros((2, 3)), np.zeros((1, 4))])


def test_federated_value_allows_empty_clients():
    x = fed([np.zeros((0, 2)), np.ones((3, 2))])
    assert x.record_counts == {"c1": 0, "c2": 3}
    assert x.nonrecord_shape == (2,)


def test_record_axis_out_of_range():
    with pytest.raises(ShapeError):
        FederatedValue(Federation(("a",)), 3, (2,), (TensorValue(np.zeros((1, 2))),))


# ============================================
# Virtual global tensor
# ============================================

def test_virtual_global_vectors():
    assert virtual_global(fed([[1, 2], [3]])).to_flat() == [1.0, 2.0, 3.0]


def test_virtual_global_columns():
    x = fed([[[1], [3]], [[4, 5], [6, 7]]], record_axis=2)
    np.testing.assert_array_equal(virtual_global(x).array, [[1, 4, 5], [3, 6, 7]])


def test_virtual_global_single_client_is_identity():
    local = np.arange(6.0).reshape(3, 2)
    assert virtual_global(fed([local])).bit_equal(TensorValue(local))


def test_virtual_global_with_no_records():
    g = virtual_global(fed([np.zeros((0, 2)), np.zeros((0, 2))]))
    assert g.shape == (0, 2)


# ============================================
# Broadcasting
# ============================================

@pytest.mark.parametrize("s, t, expected", [
    ((2, 1), (3,), (2, 3)),
    ((), (4, 2), (4, 2)),
    ((1, 3), (5, 1), (5, 3)),
])
def test_broadcast_shape(s, t, expected):
    assert broadcast_shape(s, t) == expected
    assert broadcast_shape(t, s) == expected


def test_broadcast_shape_names_axis():
    with pytest.raises(ShapeError) as info:
        broadcast_shape((2, 3), (2, 4))
    assert info.value.axis == 2


def test_broadcast_to_examples():
    assert broadcast_to(TensorValue([5.0]), (3,)).to_flat() == [5.0, 5.0, 5.0]
    np.testing.assert_array_equal(broadcast_to(TensorValue([[1.0], [2.0]]), (2, 3)).array,
                                  [[1, 1, 1], [2, 2, 2]])
    np.testing.assert_array_equal(broadcast_to(TensorValue.scalar(7.0), (2, 2)).array, [[7, 7], [7, 7]])


def test_broadcast_to_rejects_growing_target():
    with pytest.raises(ShapeError):
        broadcast_to(TensorValue(np.zeros((2, 3))), (3,))


def test_broadcast_is_associative_and_commutative():
    rng = np.random.default_rng(1)
    for _ in range(50):
        shapes = [tuple(int(d) for d in rng.choice([1, 3], size=rng.integers(0, 4))) for _ in range(3)]
        a, b, c = shapes
        assert broadcast_shape(a, b) == broadcast_shape(b, a)
        assert broadcast_shape(broadcast_shape(a, b), c) == broadcast_shape(a, broadcast_shape(b, c))


# ============================================
# Permutations
# ============================================

def test_permute_transpose():
    np.testing.assert_array_equal(permute(TensorValue([[1.0, 2.0], [3.0, 4.0]]), (2, 1)).array,
                                  [[1, 3], [2, 4]])


def test_permute_identity():
    t = TensorValue(np.arange(24.0).reshape(2, 3, 4))
    assert permute(t, (1, 2, 3)).bit_equal(t)


def test_permute_matches_index_oracle():
    t = np.arange(24.0).reshape(2, 3, 4)
    tau = (3, 1, 2)
    out = permute(TensorValue(t), tau).array
    assert out.shape == permute_shape(t.shape, tau) == (3, 4, 2)
    for i in itertools.product(*(range(d) for d in out.shape)):
        source = tuple(i[tau[a] - 1] for a in range(3))
        assert out[i] == t[source]


def test_permute_rank_mismatch():
    with pytest.raises(ShapeError):
        permute(TensorValue(np.zeros((2, 2))), (1, 2, 3))


def test_permutation_inverse_round_trip():
    rng = np.random.default_rng(2)
    for _ in range(20):
        tau = tuple(int(i) + 1 for i in rng.permutation(4))
        t = TensorValue(rng.normal(size=(2, 3, 4, 5)))
        assert permute(permute(t, tau), invert_permutation(tau)).bit_equal(t)
