import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layergraph import tensor as T
from layergraph.errors import DomainError, DtypeMismatch, IndexOutOfRange, InvalidRange, ShapeMismatch
from layergraph.tensor import Tensor

import oracles


def rand(rng, *shape, dtype=np.float64):
    return Tensor(rng.standard_normal(shape).astype(dtype))


def test_matmul_identity():
    out = T.matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
    assert out.tolist() == [[5, 6], [7, 8]]


def test_matmul_zero_annihilator(rng):
    out = T.matmul(T.zeros((1, 2)), rand(rng, 2, 3, dtype=np.float32))
    assert out.shape == (1, 3)
    assert not out.data.any()


@pytest.mark.parametrize("dtype,rtol", [(np.float32, 1e-6), (np.float64, 1e-12)])
def test_matmul_matches_triple_loop(rng, dtype, rtol):
    a, b = rand(rng, 3, 4, dtype=dtype), rand(rng, 4, 2, dtype=dtype)
    expected = oracles.matmul(a.tolist(), b.tolist())
    got = T.matmul(a, b).data
    scale = np.abs(a.data) @ np.abs(b.data)
    assert np.all(np.abs(got - np.array(expected)) <= rtol * scale * 4)


def test_matmul_errors():
    with pytest.raises(ShapeMismatch):
        T.matmul(T.zeros((2, 3)), T.zeros((2, 3)))
    with pytest.raises(DtypeMismatch):
        T.matmul(T.zeros((2, 2), "float32"), T.zeros((2, 2), "float64"))


def test_add_broadcast_cases(rng):
    x = rand(rng, 2, 3)
    assert T.add_broadcast(x, T.zeros((2, 3), "float64")).bitwise_equal(x)
    out = T.add_broadcast(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([10.0, 20.0]))
    assert out.tolist() == [[11, 22], [13, 24]]
    a, b = rand(rng, 4, 5), rand(rng, 5)
    assert out.dtype == np.float32
    assert T.add_broadcast(a, b).tolist() == oracles.add_bias(a.tolist(), b.tolist())


def test_add_broadcast_rejects_general_broadcasting():
    with pytest.raises(ShapeMismatch):
        T.add_broadcast(T.zeros((2, 3)), T.zeros((2,)))
    with pytest.raises(ShapeMismatch):
        T.add_broadcast(T.zeros((2, 3)), T.zeros((1, 3)))


def test_unary_examples(rng):
    assert T.relu(Tensor([-1.0, 0.0, 2.0])).tolist() == [0, 0, 2]
    assert not T.tanh(T.zeros((3, 2))).data.any()
    x = Tensor(rng.standard_normal(100) * 10)
    total = T.sigmoid(x).data + T.sigmoid(T.neg(x)).data
    np.testing.assert_allclose(total, 1.0, atol=1e-6)


def test_log_domain_error():
    with pytest.raises(DomainError):
        T.log(Tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        T.log(Tensor([-2.0]))


def test_sigmoid_no_overflow():
    with np.errstate(over="raise", invalid="raise"):
        out = T.sigmoid(Tensor([-1e4, 1e4], "float64"))
    assert out.tolist() == [0.0, 1.0]


def test_gather_rows(rng):
    table = Tensor([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    assert T.gather_rows(table, Tensor([0, 1, 2])).bitwise_equal(table)
    assert T.gather_rows(table, Tensor([2, 2])).tolist() == [[5, 6], [5, 6]]
    big = rand(rng, 7, 3)
    idx = rng.integers(0, 7, size=11)
    assert T.gather_rows(big, Tensor(idx)).tolist() == oracles.gather(big.tolist(), idx.tolist())
    assert T.gather_rows(big, Tensor(idx.reshape(1, 11))).shape == (1, 11, 3)


def test_gather_rows_out_of_range():
    with pytest.raises(IndexOutOfRange, match="index 3"):
        T.gather_rows(T.zeros((3, 2)), Tensor([0, 3]))


def test_gather_inverse_permutation_restores(rng):
    table = rand(rng, 6, 4)
    perm = rng.permutation(6)
    once = T.gather_rows(table, Tensor(perm))
    back = T.gather_rows(once, Tensor(np.argsort(perm)))
    assert back.bitwise_equal(table)


def test_random_uniform_contract():
    a = T.random_uniform((4, 3), seed=11)
    b = T.random_uniform((4, 3), seed=11)
    assert a.bitwise_equal(b)
    assert not a.bitwise_equal(T.random_uniform((4, 3), seed=12))
    big = T.random_uniform((1000,), 0.0, 1.0, seed=5)
    # 5 sigma of the mean of 1000 uniforms is about 0.046
    assert 0.45 <= float(big.data.mean()) <= 0.55
    assert big.data.min() >= 0 and big.data.max() < 1
    with pytest.raises(InvalidRange):
        T.random_uniform((2,), 1.0, 1.0)


def test_random_uniform_never_hits_high():
    # float32 rounding would otherwise map values near 1 onto `high`
    x = T.random_uniform((200_000,), 0.0, 1e-30, seed=3, dtype="float32")
    assert x.data.max() < np.float32(1e-30)


def test_softmax_rows(rng):
    x = rand(rng, 5, 7)
    s = T.softmax(x).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(s > 0)


def test_tensor_is_immutable():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5


def test_reductions_and_casts():
    x = Tensor([[1.0, 2.0], [3.0, 5.0]])
    assert T.reduce_sum(x, 0).tolist() == [4, 7]
    assert T.reduce_mean(x, 1).tolist() == [1.5, 4]
    assert T.argmax(x).tolist() == [1, 1]
    assert T.transpose_2d(x).tolist() == [[1, 3], [2, 5]]
    assert T.cast(x, "int64").dtype == np.int64
    assert T.scalar_mul(x, 2).tolist() == [[2, 4], [6, 10]]
    assert T.mul_elementwise(x, x).tolist() == [[1, 4], [9, 25]]
    assert T.ones((2,)).tolist() == [1, 1]


@pytest.mark.parametrize("dtype", ["float32", "float64", "int64"])
def test_tsr_round_trip(tmp_path, rng, dtype):
    x = Tensor((rng.standard_normal((3, 4)) * 100).astype(dtype))
    path = tmp_path / "x.tsr"
    T.save(x, path)
    text = path.read_text()
    assert text.splitlines()[0] == "3 4"
    assert len(text.splitlines()) == 4
    assert T.load(path, dtype).bitwise_equal(x)


def test_tsr_scalar_and_rank3(tmp_path):
    s = Tensor(np.float64(0.1))
    assert T.parse_tensor(T.format_tensor(s), "float64").bitwise_equal(s)
    cube = Tensor(np.arange(24, dtype=np.float32).reshape(2, 3, 4))
    assert T.parse_tensor(T.format_tensor(cube), "float32").bitwise_equal(cube)


def test_tsr_accepts_version_line():
    x = T.parse_tensor("version: 1\n2\n1.5 2.5\n", "float64")
    assert x.tolist() == [1.5, 2.5]


def test_tsr_count_mismatch():
    with pytest.raises(ShapeMismatch):
        T.parse_tensor("2 2\n1 2 3\n")


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 4), st.integers(1, 4), st.integers(1, 4),
    st.sampled_from(["float32", "float64"]), st.integers(0, 2**32),
)
def test_matmul_property(m, k, n, dtype, seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.standard_normal((m, k)), dtype)
    b = Tensor(rng.standard_normal((k, n)), dtype)
    tol = 1e-6 if dtype == "float32" else 1e-12
    got = T.matmul(a, b).data
    want = np.array(oracles.matmul(a.tolist(), b.tolist()))
    scale = np.abs(a.data).astype(np.float64) @ np.abs(b.data).astype(np.float64)
    assert np.all(np.abs(got - want) <= tol * scale * k + 1e-300)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=3), st.integers(0, 2**32))
def test_add_zero_is_bitwise_identity(shape, seed):
    x = Tensor(np.random.default_rng(seed).standard_normal(shape), "float32")
    assert T.add_broadcast(x, T.zeros(shape, "float32")).bitwise_equal(x)
    assert T.add_broadcast(x, T.zeros(shape[-1:], "float32")).bitwise_equal(x)
