import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import oracle_mul

from hpmrec.cdalgebra import (
    HcVec,
    cd_add,
    cd_conjugate,
    cd_mul,
    cd_mul_recursive,
    cd_mul_vjp,
    cd_norm,
    cd_scale,
    cd_sub,
    num_components,
    structure_table,
)


def hamilton(p, q):
    a1, b1, c1, d1 = p
    a2, b2, c2, d2 = q
    return [
        a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
        a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
        a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
        a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
    ]


def rand(rng, n_exp, dim=3, batch=()):
    return rng.normal(size=batch + (num_components(n_exp), dim))


def basis(n_exp, i):
    return HcVec.basis(n_exp, i).data


# -- structure table ---------------------------------------------------------

def test_complex_unit_squares_to_minus_one():
    t = structure_table(0)
    assert (t.index[1, 1], t.sign[1, 1]) == (0, -1)


def test_quaternion_units_anticommute():
    t = structure_table(1)
    assert (t.index[1, 2], t.sign[1, 2]) == (3, 1)
    assert (t.index[2, 1], t.sign[2, 1]) == (3, -1)


@pytest.mark.parametrize("n_exp", range(5))
def test_table_identity_rows_and_unit_squares(n_exp):
    t = structure_table(n_exp)
    n = num_components(n_exp)
    assert t.order == n
    assert np.array_equal(t.index[0], np.arange(n)) and np.all(t.sign[0] == 1)
    assert np.array_equal(t.index[:, 0], np.arange(n)) and np.all(t.sign[:, 0] == 1)
    for i in range(1, n):
        assert t.index[i, i] == 0 and t.sign[i, i] == -1
    # each row of the table permutes the basis
    for i in range(n):
        assert sorted(t.index[i]) == list(range(n))


def test_table_is_cached_and_read_only():
    assert structure_table(2) is structure_table(2)
    with pytest.raises(ValueError):
        structure_table(2).sign[0, 0] = 0


@pytest.mark.parametrize("bad", [-1, 5, 1.5])
def test_table_rejects_bad_exponent(bad):
    with pytest.raises(ValueError):
        structure_table(bad)


def test_octonion_basis_triple_is_not_associative():
    t = structure_table(2)

    def mul(i, j):
        return t.sign[i, j], t.index[i, j]

    violations = []
    for i, j, k in itertools.product(range(8), repeat=3):
        s1, ij = mul(i, j)
        s2, left = mul(ij, k)
        s3, jk = mul(j, k)
        s4, right = mul(i, jk)
        if (s1 * s2, left) != (s3 * s4, right):
            violations.append((i, j, k))
    assert violations
    assert (1, 2, 4) in violations


# -- elementwise ops ---------------------------------------------------------

def test_add_sub_examples():
    x = HcVec(np.array([[1.0], [2.0]]))
    y = HcVec(np.array([[3.0], [4.0]]))
    assert np.array_equal(cd_add(x, y).data, [[4.0], [6.0]])
    assert np.array_equal((x + HcVec.zeros(0, 1)).data, x.data)
    assert np.array_equal(cd_sub(x, x).data, np.zeros((2, 1)))


def test_conjugate_examples():
    q = HcVec(np.array([[1.0], [2.0], [3.0], [4.0]]))
    assert np.array_equal(cd_conjugate(q).data.ravel(), [1, -2, -3, -4])
    assert np.array_equal(cd_conjugate(cd_conjugate(q)).data, q.data)
    real = np.zeros((8, 3))
    real[0] = [1.0, -2.0, 0.5]
    assert np.array_equal(cd_conjugate(real), real)


def test_scale_examples():
    x = HcVec(np.array([[1.0], [3.0]]))
    assert np.array_equal(cd_scale(0.0, x).data, np.zeros((2, 1)))
    assert np.array_equal(cd_scale(1.0, x).data, x.data)
    assert np.array_equal(cd_scale(2.0, x).data.ravel(), [2.0, 6.0])
    assert np.array_equal((2.0 * x).data.ravel(), [2.0, 6.0])


def test_norm_examples():
    assert cd_norm(HcVec(np.array([[1.0], [2.0], [3.0], [4.0]])))[0] == pytest.approx(np.sqrt(30.0))
    assert np.array_equal(cd_norm(HcVec.zeros(2, 5)), np.zeros(5))


def test_hcvec_validation():
    with pytest.raises(ValueError):
        HcVec(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        HcVec(np.zeros(4))
    with pytest.raises(ValueError):
        HcVec(np.zeros((64, 1)))
    with pytest.raises(ValueError):
        HcVec(np.array([[np.nan], [0.0]]))
    v = HcVec(np.arange(8.0).reshape(4, 2))
    assert (v.num_components, v.n_exp, v.dim) == (4, 1, 2)
    assert np.array_equal(v.real, [0.0, 1.0])
    assert v.imag.shape == (3, 2)


def test_shape_mismatch_is_rejected():
    with pytest.raises(ValueError):
        cd_mul(np.zeros((4, 2)), np.zeros((2, 2)))


# -- multiplication ----------------------------------------------------------

def test_complex_product_example():
    out = cd_mul(HcVec(np.array([[1.0], [2.0]])), HcVec(np.array([[3.0], [4.0]])))
    assert np.array_equal(out.data.ravel(), [-5.0, 10.0])


def test_complex_matches_python_complex():
    rng = np.random.default_rng(0)
    x, y = rand(rng, 0, dim=50), rand(rng, 0, dim=50)
    z = (x[0] + 1j * x[1]) * (y[0] + 1j * y[1])
    np.testing.assert_allclose(cd_mul(x, y), np.stack([z.real, z.imag]), atol=1e-14)


def test_quaternion_matches_hamilton_product():
    rng = np.random.default_rng(1)
    for _ in range(100):
        x, y = rng.normal(size=4), rng.normal(size=4)
        got = cd_mul(x[:, None], y[:, None])[:, 0]
        np.testing.assert_allclose(got, hamilton(x, y), atol=1e-14)


def test_quaternion_basis_product():
    assert np.array_equal(cd_mul(basis(1, 1), basis(1, 2)), basis(1, 3))


@pytest.mark.parametrize("n_exp", range(5))
def test_real_unit_is_identity(n_exp):
    rng = np.random.default_rng(n_exp)
    y = rand(rng, n_exp)
    one = np.zeros_like(y)
    one[0] = 1.0
    assert np.array_equal(cd_mul(one, y), y)
    assert np.array_equal(cd_mul(y, one), y)


@pytest.mark.parametrize("n_exp", range(4))
def test_table_matches_list_oracle(n_exp):
    rng = np.random.default_rng(10 + n_exp)
    n = num_components(n_exp)
    for _ in range(100):
        x, y = rng.normal(size=n), rng.normal(size=n)
        np.testing.assert_allclose(cd_mul(x[:, None], y[:, None])[:, 0], oracle_mul(list(x), list(y)),
                                   rtol=0, atol=1e-12)


@pytest.mark.parametrize("n_exp", range(5))
def test_table_matches_recursion_batched(n_exp):
    rng = np.random.default_rng(20 + n_exp)
    x, y = rand(rng, n_exp, dim=4, batch=(100,)), rand(rng, n_exp, dim=4, batch=(100,))
    np.testing.assert_allclose(cd_mul(x, y), cd_mul_recursive(x, y), rtol=0, atol=1e-12)


@pytest.mark.parametrize("n_exp", range(4))
def test_bilinearity(n_exp):
    rng = np.random.default_rng(30 + n_exp)
    x, x2, y, y2 = (rand(rng, n_exp, batch=(50,)) for _ in range(4))
    a, b = 0.7, -1.3
    np.testing.assert_allclose(cd_mul(a * x + b * x2, y), a * cd_mul(x, y) + b * cd_mul(x2, y), atol=1e-12)
    np.testing.assert_allclose(cd_mul(x, a * y + b * y2), a * cd_mul(x, y) + b * cd_mul(x, y2), atol=1e-12)


@pytest.mark.parametrize("n_exp", range(4))
def test_conjugate_reverses_products(n_exp):
    rng = np.random.default_rng(40 + n_exp)
    x, y = rand(rng, n_exp, batch=(200,)), rand(rng, n_exp, batch=(200,))
    np.testing.assert_allclose(cd_conjugate(cd_mul(x, y)), cd_mul(cd_conjugate(y), cd_conjugate(x)),
                               rtol=0, atol=1e-12)


@pytest.mark.parametrize("n_exp", range(4))
def test_times_conjugate_is_squared_norm(n_exp):
    rng = np.random.default_rng(50 + n_exp)
    x = rand(rng, n_exp, batch=(200,))
    p = cd_mul(x, cd_conjugate(x))
    assert np.max(np.abs(p[:, 1:])) <= 1e-10
    np.testing.assert_allclose(p[:, 0], cd_norm(x) ** 2, rtol=1e-12)


@pytest.mark.parametrize("n_exp", [0, 1, 2])
def test_norm_is_multiplicative_up_to_octonions(n_exp):
    rng = np.random.default_rng(60 + n_exp)
    x, y = rand(rng, n_exp, dim=1, batch=(1000,)), rand(rng, n_exp, dim=1, batch=(1000,))
    np.testing.assert_allclose(cd_norm(cd_mul(x, y)), cd_norm(x) * cd_norm(y), rtol=1e-10)


def _signed_pair_sums(n):
    out = []
    for a, b in itertools.combinations(range(n), 2):
        for s in (1.0, -1.0):
            v = np.zeros(n)
            v[a], v[b] = 1.0, s
            out.append(v)
    return np.array(out)


def test_sedenions_have_zero_divisors():
    cands = _signed_pair_sums(16)
    x = np.repeat(cands, len(cands), axis=0)[..., None]
    y = np.tile(cands, (len(cands), 1))[..., None]
    norms = cd_norm(cd_mul(x, y))[:, 0]
    hits = np.flatnonzero(norms < 1e-12)
    assert hits.size > 0
    i = hits[0]
    assert cd_norm(x[i])[0] > 0 and cd_norm(y[i])[0] > 0
    assert cd_norm(cd_mul(x[i], y[i]))[0] < 1e-12


def test_octonions_have_no_signed_pair_zero_divisors():
    cands = _signed_pair_sums(8)
    x = np.repeat(cands, len(cands), axis=0)[..., None]
    y = np.tile(cands, (len(cands), 1))[..., None]
    assert cd_norm(cd_mul(x, y)).min() > 1.0


@pytest.mark.parametrize("n_exp", [0, 1])
def test_associative_through_quaternions(n_exp):
    rng = np.random.default_rng(70 + n_exp)
    x, y, z = (rand(rng, n_exp, batch=(100,)) for _ in range(3))
    np.testing.assert_allclose(cd_mul(cd_mul(x, y), z), cd_mul(x, cd_mul(y, z)), atol=1e-12)


def test_octonion_random_triple_is_not_associative():
    rng = np.random.default_rng(80)
    x, y, z = (rand(rng, 2) for _ in range(3))
    assert np.max(np.abs(cd_mul(cd_mul(x, y), z) - cd_mul(x, cd_mul(y, z)))) > 1e-3


@pytest.mark.parametrize("n_exp", [1, 2, 3, 4])
def test_not_commutative_beyond_complex(n_exp):
    x, y = basis(n_exp, 1), basis(n_exp, 2)
    assert not np.allclose(cd_mul(x, y), cd_mul(y, x))


def test_complex_is_commutative():
    rng = np.random.default_rng(90)
    x, y = rand(rng, 0, batch=(20,)), rand(rng, 0, batch=(20,))
    np.testing.assert_allclose(cd_mul(x, y), cd_mul(y, x), atol=1e-15)


def test_hcvec_operator_matches_function():
    rng = np.random.default_rng(91)
    x, y = HcVec(rand(rng, 2)), HcVec(rand(rng, 2))
    assert np.array_equal((x * y).data, cd_mul(x, y).data)
    assert isinstance(cd_mul(x, y), HcVec)


# -- vector-Jacobian product -------------------------------------------------

def test_vjp_zero_cotangent():
    rng = np.random.default_rng(100)
    x, y = rand(rng, 2), rand(rng, 2)
    gx, gy = cd_mul_vjp(x, y, np.zeros_like(x))
    assert not gx.any() and not gy.any()


def test_vjp_complex_hand_case():
    # f = Re(x * y) = x0 y0 - x1 y1, so df/dx = (y0, -y1) and df/dy = (x0, -x1)
    x = np.array([[1.0], [0.0]])
    y = np.array([[0.0], [1.0]])
    g = np.array([[1.0], [0.0]])
    gx, gy = cd_mul_vjp(x, y, g)
    assert np.array_equal(gx.ravel(), [0.0, -1.0])
    assert np.array_equal(gy.ravel(), [1.0, 0.0])
    h = 1e-6
    fd = []
    for k in range(2):
        e = np.zeros_like(x)
        e[k] = h
        fd.append((np.sum(g * cd_mul(x + e, y)) - np.sum(g * cd_mul(x - e, y))) / (2 * h))
    np.testing.assert_allclose(gx.ravel(), fd, atol=1e-9)


@pytest.mark.parametrize("n_exp", range(4))
def test_vjp_matches_finite_differences(n_exp):
    rng = np.random.default_rng(110 + n_exp)
    x, y, g = rand(rng, n_exp, dim=2), rand(rng, n_exp, dim=2), rand(rng, n_exp, dim=2)
    gx, gy = cd_mul_vjp(x, y, g)
    h = 1e-6

    def f(a, b):
        return float(np.sum(g * cd_mul(a, b)))

    for target, analytic in ((0, gx), (1, gy)):
        fd = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            e = np.zeros_like(x)
            e[idx] = h
            if target == 0:
                fd[idx] = (f(x + e, y) - f(x - e, y)) / (2 * h)
            else:
                fd[idx] = (f(x, y + e) - f(x, y - e)) / (2 * h)
        np.testing.assert_allclose(analytic, fd, rtol=1e-6, atol=1e-8)


def test_vjp_preserves_hcvec_type():
    rng = np.random.default_rng(120)
    x, y, g = (HcVec(rand(rng, 1)) for _ in range(3))
    gx, gy = cd_mul_vjp(x, y, g)
    assert isinstance(gx, HcVec) and isinstance(gy, HcVec)


# -- property tests ----------------------------------------------------------

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@st.composite
def hc_pairs(draw, max_exp=3):
    n_exp = draw(st.integers(0, max_exp))
    dim = draw(st.integers(1, 3))
    shape = (num_components(n_exp), dim)
    return n_exp, draw(arrays(np.float64, shape, elements=finite)), draw(arrays(np.float64, shape, elements=finite))


@settings(max_examples=200, deadline=None)
@given(hc_pairs())
def test_property_conjugate_anti_homomorphism(case):
    _, x, y = case
    np.testing.assert_allclose(cd_conjugate(cd_mul(x, y)), cd_mul(cd_conjugate(y), cd_conjugate(x)),
                               rtol=0, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(hc_pairs(max_exp=2))
def test_property_norm_multiplicative(case):
    _, x, y = case
    np.testing.assert_allclose(cd_norm(cd_mul(x, y)), cd_norm(x) * cd_norm(y), rtol=1e-9, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(hc_pairs())
def test_property_add_sub_roundtrip(case):
    _, x, y = case
    np.testing.assert_allclose(cd_sub(cd_add(x, y), y), x, atol=1e-12)
