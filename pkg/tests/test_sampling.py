import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import hadamard

from hypercs.cube import CubeSequence, HyperCube
from hypercs.errors import DimensionError, FormatError, HyperCSError
from hypercs.sampling import (
    Measurements,
    SamplingPlan,
    build_plan,
    compression_to_k,
    fast_wht,
    load_plan,
    read_measurements,
    sample_cube,
    save_plan,
    sequency_order,
    write_measurements,
)


def sign_changes(row):
    return int(np.count_nonzero(row[1:] != row[:-1]))


def test_wht_two_point():
    assert fast_wht([3.0, 5.0]).tolist() == [8.0, -2.0]


def test_wht_first_column():
    assert fast_wht(np.eye(4)[0]).tolist() == [1, 1, 1, 1]


@pytest.mark.parametrize("n", [2, 4, 8, 16, 32, 64])
def test_wht_matches_dense_exactly(n, rng):
    v = rng.integers(-1000, 1000, size=(n, 3)).astype(float)
    assert np.array_equal(fast_wht(v), hadamard(n) @ v)


def test_wht_random_float_n64(rng):
    v = rng.normal(size=64)
    np.testing.assert_allclose(fast_wht(v), hadamard(64) @ v, rtol=1e-13, atol=1e-12)


def test_wht_involution(rng):
    v = rng.normal(size=128)
    np.testing.assert_allclose(fast_wht(fast_wht(v)), 128 * v, atol=1e-10)


@pytest.mark.parametrize("n", [2, 8, 64, 256])
def test_sequency_order_bruteforce(n):
    H = hadamard(n)
    seq = [sign_changes(H[i]) for i in sequency_order(n)]
    assert seq == list(range(n))


def test_k_rounding():
    assert compression_to_k(4096, 0.9) == 410
    assert compression_to_k(64, 0.5) == 32
    assert compression_to_k(16, 0.5) == 8


def test_sequency_plan_small():
    plan = build_plan(8, 0.5, "sequency")
    assert plan.row_order.tolist() == sequency_order(8)[:4].tolist()
    assert plan.row_order[0] == 0
    assert plan.k == 4 and plan.compression == 0.5


def test_plan_full_fov_scale():
    plan = build_plan(4096, 0.9, "sequency")
    assert plan.k == 410
    assert plan.compression == 1 - 410 / 4096


def test_max_variance_three_modes():
    n = 16
    H = hadamard(n).astype(float)
    modes = [5, 9, 14]
    r = np.random.default_rng(7)
    frames = []
    for _ in range(6):
        X = np.zeros((n, 2))
        for m, a in zip(modes, (3.0, 2.0, 1.0)):
            X += np.outer(H[m], a * r.normal(size=2))
        frames.append(HyperCube(X.reshape(4, 4, 2)))
    seq = CubeSequence(tuple(frames))
    plan = build_plan(n, 0.75, "max_variance", training=seq)
    # oracle: dense per-row measurement variance, descending, ties by index
    Z = np.concatenate([H @ f.matrix for f in frames], axis=1)
    var = Z.var(axis=1)
    ranked = sorted(range(n), key=lambda i: (-var[i], i))
    ranked = [0] + [i for i in ranked if i != 0]
    assert plan.row_order.tolist() == ranked[:4]
    assert set(plan.row_order[1:].tolist()) == set(modes)


def test_random_plan_seeded():
    a = build_plan(64, 0.5, "random", seed=3)
    b = build_plan(64, 0.5, "random", seed=3)
    c = build_plan(64, 0.5, "random", seed=4)
    assert a.digest() == b.digest() != c.digest()
    assert a.row_order[0] == 0


def test_build_plan_errors():
    with pytest.raises(DimensionError):
        build_plan(12, 0.5)
    with pytest.raises(HyperCSError):
        build_plan(16, 0.5, "max_variance")
    with pytest.raises(HyperCSError):
        build_plan(16, 0.5, "bogus")
    with pytest.raises(HyperCSError):
        build_plan(16, 0.99)


def test_plan_validation():
    with pytest.raises(DimensionError):
        SamplingPlan(8, [1, 2])
    with pytest.raises(DimensionError):
        SamplingPlan(8, [0, 0])
    with pytest.raises(DimensionError):
        SamplingPlan(8, [0, 9])
    SamplingPlan(8, [1, 2], shifted=False)


def test_constant_cube_measurements():
    c = 2.5
    plan = build_plan(16, 0.5, "sequency")
    Y = sample_cube(plan, HyperCube(np.full((4, 4, 1), c))).Y[:, 0]
    assert Y[0] == c * 16
    assert np.all(Y[1:] == c * 8)


def test_hand_built_dense():
    plan = SamplingPlan(4, [0, 1])
    S = np.array([[1, 1, 1, 1], [1, 0, 1, 0]], dtype=float)
    np.testing.assert_array_equal(plan.dense(), S)
    x = np.array([1.0, 2.0, 3.0, 4.0])
    Y = sample_cube(plan, HyperCube(x.reshape(2, 2, 1))).Y[:, 0]
    assert Y.tolist() == (S @ x).tolist()


def test_zero_cube():
    plan = build_plan(16, 0.5, "sequency")
    assert not np.any(sample_cube(plan, HyperCube(np.zeros((4, 4, 3)))).Y)


@pytest.mark.parametrize("ordering", ["sequency", "random"])
def test_sample_matches_dense(ordering, rng):
    plan = build_plan(64, 0.75, ordering, seed=1)
    X = rng.integers(-50, 50, size=(64, 3)).astype(float)
    Y = sample_cube(plan, HyperCube.from_matrix(X, 8, 8)).Y
    assert np.array_equal(Y, plan.dense() @ X)


def test_to_pm_recovers_walsh(rng):
    plan = build_plan(64, 0.5, "random", seed=2)
    X = rng.normal(size=(64, 2))
    Y = sample_cube(plan, HyperCube.from_matrix(X, 8, 8)).Y
    np.testing.assert_allclose(plan.to_pm(Y), hadamard(64)[plan.row_order] @ X, atol=1e-10)


@pytest.mark.parametrize("n", [4, 16, 64, 256])
def test_rows_orthogonal(n):
    plan = build_plan(n, 0.5, "random", seed=n)
    W = plan.walsh_forward(np.eye(n))
    assert np.array_equal(W @ W.T, n * np.eye(plan.k))


def test_adjoint(rng):
    plan = build_plan(32, 0.5, "random")
    x, z = rng.normal(size=32), rng.normal(size=plan.k)
    assert plan.walsh_forward(x) @ z == pytest.approx(x @ plan.walsh_adjoint(z), rel=1e-12)


@settings(max_examples=50)
@given(st.floats(-100, 100), st.floats(-100, 100), st.integers(0, 2**32 - 1))
def test_sampling_linear(a, b, seed):
    r = np.random.default_rng(seed)
    plan = build_plan(16, 0.5, "random", seed=seed % 7)
    X1, X2 = r.normal(size=(4, 4, 2)), r.normal(size=(4, 4, 2))
    lhs = sample_cube(plan, HyperCube(a * X1 + b * X2)).Y
    rhs = a * sample_cube(plan, HyperCube(X1)).Y + b * sample_cube(plan, HyperCube(X2)).Y
    scale = max(1.0, np.abs(lhs).max(), np.abs(rhs).max())
    assert np.abs(lhs - rhs).max() <= 1e-10 * scale


@settings(max_examples=30)
@given(st.integers(1, 8), st.floats(0.05, 0.95), st.sampled_from(["sequency", "random"]), st.integers(0, 1000))
def test_build_plan_pure(logn, c, ordering, seed):
    n = 2**logn
    k = compression_to_k(n, c)
    if not 1 <= k < n:
        return
    a = build_plan(n, c, ordering, seed=seed)
    b = build_plan(n, c, ordering, seed=seed)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert a.compression == 1 - k / n
    assert 0 in a.row_order.tolist() and len(set(a.row_order.tolist())) == k


def test_plan_io_roundtrip(tmp_path):
    plan = build_plan(64, 0.9, "random", seed=5)
    save_plan(plan, tmp_path / "p.json")
    back = load_plan(tmp_path / "p.json")
    assert back.digest() == plan.digest()
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(FormatError):
        load_plan(tmp_path / "bad.json")


def test_measurement_io(tmp_path, rng):
    m = Measurements(rng.normal(size=(7, 3)))
    write_measurements(m, tmp_path / "m.hsm")
    assert read_measurements(tmp_path / "m.hsm").Y.tobytes() == m.Y.tobytes()
    raw = (tmp_path / "m.hsm").read_bytes()
    (tmp_path / "t.hsm").write_bytes(raw[:-1])
    with pytest.raises(FormatError):
        read_measurements(tmp_path / "t.hsm")
    (tmp_path / "x.hsm").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(FormatError):
        read_measurements(tmp_path / "x.hsm")
