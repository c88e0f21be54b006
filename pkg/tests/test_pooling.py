import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randrec.errors import ConfigurationError, ShapeError
from randrec.pooling import (
    LevelPreprocessor,
    LevelSpec,
    PoolSpec,
    avg_pool,
    max_pool,
    pool_weights,
    preprocess_level,
    random_pool,
    reshape_to_form,
)
from randrec.tensor_io import ActivationTensor


def _t(values):
    return ActivationTensor(values=np.asarray(values, dtype=np.float32))


def test_spatial_window_dot_product():
    # Dot-product oracle: sum(w_i * c_i) over the single 2x2 window.
    spec = PoolSpec(mode="spatial", source=(1, 2), target=(1, 1))
    t = _t([[[1.0, 2.0], [3.0, 4.0]]])
    w = np.array([[0.1, -0.1], [0.05, 0.02]], dtype=np.float32)
    out = random_pool(t, spec, weights=w)
    expected = 1 * 0.1 - 2 * 0.1 + 3 * 0.05 + 4 * 0.02
    assert out.shape == (1, 1, 1)
    assert abs(out.values[0, 0, 0] - expected) < 1e-7


def test_random_pool_zero_input():
    spec = PoolSpec(mode="spatial", source=(4, 8), target=(4, 2))
    t = _t(np.zeros((4, 8, 8)))
    out = random_pool(t, spec, seed=9)
    assert (out.values == 0).all()


def test_maps_mode_forced_weights():
    # Weighted-sum oracle: both groups' weights forced to (0.5, 0.5).
    spec = PoolSpec(mode="maps", source=(4, 3), target=(2, 3))
    t = _t(np.ones((4, 3, 3)))
    out = random_pool(t, spec, weights=np.full(4, 0.5, dtype=np.float32))
    assert out.shape == (2, 3, 3)
    assert np.allclose(out.values, 1.0)


def test_maps_mode_groups_are_contiguous():
    spec = PoolSpec(mode="maps", source=(4, 1), target=(2, 1))
    vals = np.arange(4, dtype=np.float32).reshape(4, 1, 1)
    w = np.array([1.0, 0.0, 0.0, 1.0], dtype=np.float32)
    out = random_pool(_t(vals), spec, weights=w)
    # group 0 = maps {0,1} picks map 0; group 1 = maps {2,3} picks map 3
    assert out.values[0, 0, 0] == 0.0
    assert out.values[1, 0, 0] == 3.0


def test_max_avg_window():
    spec = PoolSpec(mode="spatial", source=(1, 2), target=(1, 1))
    t = _t([[[1.0, 2.0], [3.0, 4.0]]])
    assert max_pool(t, spec).values[0, 0, 0] == 4.0
    assert avg_pool(t, spec).values[0, 0, 0] == 2.5


def test_constant_tensor_unchanged():
    spec = PoolSpec(mode="spatial", source=(2, 6), target=(2, 3))
    t = _t(np.full((2, 6, 6), 0.7))
    assert np.allclose(max_pool(t, spec).values, 0.7)
    assert np.allclose(avg_pool(t, spec).values, 0.7, atol=1e-7)


@pytest.mark.parametrize(
    "spec",
    [
        PoolSpec(mode="spatial", source=(8, 8), target=(8, 2)),
        PoolSpec(mode="maps", source=(16, 4), target=(4, 4)),
    ],
)
def test_avg_equals_random_with_constant_weights(spec):
    rng = np.random.default_rng(11)
    area = spec.area_size
    if spec.mode == "maps":
        w = np.full(spec.source[0], 1.0 / area, dtype=np.float32)
    else:
        w = np.full((spec.source[1], spec.source[1]), 1.0 / area, dtype=np.float32)
    for _ in range(20):
        t = _t(rng.normal(size=(spec.source[0], spec.source[1], spec.source[1])))
        a = avg_pool(t, spec).values
        r = random_pool(t, spec, weights=w).values
        assert np.abs(a - r).max() < 1e-6


def test_pool_weights_deterministic_and_bounded():
    spec = PoolSpec(mode="spatial", source=(4, 8), target=(4, 4), level=3)
    w1 = pool_weights(spec, seed=5)
    w2 = pool_weights(spec, seed=5)
    assert np.array_equal(w1, w2)
    assert w1.shape == (8, 8)
    assert w1.min() >= -0.1 and w1.max() <= 0.1
    assert not np.array_equal(w1, pool_weights(spec, seed=6))


def test_pool_weights_differ_across_levels():
    a = pool_weights(PoolSpec(mode="maps", source=(8, 2), target=(2, 2), level=1), 0)
    b = pool_weights(PoolSpec(mode="maps", source=(8, 2), target=(2, 2), level=2), 0)
    assert not np.array_equal(a, b)


def test_mode_shape_laws():
    spec_m = PoolSpec(mode="maps", source=(32, 5), target=(8, 5))
    spec_s = PoolSpec(mode="spatial", source=(8, 12), target=(8, 4))
    t_m = _t(np.random.default_rng(0).normal(size=(32, 5, 5)))
    t_s = _t(np.random.default_rng(1).normal(size=(8, 12, 12)))
    assert random_pool(t_m, spec_m, seed=0).shape == (8, 5, 5)
    assert random_pool(t_s, spec_s, seed=0).shape == (8, 4, 4)


def test_divisibility_enforced():
    with pytest.raises(ConfigurationError):
        PoolSpec(mode="spatial", source=(4, 7), target=(4, 2))
    with pytest.raises(ConfigurationError):
        PoolSpec(mode="maps", source=(6, 3), target=(4, 3))
    with pytest.raises(ConfigurationError):
        PoolSpec(mode="spatial", source=(4, 7), target=(4, 8))  # upsampling


def test_shape_mismatch_rejected():
    spec = PoolSpec(mode="spatial", source=(4, 8), target=(4, 2))
    with pytest.raises(ShapeError):
        random_pool(_t(np.zeros((4, 6, 6))), spec, seed=0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**20), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_random_pool_linearity(seed, a, b):
    spec = PoolSpec(mode="spatial", source=(2, 4), target=(2, 2))
    rng = np.random.default_rng(seed)
    t1 = rng.normal(size=(2, 4, 4)).astype(np.float32)
    t2 = rng.normal(size=(2, 4, 4)).astype(np.float32)
    w = pool_weights(spec, seed=0)
    lhs = random_pool(_t(a * t1 + b * t2), spec, weights=w).values
    rhs = a * random_pool(_t(t1), spec, weights=w).values + b * random_pool(
        _t(t2), spec, weights=w
    ).values
    assert np.allclose(lhs, rhs, rtol=1e-5, atol=1e-5)


def test_reshape_flat_to_canonical():
    t = _t(np.arange(4096, dtype=np.float32))
    out = reshape_to_form(t, (64, 8, 8))
    assert out.shape == (64, 8, 8)
    assert np.array_equal(out.values.ravel(), t.values)


def test_reshape_count_mismatch():
    t = _t(np.zeros((256, 14, 14)))
    with pytest.raises(ShapeError):
        reshape_to_form(t, (64, 8, 8))


def test_reshape_then_flatten_is_identity():
    rng = np.random.default_rng(2)
    t = _t(rng.normal(size=512))
    out = reshape_to_form(reshape_to_form(t, (8, 8, 8)), (512,))
    assert np.array_equal(out.values, t.values)


def test_level_spec_non_divisible_target_rejected():
    # 7 is not divisible by 8: unreachable spatial target.
    with pytest.raises(ConfigurationError):
        LevelSpec(
            level=6,
            raw_shape=(2048, 7, 7),
            target_shape=(64, 8, 8),
            preprocess="pool_both",
        )
    # The documented alternative target works: pool maps only, keep 7x7.
    ls = LevelSpec(
        level=6, raw_shape=(2048, 7, 7), target_shape=(64, 7, 7), preprocess="pool_maps"
    )
    assert len(ls.stages()) == 1


def test_level_spec_shape_chain():
    # Shape-chain oracle: 256x56x56 -> maps 256->64 -> spatial 56->8 (window 7).
    ls = LevelSpec(
        level=2,
        raw_shape=(256, 56, 56),
        target_shape=(64, 8, 8),
        preprocess="pool_both",
    )
    stages = ls.stages()
    assert [(s.mode, s.source, s.target) for s in stages] == [
        ("maps", (256, 56), (64, 56)),
        ("spatial", (64, 56), (64, 8)),
    ]
    t = _t(np.random.default_rng(3).normal(size=(256, 56, 56)))
    out = preprocess_level(t, ls, seed=1)
    assert out.shape == (64, 8, 8)
    assert out.level_tag == 2


def test_level_spec_pure_reshape():
    ls = LevelSpec(
        level=7, raw_shape=(4096,), target_shape=(64, 8, 8), preprocess="reshape"
    )
    t = _t(np.arange(4096, dtype=np.float32))
    out = preprocess_level(t, ls)
    assert out.shape == (64, 8, 8)


def test_preprocess_deterministic():
    ls = LevelSpec(
        level=1,
        raw_shape=(16, 16, 16),
        target_shape=(4, 4, 4),
        preprocess="pool_both",
    )
    t = _t(np.random.default_rng(4).normal(size=(16, 16, 16)))
    a = preprocess_level(t, ls, seed=42).values
    b = preprocess_level(t, ls, seed=42).values
    assert np.array_equal(a, b)
    c = preprocess_level(t, ls, seed=43).values
    assert not np.array_equal(a, c)


def test_preprocessor_estimator():
    ls = LevelSpec(
        level=1, raw_shape=(8, 4, 4), target_shape=(2, 2, 2), preprocess="pool_both"
    )
    est = LevelPreprocessor(level_spec=ls, seed=0)
    X = np.random.default_rng(5).normal(size=(10, 8, 4, 4)).astype(np.float32)
    out = est.fit_transform(X)
    assert out.shape == (10, 2, 2, 2)
    flat = est.transform(X.reshape(10, -1))
    assert np.array_equal(out, flat)
    assert est.get_params()["seed"] == 0
