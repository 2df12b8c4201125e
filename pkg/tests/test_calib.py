"""Aggregation, positional bias curve, debiasing, and connectivity."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atrl.calib import (
    BIAS_FLOOR,
    BiasParams,
    aggregate,
    bias_curve,
    connectivity,
    debias,
)
from atrl.errors import (
    EmptyVisualSet,
    IndexOutOfRange,
    LengthMismatch,
    TopLayersOutOfRange,
)
from atrl.tensor_io import AttentionTensor
from helpers import random_attention

# Normalized default curve at T=4, pinned from a 40-digit evaluation of
# raw_j = 1 + 0.15 exp(-4 j/4) + 0.05 cos(pi j/4), j = 1..4.
CURVE_T4 = [
    1.080890948072363,
    1.0112752637923026,
    0.9635139338913474,
    0.9443198542439869,
]


def test_bias_curve_t4_golden():
    np.testing.assert_allclose(bias_curve(4), CURVE_T4, rtol=1e-14, atol=0.0)


def test_bias_curve_t1_is_one():
    assert bias_curve(1).tolist() == [1.0]


def test_bias_curve_zero_lambdas_all_ones():
    params = BiasParams(lambda_exp=0.0, lambda_cos=0.0)
    for t in (1, 2, 5, 64):
        assert (bias_curve(t, params) == 1.0).all()


def test_bias_curve_floor():
    # lambda_cos = 1 makes the raw curve hit exactly 0 at the last position.
    curve = bias_curve(5, BiasParams(lambda_exp=0.0, lambda_cos=1.0))
    assert curve[-1] == BIAS_FLOOR


def test_bias_curve_rejects_bad_length():
    with pytest.raises(LengthMismatch):
        bias_curve(0)


def test_bias_params_validation():
    with pytest.raises(ValueError):
        BiasParams(lambda_exp=-0.1)
    with pytest.raises(ValueError):
        BiasParams(gamma=0.0)
    with pytest.raises(ValueError):
        BiasParams(lambda_cos=-1e-9)


@settings(max_examples=60, deadline=None)
@given(
    t=st.integers(min_value=1, max_value=700),
    lam_e=st.floats(min_value=0.0, max_value=5.0),
    gam=st.floats(min_value=1e-3, max_value=20.0),
    lam_c=st.floats(min_value=0.0, max_value=5.0),
)
def test_bias_curve_mean_one_and_floored(t, lam_e, gam, lam_c):
    curve = bias_curve(t, BiasParams(lambda_exp=lam_e, gamma=gam, lambda_cos=lam_c))
    assert abs(curve.mean() - 1.0) <= 1e-9 or curve.min() == BIAS_FLOOR
    assert curve.min() >= BIAS_FLOOR


# --- aggregation --------------------------------------------------------------

def test_aggregate_identical_layers_is_identity():
    rng = np.random.default_rng(0)
    m = rng.random((3, 5)).astype(np.float32)
    vals = np.broadcast_to(m, (2, 2, 3, 5)).copy()
    t = AttentionTensor(values=vals)
    np.testing.assert_allclose(aggregate(t, top_layers=2), m, rtol=1e-7)


def test_aggregate_two_layer_mean():
    vals = np.zeros((2, 1, 2, 3), dtype=np.float32)
    vals[1] = 0.4
    t = AttentionTensor(values=vals)
    out = aggregate(t, top_layers=2)
    np.testing.assert_allclose(out, 0.2, rtol=1e-7)
    # top_layers=1 keeps only the final layer
    np.testing.assert_allclose(aggregate(t, top_layers=1), 0.4, rtol=1e-7)


def test_aggregate_range_check():
    rng = np.random.default_rng(1)
    t = random_attention(rng, layers=2)
    with pytest.raises(TopLayersOutOfRange):
        aggregate(t, top_layers=3)
    with pytest.raises(TopLayersOutOfRange):
        aggregate(t, top_layers=0)


def test_aggregate_scaling_covariance():
    rng = np.random.default_rng(2)
    t = random_attention(rng, row_stochastic=False)
    scaled = AttentionTensor(values=t.values * 3.0)
    np.testing.assert_allclose(
        aggregate(scaled, 2), 3.0 * aggregate(t, 2), rtol=1e-6
    )


# --- debias -------------------------------------------------------------------

def test_debias_ones_identity():
    rng = np.random.default_rng(3)
    m = rng.random((4, 6))
    out = debias(m, np.ones(4))
    assert (out == m).all()


def test_debias_constant_rows():
    m = np.full((4, 3), 0.5)
    curve = bias_curve(4)
    out = debias(m, curve)
    expect = np.broadcast_to(0.5 / np.asarray(CURVE_T4)[:, None], (4, 3))
    np.testing.assert_allclose(out, expect, rtol=1e-12)


def test_debias_ctx_axis():
    m = np.full((2, 4), 1.0)
    curve = bias_curve(4)
    out = debias(m, curve, axis="ctx")
    expect = np.broadcast_to(1.0 / np.asarray(CURVE_T4)[None, :], (2, 4))
    np.testing.assert_allclose(out, expect, rtol=1e-12)


def test_debias_validation():
    m = np.ones((3, 4))
    with pytest.raises(LengthMismatch):
        debias(m, np.ones(4))  # gen axis wants length 3
    with pytest.raises(LengthMismatch):
        debias(m, np.ones(3), axis="ctx")
    with pytest.raises(ValueError):
        debias(m, np.array([1.0, 0.0, 1.0]))
    with pytest.raises(ValueError):
        debias(m, np.ones(3), axis="rows")


# --- connectivity ---------------------------------------------------------------

def test_connectivity_uniform_mass():
    s, v = 10, 4
    m = np.full((6, s), 1.0 / s)
    c = connectivity(m, range(v))
    np.testing.assert_allclose(c, v / s, rtol=1e-12)


def test_connectivity_zero_row():
    m = np.ones((3, 5))
    m[1, :2] = 0.0
    c = connectivity(m, [0, 1])
    assert c[1] == 0.0
    assert c[0] == 2.0


def test_connectivity_linearity():
    rng = np.random.default_rng(4)
    x, y = rng.random((5, 8)), rng.random((5, 8))
    vis = [0, 2, 3]
    lhs = connectivity(2.0 * x + 0.5 * y, vis)
    rhs = 2.0 * connectivity(x, vis) + 0.5 * connectivity(y, vis)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


def test_connectivity_validation():
    m = np.ones((3, 5))
    with pytest.raises(EmptyVisualSet):
        connectivity(m, [])
    with pytest.raises(IndexOutOfRange):
        connectivity(m, [0, 5])
    with pytest.raises(IndexOutOfRange):
        connectivity(m, [-1])
