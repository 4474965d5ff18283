import numpy as np
import pytest

import oracles
from conftest import SENSOR_A
from catpan import metrics
from catpan.core import Rng
from catpan.errors import DegenerateInputError, ShapeError, ValidationError
from catpan.resample import SensorDescriptor, synth_scene, upsample


def test_q_identity_and_range():
    a = Rng(1).random((64, 64))
    assert np.isclose(metrics.q_index(a, a), 1.0)
    assert -1.0 <= metrics.q_index(a, Rng(2).random((64, 64))) <= 1.0


def test_q_matches_brute_force():
    rng = Rng(3)
    a, b = rng.random((40, 48)), rng.random((40, 48)) + 0.3 * rng.random((40, 48))
    for block in (8, 16):
        assert np.isclose(metrics.q_index(a, b, block), oracles.q_blocks(a, b, block), rtol=1e-10)


def test_q_errors_and_degenerate_skip():
    with pytest.raises(ShapeError):
        metrics.q_index(np.zeros((8, 8)), np.zeros((8, 9)), 8)
    with pytest.raises(ShapeError):
        metrics.q_index(np.zeros((4, 4)), np.zeros((4, 4)), 8)
    with pytest.raises(DegenerateInputError):
        metrics.q_index(np.zeros((16, 16)), np.zeros((16, 16)), 8)
    a = Rng(4).random((16, 32))
    b = a.copy()
    a[:, :16] = b[:, :16] = 0.0
    assert np.isclose(metrics.q_index(a, b, 16), 1.0)


def test_hqnr_arithmetic():
    assert metrics.hqnr(0.0, 0.0) == 1.0
    assert abs(metrics.hqnr(0.0201, 0.0232) - 0.9572) < 5e-4
    with pytest.raises(ValidationError):
        metrics.hqnr(1.2, 0.0)


def test_d_lambda_ground_truth_near_zero():
    b = synth_scene(4, SENSOR_A, 256, 256)
    assert metrics.d_lambda(b.gt, b.lrms, SENSOR_A) < 1e-3


def test_d_lambda_uncorrelated_near_one():
    s = SENSOR_A
    noise = Rng(5).random((4, 256, 256))
    lrms = Rng(6).random((4, 64, 64))
    assert metrics.d_lambda(noise, lrms, s) > 0.8


def test_d_lambda_clamp_logged():
    details = {}
    lrms = Rng(6).random((4, 64, 64))
    fused = -upsample(lrms, 4) + 2.0
    assert metrics.d_lambda(fused, lrms, SENSOR_A, clamp=False) > 1.0
    assert metrics.d_lambda(fused, lrms, SENSOR_A, details=details) == 1.0
    assert details["clamped"]


def test_d_s_orders_upsample_behind_truth():
    b = synth_scene(7, SENSOR_A, 256, 256)
    up = upsample(b.lrms.as_f64(), 4)
    assert metrics.d_s(up, b.lrms, b.pan, SENSOR_A) > metrics.d_s(b.gt, b.lrms, b.pan, SENSOR_A)


def test_d_s_constant_pan_degenerate():
    with pytest.raises(DegenerateInputError):
        metrics.d_s(np.ones((4, 64, 64)), np.ones((4, 16, 16)), np.ones((1, 64, 64)), SENSOR_A)


def test_d_s_single_band_oracle():
    s = SensorDescriptor(pan_weights=(1.0,), kernel_size=17)
    rng = Rng(8)
    x, y, p = rng.random((1, 64, 64)), rng.random((1, 16, 16)), rng.random((1, 64, 64))
    p_low = oracles.blur(p, s.pan_kernel())[:, ::4, ::4]
    ref = abs(oracles.q_blocks(x[0], p[0], 32) - oracles.q_blocks(y[0], p_low[0], 8))
    assert np.isclose(metrics.d_s(x, y, p, s, clamp=False), ref, rtol=1e-9)


def test_sam_ergas():
    g = Rng(9).random((3, 8, 8)) + 0.1
    assert metrics.sam(g, g) < 1e-6 and metrics.ergas(g, g, 4) == 0.0
    assert np.isclose(metrics.sam(2 * g, g), 0.0, atol=1e-6)
    x = g + 0.05 * Rng(10).normal((3, 8, 8))
    assert np.isclose(metrics.sam(x, g), oracles.sam_deg(x, g), rtol=1e-9)
    assert np.isclose(metrics.ergas(x, g, 4), oracles.ergas(x, g, 4), rtol=1e-12)
    with pytest.raises(DegenerateInputError):
        metrics.ergas(x, np.zeros_like(g), 4)


def test_evaluate_report_fields():
    b = synth_scene(4, SENSOR_A, 128, 128)
    q = metrics.evaluate(b.gt, b.lrms, b.pan, SENSOR_A, gt=b.gt)
    assert q.sam < 1e-4 and q.ergas < 1e-4
    assert q.variant == "per-band Q variant" and q.blocks == "non-overlapping"
    assert q.block_pan == 32 and q.block_ms == 8 and len(q.q_lambda) == 4
    assert np.isclose(q.hqnr, (1 - q.d_lambda) * (1 - q.d_s))
    assert metrics.evaluate(b.gt, b.lrms, b.pan, SENSOR_A).sam is None


# --------------------------------------------------------- worked examples


def test_q_single_block_oracle_and_zero_mean_negation():
    a, b = Rng(20).random((32, 32)), Rng(21).random((32, 32))
    assert np.isclose(metrics.q_index(a, b), oracles.q_blocks(a, b, 32), rtol=1e-12)
    z = a - a.mean()
    with pytest.raises(DegenerateInputError):
        metrics.q_index(z, -z)


def test_sam_forty_five_degrees():
    x = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    assert np.isclose(metrics.sam(x, np.ones((2, 1, 2))), 45.0, atol=1e-9)


def test_ergas_constant_offset():
    mu, eps = 0.5, 0.01
    g = np.full((4, 8, 8), mu)
    assert np.isclose(metrics.ergas(g + eps, g, 4), 100.0 / 4 * eps / mu, rtol=1e-12)
