import math

import numpy as np
import pytest

from rns_analog import harness, rrns
from rns_analog.analog import CoreConfig, NoiseModel
from rns_analog.errors import DimensionMismatchError, ShapeError
from rns_analog.model import Layer, ModelSpec, load_toy


@pytest.fixture(scope="module")
def toy():
    return load_toy()


def exact_integer_operands(rows, cols, h, rng, b=4):
    """Integer operands whose every h-segment holds a full-scale entry, so
    quantization at ``b`` bits is exact for any tile size dividing ``h``."""
    m = (1 << (b - 1)) - 1
    W = rng.integers(-m, m + 1, (rows, cols)).astype(float)
    x = rng.integers(-m, m + 1, cols).astype(float)
    W[:, ::h] = m
    x[::h] = -m
    return W, x


class TestTiledGemm:
    def test_one_by_one(self):
        cfg = CoreConfig.rns(8, 16)
        y = harness.tiled_gemm([[0.37]], [-0.81], cfg)
        step = 0.37 * 0.81 / 127**2
        assert abs(y[0] - 0.37 * -0.81) <= 2 * step

    def test_identity_256(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0.5, 1.0, 256) * rng.choice([-1, 1], 256)
        y = harness.tiled_gemm(np.eye(256), x, CoreConfig.rns(8, 128))
        assert np.all(np.abs(y - x) <= 2 / 127 * np.abs(x))

    @pytest.mark.parametrize("h", [32, 64, 128])
    def test_tiling_invariance_on_exact_operands(self, h):
        rng = np.random.default_rng(1)
        W, x = exact_integer_operands(96, 256, 32, rng)
        y = harness.tiled_gemm(W, x, CoreConfig.rns(4, h))
        assert np.array_equal(y, W @ x)

    def test_padding_is_neutral(self):
        rng = np.random.default_rng(2)
        W = rng.uniform(-1, 1, (100, 100))
        x = rng.uniform(-1, 1, 100)
        Wp = np.zeros((128, 128))
        Wp[:100, :100] = W
        xp = np.zeros(128)
        xp[:100] = x
        cfg = CoreConfig.rns(6, 128)
        assert np.array_equal(harness.tiled_gemm(W, x, cfg), harness.tiled_gemm(Wp, xp, cfg)[:100])

    def test_fixed_point_error_not_below_rns(self):
        rng = np.random.default_rng(3)
        rcfg, fcfg = CoreConfig.rns(4, 128), CoreConfig.fixed_point(4, 128)
        for _ in range(100):
            W = rng.uniform(-1, 1, (32, 200))
            x = rng.uniform(-1, 1, 200)
            ref = W @ x
            e_rns = np.mean(np.abs(harness.tiled_gemm(W, x, rcfg) - ref))
            e_fix = np.mean(np.abs(harness.tiled_gemm(W, x, fcfg) - ref))
            assert e_fix >= e_rns

    def test_batch_matches_single(self):
        rng = np.random.default_rng(4)
        W = rng.uniform(-1, 1, (10, 150))
        X = rng.uniform(-1, 1, (3, 150))
        cfg = CoreConfig.rns(5, 64)
        Y = harness.tiled_gemm(W, X, cfg)
        for i in range(3):
            assert np.array_equal(Y[i], harness.tiled_gemm(W, X[i], cfg))

    def test_float_path(self):
        W = np.arange(6.0).reshape(2, 3)
        assert np.array_equal(harness.tiled_gemm(W, [1.0, 1.0, 1.0], None), [3.0, 12.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            harness.tiled_gemm(np.eye(3), np.ones(4), CoreConfig.rns(4, 16))

    def test_noise_with_code_is_reproducible(self):
        rng = np.random.default_rng(5)
        W = rng.uniform(-1, 1, (64, 64))
        x = rng.uniform(-1, 1, 64)
        code = rrns.make_rrns_code([53, 55, 59], [61, 62])
        cfg = CoreConfig(64, 6, 6, 6, 6, harness.RnsMode(code.moduli_set, code.k))
        noise = NoiseModel(0.05, seed=11)
        a = harness.tiled_gemm(W, x, cfg, noise, code=code, attempts=3)
        b = harness.tiled_gemm(W, x, cfg, noise, code=code, attempts=3)
        assert np.array_equal(a, b)
        clean = harness.tiled_gemm(W, x, cfg)
        assert np.mean(a == clean) > 0.9

    def test_retries_recover_detected_outputs(self):
        rng = np.random.default_rng(6)
        W = rng.uniform(-1, 1, (64, 64))
        x = rng.uniform(-1, 1, (20, 64))
        code = rrns.make_rrns_code([53, 55, 59], [61, 62])
        cfg = CoreConfig(64, 6, 6, 6, 6, harness.RnsMode(code.moduli_set, code.k))
        noise = NoiseModel(0.1, seed=12)
        clean = harness.tiled_gemm(W, x, cfg)
        wrong = [np.mean(harness.tiled_gemm(W, x, cfg, noise, code=code, attempts=R) != clean) for R in (1, 3)]
        assert wrong[1] < wrong[0]


def direct_conv(x, w, stride, padding):
    x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    oh, ow = (H - kh) // stride + 1, (W - kw) // stride + 1
    out = np.zeros((B, O, oh, ow))
    for b in range(B):
        for o in range(O):
            for i in range(oh):
                for j in range(ow):
                    patch = x[b, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[b, o, i, j] = np.sum(patch * w[o])
    return out


class TestNetwork:
    def test_identity_relu_layer(self):
        model = ModelSpec((Layer("dense", np.eye(20), None, "relu"),))
        x = np.linspace(0.1, 1.0, 20)
        y = harness.run_network(model, x, CoreConfig.rns(8, 16))
        assert np.allclose(y, x, atol=1.0 / 127)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
    def test_conv_float_matches_direct(self, stride, padding):
        rng = np.random.default_rng(7)
        w = rng.normal(size=(4, 3, 3, 3))
        x = rng.normal(size=(2, 3, 7, 7))
        model = ModelSpec((Layer("conv", w, None, "identity", stride, padding),))
        assert np.allclose(harness.run_network(model, x, None), direct_conv(x, w, stride, padding))

    def test_conv_then_dense_on_rns(self):
        rng = np.random.default_rng(8)
        conv = Layer("conv", rng.normal(size=(2, 1, 3, 3)), np.zeros(2), "relu")
        dense = Layer("dense", rng.normal(size=(5, 2 * 4 * 4)), np.zeros(5), "softmax")
        model = ModelSpec((conv, dense))
        x = rng.normal(size=(3, 1, 6, 6))
        ref = harness.run_network(model, x, None)
        got = harness.run_network(model, x, CoreConfig.rns(8, 32))
        assert got.shape == (3, 5)
        assert np.allclose(got.sum(axis=1), 1.0)
        assert np.allclose(got, ref, atol=0.05)

    def test_shape_error(self):
        model = ModelSpec((Layer("dense", np.eye(4)),))
        with pytest.raises(ShapeError):
            harness.run_network(model, np.ones(5), None)

    def test_toy_float_baseline(self, toy):
        model, x, y = toy
        assert harness.accuracy(model, x, y, None) == pytest.approx(0.9744, abs=5e-4)

    def test_toy_rns_b6_keeps_accuracy(self, toy):
        model, x, y = toy
        a_float = harness.accuracy(model, x, y, None)
        assert harness.accuracy(model, x, y, CoreConfig.rns(6, 128)) >= 0.99 * a_float

    def test_toy_rns_b8_argmax_agreement(self, toy):
        model, x, _ = toy
        ref = harness.run_network(model, x, None).argmax(axis=1)
        got = harness.run_network(model, x, CoreConfig.rns(8, 128)).argmax(axis=1)
        assert np.mean(ref == got) >= 0.99

    def test_outputs_per_inference(self, toy):
        model, x, _ = toy
        # 64 -> 64 hidden in one tile, 64 -> 10 padded to one tile of 64 rows
        assert harness.gemm_outputs_per_inference(model, x.shape[1:], 64) == 128


class TestDotProductExperiment:
    def test_zero_trials(self):
        res = harness.dot_product_error_experiment([4], trials=0)
        assert res.rows == [] and res.tables["histogram"][1] == []

    def test_rns_error_is_pure_quantization(self):
        h = 128
        res = harness.dot_product_error_experiment([4, 6], h=h, trials=500, seed=3)
        for row in res.rows:
            q = 2 ** (row["b"] - 1) - 1
            assert row["max_abs_err_rns"] <= h * (1 / q + 1 / (4 * q * q))
            assert row["mean_abs_err_fixed"] >= row["mean_abs_err_rns"]

    def test_reproducible(self):
        a = harness.dot_product_error_experiment([5], trials=300, seed=9)
        b = harness.dot_product_error_experiment([5], trials=300, seed=9)
        assert a.rows == b.rows and a.tables == b.tables

    def test_histogram_counts(self):
        res = harness.dot_product_error_experiment([4], trials=200, seed=1, bins=11)
        hist = res.tables["histogram"][1]
        for core in ("rns", "fixed"):
            assert sum(r["count"] for r in hist if r["core"] == core) == 200


class TestSweeps:
    def test_accuracy_sweep_trends(self, toy):
        model, x, y = toy
        res = harness.accuracy_sweep(model, x, y, b_range=(4,), h_range=(16, 128), seeds=(0, 1))
        acc = {(r["mode"], r["b"], r["h"], r["seed"]): r["accuracy"] for r in res.rows}
        for s in (0, 1):
            assert abs(acc["rns", 4, 16, s] - acc["rns", 4, 128, s]) < 0.01
            assert acc["fixed", 4, 128, s] <= acc["fixed", 4, 16, s]

    @pytest.mark.parametrize("b,h", [(4, 16), (6, 64), (8, 128)])
    def test_full_width_adc_matches_rns(self, toy, b, h):
        model, x, _ = toy
        full = CoreConfig.fixed_point(b, h, b_adc=CoreConfig.fixed_point(b, h).b_out)
        a = harness.run_network(model, x, full)
        assert np.array_equal(a, harness.run_network(model, x, CoreConfig.rns(b, h)))

    def test_resample_seed_zero_is_identity(self):
        assert np.array_equal(harness._resample(7, 0), np.arange(7))

    def test_noise_sweep_small(self, toy):
        model, x, y = toy
        x, y = x[:300], y[:300]
        code = rrns.make_rrns_code([53, 55, 59], [61, 62])
        res = harness.noise_sweep(model, x, y, code, [0.0, 0.05], [1, 3], b=6, h=64, seed=4, rate_trials=4000)
        rows = {(r["p"], r["R"]): r for r in res.rows}
        clean = harness.accuracy(model, x, y, CoreConfig.rns(6, 64, code.moduli_set, code.k))
        assert rows[0.0, 1]["accuracy"] == rows[0.0, 3]["accuracy"] == clean
        assert rows[0.05, 3]["accuracy"] >= rows[0.05, 1]["accuracy"]
        assert rows[0.05, 3]["p_err_analytic"] < rows[0.05, 1]["p_err_analytic"]
        assert len(res.tables["cutoff"][1]) == 2

    def test_noise_cutoff_above_all_correct_level(self, toy):
        model, x, y = toy
        cut = []
        for redundant in ([61], [61, 62], [61, 62, 63]):
            code = rrns.make_rrns_code([53, 55, 59], redundant)
            res = harness.noise_sweep(model, x, y, code, [0.0, 0.001, 0.003, 0.01, 0.03, 0.1], [1, 3],
                                      b=6, h=64, seed=20230101, rate_trials=20_000)
            cut += res.tables["cutoff"][1]
        finite = [c["p_err_cutoff"] for c in cut if not math.isnan(c["p_err_cutoff"])]
        assert finite
        assert np.mean(finite) > cut[0]["p_err_all_correct"]
