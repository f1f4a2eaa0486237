import math

import numpy as np
import pytest

import ganproj


def test_identity_recovery():
    g = ganproj.make_identity_generator(4)
    target = np.full(g.image_shape, 0.5)
    cfg = ganproj.RecoveryConfig(strategy="none", tol=1e-20, restarts=1)
    r = ganproj.recover(g, target, cfg)
    assert np.max(np.abs(r.z_hat - 0.5)) < 1e-6
    assert r.final_loss < 1e-12
    assert len(r.loss_trace) == r.iterations_used


def test_gradient_matches_finite_differences():
    g = ganproj.make_identity_generator(3)
    z = np.array([0.2, -0.4, 0.9])
    target = np.zeros(g.image_shape)
    loss, grad = g.loss_and_grad(z, target)
    assert loss == pytest.approx(np.mean(z**2))
    assert np.allclose(grad, 2 * z / 3, atol=1e-15)


def test_normalize_round_trip_and_rounding():
    img = np.arange(256, dtype=np.uint8).reshape(16, 16, 1)
    t = ganproj.normalize(img)
    assert t.min() == -1.0 and t.max() == 1.0
    assert np.array_equal(ganproj.denormalize(t), img)
    assert ganproj.denormalize(np.zeros((1, 1, 1)))[0, 0, 0] == 128


def test_psnr_cases():
    black = np.zeros((4, 4), np.uint8)
    white = np.full((4, 4), 255, np.uint8)
    assert ganproj.mse_pixels(black, white) == 65025.0
    assert ganproj.psnr(black, white) == pytest.approx(0.0, abs=1e-3)
    assert math.isinf(ganproj.psnr(black, black))


def test_noise_statistics_and_determinism():
    img = np.full((256, 256), 100, np.uint8)
    target, preview = ganproj.add_gaussian_noise(img, 127.0, seed=3)
    noise = (target - ganproj.normalize(img)) * 127.5
    assert abs(noise.std() - 127.0) / 127.0 < 0.02
    assert preview.dtype == np.uint8
    again, _ = ganproj.add_gaussian_noise(img, 127.0, seed=3)
    assert np.array_equal(target, again)


def test_weights_round_trip(tmp_path):
    g = ganproj.make_random_toy_generator(5)
    g.save(tmp_path / "a.gpdw")
    back = ganproj.load_weights(tmp_path / "a.gpdw")
    back.save(tmp_path / "b.gpdw")
    assert (tmp_path / "a.gpdw").read_bytes() == (tmp_path / "b.gpdw").read_bytes()
    z = np.linspace(-1, 1, 16)
    assert np.max(np.abs(back.forward(z) - g.forward(z))) < 1e-5


def test_errors_map_to_python_exceptions(tmp_path):
    bad = tmp_path / "bad.gpdw"
    bad.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ganproj.FormatError):
        ganproj.load_weights(bad)
    with pytest.raises(ganproj.ConfigError):
        ganproj.RecoveryConfig(strategy="clamp")
    with pytest.raises(ganproj.ShapeError):
        ganproj.recover(ganproj.make_identity_generator(2), np.zeros((3, 3, 1)))


def test_sharpness_on_identity_net():
    g = ganproj.make_identity_generator(4)
    cfg = ganproj.RecoveryConfig(strategy="none", tol=1e-20, restarts=1)
    (attr,) = ganproj.estimate_sharpness(g, [0.0], 2, cfg, seed=1)
    assert attr.n_samples == 2
    assert np.max(np.abs(attr.vector)) < 1e-6
    z = np.array([0.95, -0.2, 0.0, 0.1])
    assert np.array_equal(ganproj.apply_sharpness(z, attr), np.clip(z + np.array(attr.vector), -1, 1))


def test_toy_generator_denoise():
    g = ganproj.make_random_toy_generator(2)
    clean = ganproj.denormalize(g.forward(np.full(16, 0.3)))
    out, result = ganproj.denoise(g, clean, ganproj.RecoveryConfig(max_iters=50, restarts=1, seed=4))
    assert out.shape == (32, 32, 1)
    assert np.all(np.abs(result.z_hat) <= 1.0)
    assert math.isfinite(result.final_loss)


def test_image_files(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    ganproj.write_image(img, tmp_path / "x.png")
    assert np.array_equal(ganproj.read_image(tmp_path / "x.png"), img)
    assert len(ganproj.toy_dataset(3, 1)) == 3
