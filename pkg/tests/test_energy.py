import math

import numpy as np
import pytest

from ssmsnake import diffcore as dc
from ssmsnake.diffcore import AdamW, ParamStore, Tensor, backward
from ssmsnake.energy import (
    EnergyConfig,
    EnergyNet,
    boundary_pixels,
    charbonnier,
    compose_espm,
    decay_transform,
    distance_field,
)


def brute_force_distance(boundary):
    ys, xs = np.nonzero(boundary)
    h, w = boundary.shape
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            out[i, j] = np.sqrt(np.min((ys - i) ** 2 + (xs - j) ** 2))
    return out


def test_distance_zero_on_boundary_and_345():
    b = np.zeros((8, 8), dtype=bool)
    b[0, 0] = True
    d = distance_field(b)
    assert d[0, 0] == 0.0
    assert d[4, 3] == pytest.approx(5.0)  # (x=3, y=4) from origin


def test_distance_matches_brute_force_exactly():
    rng = np.random.default_rng(0)
    for _ in range(10):
        b = rng.random((32, 32)) < 0.02
        if not b.any():
            b[5, 7] = True
        assert np.array_equal(distance_field(b), brute_force_distance(b))


def test_distance_rejects_empty_boundary():
    with pytest.raises(ValueError, match="empty"):
        distance_field(np.zeros((4, 4), dtype=bool))


@pytest.mark.parametrize("kind", ["lin", "exp", "log"])
def test_decay_boundary_pixel_is_255(kind):
    d = np.array([[0.0, 3.0], [4.0, 9.0]])
    out = decay_transform(d, EnergyConfig(transform=kind))
    assert out[0, 0] == pytest.approx(255.0)


def test_decay_lin_endpoints_and_midpoint():
    d = np.array([0.0, 128.0, 255.0])
    out = decay_transform(d, EnergyConfig(transform="lin"))
    # min-max puts the farthest pixel at Norm=255
    assert out[2] == 0.0
    assert out[1] == pytest.approx(255.0 - 128.0)


def test_decay_exp_midpoint_value():
    d = np.array([0.0, 128.0, 255.0])
    out = decay_transform(d, EnergyConfig(transform="exp", lambda_exp=0.02))
    assert out[1] == pytest.approx(255.0 * math.exp(-2.56), rel=1e-12)


def test_decay_log_zero_at_max_with_default_alpha():
    d = np.array([0.0, 255.0])
    out = decay_transform(d, EnergyConfig(transform="log"))
    assert out[1] == pytest.approx(0.0, abs=1e-12)


def test_decay_constant_field_maps_to_255():
    # constant distance -> Norm all zero -> full energy everywhere
    out = decay_transform(np.full((4, 4), 7.0), EnergyConfig(transform="lin"))
    np.testing.assert_allclose(out, 255.0)


@pytest.mark.parametrize("kind", ["lin", "exp", "log"])
def test_decay_monotone_nonincreasing(kind):
    rng = np.random.default_rng(1)
    for _ in range(20):
        d = rng.uniform(0, 50, size=64)
        out = decay_transform(d, EnergyConfig(transform=kind))
        order = np.argsort(d)
        diffs = np.diff(out[order])
        assert np.all(diffs <= 1e-9)


def test_boundary_pixels_ring():
    m = np.zeros((7, 7), dtype=bool)
    m[2:5, 2:5] = True
    b = boundary_pixels(m)
    assert b.sum() == 8  # 3x3 block minus its single interior pixel
    assert not b[3, 3]


def test_compose_degenerates_to_decay_of_distance():
    rng = np.random.default_rng(3)
    img = rng.uniform(0, 255, size=(16, 16))
    mask = np.zeros((16, 16), dtype=bool)
    mask[4:10, 5:12] = True
    cfg = EnergyConfig(transform="lin", sigma_gauss=0.0, lambda_edge=0.0)
    espm = compose_espm(img, [mask], cfg)
    ref = decay_transform(distance_field(boundary_pixels(mask)), cfg)
    np.testing.assert_allclose(espm, ref, atol=1e-12)


def test_compose_constant_image_edge_term_hits_floor():
    img = np.full((16, 16), 80.0)
    mask = np.zeros((16, 16), dtype=bool)
    mask[6:10, 6:10] = True
    cfg = EnergyConfig(transform="lin", sigma_gauss=0.0, lambda_edge=2.0, grad_floor=1e-3)
    espm = compose_espm(img, [mask], cfg)
    base = decay_transform(distance_field(boundary_pixels(mask)), cfg)
    expected = np.clip(base + 2.0 * (1e-3) ** -0.5, 0, 255)
    np.testing.assert_allclose(espm, expected, atol=1e-12)


def test_compose_shared_boundary_attains_global_max():
    img = np.full((32, 32), 100.0)
    a = np.zeros((32, 32), dtype=bool)
    b = np.zeros((32, 32), dtype=bool)
    a[8:24, 6:16] = True
    b[8:24, 16:26] = True  # shares the x=16 edge with a
    cfg = EnergyConfig(transform="lin", sigma_gauss=2.0, lambda_edge=0.0)
    espm = compose_espm(img, [a, b], cfg)
    peak = np.unravel_index(np.argmax(espm), espm.shape)
    assert peak[1] in (15, 16)  # on the shared boundary columns
    assert 8 <= peak[0] < 24


def test_compose_bounds():
    rng = np.random.default_rng(5)
    img = rng.uniform(0, 255, size=(24, 24))
    mask = np.zeros((24, 24), dtype=bool)
    mask[3:9, 4:12] = True
    espm = compose_espm(img, [mask], EnergyConfig(lambda_edge=50.0))
    assert espm.min() >= 0.0 and espm.max() <= 255.0


def test_compose_rejects_empty_masks():
    with pytest.raises(ValueError, match="non-empty"):
        compose_espm(np.zeros((8, 8)), [np.zeros((8, 8), dtype=bool)], EnergyConfig())


def test_espm_translation_equivariance_fixed_norm():
    # fixed normalization scale; with per-image min-max the global scale would
    # shift with the farthest-pixel distance
    rng = np.random.default_rng(8)
    img = np.full((64, 64), 60.0)
    img += rng.normal(scale=2.0, size=img.shape)
    mask = np.zeros((64, 64), dtype=bool)
    mask[20:34, 18:30] = True
    shift = 3
    img_t = np.roll(img, shift, axis=1)
    mask_t = np.roll(mask, shift, axis=1)
    for sigma, margin in ((0.0, shift + 1), (2.0, shift + 9)):
        cfg = EnergyConfig(transform="exp", sigma_gauss=sigma, lambda_edge=4.0, norm_max=64.0)
        e0 = compose_espm(img, [mask], cfg)
        e1 = compose_espm(img_t, [mask_t], cfg)
        rolled = np.roll(e0, shift, axis=1)
        np.testing.assert_allclose(
            e1[margin:-margin, margin:-margin], rolled[margin:-margin, margin:-margin], atol=1e-6
        )


def test_charbonnier_floor_and_unit_diff():
    # power-of-two pixel count (as in the real 128x128 maps) keeps the mean exact
    gt = np.arange(16.0).reshape(4, 4)
    assert charbonnier(gt, gt) == 1e-3
    assert charbonnier(gt + 1.0, gt) == pytest.approx(math.sqrt(1.0 + 1e-6), rel=1e-12)


def test_charbonnier_tensor_matches_numpy():
    rng = np.random.default_rng(2)
    a = rng.uniform(0, 255, size=(8, 8))
    b = rng.uniform(0, 255, size=(8, 8))
    t = charbonnier(Tensor(a), b)
    assert t.item() == pytest.approx(charbonnier(a, b), rel=1e-12)


def test_energy_net_shape_and_input_validation():
    net = EnergyNet(rng=np.random.default_rng(0))
    out = net.predict(np.zeros((128, 128)))
    assert out.shape == (128, 128)
    assert out.min() >= 0.0 and out.max() <= 255.0
    with pytest.raises(ValueError, match="128"):
        net.predict(np.zeros((64, 64)))


def test_energy_net_one_training_step_reduces_loss():
    rng = np.random.default_rng(1)
    net = EnergyNet(rng=rng)
    img = rng.uniform(0, 255, size=(128, 128))
    target = np.full((128, 128), 210.0)
    opt = AdamW(net.params, total_steps=20, lr_start=3e-3, lr_end=3e-3, weight_decay=0.0)
    first = None
    for _ in range(8):
        loss = charbonnier(net.forward(img), target)
        if first is None:
            first = loss.item()
        backward(loss, net.params)
        opt.step()
    assert charbonnier(net.forward(img), target).item() < first - 0.5
