import numpy as np
import pytest

from ssmsnake.geometry import (
    BBox,
    Contour,
    align_to_gt,
    discrete_curvature,
    init_polygon_from_box,
    polygon_area,
    rasterize,
    resample_curvature_weighted,
    resample_uniform,
)


def circle(n=256, r=10.0, cx=0.0, cy=0.0):
    t = 2 * np.pi * np.arange(n) / n
    return Contour(np.stack([cx + r * np.cos(t), cy + r * np.sin(t)], axis=1))


def star(spikes=5, r_out=20.0, r_in=8.0, cx=32.0, cy=32.0, n_dense=720):
    t = np.pi * np.arange(2 * spikes) / spikes
    radii = np.where(np.arange(2 * spikes) % 2 == 0, r_out, r_in)
    corners = np.stack([cx + radii * np.cos(t), cy + radii * np.sin(t)], axis=1)
    return resample_uniform(Contour(corners), n_dense)


def test_contour_invariants():
    with pytest.raises(ValueError, match="3"):
        Contour(np.array([[0.0, 0.0], [1.0, 0.0]]))
    with pytest.raises(ValueError, match="duplicate"):
        Contour(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]))
    cw = Contour(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]))
    assert polygon_area(cw.points) > 0  # orientation normalized


def test_resample_unit_square_corners():
    sq = Contour(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))
    out = resample_uniform(sq, 4)
    np.testing.assert_allclose(out.points, sq.points, atol=1e-12)


def test_resample_idempotent_on_equally_spaced():
    c = circle(64)
    once = resample_uniform(c, 64)
    np.testing.assert_allclose(once.points, c.points, atol=1e-9)
    twice = resample_uniform(once, 64)
    np.testing.assert_allclose(twice.points, once.points, atol=1e-9)


def test_resample_circle_equal_spacing():
    out = resample_uniform(circle(4096, r=10), 128)
    d = np.linalg.norm(np.roll(out.points, -1, axis=0) - out.points, axis=1)
    assert d.max() - d.min() < 1e-6


def test_resample_rejects_degenerate():
    with pytest.raises(ValueError, match="n >= 3"):
        resample_uniform(circle(16), 2)


def test_curvature_straight_segment_zero():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]])
    prof = discrete_curvature(Contour(pts))
    assert prof.kappa[1] == pytest.approx(0.0, abs=1e-12)


def test_curvature_regular_128gon_close_to_inverse_radius():
    prof = discrete_curvature(circle(128, r=10.0))
    np.testing.assert_allclose(prof.kappa, 0.1, rtol=0.05)


def test_curvature_scaling_inverse_length():
    rng = np.random.default_rng(4)
    base = circle(40, r=7.0).points + rng.normal(scale=0.3, size=(40, 2))
    k1 = discrete_curvature(Contour(base)).kappa
    k3 = discrete_curvature(Contour(base * 3.0)).kappa
    np.testing.assert_allclose(k3, k1 / 3.0, atol=1e-9)


def test_curvature_penalty_regular_ngon_closed_form():
    n, r = 24, 10.0
    c = circle(n, r=r)
    prof = discrete_curvature(c)
    side = np.linalg.norm(c.points[1] - c.points[0])
    expected = n * ((2 * np.pi / n) / side) ** 3
    assert float(np.sum(prof.kappa * prof.weight)) == pytest.approx(expected, rel=1e-9)


def test_curvature_weighted_on_circle_matches_uniform():
    c = circle(500, r=12.0)
    a = resample_uniform(c, 64)
    b = resample_curvature_weighted(c, 64, beta=4.0)
    np.testing.assert_allclose(a.points, b.points, atol=1e-6)


def test_curvature_weighted_beta_zero_is_uniform():
    s = star()
    a = resample_uniform(s, 64)
    b = resample_curvature_weighted(s, 64, beta=0.0)
    np.testing.assert_allclose(a.points, b.points, atol=1e-12)


def test_curvature_weighted_star_concentrates_at_tips():
    s = star(spikes=5, r_out=20.0, r_in=8.0)
    out = resample_curvature_weighted(s, 128, beta=4.0).points
    uni = resample_uniform(s, 128).points
    tips = np.stack(
        [32.0 + 20.0 * np.cos(np.pi * 2 * np.arange(5) / 5), 32.0 + 20.0 * np.sin(np.pi * 2 * np.arange(5) / 5)],
        axis=1,
    )
    window = 2.0

    def near_tips(pts):
        d = np.linalg.norm(pts[:, None, :] - tips[None, :, :], axis=2).min(axis=1)
        return int((d < window).sum())

    assert near_tips(out) > near_tips(uni)


def test_align_identity_and_rotation():
    rng = np.random.default_rng(0)
    pred = circle(16, r=5).points + rng.normal(scale=0.01, size=(16, 2))
    aligned, k, rev, cost = align_to_gt(pred, pred)
    assert (k, rev) == (0, False) and cost == pytest.approx(0.0)
    for shift in (1, 5, 11):
        gt = np.roll(pred, shift, axis=0)
        aligned, k, rev, cost = align_to_gt(pred, gt)
        assert k == shift and not rev
        assert cost == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(aligned, pred)


def test_align_matches_exhaustive_search():
    rng = np.random.default_rng(9)
    for trial in range(20):
        pred = rng.normal(size=(16, 2)) * 10
        gt = rng.normal(size=(16, 2)) * 10
        _, k, rev, cost = align_to_gt(pred, gt)
        best = np.inf
        for reverse in (False, True):
            cand = gt[::-1] if reverse else gt
            for s in range(16):
                c = float(np.linalg.norm(np.roll(cand, -s, axis=0) - pred, axis=1).sum())
                best = min(best, c)
        assert cost == pytest.approx(best, rel=1e-12)


def test_align_cost_invariant_under_joint_shift():
    rng = np.random.default_rng(2)
    pred = rng.normal(size=(12, 2))
    gt = rng.normal(size=(12, 2))
    _, _, _, c0 = align_to_gt(pred, gt)
    _, _, _, c1 = align_to_gt(np.roll(pred, 4, axis=0), np.roll(gt, 4, axis=0))
    assert c0 == pytest.approx(c1, rel=1e-12)


def test_rasterize_axis_aligned_square_exact_count():
    sq = Contour(np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]]))
    mask = rasterize(sq, 16, 16)
    assert mask.sum() == 100
    assert mask[:10, :10].all()


def test_rasterize_thin_sliver_between_centers():
    sliver = Contour(np.array([[0.1, 0.6], [12.0, 0.6], [12.0, 0.9], [0.1, 0.9]]))
    assert rasterize(sliver, 8, 16).sum() == 0


def test_rasterize_area_close_to_shoelace():
    rng = np.random.default_rng(7)
    for _ in range(10):
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=12))
        radii = rng.uniform(8, 24)
        pts = np.stack([32 + radii * np.cos(angles), 32 + radii * np.sin(angles)], axis=1)
        c = Contour(pts)
        mask = rasterize(c, 64, 64)
        area = abs(polygon_area(c.points))
        assert abs(mask.sum() - area) <= c.perimeter


def test_rasterize_invariant_to_vertex_rotation():
    c = star()
    m0 = rasterize(c, 64, 64)
    m1 = rasterize(Contour(np.roll(c.points, 17, axis=0)), 64, 64)
    assert np.array_equal(m0, m1)


def test_init_polygon_square_box_midpoints():
    box = BBox(0, 5.0, 5.0, 8.0, 8.0)
    c = init_polygon_from_box(box, 4)
    np.testing.assert_allclose(c.points, [[9.0, 5.0], [5.0, 9.0], [1.0, 5.0], [5.0, 1.0]], atol=1e-12)


def test_init_polygon_first_point_angle_zero():
    c = init_polygon_from_box(BBox(0, 0.0, 0.0, 20.0, 10.0), 40)
    np.testing.assert_allclose(c.points[0], [10.0, 0.0], atol=1e-12)


def test_init_polygon_points_within_box():
    box = BBox(2, 12.0, 30.0, 14.0, 6.0)
    pts = init_polygon_from_box(box, 40).points
    assert np.all(pts[:, 0] >= box.cx - box.w / 2 - 1e-9)
    assert np.all(pts[:, 0] <= box.cx + box.w / 2 + 1e-9)
    assert np.all(pts[:, 1] >= box.cy - box.h / 2 - 1e-9)
    assert np.all(pts[:, 1] <= box.cy + box.h / 2 + 1e-9)


def test_bbox_rejects_empty_extent():
    with pytest.raises(ValueError):
        BBox(0, 1.0, 1.0, 0.0, 4.0)
