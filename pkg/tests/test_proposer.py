import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsw.camera import PEDESTRIAN, BoxSize, CameraIntrinsics, Point3D, backproject, project_model
from dsw.dataset import Background, Plant, synth_scene
from dsw.errors import EmptyImage, InvalidConfig, InvalidTheta, LutRangeMismatch
from dsw.metrics import best_ious
from dsw.proposer import (
    ABSOLUTE,
    EMITTED,
    INHOMOGENEOUS,
    SAMPLE_FRACTIONS,
    DisparityImage,
    DswConfig,
    Proposal,
    Region3D,
    _index_image,
    _traverse,
    generate,
    homogeneity_check,
    proposals_from_csv,
    proposals_to_csv,
    roi_filter,
    scan,
    step_sizes,
    step_tables,
)
from dsw.sizelut import LutConfig, build_lut

NO_VERIFY = DswConfig(verify_homogeneity=False)


def pattern(box):
    """The nine (row, col) sample positions of a box."""
    x, y, w, h = box
    return [(y + math.floor(fy * h), x + math.floor(fx * w)) for fy in SAMPLE_FRACTIONS for fx in SAMPLE_FRACTIONS]


@pytest.mark.parametrize(
    "size, theta, expected",
    [(BoxSize(100, 300), 0.5, (34, 103)), (BoxSize(2, 6), 0.5, (1, 2)), (BoxSize(60, 173), 0.7, (11, 31))],
)
def test_step_sizes(size, theta, expected):
    assert step_sizes(size, theta) == expected


def test_step_fraction_at_point_seven():
    # 2 * (0.7 - 2 sqrt(0.7) + 1) / 0.3 = 0.17787, so 60 -> 10.67 and 173 -> 30.77
    t = 0.7
    delta = 2 * (t - 2 * math.sqrt(t) + 1) / (1 - t)
    assert delta == pytest.approx(0.177866, abs=1e-6)
    assert step_sizes(BoxSize(60, 173), t) == (round(delta * 60), round(delta * 173))


def test_step_sizes_errors():
    with pytest.raises(InvalidTheta):
        step_sizes(BoxSize(10, 30), 1.0)
    with pytest.raises(InvalidConfig):
        step_sizes(BoxSize(0, 30), 0.5)


@pytest.mark.parametrize("theta", [0.3, 0.5, 0.7, 0.9])
def test_step_tables_match_scalar(lut, theta):
    sx, sy = step_tables(lut, theta, 1)
    for i, size in enumerate(lut.entries):
        assert (sx[i], sy[i]) == step_sizes(size, theta)


def test_homogeneity_constant_patch():
    img = DisparityImage(np.full((200, 200), 40.0))
    assert homogeneity_check(img, (20, 20, 60, 173), DswConfig()) == (True, 0.0)


def test_homogeneity_vertical_ramp():
    h = 173
    ramp = np.linspace(30, 50, h)[:, None].repeat(60, axis=1)
    img = DisparityImage(ramp)
    ok, spread = homogeneity_check(img, (0, 0, 60, h), DswConfig())
    samples = [ramp[r, c] for r, c in pattern((0, 0, 60, h))]
    expected = statistics.pstdev(samples) / statistics.fmean(samples)
    assert not ok
    assert spread == pytest.approx(expected, rel=1e-12)
    assert expected > 0.1


def test_homogeneity_too_few_valid():
    data = np.full((100, 100), 40.0)
    for r, c in pattern((0, 0, 100, 100))[:6]:
        data[r, c] = 0.0
    ok, _ = homogeneity_check(DisparityImage(data), (0, 0, 100, 100), DswConfig(homogeneity_sigma=10.0))
    assert not ok


@settings(max_examples=200, deadline=None)
@given(
    vals=st.lists(st.one_of(st.just(0.0), st.floats(1.0, 100.0)), min_size=9, max_size=9),
    sigma=st.floats(0.0, 0.5),
    absolute=st.booleans(),
)
def test_homogeneity_against_pstdev_oracle(vals, sigma, absolute):
    w, h = 40, 120
    data = np.zeros((h, w))
    for (r, c), val in zip(pattern((0, 0, w, h)), vals):
        data[r, c] = val
    cfg = DswConfig(homogeneity_sigma=sigma, homogeneity_mode=ABSOLUTE if absolute else "relative")
    ok, spread = homogeneity_check(DisparityImage(data), (0, 0, w, h), cfg)
    valid = [v for v in vals if v > 0]
    if len(valid) < 5:
        assert not ok
        return
    sd = 0.0 if len(set(valid)) == 1 else statistics.pstdev(valid)
    want = sd if absolute else sd / statistics.fmean(valid)
    assert spread == pytest.approx(want, rel=1e-9, abs=1e-12)
    assert ok == (want == 0 or want < sigma)


def test_homogeneity_degenerate_box():
    assert homogeneity_check(DisparityImage(np.ones((5, 5))), (0, 0, 0, 3), DswConfig())[0] is False


def _roi_oracle(intr, data, roi):
    keep = np.zeros(data.shape, bool)
    for v in range(data.shape[0]):
        for u in range(data.shape[1]):
            if data[v, u] > 0:
                keep[v, u] = roi.contains(backproject(intr, u, v, data[v, u]))
    return keep


def test_roi_everything(intr):
    data = np.random.default_rng(0).uniform(-5, 100, (30, 40))
    big = Region3D(Point3D(-1e6, -1e6, -1e6), Point3D(1e6, 1e6, 1e6))
    img = DisparityImage(data)
    np.testing.assert_array_equal(roi_filter(intr, img, big), img.valid_mask())


def test_roi_depth_excludes_far(intr):
    d20 = intr.fx * intr.baseline / 20.0
    img = DisparityImage(np.full((4, 4), d20))
    roi = Region3D(Point3D(-1e6, -1e6, 0), Point3D(1e6, 1e6, 10))
    assert not roi_filter(intr, img, roi).any()


def test_roi_height_band_against_oracle(intr):
    rng = np.random.default_rng(3)
    data = rng.uniform(1, 90, (375, 1242))
    data[rng.random(data.shape) < 0.2] = 0
    data = data[::5, ::5].copy()  # keep the python oracle quick
    roi = Region3D(Point3D(-1e6, -1.0, 0), Point3D(1e6, 3.0, 1e6))
    intr_small = CameraIntrinsics(721 / 5, 721 / 5, 609 / 5, 172 / 5, 0.54)
    got = roi_filter(intr_small, DisparityImage(data), roi)
    np.testing.assert_array_equal(got, _roi_oracle(intr_small, data, roi))
    assert 0 < got.sum() < (data > 0).sum()


def test_roi_soundness(intr, lut):
    scene = synth_scene(
        [Plant(300, 200, 30.0), Plant(800, 220, 50.0)], PEDESTRIAN, intr, background=Background.ground(intr)
    )
    roi = Region3D(Point3D(-4.0, -1.0, 5.0), Point3D(4.0, 1.7, 30.0))
    props = generate(scene.disparity, intr, lut, DswConfig(roi=roi, verify_homogeneity=False))
    assert props
    for p in props:
        assert roi.contains(backproject(intr, p.u, p.v, p.disparity))


def test_blank_image(intr, lut):
    assert generate(DisparityImage(np.zeros((375, 1242))), intr, lut) == []


def test_empty_image(intr, lut):
    with pytest.raises(EmptyImage):
        generate(DisparityImage(np.zeros((0, 10))), intr, lut)


def test_lut_range_mismatch(intr, lut):
    data = np.zeros((50, 50))
    data[10, 10] = 128 + 0.1 * 127 + 0.5
    with pytest.raises(LutRangeMismatch):
        generate(DisparityImage(data), intr, lut)
    data[10, 10] = 130.0  # within the slack: counted, not fatal
    res = scan(DisparityImage(data), intr, lut)
    assert res.n_out_of_range == 1 and res.proposals == []


def test_single_plant_covered(intr, lut):
    scene = synth_scene([Plant(600, 190, 54.0)], PEDESTRIAN, intr)
    props = generate(scene.disparity, intr, lut)
    assert best_ious(props, scene.ground_truth)[0] >= 0.5


def test_sigma_zero_rejects_straddling_patterns(intr, lut):
    scene = synth_scene([Plant(600, 190, 54.0)], PEDESTRIAN, intr, background=Background("constant", 20.0))
    data = scene.disparity.data
    res = scan(scene.disparity, intr, lut, DswConfig(homogeneity_sigma=0.0, homogeneity_mode=ABSOLUTE))
    tested = np.flatnonzero((res.status == EMITTED) | (res.status == INHOMOGENEOUS))
    emitted = {(p.u, p.v): p for p in res.proposals}
    n_straddle = 0
    for k in tested:
        u, v = int(res.candidate_u[k]), int(res.candidate_v[k])
        if res.status[k] == EMITTED:
            box = emitted[(u, v)].box
        else:
            size = lut[lut.index_of(data[v, u])]
            x, y = u - size.width_px // 2, v - size.height_px // 2
            box = (max(x, 0), max(y, 0), min(x + size.width_px, 1242) - max(x, 0), min(y + size.height_px, 375) - max(y, 0))
        samples = {float(data[r, c]) for r, c in pattern(box)}
        flat = len(samples) == 1
        n_straddle += not flat
        assert (res.status[k] == EMITTED) == flat
    assert n_straddle > 0
    gx, gy, gw, gh = scene.ground_truth[0].x, scene.ground_truth[0].y, 60, 173
    for p in res.proposals:
        if p.disparity == 54.0:
            assert all(gy <= r < gy + gh and gx <= c < gx + gw for r, c in pattern(p.box))


def test_proposal_sizes_and_depth(intr, lut):
    rng = np.random.default_rng(11)
    data = rng.uniform(1, 128, (120, 300))
    res = scan(DisparityImage(data), intr, lut, DswConfig(verify_homogeneity=False, min_box_width_px=1))
    assert res.proposals
    for p in res.proposals:
        size = lut[lut.index_of(p.disparity)]
        assert p.w <= size.width_px and p.h <= size.height_px
        x, y = p.u - size.width_px // 2, p.v - size.height_px // 2
        assert (p.x, p.y) == (max(x, 0), max(y, 0))
        assert p.x + p.w == min(x + size.width_px, 300) and p.y + p.h == min(y + size.height_px, 120)
        assert p.depth_m == pytest.approx(intr.fx * intr.baseline / p.disparity, rel=1e-9)
        assert p.w > 0 and p.h > 0


def test_determinism(intr, lut):
    scene = synth_scene([Plant(300, 200, 30.0), Plant(900, 200, 70.0)], PEDESTRIAN, intr, noise_stddev=0.5, seed=3)
    a = generate(scene.disparity, intr, lut)
    b = generate(scene.disparity, intr, lut)
    assert a == b
    assert [(p.v, p.u) for p in a] == sorted((p.v, p.u) for p in a)


def test_count_monotone_in_theta(intr, lut):
    scene = synth_scene([Plant(300, 200, 30.0), Plant(900, 200, 70.0)], PEDESTRIAN, intr, background=Background.ground(intr))
    counts = [
        len(generate(scene.disparity, intr, lut, DswConfig(theta_iou=t, verify_homogeneity=False)))
        for t in (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    ]
    assert all(a <= b for a, b in zip(counts, counts[1:]))


def test_jump_correction_visits_far_object(intr, lut):
    data = np.zeros((1, 200))
    data[0, :10] = 80.0
    data[0, 10:] = 20.0
    res = scan(DisparityImage(data), intr, lut, NO_VERIFY)
    visited = set(res.candidate_u.tolist())
    assert 0 in visited and 10 in visited
    # without a jump the near stride is used
    res2 = scan(DisparityImage(np.full((1, 200), 80.0)), intr, lut, NO_VERIFY)
    assert res2.candidate_u.tolist()[:2] == [0, step_sizes(lut[79], 0.5)[0]]


def test_invalid_pixels_advance_by_min_step(intr, lut):
    data = np.zeros((1, 50))
    data[0, 37] = 40.0
    res = scan(DisparityImage(data), intr, lut, NO_VERIFY)
    assert res.candidate_u.tolist() == [37]


def test_compiled_kernels_match_python(intr, lut):
    rng = np.random.default_rng(2)
    data = rng.uniform(-20, 140, (40, 90))
    usable = np.isfinite(data) & (data > 0)
    sx, sy = step_tables(lut, 0.5, 1)
    args = (data, usable, 1.0, 128.0, 1.0, len(lut), sy)
    idx_c, rm_c = _index_image(*args)
    idx_p, rm_p = _index_image.py_func(*args)
    np.testing.assert_array_equal(idx_c, idx_p)
    np.testing.assert_array_equal(rm_c, rm_p)
    targs = (idx_c, data, sx, sy, rm_c, 1.0, 1)
    for a, b in zip(_traverse(*targs), _traverse.py_func(*targs)):
        np.testing.assert_array_equal(a, b)


@settings(max_examples=100, deadline=None)
@given(d=st.integers(10, 90), fx=st.floats(0.0, 1.0), fy=st.floats(0.0, 1.0), theta=st.sampled_from([0.5, 0.7]))
def test_coverage_guarantee(intr, lut, d, fx, fy, theta):
    size = project_model(intr, PEDESTRIAN, d)
    cx = size.width_px // 2 + int(fx * (1242 - size.width_px))
    cy = size.height_px // 2 + int(fy * (375 - size.height_px))
    scene = synth_scene([Plant(cx, cy, float(d))], PEDESTRIAN, intr)
    props = generate(scene.disparity, intr, lut, DswConfig(theta_iou=theta, verify_homogeneity=False))
    assert best_ious(props, scene.ground_truth)[0] >= theta


def test_adaptive_recall_matches_dense_on_small_images():
    intr = CameraIntrinsics(721, 721, 32, 32, 0.54)
    lut = build_lut(intr, PEDESTRIAN, LutConfig(1, 40, 1))
    rng = np.random.default_rng(7)
    for theta in (0.5, 0.7):
        hit_adaptive = hit_dense = total = 0
        for _ in range(30):
            d = int(rng.integers(10, 20))
            size = project_model(intr, PEDESTRIAN, d)
            cx = int(rng.integers(size.width_px // 2, 64 - size.width_px + size.width_px // 2 + 1))
            cy = int(rng.integers(size.height_px // 2, 64 - size.height_px + size.height_px // 2 + 1))
            scene = synth_scene([Plant(cx, cy, float(d))], PEDESTRIAN, intr, dims=(64, 64))
            data = scene.disparity.data
            dense = []
            for v, u in zip(*np.nonzero(data > 0)):
                s = lut[lut.index_of(data[v, u])]
                dense.append((u - s.width_px // 2, v - s.height_px // 2, s.width_px, s.height_px))
            props = generate(scene.disparity, intr, lut, DswConfig(theta_iou=theta, verify_homogeneity=False))
            hit_adaptive += best_ious(props, scene.ground_truth)[0] >= theta
            hit_dense += best_ious(dense, scene.ground_truth)[0] >= theta
            total += 1
        assert hit_dense == total
        assert hit_adaptive >= hit_dense


def test_csv_round_trip():
    props = [Proposal(1, 2, 30, 90, 27.0, 14.42, 0.0123), Proposal(5, 6, 10, 29, 9.5, 40.98, None)]
    text = proposals_to_csv(props, "000007")
    assert text.splitlines()[0] == "image_id,x,y,w,h,disparity,depth_m,stddev"
    assert text.splitlines()[1] == "000007,1,2,30,90,27,14.42,0.0123"
    back = proposals_from_csv(text)["000007"]
    assert [p.box for p in back] == [p.box for p in props]
    assert back[1].homogeneity_stddev is None


def test_config_validation():
    with pytest.raises(InvalidTheta):
        DswConfig(theta_iou=1.0)
    with pytest.raises(InvalidConfig):
        DswConfig(homogeneity_sigma=-1)
    with pytest.raises(InvalidConfig):
        DswConfig(jump_threshold=0)
    with pytest.raises(InvalidConfig):
        Region3D(Point3D(1, 0, 0), Point3D(0, 1, 1))
