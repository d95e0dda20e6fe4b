"""Evaluation metric and report tests."""

import numpy as np
import pytest
import torch

from handvid.hand_pose import DEFAULT_J, DetectorModel, KeypointSequence
from handvid.metrics import (
    EvalReport,
    PSNR_EXACT_SENTINEL,
    SampleEval,
    aggregate_report,
    consistency,
    detected_rate,
    evaluate_generation,
    frame_features,
    hs_err,
    load_report,
    mask_iou,
    motion_flow_viz,
    save_report,
    scoped_pixel_metrics,
    serialize_report,
)
from handvid.motion_area import MaskVideo


def _seq(coords, vis):
    return KeypointSequence(np.asarray(coords, float), np.asarray(vis, float))


# ---------------------------------------------------------------------------
# hs_err


def test_hs_err_zero_for_identical():
    coords = np.random.default_rng(0).uniform(0.1, 0.9, size=(3, DEFAULT_J, 2))
    vis = np.ones((3, DEFAULT_J))
    seq = _seq(coords, vis)
    assert hs_err(seq, seq) == 0.0


def test_hs_err_uniform_perturbation_value():
    """Shifting `active` visible joints by 0.01 scores (active / J) * 0.01."""
    rng = np.random.default_rng(1)
    frames, active = 4, 10
    coords = np.zeros((frames, DEFAULT_J, 2))
    vis = np.zeros((frames, DEFAULT_J))
    for l in range(frames):
        picks = rng.choice(DEFAULT_J, size=active, replace=False)
        vis[l, picks] = 1.0
        coords[l, picks] = rng.uniform(0.2, 0.8, size=(active, 2))
    ref = _seq(coords, vis)
    gen_coords = coords.copy()
    gen_coords[vis > 0] += np.array([0.01, 0.0])
    gen = _seq(gen_coords, vis)
    expected = (active / DEFAULT_J) * 0.01
    assert abs(hs_err(gen, ref) - expected) < 1e-12


def test_hs_err_ignores_one_sided_visibility():
    coords = np.full((1, DEFAULT_J, 2), 0.5)
    vis_ref = np.zeros((1, DEFAULT_J))
    vis_ref[0, :5] = 1.0
    ref = _seq(coords * vis_ref[..., None], vis_ref)
    # Generated marks an extra joint visible with wild coordinates.
    vis_gen = vis_ref.copy()
    vis_gen[0, 10] = 1.0
    gen_coords = coords * vis_ref[..., None]
    gen_coords[0, 10] = (0.99, 0.99)
    gen = _seq(gen_coords, vis_gen)
    assert hs_err(gen, ref) == 0.0


def test_hs_err_shape_mismatch():
    a = _seq(np.zeros((2, 5, 2)), np.zeros((2, 5)))
    b = _seq(np.zeros((3, 5, 2)), np.zeros((3, 5)))
    with pytest.raises(ValueError):
        hs_err(a, b)


def test_detected_rate():
    vis_ref = np.zeros((1, DEFAULT_J))
    vis_ref[0, :10] = 1.0
    vis_gen = np.zeros((1, DEFAULT_J))
    vis_gen[0, :7] = 1.0
    vis_gen[0, 20:25] = 1.0  # spurious detections do not count
    zeros = np.zeros((1, DEFAULT_J, 2))
    gen = KeypointSequence(zeros * 0 + 0.5 * vis_gen[..., None], vis_gen)
    ref = KeypointSequence(zeros * 0 + 0.5 * vis_ref[..., None], vis_ref)
    assert abs(detected_rate(gen, ref) - 0.7) < 1e-12
    empty = _seq(np.zeros((1, DEFAULT_J, 2)), np.zeros((1, DEFAULT_J)))
    assert detected_rate(gen, empty) == 0.0


# ---------------------------------------------------------------------------
# mask_iou


def _mask(arr, kind="generated", binary=True):
    return MaskVideo(np.asarray(arr, float), binary=binary, kind=kind)


def test_mask_iou_identical_is_one():
    m = np.zeros((2, 4, 4))
    m[:, 1:3, 1:3] = 1.0
    assert mask_iou(_mask(m), _mask(m, kind="per_frame")) == 1.0


def test_mask_iou_disjoint_is_zero():
    a = np.zeros((1, 4, 4))
    b = np.zeros((1, 4, 4))
    a[0, 0, 0] = 1.0
    b[0, 3, 3] = 1.0
    assert mask_iou(_mask(a), _mask(b, kind="union")) == 0.0


def test_mask_iou_third_overlap():
    a = np.zeros((1, 4, 4))
    b = np.zeros((1, 4, 4))
    a[0, 0, 0] = a[0, 0, 1] = 1.0
    b[0, 0, 1] = b[0, 0, 2] = 1.0
    assert abs(mask_iou(_mask(a), _mask(b, kind="union")) - 1.0 / 3.0) < 1e-12


def test_mask_iou_broadcasts_union_reference():
    gen = np.zeros((3, 4, 4))
    gen[:, 1:3, 1:3] = 1.0
    ref = gen[:1]
    assert mask_iou(_mask(gen), _mask(ref, kind="union")) == 1.0


# ---------------------------------------------------------------------------
# consistency


def test_consistency_identical_frames():
    video = np.broadcast_to(
        np.random.default_rng(2).random((1, 16, 16, 3)), (5, 16, 16, 3)
    ).copy()
    assert abs(consistency(video) - 1.0) < 1e-12


def test_consistency_alternating_negation():
    rng = np.random.default_rng(3)
    f = rng.standard_normal(50)
    f -= f.mean()
    feats = np.stack([f, -f, f, -f])
    assert abs(consistency(features=feats) - (-1.0)) < 1e-12


def test_consistency_matches_loop_oracle():
    rng = np.random.default_rng(4)
    video = rng.random((6, 16, 16, 3))
    feats = frame_features(video)
    sims = []
    for i in range(feats.shape[0] - 1):
        a, b = feats[i], feats[i + 1]
        sims.append(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    assert abs(consistency(video) - np.mean(sims)) < 1e-10


def test_consistency_range_on_random_videos():
    rng = np.random.default_rng(5)
    for _ in range(5):
        video = rng.random((4, 16, 16, 3))
        assert -1.0 <= consistency(video) <= 1.0


def test_consistency_detector_features():
    model = DetectorModel(height=32, width=32, base=8)
    video = torch.rand(4, 32, 32, 3)
    value = consistency(video, detector=model)
    assert -1.0 <= value <= 1.0
    const = torch.rand(1, 32, 32, 3).expand(4, -1, -1, -1)
    assert abs(consistency(const, detector=model) - 1.0) < 1e-12


def test_consistency_needs_two_frames():
    with pytest.raises(ValueError):
        consistency(features=np.zeros((1, 8)))


# ---------------------------------------------------------------------------
# scoped pixel metrics


def _ma(h=8, w=8, frames=1):
    m = np.zeros((frames, h, w))
    m[:, 2:5, 2:5] = 1.0
    return MaskVideo(m, binary=True, kind="union")


def test_scoped_metrics_uniform_offset():
    rng = np.random.default_rng(6)
    ref = rng.uniform(0.0, 0.8, size=(3, 8, 8, 3))
    gen = ref + 0.1
    pix = scoped_pixel_metrics(gen, ref, _ma())
    assert abs(pix.mse_full - 0.01) < 1e-12
    assert abs(pix.mse_ma - 0.01) < 1e-12
    assert abs(pix.psnr_full - 20.0) < 1e-9
    assert abs(pix.psnr_ma - 20.0) < 1e-9
    assert not pix.exact_full and not pix.exact_ma


def test_scoped_metrics_exact_sentinel():
    video = np.random.default_rng(7).random((2, 8, 8, 3))
    pix = scoped_pixel_metrics(video, video.copy(), _ma())
    assert pix.mse_full == 0.0 and pix.mse_ma == 0.0
    assert pix.psnr_full == PSNR_EXACT_SENTINEL
    assert pix.psnr_ma == PSNR_EXACT_SENTINEL
    assert pix.exact_full and pix.exact_ma


def test_scoped_metrics_ma_differs_from_full():
    ref = np.zeros((1, 8, 8, 3))
    gen = np.zeros((1, 8, 8, 3))
    gen[0, 2:5, 2:5] = 0.5  # error only inside the motion area
    pix = scoped_pixel_metrics(gen, ref, _ma())
    assert pix.mse_ma > pix.mse_full > 0.0
    assert abs(pix.mse_ma - 0.25) < 1e-12


def test_scoped_metrics_empty_ma_rejected():
    video = np.random.default_rng(8).random((2, 8, 8, 3))
    empty = MaskVideo(np.zeros((1, 8, 8)), binary=True, kind="union")
    with pytest.raises(ValueError, match="empty"):
        scoped_pixel_metrics(video, video, empty)


def test_scoped_metrics_shape_mismatch():
    a = np.zeros((2, 8, 8, 3))
    b = np.zeros((3, 8, 8, 3))
    with pytest.raises(ValueError):
        scoped_pixel_metrics(a, b, _ma())


# ---------------------------------------------------------------------------
# motion flow viz


def test_flow_static_video_is_zero():
    video = np.broadcast_to(
        np.random.default_rng(9).random((1, 16, 16, 3)), (4, 16, 16, 3)
    ).copy()
    viz = motion_flow_viz(video)
    assert viz.frames.shape == (3, 16, 16, 3)
    assert viz.aggregate.shape == (16, 16, 3)
    assert viz.raw.max() == 0.0
    # Zero motion colorizes to pure blue everywhere.
    assert np.allclose(viz.aggregate[..., 2], 1.0)
    assert np.allclose(viz.aggregate[..., 0], 0.0)


def test_flow_zero_outside_enforced_mask():
    from handvid.pipeline import enforce_mask

    rng = np.random.default_rng(10)
    context = rng.random((8, 8, 3)).astype(np.float32)
    gen = rng.random((4, 8, 8, 3)).astype(np.float32)
    mask = _ma(8, 8)
    out = enforce_mask(gen, context, mask).numpy()
    viz = motion_flow_viz(out, blur_sigma=0.0)
    outside = mask.frame(0) == 0
    assert np.abs(viz.raw[:, outside]).max() == 0.0


def test_flow_peak_at_moving_region():
    video = np.zeros((3, 16, 16, 3))
    video[1, 5, 5] = 1.0
    viz = motion_flow_viz(video, blur_sigma=0.0)
    assert viz.raw[0, 5, 5] == viz.raw.max() > 0
    assert viz.raw[0, 0, 0] == 0.0


def test_flow_needs_two_frames():
    with pytest.raises(ValueError):
        motion_flow_viz(np.zeros((1, 8, 8, 3)))


# ---------------------------------------------------------------------------
# reports


def _sample_eval(i, ma_empty=False):
    return SampleEval(
        sample_id=f"s{i}",
        hs_err=0.01 * (i + 1),
        detected_rate=0.9,
        mask_iou=0.5 + 0.1 * i,
        consistency=0.8,
        mse_full=0.02,
        psnr_full=17.0,
        mse_ma=None if ma_empty else 0.04,
        psnr_ma=None if ma_empty else 14.0,
        ma_empty=ma_empty,
    )


def test_aggregate_means_and_flags():
    report = aggregate_report(
        [_sample_eval(0), _sample_eval(1), _sample_eval(2, ma_empty=True)],
        "cfghash", {"stage2": "abc"},
    )
    assert abs(report.hs_err - 0.02) < 1e-12
    assert abs(report.mask_iou - 0.6) < 1e-12
    assert abs(report.mse_ma - 0.04) < 1e-12  # flagged sample excluded
    assert report.flagged == ["s2"]
    assert report.fid is None and report.fvd is None and report.clip_score is None


def test_report_serialization_deterministic():
    evals = [_sample_eval(0), _sample_eval(1)]
    a = aggregate_report(evals, "h", {"stage2": "x"})
    b = aggregate_report(
        [_sample_eval(0), _sample_eval(1)], "h", {"stage2": "x"}
    )
    a.generated_at = "2020-01-01T00:00:00"
    b.generated_at = "2030-12-31T23:59:59"
    assert serialize_report(a) == serialize_report(b)
    assert serialize_report(a, include_timestamp=True) != serialize_report(
        b, include_timestamp=True
    )


def test_report_roundtrip(tmp_path):
    report = aggregate_report([_sample_eval(0)], "h", {"codec": "y"})
    report.generated_at = "2020-05-05T05:05:05"
    path = tmp_path / "report.json"
    save_report(report, path)
    loaded = load_report(path)
    assert loaded.generated_at == report.generated_at
    assert serialize_report(loaded) == serialize_report(report)
    assert loaded.samples[0].sample_id == "s0"


def test_evaluate_generation_perfect_copy(small_dataset):
    from handvid.pipeline import InferResult

    sample = small_dataset[0]
    video = np.asarray(sample.video)[1:]
    union = sample.union_mask()
    vals = np.broadcast_to(
        union.frame(0), (video.shape[0],) + union.spatial_shape
    ).copy()
    mask = MaskVideo(vals, binary=True, kind="generated")
    result = InferResult(
        video=video, mask=mask, raw_video=video, prompt=sample.prompt, seed=0
    )
    ev = evaluate_generation(result, sample, None, detector=None)
    assert ev.hs_err is None
    assert ev.mask_iou == 1.0
    assert ev.mse_full == 0.0
    assert ev.psnr_full == PSNR_EXACT_SENTINEL
    assert ev.exact_full and ev.exact_ma
    assert not ev.ma_empty
