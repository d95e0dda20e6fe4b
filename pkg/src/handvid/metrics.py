"""Evaluation metrics and reports for generated hand videos.

Keypoint agreement (hs_err), motion-area overlap (mask_iou), temporal
feature consistency, and pixel metrics scoped either to the full frame
or to the ground-truth motion area. Reports serialize canonically so two
identical runs produce byte-identical payloads; the timestamp is kept in
a separate field outside the canonical bytes.
"""

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
from scipy.ndimage import gaussian_filter

from handvid.hand_pose import DEFAULT_J, KeypointSequence
from handvid.losses import miou_loss
from handvid.motion_area import MaskVideo

PSNR_EXACT_SENTINEL = 99.0


# ---------------------------------------------------------------------------
# Keypoint agreement


def hs_err(gen: KeypointSequence, ref: KeypointSequence, j_norm=DEFAULT_J):
    """Mean per-frame keypoint distance between generated and reference.

    Per frame: (1/J) * sum of Euclidean distances over joints visible in
    both sequences; averaged over frames. J is the fixed joint-slot count,
    so missing detections lower the detected rate rather than shrinking
    the denominator.
    """
    gc, gv = gen.numpy()
    rc, rv = ref.numpy()
    if gc.shape != rc.shape:
        raise ValueError(f"sequence shapes differ: {gc.shape} vs {rc.shape}")
    both = (gv > 0) & (rv > 0)
    d = np.linalg.norm(gc - rc, axis=-1) * both
    return float((d.sum(axis=1) / j_norm).mean())


def detected_rate(gen: KeypointSequence, ref: KeypointSequence):
    """Fraction of reference-visible joints the detector also marked visible."""
    _, gv = gen.numpy()
    _, rv = ref.numpy()
    if gv.shape != rv.shape:
        raise ValueError(f"visibility shapes differ: {gv.shape} vs {rv.shape}")
    n_ref = rv.sum()
    if n_ref == 0:
        return 0.0
    return float(((gv > 0) & (rv > 0)).sum() / n_ref)


# ---------------------------------------------------------------------------
# Mask overlap


def mask_iou(gen_mask: MaskVideo, ref_mask: MaskVideo):
    """Mean per-frame intersection-over-union, 1 - the overlap loss.

    A single-frame reference (a union mask) broadcasts over the generated
    frames.
    """
    ref_vals = ref_mask.numpy()
    gen_frames = gen_mask.frames
    if ref_vals.shape[0] == 1 and gen_frames > 1:
        ref_vals = np.broadcast_to(ref_vals, (gen_frames,) + ref_vals.shape[1:])
        ref_mask = MaskVideo(ref_vals.copy(), binary=ref_mask.binary, kind="per_frame")
    loss = miou_loss(gen_mask, ref_mask)
    return 1.0 - float(loss)


# ---------------------------------------------------------------------------
# Temporal consistency


def frame_features(video, downsample=4):
    """Zero-mean area-averaged pixels, one flat feature vector per frame."""
    v = np.asarray(
        video.detach().cpu().numpy() if torch.is_tensor(video) else video,
        dtype=np.float64,
    )
    if v.ndim != 4 or v.shape[-1] != 3:
        raise ValueError("video must have shape (frames, H, W, 3)")
    f, h, w, c = v.shape
    if h % downsample or w % downsample:
        raise ValueError("frame size not divisible by feature downsampling")
    pooled = v.reshape(f, h // downsample, downsample, w // downsample, downsample, c)
    pooled = pooled.mean(axis=(2, 4))
    flat = pooled.reshape(f, -1)
    return flat - flat.mean(axis=1, keepdims=True)


def detector_frame_features(video, detector):
    """Pooled detector backbone activations per frame (alternative features)."""
    from handvid.hand_pose import frame_windows

    with torch.no_grad():
        feats = detector.backbone_features(frame_windows(video, detector.window))
    return feats.cpu().numpy().astype(np.float64)


def _cosine(a, b):
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def consistency(video=None, features=None, detector=None):
    """Mean cosine similarity between consecutive frame features, in [-1, 1].

    Identical frames score 1.0. Features default to zero-mean downsampled
    pixels; pass `detector` to use its backbone instead, or `features`
    directly.
    """
    if features is None:
        if video is None:
            raise ValueError("need a video or a feature matrix")
        if detector is not None:
            features = detector_frame_features(video, detector)
        else:
            features = frame_features(video)
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise ValueError("need at least two frames of features")
    sims = [_cosine(feats[i], feats[i + 1]) for i in range(feats.shape[0] - 1)]
    value = float(np.mean(sims))
    if not -1.0 - 1e-12 <= value <= 1.0 + 1e-12:
        raise AssertionError(f"cosine mean out of range: {value}")
    return min(1.0, max(-1.0, value))


# ---------------------------------------------------------------------------
# Scoped pixel metrics


@dataclass
class PixelMetrics:
    mse_full: float
    psnr_full: float
    mse_ma: float
    psnr_ma: float
    exact_full: bool
    exact_ma: bool


def _psnr_from_mse(mse):
    if mse == 0.0:
        return PSNR_EXACT_SENTINEL, True
    return float(-10.0 * np.log10(mse)), False


def scoped_pixel_metrics(gen, ref, ma_mask: MaskVideo) -> PixelMetrics:
    """MSE/PSNR over the full frame and restricted to the motion area.

    The motion-area scope uses the ground-truth union mask; an empty mask
    is rejected so callers can flag the sample. Exact agreement reports
    the PSNR sentinel (99.0) plus an exactness flag instead of infinity.
    """
    g = np.asarray(
        gen.detach().cpu().numpy() if torch.is_tensor(gen) else gen, dtype=np.float64
    )
    r = np.asarray(
        ref.detach().cpu().numpy() if torch.is_tensor(ref) else ref, dtype=np.float64
    )
    if g.shape != r.shape:
        raise ValueError(f"shape mismatch: {g.shape} vs {r.shape}")
    if g.ndim != 4 or g.shape[-1] != 3:
        raise ValueError("videos must have shape (frames, H, W, 3)")
    m = ma_mask.numpy()
    if m.shape[0] == 1 and g.shape[0] > 1:
        m = np.broadcast_to(m, (g.shape[0],) + m.shape[1:])
    if m.shape != g.shape[:3]:
        raise ValueError(
            f"mask shape {m.shape} does not match video {g.shape[:3]}"
        )
    if m.sum() == 0:
        raise ValueError("empty motion area")

    sq = (g - r) ** 2
    mse_full = float(sq.mean())
    psnr_full, exact_full = _psnr_from_mse(mse_full)
    sel = m > 0
    mse_ma = float(sq[sel].mean())
    psnr_ma, exact_ma = _psnr_from_mse(mse_ma)
    return PixelMetrics(mse_full, psnr_full, mse_ma, psnr_ma, exact_full, exact_ma)


# ---------------------------------------------------------------------------
# Motion flow visualization


def _colorize(v):
    """Scalar [0,1] -> RGB ramp (blue -> green -> red)."""
    v = np.clip(v, 0.0, 1.0)
    r = v
    g = 4.0 * v * (1.0 - v)
    b = 1.0 - v
    return np.stack([r, g, b], axis=-1).astype(np.float32)


@dataclass
class FlowViz:
    frames: np.ndarray      # (F-1, H, W, 3) colorized per-pair motion
    aggregate: np.ndarray   # (H, W, 3) colorized max over pairs
    raw: np.ndarray         # (F-1, H, W) blurred absolute-difference magnitudes


def motion_flow_viz(video, blur_sigma=1.0) -> FlowViz:
    """Visualize per-pair frame differences: abs diff, blur, colorize.

    The aggregate image is the per-pixel max over all consecutive pairs.
    After mask enforcement, pixels outside the motion area are identical
    across frames, so their flow is exactly zero.
    """
    v = np.asarray(
        video.detach().cpu().numpy() if torch.is_tensor(video) else video,
        dtype=np.float64,
    )
    if v.ndim != 4 or v.shape[-1] != 3 or v.shape[0] < 2:
        raise ValueError("need a (frames, H, W, 3) video with at least two frames")
    diffs = np.abs(np.diff(v, axis=0)).mean(axis=-1)
    if blur_sigma > 0:
        diffs = np.stack([gaussian_filter(d, blur_sigma) for d in diffs])
    peak = diffs.max()
    norm = diffs / peak if peak > 0 else diffs
    frames = _colorize(norm)
    aggregate = _colorize(norm.max(axis=0))
    return FlowViz(frames=frames, aggregate=aggregate, raw=diffs.astype(np.float32))


# ---------------------------------------------------------------------------
# Reports


@dataclass
class SampleEval:
    sample_id: str
    hs_err: Optional[float]
    detected_rate: float
    mask_iou: float
    consistency: float
    mse_full: float
    psnr_full: float
    mse_ma: Optional[float]
    psnr_ma: Optional[float]
    exact_full: bool = False
    exact_ma: bool = False
    ma_empty: bool = False


@dataclass
class EvalReport:
    config_hash: str
    checkpoint_ids: dict
    samples: list
    hs_err: float = float("nan")
    detected_rate: float = float("nan")
    mask_iou: float = float("nan")
    consistency: float = float("nan")
    mse_full: float = float("nan")
    psnr_full: float = float("nan")
    mse_ma: float = float("nan")
    psnr_ma: float = float("nan")
    flagged: list = field(default_factory=list)
    # Reserved for distribution-level metrics; not computed by this suite.
    fid: Optional[float] = None
    fvd: Optional[float] = None
    clip_score: Optional[float] = None
    generated_at: str = ""


def _mean_or_nan(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else float("nan")


def aggregate_report(sample_evals, config_hash, checkpoint_ids) -> EvalReport:
    """Mean-aggregate per-sample metrics; samples with an empty motion area
    are excluded from motion-area scoped aggregates and listed as flagged."""
    evals = list(sample_evals)
    report = EvalReport(
        config_hash=config_hash,
        checkpoint_ids=dict(sorted(checkpoint_ids.items())),
        samples=evals,
    )
    report.hs_err = _mean_or_nan([e.hs_err for e in evals])
    report.detected_rate = _mean_or_nan([e.detected_rate for e in evals])
    report.mask_iou = _mean_or_nan([e.mask_iou for e in evals])
    report.consistency = _mean_or_nan([e.consistency for e in evals])
    report.mse_full = _mean_or_nan([e.mse_full for e in evals])
    report.psnr_full = _mean_or_nan([e.psnr_full for e in evals])
    report.mse_ma = _mean_or_nan([e.mse_ma for e in evals])
    report.psnr_ma = _mean_or_nan([e.psnr_ma for e in evals])
    report.flagged = [e.sample_id for e in evals if e.ma_empty]
    return report


def serialize_report(report: EvalReport, include_timestamp=False) -> str:
    """Canonical JSON; identical runs serialize byte-identically.

    The timestamp lives outside the canonical payload unless explicitly
    requested.
    """
    payload = asdict(report)
    ts = payload.pop("generated_at")
    if include_timestamp:
        payload["generated_at"] = ts
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=True)


def save_report(report: EvalReport, path, include_timestamp=True):
    with open(path, "w") as fh:
        fh.write(serialize_report(report, include_timestamp=include_timestamp))
        fh.write("\n")


def load_report(path) -> EvalReport:
    with open(path) as fh:
        payload = json.load(fh)
    samples = [SampleEval(**s) for s in payload.pop("samples")]
    ts = payload.pop("generated_at", "")
    return EvalReport(samples=samples, generated_at=ts, **payload)


def evaluate_generation(
    result, sample, config, detector=None, frames_offset=1
) -> SampleEval:
    """Score one generated clip against its source sample.

    The reference excludes the context frame (`frames_offset` leading
    frames of the ground truth). Keypoint metrics need the frozen
    detector; they are skipped (None) without one.
    """
    from handvid.hand_pose import detect as run_detect

    ref_video = np.asarray(sample.video)[frames_offset:]
    gen_video = np.asarray(result.video)
    # The sample's union mask spans all L+1 frames; keep one frame and let
    # the metrics broadcast it over the L generated frames.
    gt_union = MaskVideo(
        sample.union_mask().numpy()[:1], binary=True, kind="union"
    )

    rec_id = getattr(sample, "sample_id", None) or getattr(
        getattr(sample, "spec", None), "rng_seed", "sample"
    )
    hs = None
    rate = 0.0
    if detector is not None:
        gen_kp = run_detect(torch.as_tensor(gen_video), detector)
        c, v = sample.gt_keypoints.numpy()
        gt_kp = KeypointSequence(c[frames_offset:], v[frames_offset:])
        hs = hs_err(gen_kp, gt_kp)
        rate = detected_rate(gen_kp, gt_kp)

    iou = mask_iou(result.mask, gt_union)
    cons = consistency(gen_video)
    if gt_union.numpy().sum() == 0:
        # Nothing moved in the ground truth: motion-area scoped metrics are
        # undefined, so report full-frame numbers and flag the sample.
        sq = (gen_video.astype(np.float64) - ref_video.astype(np.float64)) ** 2
        mse_full = float(sq.mean())
        psnr_full, exact_full = _psnr_from_mse(mse_full)
        return SampleEval(
            sample_id=str(rec_id),
            hs_err=hs,
            detected_rate=rate,
            mask_iou=iou,
            consistency=cons,
            mse_full=mse_full,
            psnr_full=psnr_full,
            mse_ma=None,
            psnr_ma=None,
            exact_full=exact_full,
            ma_empty=True,
        )
    pix = scoped_pixel_metrics(gen_video, ref_video, gt_union)
    return SampleEval(
        sample_id=str(rec_id),
        hs_err=hs,
        detected_rate=rate,
        mask_iou=iou,
        consistency=cons,
        mse_full=pix.mse_full,
        psnr_full=pix.psnr_full,
        mse_ma=pix.mse_ma,
        psnr_ma=pix.psnr_ma,
        exact_full=pix.exact_full,
        exact_ma=pix.exact_ma,
    )
