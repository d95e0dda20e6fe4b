"""Deterministic synthetic scene generation with exact ground truth.

Every sample is a pure function of its SceneSpec: a static cluttered
background, one or two articulated hands following a scripted action, per
frame convex-hull masks over the visible joints, and integer-pixel joint
positions stored in normalized form. Pixels outside the union of the
frame masks are bitwise identical across frames.
"""

from dataclasses import dataclass

import numpy as np

from handvid import CODEC_DOWNSAMPLE
from handvid.hand_pose import DEFAULT_J, JOINTS_PER_HAND, KeypointSequence
from handvid.motion_area import MaskVideo, masks_from_keypoints
from handvid.synth.actions import ACTIONS, action_trajectory, prompt_for
from handvid.synth.render import (
    draw_hands,
    hand_palette,
    make_background,
    quantize_video,
)


@dataclass
class SceneSpec:
    """Everything that determines one synthetic sample."""

    rng_seed: int = 0
    frames: int = 16
    height: int = 64
    width: int = 64
    action_id: str = "move-left"
    n_hands: int = 1
    clutter_level: int = 5

    def validate(self):
        if self.frames < 2:
            raise ValueError(f"frames must be >= 2, got {self.frames}")
        if self.height < 32 or self.width < 32:
            raise ValueError(
                f"frames must be at least 32x32, got {self.height}x{self.width}"
            )
        if self.height % CODEC_DOWNSAMPLE or self.width % CODEC_DOWNSAMPLE:
            raise ValueError(
                f"frame size must divide the codec factor {CODEC_DOWNSAMPLE}"
            )
        if self.n_hands not in (1, 2):
            raise ValueError(f"n_hands must be 1 or 2, got {self.n_hands}")
        if self.action_id not in ACTIONS:
            raise ValueError(f"unknown action {self.action_id!r}")
        if self.clutter_level < 0:
            raise ValueError("clutter_level must be >= 0")
        return self


@dataclass
class SynthSample:
    """One generated clip; the first frame is the visual context image."""

    video: np.ndarray  # (frames, H, W, 3) float32 on the uint8 grid
    prompt: str
    gt_keypoints: KeypointSequence
    gt_frame_masks: MaskVideo
    action_id: str
    spec: SceneSpec

    @property
    def frames(self):
        return self.video.shape[0]

    def union_mask(self):
        from handvid.motion_area import union_over_frames

        return union_over_frames(self.gt_frame_masks)


def _place_center(traj, lo, hi, extent_lo, extent_hi, rng):
    """Pick a center coordinate keeping the trajectory inside [lo, hi]."""
    feas_lo = lo - extent_lo
    feas_hi = hi - extent_hi
    if feas_hi < feas_lo:
        return 0.5 * (feas_lo + feas_hi)
    return rng.uniform(feas_lo, feas_hi)


def generate_sample(spec: SceneSpec) -> SynthSample:
    """Render one clip with exact keypoint, mask and action ground truth."""
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    h, w = spec.height, spec.width

    background = make_background(h, w, spec.clutter_level, rng)
    colors = hand_palette(rng, spec.n_hands)

    base_scale = 0.85 * min(h, w) / 64.0
    margin = 2.0
    trajectories = []
    scales = []
    for hand in range(spec.n_hands):
        scale = base_scale * rng.uniform(0.82, 1.0)
        traj = action_trajectory(
            spec.action_id, spec.frames, rng, scale=scale, mirror=hand == 1
        )
        if spec.n_hands == 2:
            # Side-by-side placement: right hand right half, mirrored left.
            xlo, xhi = (w / 2, w - 1 - margin) if hand == 0 else (margin, w / 2)
        else:
            xlo, xhi = margin, w - 1 - margin
        cx = _place_center(
            traj[..., 0], xlo, xhi, traj[..., 0].min(), traj[..., 0].max(), rng
        )
        cy = _place_center(
            traj[..., 1], margin, h - 1 - margin,
            traj[..., 1].min(), traj[..., 1].max(), rng,
        )
        trajectories.append(traj + np.array([cx, cy]))
        scales.append(scale)

    # Ground truth lives on the integer pixel grid.
    joints_px = np.zeros((spec.frames, DEFAULT_J, 2), dtype=np.int64)
    visibility = np.zeros((spec.frames, DEFAULT_J), dtype=np.float64)
    for hand, traj in enumerate(trajectories):
        px = np.rint(traj).astype(np.int64)
        inside = (
            (px[..., 0] >= 0)
            & (px[..., 0] <= w - 1)
            & (px[..., 1] >= 0)
            & (px[..., 1] <= h - 1)
        )
        sl = slice(hand * JOINTS_PER_HAND, (hand + 1) * JOINTS_PER_HAND)
        joints_px[:, sl] = np.where(inside[..., None], px, 0)
        visibility[:, sl] = inside.astype(np.float64)

    per_frame, _ = masks_from_keypoints(
        joints_px.astype(np.float64), visibility, h, w
    )

    active = spec.n_hands * JOINTS_PER_HAND
    frames_out = np.empty((spec.frames, h, w, 3), dtype=np.float64)
    for l in range(spec.frames):
        frame = background.copy()
        draw_hands(
            frame,
            joints_px[l, :active].reshape(spec.n_hands, JOINTS_PER_HAND, 2),
            visibility[l, :active].reshape(spec.n_hands, JOINTS_PER_HAND),
            per_frame.numpy()[l],
            colors,
            radius_scale=float(np.mean(scales)),
        )
        frames_out[l] = frame

    video = quantize_video(frames_out)
    keypoints = KeypointSequence.from_pixels(joints_px, visibility, h, w)
    return SynthSample(
        video=video,
        prompt=prompt_for(spec.action_id),
        gt_keypoints=keypoints,
        gt_frame_masks=per_frame,
        action_id=spec.action_id,
        spec=spec,
    )


def dataset_specs(
    n,
    seed=0,
    frames=16,
    height=64,
    width=64,
    actions=None,
    hands_cycle=(1, 2),
    clutter_level=5,
):
    """Deterministic list of specs cycling through actions and hand counts."""
    actions = list(actions) if actions else list(ACTIONS)
    specs = []
    for i in range(n):
        sub_seed = int(np.random.SeedSequence((seed, i)).generate_state(1)[0])
        specs.append(
            SceneSpec(
                rng_seed=sub_seed,
                frames=frames,
                height=height,
                width=width,
                action_id=actions[i % len(actions)],
                n_hands=hands_cycle[i % len(hands_cycle)],
                clutter_level=clutter_level,
            )
        )
    return specs


def generate_dataset(n, **kwargs):
    return [generate_sample(s) for s in dataset_specs(n, **kwargs)]
