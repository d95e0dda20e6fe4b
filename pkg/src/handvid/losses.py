"""Training losses: noise prediction, soft mask mIoU, hand refinement.

Stage 1 optimizes noise + alpha * miou; stage 2 optimizes noise +
eta * hrl. The mIoU term compares the soft decoded mask video against the
binary ground-truth masks frame by frame; the hand refinement term is a
keypoint-space MSE restricted to joints visible in both sequences, with
the joint count J kept as a fixed normalizer.
"""

from dataclasses import dataclass

import numpy as np
import torch

from handvid.hand_pose import KeypointSequence
from handvid.motion_area import MaskVideo


@dataclass
class LossWeights:
    alpha: float = 0.1  # stage-1 mIoU weight
    eta: float = 0.1    # stage-2 hand refinement weight

    def __post_init__(self):
        if self.alpha < 0 or self.eta < 0:
            raise ValueError("loss weights must be nonnegative")


def _as_like(arr, ref):
    if torch.is_tensor(ref) and not torch.is_tensor(arr):
        return torch.as_tensor(np.asarray(arr), dtype=ref.dtype, device=ref.device)
    return arr


def noise_loss(eps, eps_hat):
    """Mean squared error between true and predicted noise, all elements."""
    if tuple(eps.shape) != tuple(eps_hat.shape):
        raise ValueError(
            f"shape mismatch: {tuple(eps.shape)} vs {tuple(eps_hat.shape)}"
        )
    diff = eps - _as_like(eps_hat, eps)
    return (diff * diff).mean()


def miou_loss(gen: MaskVideo, train: MaskVideo):
    """1 minus the mean per-frame soft intersection-over-union.

    gen may be soft (values in [0,1], torch tensor keeps gradients); train
    must be binary. Frames where both masks are empty contribute ratio 1,
    i.e. zero loss.
    """
    if not train.binary:
        raise ValueError("train mask must be binary")
    g = gen.values
    t = _as_like(train.values, g)
    if tuple(g.shape) != tuple(t.shape):
        raise ValueError(f"shape mismatch: {tuple(g.shape)} vs {tuple(t.shape)}")
    frames = g.shape[0]
    gf = g.reshape(frames, -1)
    tf = t.reshape(frames, -1)
    inter = (gf * tf).sum(axis=-1)
    union = (gf + tf - gf * tf).sum(axis=-1)
    if torch.is_tensor(gf):
        ones = torch.ones_like(inter)
        ratio = torch.where(union > 0, inter / union.clamp_min(1e-30), ones)
        return 1.0 - ratio.mean()
    ratio = np.where(union > 0, inter / np.maximum(union, 1e-30), 1.0)
    return 1.0 - ratio.mean()


def hand_refinement_loss(gen_seq: KeypointSequence, train_seq: KeypointSequence):
    """Keypoint MSE over joints visible in both sequences.

    (1/L) sum_l (1/J) ||P_l_gen - P_l_train||_F^2, where only joints
    visible in both frames enter the norm; J stays the fixed normalizer,
    so one-sided detections neither pull toward (0,0) nor rescale the
    loss. Differentiable through gen_seq coordinates.
    """
    if gen_seq.frames != train_seq.frames:
        raise ValueError(
            f"frame count mismatch: {gen_seq.frames} vs {train_seq.frames}"
        )
    if gen_seq.j != train_seq.j:
        raise ValueError(f"joint count mismatch: {gen_seq.j} vs {train_seq.j}")
    gc = gen_seq.coords
    gv = _as_like(gen_seq.visibility, gc)
    tc = _as_like(train_seq.coords, gc)
    tv = _as_like(train_seq.visibility, gc)
    active = gv * tv
    if torch.is_tensor(gc):
        active = active.unsqueeze(-1)
    else:
        active = np.asarray(active)[..., None]
    diff = (gc - tc) * active
    total = (diff * diff).sum()
    return total / (gen_seq.frames * gen_seq.j)


def stage1_loss(noise, miou, w: LossWeights):
    """Stage-1 composite: noise prediction plus weighted mask mIoU."""
    return noise + w.alpha * miou


def stage2_loss(noise, hrl, w: LossWeights):
    """Stage-2 composite: noise prediction plus weighted hand refinement."""
    return noise + w.eta * hrl


def soften_decoded_mask(decoded_video) -> MaskVideo:
    """Map a decoded 3-channel mask video to a soft single-channel mask.

    Averages the color channels and clamps to [0,1]; keeps the autograd
    graph so mIoU gradients reach the stage-1 predictor.
    """
    if torch.is_tensor(decoded_video):
        soft = decoded_video.mean(dim=-1).clamp(0.0, 1.0)
    else:
        soft = np.clip(np.asarray(decoded_video).mean(axis=-1), 0.0, 1.0)
    return MaskVideo(soft, binary=False, kind="generated")
