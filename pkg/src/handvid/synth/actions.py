"""Action templates: canonical hand geometry and per-frame trajectories.

Poses live in a hand-local frame (pixel units, wrist at the origin,
fingers pointing up, thumb to the left for a right hand). An action is a
start/end pose pair blended linearly over the clip plus a per-frame
translation of the whole hand. Translation steps are whole pixels so that
rounding to the ground-truth integer grid commutes with the motion.
"""

from dataclasses import dataclass

import numpy as np

from handvid.hand_pose import FINGER_CHAINS, INDEX_TIP, THUMB_TIP

CANONICAL_POSE = np.array(
    [
        (0.0, 0.0),
        (-7.0, -3.0), (-11.0, -7.0), (-14.0, -11.0), (-16.0, -15.0),
        (-6.0, -14.0), (-7.0, -20.0), (-7.5, -24.0), (-8.0, -28.0),
        (-2.0, -15.0), (-2.0, -22.0), (-2.0, -27.0), (-2.0, -31.0),
        (2.0, -14.5), (3.0, -21.0), (3.5, -25.5), (4.0, -29.0),
        (6.0, -13.0), (7.5, -18.0), (8.5, -21.5), (9.0, -25.0),
    ],
    dtype=np.float64,
)

PINCH_POSE = CANONICAL_POSE.copy()
PINCH_POSE[3] = (-12.5, -13.5)   # thumb IP
PINCH_POSE[4] = (-11.5, -18.5)   # thumb tip
PINCH_POSE[6] = (-7.5, -19.5)    # index PIP
PINCH_POSE[7] = (-9.0, -21.0)    # index DIP
PINCH_POSE[8] = (-11.0, -20.5)   # index tip

_PALM_REF = np.array([-2.0, -13.0])
GRAB_POSE = CANONICAL_POSE.copy()
for _chain in FINGER_CHAINS[1:]:
    _dip, _tip = _chain[3], _chain[4]
    GRAB_POSE[_dip] = CANONICAL_POSE[_dip] + 0.45 * (_PALM_REF - CANONICAL_POSE[_dip])
    GRAB_POSE[_tip] = CANONICAL_POSE[_tip] + 0.70 * (_PALM_REF - CANONICAL_POSE[_tip])
GRAB_POSE[3] = (-9.0, -10.0)
GRAB_POSE[4] = (-5.0, -12.0)

TRANSLATION_SPEED = 2.0  # px per frame, whole pixels
WAVE_AMPLITUDE = 5.0
WAVE_PERIOD = 8.0


@dataclass(frozen=True)
class ActionTemplate:
    """One scripted hand action with its fixed prompt string."""

    action_id: str
    prompt: str
    pose_start: np.ndarray
    pose_end: np.ndarray
    direction: tuple  # unit translation direction, or (0, 0)
    oscillate: bool = False


ACTIONS = {
    t.action_id: t
    for t in (
        ActionTemplate(
            "static", "hold the hand still above the desk",
            CANONICAL_POSE, CANONICAL_POSE, (0, 0),
        ),
        ActionTemplate(
            "move-left", "move the hand to the left",
            CANONICAL_POSE, CANONICAL_POSE, (-1, 0),
        ),
        ActionTemplate(
            "move-right", "move the hand to the right",
            CANONICAL_POSE, CANONICAL_POSE, (1, 0),
        ),
        ActionTemplate(
            "lift", "lift the hand upward",
            CANONICAL_POSE, CANONICAL_POSE, (0, -1),
        ),
        ActionTemplate(
            "wave", "wave the hand from side to side",
            CANONICAL_POSE, CANONICAL_POSE, (1, 0), oscillate=True,
        ),
        ActionTemplate(
            "pinch", "pinch the thumb and index finger together",
            CANONICAL_POSE, PINCH_POSE, (0, 0),
        ),
        ActionTemplate(
            "grab", "close the hand into a grab",
            CANONICAL_POSE, GRAB_POSE, (0, 0),
        ),
    )
}

PROMPT_TO_ACTION = {t.prompt: t.action_id for t in ACTIONS.values()}


def prompt_for(action_id):
    if action_id not in ACTIONS:
        raise ValueError(f"unknown action {action_id!r}")
    return ACTIONS[action_id].prompt


def action_trajectory(
    action_id,
    frames,
    rng,
    scale=1.0,
    mirror=False,
    velocity_cap=8.0,
):
    """Per-frame joint positions for one hand, shape (frames, 21, 2).

    Deterministic in the generator state: per-joint radial jitter, a small
    whole-hand rotation and the wave phase are drawn once per call. The
    translation component is never mirrored, so a mirrored hand still
    moves in the action's direction. Raises if any joint moves more than
    `velocity_cap` pixels between consecutive frames.
    """
    if frames < 2:
        raise ValueError("a trajectory needs at least 2 frames")
    if action_id not in ACTIONS:
        raise ValueError(f"unknown action {action_id!r}")
    tpl = ACTIONS[action_id]

    jitter = rng.uniform(0.96, 1.04, size=(21, 1))
    theta = rng.uniform(-0.2, 0.2)
    phase = rng.uniform(0.0, 1.0)
    rot = np.array(
        [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
    )

    start = tpl.pose_start * jitter * scale
    end = tpl.pose_end * jitter * scale
    poses = np.empty((frames, 21, 2), dtype=np.float64)
    for l in range(frames):
        c = l / (frames - 1)
        pose = (1.0 - c) * start + c * end
        pose = pose @ rot.T
        if mirror:
            pose[:, 0] *= -1.0
        if tpl.oscillate:
            shift = WAVE_AMPLITUDE * np.sin(2.0 * np.pi * (l / WAVE_PERIOD + phase))
            trans = np.array([tpl.direction[0] * shift, tpl.direction[1] * shift])
        else:
            trans = TRANSLATION_SPEED * l * np.array(tpl.direction, dtype=np.float64)
        poses[l] = pose + trans

    steps = np.linalg.norm(np.diff(poses, axis=0), axis=-1)
    if steps.size and steps.max() > velocity_cap:
        raise ValueError(
            f"action {action_id!r} exceeds velocity cap: "
            f"{steps.max():.2f} > {velocity_cap:.2f} px/frame"
        )
    return poses


def tip_distance(poses):
    """Thumb-tip to index-tip distance per frame."""
    d = poses[:, THUMB_TIP] - poses[:, INDEX_TIP]
    return np.linalg.norm(d, axis=-1)
