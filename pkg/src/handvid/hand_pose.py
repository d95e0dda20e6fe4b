"""Hand skeleton representation and the frozen differentiable keypoint detector.

The skeleton is a 21-joint-per-hand topology (wrist + four joints per
finger), two hands by default, joints stored hand-major so joint index
j = hand * 21 + joint_within_hand. The detector is a small convolutional
regressor over a 3-frame temporal window; once trained it is frozen and
reused both for annotation and for keypoint-space losses on generated
video.
"""

import hashlib
import io
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

JOINTS_PER_HAND = 21
DEFAULT_HANDS = 2
DEFAULT_J = JOINTS_PER_HAND * DEFAULT_HANDS
TOPOLOGY = "hand21"

# Wrist-rooted chains: thumb, index, middle, ring, pinky.
FINGER_CHAINS = (
    (0, 1, 2, 3, 4),
    (0, 5, 6, 7, 8),
    (0, 9, 10, 11, 12),
    (0, 13, 14, 15, 16),
    (0, 17, 18, 19, 20),
)
BONES = tuple(
    (chain[k], chain[k + 1]) for chain in FINGER_CHAINS for k in range(4)
)
THUMB_TIP = 4
INDEX_TIP = 8
FINGERTIPS = (4, 8, 12, 16, 20)

CHECKPOINT_FORMAT = 1


def quantize_coords(coords):
    """Canonical 6-decimal rounding used for stored normalized keypoints."""
    return np.round(np.asarray(coords, dtype=np.float64), 6)


@dataclass
class KeypointSequence:
    """Per-frame joint coordinates in [0,1] with {0,1} visibility flags.

    coords: (frames, J, 2) as (x, y); visibility: (frames, J). Invisible
    joints carry coordinates exactly (0, 0). Arrays may be NumPy or torch
    (detector outputs keep their autograd graph).
    """

    coords: "np.ndarray"
    visibility: "np.ndarray"

    def __post_init__(self):
        if getattr(self.coords, "ndim", None) != 3 or self.coords.shape[-1] != 2:
            raise ValueError("coords must have shape (frames, J, 2)")
        if tuple(self.visibility.shape) != tuple(self.coords.shape[:2]):
            raise ValueError("visibility must have shape (frames, J)")

    @property
    def frames(self):
        return self.coords.shape[0]

    @property
    def j(self):
        return self.coords.shape[1]

    def numpy(self):
        c, v = self.coords, self.visibility
        if not isinstance(c, np.ndarray):
            c = c.detach().cpu().numpy()
        if not isinstance(v, np.ndarray):
            v = v.detach().cpu().numpy()
        return c.astype(np.float64), v.astype(np.float64)

    def validate(self):
        c, v = self.numpy()
        if not np.isin(v, (0, 1)).all():
            raise ValueError("visibility must be 0 or 1")
        if c.min() < 0 or c.max() > 1:
            raise ValueError("coordinates must lie in [0,1]")
        hidden = v == 0
        if not (c[hidden] == 0).all():
            raise ValueError("invisible joints must have coords (0,0)")
        return self

    def to_pixels(self, h, w):
        """Integer pixel positions; invisible joints return (0,0) and flag 0."""
        c, v = self.numpy()
        px = np.rint(c * np.array([w - 1, h - 1], dtype=np.float64)).astype(np.int64)
        px[v == 0] = 0
        return px, v

    @staticmethod
    def from_pixels(coords_px, visibility, h, w):
        """Normalize integer pixel joints by frame size and quantize."""
        px = np.asarray(coords_px, dtype=np.float64)
        vis = np.asarray(visibility, dtype=np.float64)
        norm = quantize_coords(px / np.array([w - 1, h - 1], dtype=np.float64))
        norm[vis == 0] = 0.0
        return KeypointSequence(norm, vis).validate()


def zero_fill_missing(seq: KeypointSequence) -> KeypointSequence:
    """Force coordinates of invisible joints to exactly (0, 0)."""
    c, v = seq.coords, seq.visibility
    if isinstance(c, np.ndarray):
        out = c.copy()
        out[np.asarray(v) == 0] = 0.0
        return KeypointSequence(out, v)
    mask = (v > 0).to(c.dtype).unsqueeze(-1)
    return KeypointSequence(c * mask, v)


def _coord_grid(b, h, w, dtype, device):
    ys = torch.linspace(0.0, 1.0, h, dtype=dtype, device=device)
    xs = torch.linspace(0.0, 1.0, w, dtype=dtype, device=device)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy]).unsqueeze(0).expand(b, -1, -1, -1)


class _ConvBlock(nn.Module):
    """Conv block with coordinate channels appended to its input."""

    def __init__(self, c_in, c_out, stride=2, dilation=1):
        super().__init__()
        self.conv = nn.Conv2d(
            c_in + 2, c_out, 3, stride=stride, padding=dilation, dilation=dilation
        )
        self.norm = nn.GroupNorm(4, c_out)
        self.act = nn.SiLU()

    def forward(self, x):
        b, _, h, w = x.shape
        x = torch.cat([x, _coord_grid(b, h, w, x.dtype, x.device)], dim=1)
        return self.act(self.norm(self.conv(x)))


class DetectorModel(nn.Module):
    """Convolutional joint regressor over a 3-frame window.

    Four conv blocks (the last two unstrided) produce a coarse feature
    map, which a learned 2x upsampling refines before the heatmap and
    offset heads; neighboring finger joints sit a pixel or two apart, so
    head resolution is the accuracy bottleneck. Coordinates are read out
    per joint as the spatial soft-argmax of the heatmap plus a bounded
    per-cell offset, so they always land in [0,1]. Visibility is a logit
    per joint from globally pooled trunk features, thresholded at 0.5.
    """

    def __init__(self, j=DEFAULT_J, height=64, width=64, window=3, base=32):
        super().__init__()
        self.j = j
        self.height = height
        self.width = width
        self.window = window
        self.topology = TOPOLOGY
        self.trained = False
        self.frozen = False
        self.blocks = nn.Sequential(
            _ConvBlock(window * 3, base),
            _ConvBlock(base, base * 2),
            _ConvBlock(base * 2, base * 3, stride=1),
            _ConvBlock(base * 3, base * 3, stride=1),
        )
        self.up_head = nn.Sequential(
            nn.ConvTranspose2d(base * 3, base * 2, 4, stride=2, padding=1),
            nn.GroupNorm(4, base * 2),
            nn.SiLU(),
        )
        self.head_heat = nn.Conv2d(base * 2, j, 1)
        self.head_off = nn.Conv2d(base * 2, 2 * j, 1)
        self.head_vismap = nn.Conv2d(base * 2, j, 1)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head_vis = nn.Linear(base * 3, j)

    def _cell_centers(self, h, w, dtype, device):
        # Centers of the pixel patch each heatmap cell covers, normalized.
        sy = self.height / h
        sx = self.width / w
        ys = (torch.arange(h, dtype=dtype, device=device) * sy + (sy - 1) / 2) / (
            self.height - 1
        )
        xs = (torch.arange(w, dtype=dtype, device=device) * sx + (sx - 1) / 2) / (
            self.width - 1
        )
        return xs, ys

    def forward_full(self, windows):
        """Returns coords (B, J, 2), vis logits (B, J), heat logits (B, J, h, w)."""
        if windows.shape[-2:] != (self.height, self.width):
            raise ValueError(
                f"expected {self.height}x{self.width} frames, "
                f"got {tuple(windows.shape[-2:])}"
            )
        feats = self.blocks(windows)
        fine = self.up_head(feats)
        b, _, fh, fw = fine.shape
        heat = self.head_heat(fine)
        weights = torch.softmax(heat.view(b, self.j, fh * fw), dim=-1)
        weights = weights.view(b, self.j, fh, fw)
        xs, ys = self._cell_centers(fh, fw, fine.dtype, fine.device)
        # Per-cell tanh offsets (bounded to half a cell) recover precision
        # below the heatmap pitch.
        off = torch.tanh(self.head_off(fine)).view(b, self.j, 2, fh, fw)
        span_x = 0.5 * (self.width / fw) / (self.width - 1)
        span_y = 0.5 * (self.height / fh) / (self.height - 1)
        x = (weights * (xs[None, None, None, :] + off[:, :, 0] * span_x)).sum((-1, -2))
        y = (weights * (ys[None, None, :, None] + off[:, :, 1] * span_y)).sum((-1, -2))
        coords = torch.stack([x, y], dim=-1).clamp(0.0, 1.0)
        # Visibility: pooled global context plus per-joint local evidence;
        # an out-of-frame joint leaves no cell to fire. Logsumexp is a soft
        # max that trains every cell of the evidence map, not just the peak.
        local = torch.logsumexp(self.head_vismap(fine).flatten(2), dim=-1)
        vis_logits = self.head_vis(self.pool(feats).flatten(1)) + local
        return coords, vis_logits, heat

    def forward(self, windows):
        """windows: (B, window*3, H, W) -> coords (B, J, 2), vis logits (B, J)."""
        coords, vis_logits, _ = self.forward_full(windows)
        return coords, vis_logits

    def backbone_features(self, windows):
        """Pooled pre-head features, used by the frame-consistency metric."""
        feats = self.blocks(windows)
        return self.pool(feats).flatten(1)

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.frozen = True
        self.eval()
        return self


def _as_video_tensor(video):
    t = torch.as_tensor(np.asarray(video) if not torch.is_tensor(video) else video)
    if t.ndim != 4 or t.shape[-1] != 3:
        raise ValueError("video must have shape (frames, H, W, 3)")
    return t.to(torch.float32) if t.dtype == torch.uint8 else t


def frame_windows(video, window=3):
    """Stack each frame with its neighbors, replicating at the ends.

    Replication (rather than zero padding) keeps detection on a constant
    video independent of frame position. Returns (F, window*3, H, W).
    """
    t = _as_video_tensor(video)
    f = t.shape[0]
    half = window // 2
    idx = torch.arange(f).unsqueeze(1) + torch.arange(-half, half + 1)
    idx = idx.clamp(0, f - 1)
    stacked = t[idx]  # (F, window, H, W, 3)
    return stacked.permute(0, 1, 4, 2, 3).reshape(f, window * 3, *t.shape[1:3])


def detect(video, model: DetectorModel, vis_threshold=0.5) -> KeypointSequence:
    """Run the detector on every frame of a video.

    Differentiable with respect to the video pixels. Joints whose
    visibility probability falls below the threshold are zero-filled.
    """
    windows = frame_windows(video, model.window)
    if windows.shape[-2:] != (model.height, model.width):
        raise ValueError(
            f"detector expects {model.height}x{model.width} input, "
            f"got {tuple(windows.shape[-2:])}"
        )
    coords, vis_logits = model(windows)
    vis = (torch.sigmoid(vis_logits) > vis_threshold).to(coords.dtype)
    coords = coords * vis.unsqueeze(-1)
    return KeypointSequence(coords, vis)


def mean_joint_error(pred: KeypointSequence, gt: KeypointSequence):
    """Mean Euclidean distance over ground-truth-visible joints."""
    pc, _ = pred.numpy()
    gc, gv = gt.numpy()
    sel = gv > 0
    if not sel.any():
        return 0.0
    d = np.linalg.norm(pc[sel] - gc[sel], axis=-1)
    return float(d.mean())


@dataclass
class DetectorTrainConfig:
    epochs: int = 20
    lr: float = 3e-3
    batch_size: int = 32
    seed: int = 0
    val_fraction: float = 0.1
    blank_fraction: float = 0.08
    base_channels: int = 32
    augment: bool = True
    ema_decay: float = 0.0


def _detector_items(samples):
    """Flatten samples into (window, coords, visibility) training items."""
    items = []
    for s in samples:
        windows = frame_windows(s.video)
        coords, vis = s.gt_keypoints.numpy()
        for l in range(windows.shape[0]):
            items.append(
                (
                    windows[l],
                    torch.tensor(coords[l], dtype=torch.float32),
                    torch.tensor(vis[l], dtype=torch.float32),
                )
            )
    return items


def _blank_items(n, j, h, w, window, rng):
    """Hand-free frames (black or flat color) labeled all-invisible."""
    items = []
    for k in range(n):
        if k % 2 == 0:
            frame = torch.zeros(window * 3, h, w)
        else:
            color = torch.tensor(rng.uniform(0, 1, size=3), dtype=torch.float32)
            frame = color.repeat(window)[:, None, None].expand(window * 3, h, w).clone()
        items.append((frame, torch.zeros(j, 2), torch.zeros(j)))
    return items


def _augment_batch(windows, coords, vis, rng):
    """Per-item photometric jitter; labels untouched.

    Geometric augmentation is deliberately avoided: slot assignment of
    joints to hands follows scene conventions (left hand first, mirrored
    second hand) that image flips would contradict.
    """
    b = windows.shape[0]
    gain = torch.tensor(rng.uniform(0.85, 1.15, size=b), dtype=torch.float32)
    bias = torch.tensor(rng.uniform(-0.08, 0.08, size=b), dtype=torch.float32)
    windows = (windows * gain[:, None, None, None] + bias[:, None, None, None]).clamp(
        0.0, 1.0
    )
    return windows, coords


def train_detector(samples, config: DetectorTrainConfig = None, log=None):
    """Supervised keypoint regression; returns a frozen DetectorModel.

    `samples` is a sequence of synthetic samples (or a manifest path, which
    is loaded). Coordinate MSE is taken over visible joints only; the
    visibility head gets a binary cross-entropy term. With epochs == 0 the
    initialized model is returned unfrozen and flagged untrained.
    """
    if isinstance(samples, (str, bytes)) or hasattr(samples, "joinpath"):
        from handvid.synth.manifest import load_manifest

        samples = list(load_manifest(samples))
    samples = list(samples)
    if not samples:
        raise ValueError("detector training needs a nonempty dataset")
    config = config or DetectorTrainConfig()

    first = samples[0]
    f, h, w, _ = np.asarray(first.video).shape
    j = first.gt_keypoints.j
    torch.manual_seed(config.seed)
    model = DetectorModel(j=j, height=h, width=w, base=config.base_channels)
    if config.epochs == 0:
        model.trained = False
        return model

    rng = np.random.default_rng(config.seed)
    n_val = max(1, int(round(len(samples) * config.val_fraction)))
    order = rng.permutation(len(samples))
    val_samples = [samples[i] for i in order[:n_val]]
    train_samples = [samples[i] for i in order[n_val:]]

    items = _detector_items(train_samples)
    items += _blank_items(
        int(len(items) * config.blank_fraction), j, h, w, model.window, rng
    )
    windows = torch.stack([it[0] for it in items])
    coords_t = torch.stack([it[1] for it in items])
    vis_t = torch.stack([it[2] for it in items])

    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    lr_sched = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=config.epochs, eta_min=config.lr * 0.05
    )
    # Recall-biased visibility loss: a missed visible joint zero-fills its
    # coordinates and costs far more downstream than a spurious detection.
    bce = nn.BCEWithLogitsLoss(pos_weight=torch.tensor(5.0))
    ce = nn.CrossEntropyLoss()

    with torch.no_grad():
        _, _, heat0 = model.forward_full(windows[:1])
    fh, fw = heat0.shape[-2:]

    # Exponential moving average of the weights; the averaged model is the
    # one frozen at the end.
    ema = None
    if config.ema_decay > 0:
        ema = {k: v.detach().clone() for k, v in model.state_dict().items()}

    n = windows.shape[0]
    history = []
    for epoch in range(config.epochs):
        perm = torch.from_numpy(rng.permutation(n))
        total = 0.0
        for start in range(0, n, config.batch_size):
            sel = perm[start : start + config.batch_size]
            wb = windows[sel]
            cb = coords_t[sel]
            tv = vis_t[sel]
            if config.augment:
                wb, cb = _augment_batch(wb, cb, tv, rng)
            # Heatmap cell holding each visible joint, for the auxiliary term.
            cx = (cb[..., 0] * (w - 1) / (w / fw)).long().clamp(0, fw - 1)
            cy = (cb[..., 1] * (h - 1) / (h / fh)).long().clamp(0, fh - 1)
            cell_t = cy * fw + cx
            pred_c, pred_v, heat = model.forward_full(wb)
            mask = tv.unsqueeze(-1)
            denom = mask.sum().clamp_min(1.0)
            loss_c = (((pred_c - cb) ** 2) * mask).sum() / denom
            visible = tv.reshape(-1) > 0
            loss_cell = ce(
                heat.view(-1, fh * fw)[visible], cell_t.reshape(-1)[visible]
            )
            loss = loss_c + 0.2 * bce(pred_v, tv) + 0.1 * loss_cell
            opt.zero_grad()
            loss.backward()
            opt.step()
            if ema is not None:
                with torch.no_grad():
                    for k, v in model.state_dict().items():
                        if v.dtype.is_floating_point:
                            ema[k].mul_(config.ema_decay).add_(
                                v, alpha=1.0 - config.ema_decay
                            )
                        else:
                            ema[k].copy_(v)
            total += float(loss.detach()) * len(sel)
        lr_sched.step()
        history.append(total / n)
        if log is not None:
            log(f"detector epoch {epoch}: loss {history[-1]:.6f}")

    if ema is not None:
        model.load_state_dict(ema)
    model.trained = True
    model.freeze()
    model.val_error = validate_detector(model, val_samples)
    model.train_history = history
    return model


def validate_detector(model, samples):
    """Mean normalized joint error over held-out samples."""
    errs = []
    with torch.no_grad():
        for s in samples:
            pred = detect(s.video, model)
            errs.append(mean_joint_error(pred, s.gt_keypoints))
    return float(np.mean(errs)) if errs else float("nan")


def save_detector(model: DetectorModel, path):
    payload = {
        "format_version": CHECKPOINT_FORMAT,
        "kind": "detector",
        "j": model.j,
        "topology": model.topology,
        "height": model.height,
        "width": model.width,
        "window": model.window,
        "base": model.blocks[0].conv.out_channels,
        "trained": model.trained,
        "frozen": model.frozen,
        "state_dict": model.state_dict(),
    }
    torch.save(payload, path)


def load_detector(path, expect_j=None) -> DetectorModel:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("kind") != "detector":
        raise ValueError(f"{path}: not a detector checkpoint")
    if payload.get("format_version") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint version")
    if payload.get("topology") != TOPOLOGY:
        raise ValueError(
            f"{path}: topology {payload.get('topology')!r} does not match {TOPOLOGY!r}"
        )
    if expect_j is not None and payload["j"] != expect_j:
        raise ValueError(f"{path}: checkpoint has J={payload['j']}, need J={expect_j}")
    model = DetectorModel(
        j=payload["j"],
        height=payload["height"],
        width=payload["width"],
        window=payload["window"],
        base=payload["base"],
    )
    model.load_state_dict(payload["state_dict"])
    model.trained = payload["trained"]
    if payload["frozen"]:
        model.freeze()
    return model


def parameter_fingerprint(model: nn.Module) -> bytes:
    """Bitwise digest of all parameters, for frozen-ness checks."""
    buf = io.BytesIO()
    for name, p in sorted(model.state_dict().items()):
        buf.write(name.encode())
        buf.write(p.detach().cpu().numpy().tobytes())
    return hashlib.sha256(buf.getvalue()).digest()
