"""Noise-predictor backbone, frozen latent codec, frozen text embedder.

Both diffusion stages share one compact 3-D UNet: spatial conv blocks at
two resolutions, temporal conv everywhere, temporal self-attention and
text cross-attention at the coarse level, sinusoidal timestep features
added in every residual block. The codec is a per-frame convolutional
autoencoder (downsample 4, latent channels 4); the text embedder is a
seeded frozen token table plus sinusoidal positions.

Latent layout at module boundaries is channels-last (frames, h, w, c),
matching the latent-video container; tensors are permuted internally.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from handvid import CODEC_DOWNSAMPLE
from handvid.motion_area import MaskVideo
from handvid.synth.actions import ACTIONS

LATENT_CHANNELS = 4
TEXT_DIM = 64
MAX_TOKENS = 8
CHECKPOINT_FORMAT = 1


# ---------------------------------------------------------------------------
# Text embedder


def _tokenize(prompt: str):
    if not prompt or not prompt.strip():
        raise ValueError("empty prompt")
    return prompt.lower().split()


def build_vocabulary():
    words = set()
    for tpl in ACTIONS.values():
        words.update(_tokenize(tpl.prompt))
    return sorted(words)


class TextEmbedder:
    """Frozen token-table embedder with sinusoidal position features."""

    def __init__(self, d=TEXT_DIM, seed=7, vocabulary=None):
        self.d = d
        self.vocabulary = list(vocabulary) if vocabulary else build_vocabulary()
        self.index = {w: i for i, w in enumerate(self.vocabulary)}
        rng = np.random.default_rng(seed)
        self.table = rng.standard_normal((len(self.vocabulary), d))
        pos = np.arange(MAX_TOKENS)[:, None]
        freq = np.exp(-math.log(10000.0) * np.arange(0, d, 2) / d)
        # Positions are kept small relative to word vectors so prompts that
        # share most words still embed with clearly distinct directions.
        self.positions = np.zeros((MAX_TOKENS, d))
        self.positions[:, 0::2] = 0.3 * np.sin(pos * freq)
        self.positions[:, 1::2] = 0.3 * np.cos(pos * freq)

    def embed(self, prompt: str) -> torch.Tensor:
        """(N, d) float32 embedding; deterministic per prompt."""
        tokens = _tokenize(prompt)
        if len(tokens) > MAX_TOKENS:
            raise ValueError(f"prompt too long ({len(tokens)} > {MAX_TOKENS} tokens)")
        unknown = [t for t in tokens if t not in self.index]
        if unknown:
            raise ValueError(f"unknown tokens: {', '.join(unknown)}")
        ids = [self.index[t] for t in tokens]
        emb = self.table[ids] + self.positions[: len(ids)]
        return torch.tensor(emb, dtype=torch.float32)


def embed_text(prompt, embedder: TextEmbedder = None):
    return (embedder or TextEmbedder()).embed(prompt)


# ---------------------------------------------------------------------------
# Latent codec


class _CodecResBlock(nn.Module):
    """Pre-activation residual block; keeps channel count."""

    def __init__(self, channels):
        super().__init__()
        self.norm1 = nn.GroupNorm(4, channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = nn.GroupNorm(4, channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.SiLU()

    def forward(self, x):
        h = self.conv1(self.act(self.norm1(x)))
        h = self.conv2(self.act(self.norm2(h)))
        return x + h


class LatentCodec(nn.Module):
    """Per-frame convolutional autoencoder, downsample 4, 4 latent channels.

    Residual blocks at every scale and subpixel (PixelShuffle) upsampling:
    reconstruction error is dominated by edge placement, which plain conv
    stacks with nearest-neighbor upsampling learn far too slowly.
    `latent_scale` is calibrated after pre-training so that encoded
    training latents have roughly unit standard deviation; decode undoes
    it. Frozen before any diffusion training.
    """

    def __init__(self, base=32):
        super().__init__()
        self.s = CODEC_DOWNSAMPLE
        self.c = LATENT_CHANNELS
        self.base = base
        self.frozen = False
        self.trained = False
        self.register_buffer("latent_scale", torch.ones(()))
        self.encoder = nn.Sequential(
            nn.Conv2d(3, base, 3, padding=1),
            _CodecResBlock(base),
            nn.Conv2d(base, base * 2, 3, stride=2, padding=1),
            _CodecResBlock(base * 2),
            nn.Conv2d(base * 2, base * 2, 3, stride=2, padding=1),
            _CodecResBlock(base * 2),
            nn.GroupNorm(4, base * 2),
            nn.SiLU(),
            nn.Conv2d(base * 2, self.c, 3, padding=1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(self.c, base * 2, 3, padding=1),
            _CodecResBlock(base * 2),
            nn.Conv2d(base * 2, base * 2 * 4, 3, padding=1),
            nn.PixelShuffle(2),
            _CodecResBlock(base * 2),
            nn.Conv2d(base * 2, base * 4, 3, padding=1),
            nn.PixelShuffle(2),
            _CodecResBlock(base),
            nn.GroupNorm(4, base),
            nn.SiLU(),
            nn.Conv2d(base, 3, 3, padding=1),
        )

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.frozen = True
        self.eval()
        return self

    def encode_frames(self, frames_chw):
        return self.encoder(frames_chw) / self.latent_scale

    def decode_frames(self, latents_chw):
        return self.decoder(latents_chw * self.latent_scale)


def _video_to_chw(video):
    t = torch.as_tensor(np.asarray(video) if not torch.is_tensor(video) else video)
    t = t.to(torch.float32) if not t.is_floating_point() else t
    if t.ndim != 4 or t.shape[-1] != 3:
        raise ValueError("video must have shape (frames, H, W, 3)")
    return t.permute(0, 3, 1, 2)


def encode_video(video, codec: LatentCodec):
    """Per-frame encoding, (F, H, W, 3) -> (F, h, w, c); no temporal mixing."""
    chw = _video_to_chw(video)
    if chw.shape[-2] % codec.s or chw.shape[-1] % codec.s:
        raise ValueError(
            f"frame size {tuple(chw.shape[-2:])} not divisible by {codec.s}"
        )
    z = codec.encode_frames(chw)
    return z.permute(0, 2, 3, 1)


def decode_video(latent, codec: LatentCodec, clamp=True):
    """Per-frame decoding, (F, h, w, c) -> (F, H, W, 3); clamps to [0,1]."""
    t = torch.as_tensor(latent)
    if t.ndim != 4 or t.shape[-1] != codec.c:
        raise ValueError(f"latent must have shape (frames, h, w, {codec.c})")
    x = codec.decode_frames(t.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
    return x.clamp(0.0, 1.0) if clamp else x


@dataclass
class CodecTrainConfig:
    epochs: int = 150
    lr: float = 3e-3
    batch_size: int = 32
    seed: int = 0
    val_fraction: float = 0.1
    base_channels: int = 32


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for [0,1] images."""
    mse = float(((torch.as_tensor(a) - torch.as_tensor(b)) ** 2).mean())
    if mse == 0:
        return float("inf")
    return -10.0 * math.log10(mse)


def train_codec(samples, config: CodecTrainConfig = None, log=None) -> LatentCodec:
    """Pre-train the autoencoder on sample frames, then freeze it.

    Validation PSNR lands in `codec.val_psnr`; the latent scale is set to
    the standard deviation of raw encoded training latents.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("codec training needs a nonempty dataset")
    config = config or CodecTrainConfig()
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    frames = torch.cat([_video_to_chw(s.video) for s in samples])
    n_val = max(1, int(round(frames.shape[0] * config.val_fraction)))
    order = rng.permutation(frames.shape[0])
    val = frames[torch.from_numpy(order[:n_val].copy())]
    train = frames[torch.from_numpy(order[n_val:].copy())]

    codec = LatentCodec(base=config.base_channels)
    opt = torch.optim.Adam(codec.parameters(), lr=config.lr)
    lr_sched = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=config.epochs, eta_min=config.lr * 0.05
    )
    n = train.shape[0]
    for epoch in range(config.epochs):
        perm = torch.from_numpy(rng.permutation(n))
        total = 0.0
        for start in range(0, n, config.batch_size):
            sel = perm[start : start + config.batch_size]
            x = train[sel]
            rec = codec.decoder(codec.encoder(x))
            loss = ((rec - x) ** 2).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(sel)
        lr_sched.step()
        if log is not None:
            log(f"codec epoch {epoch}: mse {total / n:.6f}")

    codec.trained = True
    with torch.no_grad():
        scale = codec.encoder(train[: min(n, 256)]).std()
        codec.latent_scale.copy_(scale.clamp_min(1e-6))
        rec = codec.decoder(codec.encoder(val)).clamp(0, 1)
        codec.val_psnr = psnr(rec, val)
    codec.freeze()
    return codec


def save_codec(codec: LatentCodec, path):
    torch.save(
        {
            "format_version": CHECKPOINT_FORMAT,
            "kind": "codec",
            "s": codec.s,
            "c": codec.c,
            "base": codec.base,
            "trained": codec.trained,
            "frozen": codec.frozen,
            "state_dict": codec.state_dict(),
        },
        path,
    )


def load_codec(path) -> LatentCodec:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("kind") != "codec":
        raise ValueError(f"{path}: not a codec checkpoint")
    if payload.get("format_version") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint version")
    if payload["s"] != CODEC_DOWNSAMPLE or payload["c"] != LATENT_CHANNELS:
        raise ValueError(f"{path}: codec descriptor mismatch")
    codec = LatentCodec(base=payload["base"])
    codec.load_state_dict(payload["state_dict"])
    codec.trained = payload["trained"]
    if payload["frozen"]:
        codec.freeze()
    return codec


# ---------------------------------------------------------------------------
# Mask channel


def concat_mask_channel(latent, mask: MaskVideo):
    """Append a mask as the last latent channel, (F,h,w,c) -> (F,h,w,c+1).

    The mask must already live at latent resolution; a single-frame mask
    (union or prior) broadcasts over all latent frames.
    """
    z = torch.as_tensor(latent)
    m = mask.values
    m = torch.as_tensor(np.asarray(m)) if not torch.is_tensor(m) else m
    m = m.to(z.dtype)
    if m.shape[0] == 1 and z.shape[0] > 1:
        m = m.expand(z.shape[0], -1, -1)
    if m.shape[0] != z.shape[0]:
        raise ValueError(f"frame mismatch: mask {m.shape[0]} vs latent {z.shape[0]}")
    if m.shape[1:] != z.shape[1:3]:
        raise ValueError(
            f"mask resolution {tuple(m.shape[1:])} does not match latent "
            f"{tuple(z.shape[1:3])}"
        )
    return torch.cat([z, m.unsqueeze(-1)], dim=-1)


# ---------------------------------------------------------------------------
# Noise predictor


def sinusoidal_features(t, dim):
    """(B,) integer steps -> (B, dim) sinusoidal features."""
    t = torch.as_tensor(t, dtype=torch.float32).reshape(-1)
    half = dim // 2
    freq = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half
    )
    ang = t[:, None] * freq[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


class _ResBlock(nn.Module):
    """Spatial residual block with additive timestep conditioning."""

    def __init__(self, c_in, c_out, time_dim):
        super().__init__()
        self.norm1 = nn.GroupNorm(4, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, c_out)
        self.norm2 = nn.GroupNorm(4, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()
        self.act = nn.SiLU()

    def forward(self, x, temb):
        # x: (B*F, C, h, w); temb: (B*F, time_dim)
        h = self.conv1(self.act(self.norm1(x)))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(self.act(self.norm2(h)))
        return h + self.skip(x)


class _TemporalConv(nn.Module):
    """Depth-preserving 1-D conv over the frame axis, per spatial site."""

    def __init__(self, channels):
        super().__init__()
        self.norm = nn.GroupNorm(4, channels)
        self.conv = nn.Conv1d(channels, channels, 3, padding=1)
        self.act = nn.SiLU()

    def forward(self, x, frames):
        bf, c, h, w = x.shape
        b = bf // frames
        t = x.view(b, frames, c, h, w).permute(0, 3, 4, 2, 1).reshape(-1, c, frames)
        t = self.conv(self.act(self.norm(t)))
        t = t.view(b, h, w, c, frames).permute(0, 4, 3, 1, 2).reshape(bf, c, h, w)
        return x + t


class _TemporalAttention(nn.Module):
    """Self-attention across frames at each spatial site."""

    def __init__(self, channels, heads=2):
        super().__init__()
        self.norm = nn.LayerNorm(channels)
        self.attn = nn.MultiheadAttention(channels, heads, batch_first=True)

    def forward(self, x, frames):
        bf, c, h, w = x.shape
        b = bf // frames
        t = x.view(b, frames, c, h, w).permute(0, 3, 4, 1, 2).reshape(-1, frames, c)
        q = self.norm(t)
        out, _ = self.attn(q, q, q, need_weights=False)
        t = t + out
        t = t.view(b, h, w, frames, c).permute(0, 3, 4, 1, 2).reshape(bf, c, h, w)
        return t


class _CrossAttention(nn.Module):
    """Attention from spatio-temporal positions onto text tokens."""

    def __init__(self, channels, text_dim, heads=2):
        super().__init__()
        self.norm = nn.LayerNorm(channels)
        self.text_proj = nn.Linear(text_dim, channels)
        self.attn = nn.MultiheadAttention(channels, heads, batch_first=True)

    def forward(self, x, text, frames):
        # text: (B, N, text_dim)
        bf, c, h, w = x.shape
        b = bf // frames
        t = x.view(b, frames, c, h, w).permute(0, 1, 3, 4, 2).reshape(b, -1, c)
        kv = self.text_proj(text)
        out, _ = self.attn(self.norm(t), kv, kv, need_weights=False)
        t = t + out
        t = t.view(b, frames, h, w, c).permute(0, 1, 4, 2, 3).reshape(bf, c, h, w)
        return t


class NoisePredictor(nn.Module):
    """Compact two-level 3-D UNet over mask-conditioned latent videos."""

    def __init__(
        self,
        stage="stage1",
        in_channels=LATENT_CHANNELS + 1,
        out_channels=LATENT_CHANNELS,
        base=32,
        text_dim=TEXT_DIM,
        time_dim=128,
    ):
        super().__init__()
        if stage not in ("stage1", "stage2"):
            raise ValueError(f"unknown stage tag {stage!r}")
        self.stage = stage
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.base = base
        self.text_dim = text_dim
        self.time_dim = time_dim

        self.time_mlp = nn.Sequential(
            nn.Linear(time_dim, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )
        self.stem = nn.Conv2d(in_channels, base, 3, padding=1)
        self.down_res = _ResBlock(base, base, time_dim)
        self.down_tconv = _TemporalConv(base)
        self.downsample = nn.Conv2d(base, base * 2, 3, stride=2, padding=1)

        self.mid_res1 = _ResBlock(base * 2, base * 2, time_dim)
        self.mid_tconv = _TemporalConv(base * 2)
        self.mid_tattn = _TemporalAttention(base * 2)
        self.mid_xattn = _CrossAttention(base * 2, text_dim)
        self.mid_res2 = _ResBlock(base * 2, base * 2, time_dim)

        self.upsample = nn.Upsample(scale_factor=2, mode="nearest")
        self.up_res = _ResBlock(base * 3, base, time_dim)
        self.up_tconv = _TemporalConv(base)
        self.out_norm = nn.GroupNorm(4, base)
        self.out_conv = nn.Conv2d(base, out_channels, 3, padding=1)
        self.act = nn.SiLU()

    def forward(self, z, t, text):
        """z: (B, F, h, w, c_in) channels-last; t: (B,) steps; text: (B, N, d).

        Returns (B, F, h, w, c_out).
        """
        b, f = z.shape[0], z.shape[1]
        x = z.permute(0, 1, 4, 2, 3).reshape(b * f, self.in_channels, *z.shape[2:4])
        temb = self.time_mlp(sinusoidal_features(t, self.time_dim).to(x.dtype))
        temb = temb.repeat_interleave(f, dim=0)

        h1 = self.stem(x)
        h1 = self.down_res(h1, temb)
        h1 = self.down_tconv(h1, f)
        h2 = self.downsample(h1)
        h2 = self.mid_res1(h2, temb)
        h2 = self.mid_tconv(h2, f)
        h2 = self.mid_tattn(h2, f)
        h2 = self.mid_xattn(h2, text, f)
        h2 = self.mid_res2(h2, temb)
        up = self.upsample(h2)
        up = self.up_res(torch.cat([up, h1], dim=1), temb)
        up = self.up_tconv(up, f)
        out = self.out_conv(self.act(self.out_norm(up)))
        return (
            out.view(b, f, self.out_channels, *z.shape[2:4]).permute(0, 1, 3, 4, 2)
        )


def predict_noise(model: NoisePredictor, z_t, t, text):
    """Noise estimate for a mask-conditioned latent video.

    z_t: (F, h, w, c+1) channels-last (or batched (B, F, h, w, c+1));
    returns the estimate without the mask channel, matching z_t's layout.
    """
    z = torch.as_tensor(z_t)
    unbatched = z.ndim == 4
    if unbatched:
        z = z.unsqueeze(0)
    if z.shape[-1] != model.in_channels:
        raise ValueError(
            f"expected {model.in_channels} input channels, got {z.shape[-1]}"
        )
    if not torch.isfinite(z).all():
        raise ValueError("latent input contains non-finite values")
    txt = torch.as_tensor(text, dtype=z.dtype)
    if txt.ndim == 2:
        txt = txt.unsqueeze(0).expand(z.shape[0], -1, -1)
    t_arr = torch.as_tensor(t).reshape(-1)
    if t_arr.numel() == 1 and z.shape[0] > 1:
        t_arr = t_arr.expand(z.shape[0])
    out = model(z, t_arr, txt)
    return out.squeeze(0) if unbatched else out


def parameter_shapes(model: nn.Module):
    """Sorted (name, shape) inventory, for architecture-sharing checks."""
    return sorted((n, tuple(p.shape)) for n, p in model.named_parameters())


def save_predictor(model: NoisePredictor, path, extra=None):
    payload = {
        "format_version": CHECKPOINT_FORMAT,
        "kind": "predictor",
        "stage": model.stage,
        "in_channels": model.in_channels,
        "out_channels": model.out_channels,
        "base": model.base,
        "text_dim": model.text_dim,
        "time_dim": model.time_dim,
        "state_dict": model.state_dict(),
    }
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)


def load_predictor(path, expect_stage=None) -> NoisePredictor:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("kind") != "predictor":
        raise ValueError(f"{path}: not a predictor checkpoint")
    if payload.get("format_version") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint version")
    if expect_stage is not None and payload["stage"] != expect_stage:
        raise ValueError(
            f"{path}: stage {payload['stage']!r}, expected {expect_stage!r}"
        )
    model = NoisePredictor(
        stage=payload["stage"],
        in_channels=payload["in_channels"],
        out_channels=payload["out_channels"],
        base=payload["base"],
        text_dim=payload["text_dim"],
        time_dim=payload["time_dim"],
    )
    model.load_state_dict(payload["state_dict"])
    return model
