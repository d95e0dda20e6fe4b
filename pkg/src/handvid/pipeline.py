"""Two-stage training and inference orchestration.

Stage 1 learns to denoise motion-area mask videos conditioned on the
dataset prior mask and the prompt; stage 2 learns to denoise the video
itself conditioned on a mask channel (from stage 1, the prior, ground
truth, or disabled) and the prompt. Inference chains them: the first
frame is encoded, duplicated along time, pushed to the terminal noise
level, and denoised; the stage-1 output is post-processed into a binary
motion-area mask that both conditions stage 2 and gates which pixels the
generated video may change.
"""

import hashlib
from dataclasses import dataclass, fields

import numpy as np
import torch

from handvid import CODEC_DOWNSAMPLE
from handvid.diffusion import NoiseSchedule, add_noise, recover_z0, sample
from handvid.denoiser import (
    MAX_TOKENS,
    NoisePredictor,
    TextEmbedder,
    concat_mask_channel,
    encode_video,
    decode_video,
    predict_noise,
)
from handvid.hand_pose import KeypointSequence, detect
from handvid.losses import (
    LossWeights,
    hand_refinement_loss,
    miou_loss,
    noise_loss,
    soften_decoded_mask,
)
from handvid.motion_area import (
    MaskVideo,
    downsample_mask,
    postprocess_soft_mask,
    prior_mask,
)

MASK_SOURCES = ("none", "stage1", "prior", "gt")


# ---------------------------------------------------------------------------
# Run configuration


@dataclass
class RunConfig:
    """Training/inference settings, serializable as a key = value file."""

    frames: int = 15
    height: int = 64
    width: int = 64
    tau: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sample_steps: int = 50
    alpha: float = 0.1
    eta: float = 0.1
    epochs: int = 1
    max_iterations: int = 0
    batch_size: int = 4
    lr: float = 5e-5
    seed: int = 0
    mask_source: str = "stage1"
    hrl: bool = True
    base_channels: int = 32

    def validate(self):
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.height % CODEC_DOWNSAMPLE or self.width % CODEC_DOWNSAMPLE:
            raise ValueError(f"resolution must divide {CODEC_DOWNSAMPLE}")
        if self.mask_source not in MASK_SOURCES:
            raise ValueError(
                f"mask_source must be one of {MASK_SOURCES}, got {self.mask_source!r}"
            )
        if not 1 <= self.sample_steps <= self.tau:
            raise ValueError("sample_steps must lie in [1, tau]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.alpha < 0 or self.eta < 0:
            raise ValueError("loss weights must be nonnegative")
        return self


def _format_value(v):
    if isinstance(v, bool):
        return "on" if v else "off"
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(text, target_type):
    text = text.strip()
    if target_type is bool:
        low = text.lower()
        if low in ("on", "true", "1", "yes"):
            return True
        if low in ("off", "false", "0", "no"):
            return False
        raise ValueError(f"not a flag value: {text!r}")
    return target_type(text)


def save_run_config(config: RunConfig, path):
    with open(path, "w") as fh:
        fh.write(serialize_run_config(config))


def serialize_run_config(config: RunConfig) -> str:
    lines = [
        f"{f.name} = {_format_value(getattr(config, f.name))}"
        for f in fields(config)
    ]
    return "\n".join(lines) + "\n"


def load_run_config(path) -> RunConfig:
    known = {f.name: f.type for f in fields(RunConfig)}
    types = {"int": int, "float": float, "str": str, "bool": bool}
    values = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected 'key = value'")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in known:
                raise ValueError(f"{path}:{ln}: unknown key {key!r}")
            t = known[key]
            t = types[t] if isinstance(t, str) else t
            values[key] = _parse_value(val, t)
    return RunConfig(**values).validate()


def run_config_hash(config: RunConfig) -> str:
    return hashlib.sha256(serialize_run_config(config).encode()).hexdigest()[:16]


def schedule_from_config(config: RunConfig) -> NoiseSchedule:
    return NoiseSchedule.linear(config.tau, config.beta_start, config.beta_end)


# ---------------------------------------------------------------------------
# Small helpers


def mask_to_rgb_video(mask: MaskVideo) -> np.ndarray:
    """Replicate a mask video to three channels for the codec."""
    vals = mask.numpy().astype(np.float32)
    return np.repeat(vals[..., None], 3, axis=-1)


def pad_text(tokens: torch.Tensor) -> torch.Tensor:
    """Zero-pad a (N, d) embedding to the fixed token budget."""
    n, d = tokens.shape
    if n > MAX_TOKENS:
        raise ValueError(f"too many tokens: {n}")
    out = torch.zeros(MAX_TOKENS, d, dtype=tokens.dtype)
    out[:n] = tokens
    return out


def enforce_mask(generated, context, mask: MaskVideo):
    """Blend: generated pixels inside the mask, context pixels outside.

    out = m * generated + (1 - m) * context, computed exactly. `context`
    may be a single frame (broadcast over time) or a full video.
    """
    if not mask.binary:
        raise ValueError("mask enforcement requires a binary mask")
    gen = torch.as_tensor(generated)
    ctx = torch.as_tensor(context, dtype=gen.dtype)
    if ctx.ndim == 3:
        ctx = ctx.unsqueeze(0)
    m = torch.as_tensor(mask.numpy(), dtype=gen.dtype).unsqueeze(-1)
    if gen.ndim != 4 or gen.shape[-1] != 3:
        raise ValueError("generated video must have shape (frames, H, W, 3)")
    if m.shape[0] == 1 and gen.shape[0] > 1:
        m = m.expand(gen.shape[0], -1, -1, -1)
    if m.shape[:3] != gen.shape[:3]:
        raise ValueError(
            f"mask shape {tuple(m.shape[:3])} does not match video "
            f"{tuple(gen.shape[:3])}"
        )
    return m * gen + (1.0 - m) * ctx


def dataset_prior(samples) -> MaskVideo:
    return prior_mask([s.union_mask() for s in samples])


# ---------------------------------------------------------------------------
# Per-sample caches


class _SampleCache:
    """Frozen per-sample tensors shared across training iterations."""

    def __init__(self, sample, codec, embedder, config):
        l = config.frames
        video = np.asarray(sample.video)
        if video.shape[0] != l + 1:
            raise ValueError(
                f"sample has {video.shape[0]} frames, config needs {l + 1} "
                "(context frame + generated clip)"
            )
        with torch.no_grad():
            self.z_video = encode_video(video[1:], codec)
            self.z_image = encode_video(video[:1], codec)
            mask_rgb = mask_to_rgb_video(sample.gt_frame_masks)[1:]
            self.z_mask_video = encode_video(mask_rgb, codec)
        self.text = pad_text(embedder.embed(sample.prompt))
        gt = sample.gt_keypoints
        c, v = gt.numpy()
        self.gt_keypoints = KeypointSequence(c[1:], v[1:])
        self.gt_masks = MaskVideo(
            sample.gt_frame_masks.numpy()[1:], binary=True, kind="per_frame"
        )
        gt_lat = downsample_mask(self.gt_masks, codec.s)
        self.gt_masks_latent = torch.tensor(gt_lat.numpy(), dtype=torch.float32)
        self.video = video
        self.prompt = sample.prompt


def _latent_prior(prior: MaskVideo, codec) -> torch.Tensor:
    return torch.tensor(
        downsample_mask(prior, codec.s).numpy(), dtype=torch.float32
    )


# ---------------------------------------------------------------------------
# Training


class TrainLogRow(tuple):
    pass


def _log_row(history, log, iteration, stage, noise, miou, hrl, total):
    row = (iteration, stage, noise, miou, hrl, total)
    history.append(row)
    if log is not None:
        log(
            f"iter {iteration} [{stage}] noise {noise:.5f} miou {miou:.5f} "
            f"hrl {hrl:.5f} total {total:.5f}"
        )


def save_train_state(path, model, optimizer, iteration, generator, index_rng):
    torch.save(
        {
            "kind": "train_state",
            "iteration": iteration,
            "model": model.state_dict(),
            "optimizer": optimizer.state_dict(),
            "generator": generator.get_state(),
            "index_rng": index_rng.bit_generator.state,
        },
        path,
    )


def load_train_state(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("kind") != "train_state":
        raise ValueError(f"{path}: not a training checkpoint")
    return payload


def _restore_train_state(state, model, optimizer, generator, index_rng):
    model.load_state_dict(state["model"])
    optimizer.load_state_dict(state["optimizer"])
    generator.set_state(state["generator"])
    index_rng.bit_generator.state = state["index_rng"]
    return state["iteration"]


def _iteration_budget(config, n_samples):
    """Optimizer steps to run: max_iterations wins when set, else epochs."""
    if config.max_iterations:
        return config.max_iterations
    per_epoch = max(1, n_samples // config.batch_size)
    return config.epochs * per_epoch


def _train_loop(
    stage,
    caches,
    config,
    codec,
    sched,
    aux_loss,
    log=None,
    resume=None,
    checkpoint_path=None,
    checkpoint_every=0,
):
    """Shared noise-prediction training loop with a stage-specific extra term."""
    torch.manual_seed(config.seed)
    model = NoisePredictor(stage=stage, base=config.base_channels)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    generator = torch.Generator().manual_seed(config.seed + 1)
    index_rng = np.random.default_rng(config.seed + 2)
    start = 0
    if resume is not None:
        start = _restore_train_state(resume, model, opt, generator, index_rng)

    n = len(caches)
    z_all = torch.stack([c.z_video for c in caches])
    text_all = torch.stack([c.text for c in caches])
    total_iters = _iteration_budget(config, n)
    history = []
    for it in range(start, total_iters):
        idx = index_rng.integers(0, n, size=min(config.batch_size, n))
        t = torch.from_numpy(index_rng.integers(1, config.tau + 1, size=len(idx)))
        z0 = z_all[idx]
        eps = torch.randn(z0.shape, generator=generator, dtype=z0.dtype)
        z_t = add_noise(z0, t, eps, sched)
        z_in = torch.stack(
            [
                concat_mask_channel(z_t[k], caches[i].cond_mask)
                for k, i in enumerate(idx)
            ]
        )
        eps_hat = predict_noise(model, z_in, t, text_all[idx])
        loss_noise = noise_loss(eps_hat, eps)
        z0_hat = recover_z0(z_t, t, eps_hat, sched)
        loss_miou, loss_hrl, loss_aux = aux_loss(z0_hat, idx)
        loss = loss_noise + loss_aux
        opt.zero_grad()
        loss.backward()
        opt.step()
        _log_row(
            history,
            log,
            it + 1,
            stage,
            float(loss_noise.detach()),
            loss_miou,
            loss_hrl,
            float(loss.detach()),
        )
        if checkpoint_path and checkpoint_every and (it + 1) % checkpoint_every == 0:
            save_train_state(checkpoint_path, model, opt, it + 1, generator, index_rng)
    model.eval()
    return model, history


def train_stage1(
    samples,
    config: RunConfig,
    codec,
    embedder: TextEmbedder = None,
    prior: MaskVideo = None,
    log=None,
    resume=None,
    checkpoint_path=None,
    checkpoint_every=0,
):
    """Train the mask-video denoiser (noise loss + alpha * mask-overlap loss)."""
    samples = list(samples)
    if not samples:
        raise ValueError("stage-1 training needs a nonempty dataset")
    config.validate()
    if not getattr(codec, "frozen", False):
        raise ValueError("the latent codec must be frozen before diffusion training")
    embedder = embedder or TextEmbedder()
    if prior is None:
        prior = dataset_prior(samples)
    if prior is None or prior.kind != "prior":
        raise ValueError("stage-1 training requires the dataset prior mask")
    sched = schedule_from_config(config)
    caches = [_SampleCache(s, codec, embedder, config) for s in samples]
    prior_lat = _latent_prior(prior, codec)
    prior_mv = MaskVideo(prior_lat, binary=False, kind="prior")
    for c in caches:
        c.cond_mask = prior_mv
        c.z_video = c.z_mask_video  # stage 1 denoises the mask video
    weights = LossWeights(alpha=config.alpha, eta=config.eta)

    def aux(z0_hat, idx):
        if config.alpha == 0.0:
            return 0.0, 0.0, 0.0
        terms = []
        for k, i in enumerate(idx):
            decoded = decode_video(z0_hat[k], codec, clamp=False).clamp(0, 1)
            soft = soften_decoded_mask(decoded)
            terms.append(miou_loss(soft, caches[i].gt_masks))
        m = torch.stack(terms).mean()
        return float(m.detach()), 0.0, weights.alpha * m

    return _train_loop(
        "stage1", caches, config, codec, sched, aux, log, resume,
        checkpoint_path, checkpoint_every,
    )


def resolve_mask_source(
    caches, config, codec, stage1_model=None, embedder=None, prior=None, log=None
):
    """Attach the conditioning mask required by `config.mask_source`.

    Stage-1 masks are generated once per sample and cached; they are the
    post-processed binary masks at latent resolution.
    """
    source = config.mask_source
    if source not in MASK_SOURCES:
        raise ValueError(f"unknown mask source {source!r}")
    if source == "none":
        ones = MaskVideo(
            np.ones((1, config.height // codec.s, config.width // codec.s)),
            binary=True,
            kind="per_frame",
        )
        for c in caches:
            c.cond_mask = ones
        return
    if source == "gt":
        for c in caches:
            c.cond_mask = MaskVideo(c.gt_masks_latent, binary=True, kind="per_frame")
        return
    if prior is None:
        raise ValueError(f"mask source {source!r} requires the dataset prior")
    if source == "prior":
        lat = _latent_prior(prior, codec)
        for c in caches:
            c.cond_mask = MaskVideo(lat, binary=False, kind="prior")
        return
    if stage1_model is None:
        raise ValueError("mask source 'stage1' requires a trained stage-1 model")
    sched = schedule_from_config(config)
    for k, c in enumerate(caches):
        g = torch.Generator().manual_seed(config.seed * 100003 + k)
        mask = generate_stage1_mask(
            stage1_model, codec, c.text, c.z_image, config, sched, prior, g, log=log
        )
        c.cond_mask = MaskVideo(
            downsample_mask(mask, codec.s).numpy(), binary=True, kind="generated"
        )


def train_stage2(
    samples,
    config: RunConfig,
    codec,
    embedder: TextEmbedder = None,
    detector=None,
    stage1_model=None,
    prior: MaskVideo = None,
    log=None,
    resume=None,
    checkpoint_path=None,
    checkpoint_every=0,
):
    """Train the video denoiser (noise loss + eta * keypoint-space loss)."""
    samples = list(samples)
    if not samples:
        raise ValueError("stage-2 training needs a nonempty dataset")
    config.validate()
    if not getattr(codec, "frozen", False):
        raise ValueError("the latent codec must be frozen before diffusion training")
    embedder = embedder or TextEmbedder()
    if prior is None and config.mask_source in ("prior", "stage1"):
        prior = dataset_prior(samples)
    if config.hrl and detector is None:
        raise ValueError("keypoint-space loss requires a frozen detector")
    if config.hrl and not getattr(detector, "frozen", False):
        raise ValueError("the keypoint detector must be frozen for training use")
    sched = schedule_from_config(config)
    caches = [_SampleCache(s, codec, embedder, config) for s in samples]
    resolve_mask_source(caches, config, codec, stage1_model, embedder, prior, log)
    weights = LossWeights(alpha=config.alpha, eta=config.eta)

    def aux(z0_hat, idx):
        if not config.hrl or config.eta == 0.0:
            return 0.0, 0.0, 0.0
        terms = []
        for k, i in enumerate(idx):
            decoded = decode_video(z0_hat[k], codec, clamp=False).clamp(0, 1)
            gen_kp = detect(decoded, detector)
            terms.append(hand_refinement_loss(gen_kp, caches[i].gt_keypoints))
        h = torch.stack(terms).mean()
        return 0.0, float(h.detach()), weights.eta * h

    return _train_loop(
        "stage2", caches, config, codec, sched, aux, log, resume,
        checkpoint_path, checkpoint_every,
    )


# ---------------------------------------------------------------------------
# Inference


def _sample_video_latent(model, codec, text, z_image, config, sched, cond_mask, g):
    """Shared two-stage sampling core: noised duplicated image latent in,
    denoised latent video out."""
    l = config.frames
    init0 = z_image.expand(l, -1, -1, -1)
    eps = torch.randn(init0.shape, generator=g, dtype=init0.dtype)
    z_t = add_noise(init0, config.tau, eps, sched)

    def predictor(z, t, cond):
        z_in = concat_mask_channel(z, cond["mask"])
        return predict_noise(model, z_in, t, cond["text"])

    with torch.no_grad():
        z0 = sample(
            predictor,
            z_t,
            {"mask": cond_mask, "text": text},
            sched,
            config.sample_steps,
        )
    return z0


def generate_stage1_mask(
    stage1_model, codec, text, z_image, config, sched, prior, g, log=None
) -> MaskVideo:
    """Run stage-1 sampling and post-process to a binary motion-area mask.

    A degenerate all-empty result falls back to the thresholded prior
    (then to all-ones if even that is empty), with a logged warning.
    """
    prior_lat = _latent_prior(prior, codec)
    cond = MaskVideo(prior_lat, binary=False, kind="prior")
    z0 = _sample_video_latent(stage1_model, codec, text, z_image, config, sched, cond, g)
    with torch.no_grad():
        decoded = decode_video(z0, codec)
    soft = soften_decoded_mask(decoded)
    mask = postprocess_soft_mask(soft)
    if mask.numpy().sum() == 0:
        fallback = (prior.numpy() >= 0.5).astype(np.float64)
        if fallback.sum() == 0:
            fallback = np.ones_like(fallback)
            reason = "all-ones"
        else:
            reason = "thresholded prior"
        if log is not None:
            log(f"warning: stage-1 mask empty, falling back to {reason}")
        vals = np.broadcast_to(fallback[0][None], (config.frames,) + fallback.shape[1:])
        return MaskVideo(vals.copy(), binary=True, kind="generated")
    return mask


@dataclass
class InferResult:
    video: np.ndarray
    mask: MaskVideo
    raw_video: np.ndarray
    prompt: str
    seed: int


def infer(
    stage1_model,
    stage2_model,
    codec,
    image,
    prompt,
    config: RunConfig,
    prior: MaskVideo,
    embedder: TextEmbedder = None,
    seed=None,
    log=None,
) -> InferResult:
    """Full two-stage generation from one context frame and a prompt."""
    config.validate()
    embedder = embedder or TextEmbedder()
    seed = config.seed if seed is None else seed
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError("image must have shape (H, W, 3)")
    sched = schedule_from_config(config)
    text = pad_text(embedder.embed(prompt))
    with torch.no_grad():
        z_image = encode_video(img[None], codec)

    g = torch.Generator().manual_seed(seed)
    mask = generate_stage1_mask(
        stage1_model, codec, text, z_image, config, sched, prior, g, log=log
    )
    mask_latent = MaskVideo(
        downsample_mask(mask, codec.s).numpy(), binary=True, kind="generated"
    )
    z0 = _sample_video_latent(
        stage2_model, codec, text, z_image, config, sched, mask_latent, g
    )
    with torch.no_grad():
        raw = decode_video(z0, codec).numpy()
    out = enforce_mask(raw, img, mask).numpy()
    return InferResult(
        video=out.astype(np.float32),
        mask=mask,
        raw_video=raw.astype(np.float32),
        prompt=prompt,
        seed=seed,
    )
