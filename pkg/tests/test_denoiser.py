"""Text embedder, latent codec, and noise-predictor backbone tests."""

import numpy as np
import pytest
import torch

from handvid.denoiser import (
    MAX_TOKENS,
    TEXT_DIM,
    CodecTrainConfig,
    LatentCodec,
    NoisePredictor,
    build_vocabulary,
    concat_mask_channel,
    decode_video,
    embed_text,
    encode_video,
    load_codec,
    load_predictor,
    parameter_shapes,
    predict_noise,
    psnr,
    save_codec,
    save_predictor,
    train_codec,
)
from handvid.motion_area import MaskVideo
from handvid.synth.actions import ACTIONS


# ---------------------------------------------------------------------------
# Text embedder


def test_embed_shapes_and_dtype(text_embedder):
    e = text_embedder.embed("lift the hand upward")
    assert e.shape == (4, TEXT_DIM)
    assert e.dtype == torch.float32


def test_embed_deterministic(text_embedder):
    a = text_embedder.embed("wave the hand from side to side")
    b = text_embedder.embed("wave the hand from side to side")
    assert torch.equal(a, b)
    # A fresh embedder instance with the same seed agrees bitwise.
    c = embed_text("wave the hand from side to side")
    assert torch.equal(a, c)


def test_all_templates_fit_token_budget(text_embedder):
    for tpl in ACTIONS.values():
        e = text_embedder.embed(tpl.prompt)
        assert 1 <= e.shape[0] <= MAX_TOKENS


def test_templates_pairwise_distinct(text_embedder):
    flats = []
    for tpl in ACTIONS.values():
        e = text_embedder.embed(tpl.prompt)
        pad = torch.zeros(MAX_TOKENS, TEXT_DIM)
        pad[: e.shape[0]] = e
        flats.append(pad.flatten())
    m = torch.stack(flats)
    m = m / m.norm(dim=1, keepdim=True)
    cos = m @ m.T
    off = cos - torch.eye(len(flats))
    assert float(off.max()) < 0.99


def test_embed_unknown_token_lists_it(text_embedder):
    with pytest.raises(ValueError, match="throw"):
        text_embedder.embed("throw the hand")


def test_embed_empty_prompt_rejected(text_embedder):
    with pytest.raises(ValueError):
        text_embedder.embed("")
    with pytest.raises(ValueError):
        text_embedder.embed("   ")


def test_embed_too_long_rejected(text_embedder):
    with pytest.raises(ValueError, match="too long"):
        text_embedder.embed("the " * 8 + "hand")


def test_vocabulary_covers_all_templates():
    vocab = set(build_vocabulary())
    for tpl in ACTIONS.values():
        for word in tpl.prompt.lower().split():
            assert word in vocab


def test_position_dependence(text_embedder):
    a = text_embedder.embed("hand desk")
    b = text_embedder.embed("desk hand")
    assert not torch.allclose(a, b)


# ---------------------------------------------------------------------------
# Latent codec


def test_codec_shapes():
    codec = LatentCodec(base=16)
    video = torch.rand(3, 64, 64, 3)
    z = encode_video(video, codec)
    assert z.shape == (3, 16, 16, 4)
    rec = decode_video(z, codec)
    assert rec.shape == (3, 64, 64, 3)


def test_codec_is_per_frame():
    codec = LatentCodec(base=16)
    video = torch.rand(4, 64, 64, 3)
    with torch.no_grad():
        z_all = encode_video(video, codec)
        z_one = encode_video(video[2:3], codec)
    assert torch.equal(z_all[2], z_one[0])


def test_decode_clamps_to_unit_interval():
    codec = LatentCodec(base=16)
    wild = torch.randn(2, 16, 16, 4) * 50.0
    with torch.no_grad():
        rec = decode_video(wild, codec)
    assert float(rec.min()) >= 0.0
    assert float(rec.max()) <= 1.0


def test_encode_rejects_bad_shapes():
    codec = LatentCodec(base=16)
    with pytest.raises(ValueError):
        encode_video(torch.rand(3, 64, 64), codec)
    with pytest.raises(ValueError, match="divisible"):
        encode_video(torch.rand(2, 63, 64, 3), codec)
    with pytest.raises(ValueError):
        decode_video(torch.rand(2, 16, 16, 3), codec)


def test_trained_codec_reconstruction_gate(trained_codec):
    assert trained_codec.frozen
    assert trained_codec.trained
    assert trained_codec.val_psnr > 30.0


def test_trained_codec_latent_scale_calibrated(trained_codec, dataset200):
    with torch.no_grad():
        z = encode_video(dataset200[0].video, trained_codec)
    # Encoded latents should be roughly unit-scale after calibration.
    assert 0.25 < float(z.std()) < 4.0


def test_codec_training_rejects_empty():
    with pytest.raises(ValueError):
        train_codec([], CodecTrainConfig(epochs=1))


def test_codec_checkpoint_roundtrip(tmp_path, trained_codec):
    path = tmp_path / "codec.pt"
    save_codec(trained_codec, path)
    loaded = load_codec(path)
    assert loaded.frozen and loaded.trained
    video = torch.rand(2, 64, 64, 3)
    with torch.no_grad():
        a = encode_video(video, trained_codec)
        b = encode_video(video, loaded)
    assert torch.equal(a, b)


def test_codec_checkpoint_kind_mismatch(tmp_path):
    path = tmp_path / "wrong.pt"
    save_predictor(NoisePredictor(stage="stage1", base=8), path)
    with pytest.raises(ValueError, match="codec"):
        load_codec(path)


def test_psnr_known_value():
    a = torch.zeros(4, 4, dtype=torch.float64)
    b = torch.full((4, 4), 0.1, dtype=torch.float64)
    assert abs(psnr(a, b) - 20.0) < 1e-9
    assert psnr(a, a) == float("inf")


# ---------------------------------------------------------------------------
# Mask channel


def test_concat_mask_channel_appends_last():
    z = torch.randn(3, 8, 8, 4)
    m = MaskVideo(np.random.rand(3, 8, 8), binary=False, kind="generated")
    zc = concat_mask_channel(z, m)
    assert zc.shape == (3, 8, 8, 5)
    assert torch.equal(zc[..., :4], z)
    assert np.allclose(zc[..., 4].numpy(), np.asarray(m.values, dtype=np.float32))


def test_concat_all_ones_mask():
    z = torch.randn(2, 8, 8, 4)
    m = MaskVideo(np.ones((2, 8, 8)), binary=True, kind="per_frame")
    zc = concat_mask_channel(z, m)
    assert bool((zc[..., -1] == 1).all())


def test_concat_broadcasts_single_frame_mask():
    z = torch.randn(5, 8, 8, 4)
    m = MaskVideo(np.ones((1, 8, 8)), binary=True, kind="prior")
    zc = concat_mask_channel(z, m)
    assert zc.shape == (5, 8, 8, 5)


def test_concat_rejects_mismatches():
    z = torch.randn(3, 8, 8, 4)
    with pytest.raises(ValueError, match="frame"):
        concat_mask_channel(
            z, MaskVideo(np.ones((2, 8, 8)), binary=True, kind="union")
        )
    with pytest.raises(ValueError, match="resolution"):
        concat_mask_channel(
            z, MaskVideo(np.ones((3, 4, 4)), binary=True, kind="per_frame")
        )


# ---------------------------------------------------------------------------
# Noise predictor


@pytest.fixture(scope="module")
def small_predictor():
    torch.manual_seed(3)
    return NoisePredictor(stage="stage1", base=8).eval()


def _text(prompt="move the hand to the left"):
    return embed_text(prompt)


def test_predictor_output_shape(small_predictor):
    z = torch.randn(4, 16, 16, 5)
    out = predict_noise(small_predictor, z, 100, _text())
    assert out.shape == (4, 16, 16, 4)


def test_predictor_batched(small_predictor):
    z = torch.randn(2, 4, 8, 8, 5)
    out = predict_noise(small_predictor, z, torch.tensor([10, 500]), _text())
    assert out.shape == (2, 4, 8, 8, 4)


def test_predictor_frame_count_polymorphic(small_predictor):
    t = _text()
    for frames in (15, 16):
        z = torch.randn(frames, 8, 8, 5)
        assert predict_noise(small_predictor, z, 7, t).shape == (frames, 8, 8, 4)


def test_predictor_deterministic_in_eval(small_predictor):
    z = torch.randn(3, 8, 8, 5)
    t = _text()
    with torch.no_grad():
        a = predict_noise(small_predictor, z, 42, t)
        b = predict_noise(small_predictor, z, 42, t)
    assert torch.equal(a, b)


def test_predictor_timestep_sensitivity(small_predictor):
    z = torch.randn(3, 8, 8, 5)
    t = _text()
    with torch.no_grad():
        a = predict_noise(small_predictor, z, 10, t)
        b = predict_noise(small_predictor, z, 900, t)
    assert not torch.allclose(a, b)


def test_predictor_text_sensitivity(small_predictor):
    z = torch.randn(3, 8, 8, 5)
    with torch.no_grad():
        a = predict_noise(small_predictor, z, 100, _text("move the hand to the left"))
        b = predict_noise(small_predictor, z, 100, _text("lift the hand upward"))
    assert not torch.allclose(a, b)


def test_predictor_mask_channel_sensitivity(small_predictor):
    z = torch.randn(3, 8, 8, 5)
    z2 = z.clone()
    z2[..., -1] = 1.0 - z2[..., -1]
    with torch.no_grad():
        a = predict_noise(small_predictor, z, 100, _text())
        b = predict_noise(small_predictor, z2, 100, _text())
    assert not torch.allclose(a, b)


def test_predictor_mixes_frames(small_predictor):
    """Permuting input frames must not just permute the output."""
    z = torch.randn(4, 8, 8, 5)
    t = _text()
    perm = torch.tensor([3, 0, 2, 1])
    with torch.no_grad():
        direct = predict_noise(small_predictor, z, 100, t)
        permuted = predict_noise(small_predictor, z[perm], 100, t)
    assert not torch.allclose(permuted, direct[perm])


def test_predictor_rejects_bad_inputs(small_predictor):
    with pytest.raises(ValueError, match="channels"):
        predict_noise(small_predictor, torch.randn(3, 8, 8, 4), 5, _text())
    z = torch.randn(3, 8, 8, 5)
    z[0, 0, 0, 0] = float("nan")
    with pytest.raises(ValueError, match="finite"):
        predict_noise(small_predictor, z, 5, _text())


def test_predictor_rejects_unknown_stage():
    with pytest.raises(ValueError):
        NoisePredictor(stage="stage3")


def test_stage_architectures_identical():
    s1 = parameter_shapes(NoisePredictor(stage="stage1"))
    s2 = parameter_shapes(NoisePredictor(stage="stage2"))
    assert s1 == s2
    assert len(s1) > 0


def test_predictor_gradients_match_finite_differences():
    """Autograd vs central differences on a 10-parameter subset."""
    torch.manual_seed(11)
    model = NoisePredictor(stage="stage1", base=8).double()
    z = torch.randn(2, 8, 8, 5, dtype=torch.float64)
    text = _text().double()
    target = torch.randn(2, 8, 8, 4, dtype=torch.float64)

    def loss_value():
        out = predict_noise(model, z, 25, text)
        return ((out - target) ** 2).mean()

    loss = loss_value()
    loss.backward()

    params = list(model.parameters())
    rng = np.random.default_rng(5)
    h = 1e-6
    checked = 0
    for _ in range(10):
        p = params[rng.integers(len(params))]
        if p.grad is None:
            continue
        flat = p.data.view(-1)
        idx = int(rng.integers(flat.numel()))
        orig = float(flat[idx])
        with torch.no_grad():
            flat[idx] = orig + h
            up = float(loss_value())
            flat[idx] = orig - h
            down = float(loss_value())
            flat[idx] = orig
        fd = (up - down) / (2 * h)
        ag = float(p.grad.view(-1)[idx])
        denom = max(abs(fd), abs(ag), 1e-8)
        assert abs(fd - ag) / denom < 1e-3, (fd, ag)
        checked += 1
    assert checked >= 8


def test_predictor_input_gradient_flows(small_predictor):
    z = torch.randn(2, 8, 8, 5, requires_grad=True)
    out = predict_noise(small_predictor, z, 100, _text())
    out.sum().backward()
    assert z.grad is not None
    assert float(z.grad.abs().sum()) > 0


def test_predictor_checkpoint_roundtrip(tmp_path, small_predictor):
    path = tmp_path / "pred.pt"
    save_predictor(small_predictor, path)
    loaded = load_predictor(path, expect_stage="stage1")
    z = torch.randn(2, 8, 8, 5)
    t = _text()
    with torch.no_grad():
        a = predict_noise(small_predictor, z, 33, t)
        b = predict_noise(loaded.eval(), z, 33, t)
    assert torch.equal(a, b)


def test_predictor_checkpoint_stage_mismatch(tmp_path, small_predictor):
    path = tmp_path / "pred.pt"
    save_predictor(small_predictor, path)
    with pytest.raises(ValueError, match="stage"):
        load_predictor(path, expect_stage="stage2")


def test_predictor_checkpoint_kind_mismatch(tmp_path):
    path = tmp_path / "codec.pt"
    save_codec(LatentCodec(base=16), path)
    with pytest.raises(ValueError, match="predictor"):
        load_predictor(path)
