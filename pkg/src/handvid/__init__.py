"""handvid: two-stage hand-centric text-and-image conditioned video diffusion.

Stage 1 generates a spatio-temporal motion-area mask from a context image
and an action prompt; stage 2 generates the video conditioned on that mask
and is trained with a hand refinement loss computed through a frozen
differentiable keypoint detector. A synthetic articulated-hand world
provides exact ground truth.
"""

__version__ = "0.1.0"

# Spatial downsampling factor of the latent codec; frame sizes must divide it.
CODEC_DOWNSAMPLE = 4
