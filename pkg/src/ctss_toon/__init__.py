"""Two-branch cartoonization GAN with a texture-saliency patch sampler."""

__version__ = "0.1.0"
