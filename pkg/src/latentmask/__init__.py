"""Latent-space masked autoencoding with progressive mask-ratio schedules.

A VQ latent projector compresses images into a small latent grid; a masked
ViT-style autoencoder is then trained on those latents with a mask ratio
that rises over training (uniform, piecewise or cosine). Training-time
metrics (mean iteration time, loss-decrease time/iterations, accuracy-gain
time) quantify the schedule's effect versus a fixed ratio.
"""

__version__ = "0.1.0"
