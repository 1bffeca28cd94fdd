"""Latent-space projector: convolutional encoder/decoder around a learned
vector-quantization codebook, with a patch discriminator for adversarial
pretraining. Once pretrained the projector is frozen and only its encoder
(and, on the generative path, quantizer + decoder) are consulted.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

LOGIT_EPS = 1e-7


@dataclass(frozen=True)
class ProjectorConfig:
    scale_factor: int = 8
    latent_dim: int = 8
    codebook_size: int = 64
    beta: float = 0.25
    gamma_mode: str = "fixed"  # "fixed" | "adaptive"
    gamma: float = 0.0
    base_channels: int = 32

    def __post_init__(self):
        if self.scale_factor < 1 or (self.scale_factor & (self.scale_factor - 1)):
            raise ValueError(f"scale_factor must be a positive power of two, got {self.scale_factor}")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.codebook_size < 2:
            raise ValueError("codebook_size must be >= 2")
        if self.gamma_mode not in ("fixed", "adaptive"):
            raise ValueError(f"unknown gamma_mode {self.gamma_mode!r}")


@dataclass
class LatentImage:
    """Compressed image grid, shape (h, w, d) with h=H/f, w=W/f."""

    grid: torch.Tensor
    source_dims: tuple


@dataclass
class QuantizedLatent:
    """Snapped latent grid plus the codebook indices that produced it."""

    grid: torch.Tensor
    indices: torch.Tensor


def nearest_codes(z, entries):
    """Exact nearest-neighbor indices with lowest-index tie-breaking.

    z: (..., d), entries: (K, d). Ties are resolved to the smallest k by
    minimizing over candidate indices at the exact minimal distance, which
    avoids relying on argmin's unspecified tie behavior.
    """
    if z.shape[-1] != entries.shape[-1]:
        raise ValueError(f"latent dim {z.shape[-1]} != codebook dim {entries.shape[-1]}")
    flat = z.reshape(-1, z.shape[-1])
    # direct differences rather than the expanded quadratic form: crafted
    # equidistant cells must compare equal in floating point
    d2 = ((flat.unsqueeze(1) - entries.unsqueeze(0)) ** 2).sum(-1)
    K = entries.shape[0]
    at_min = d2 == d2.amin(dim=1, keepdim=True)
    cand = torch.where(at_min, torch.arange(K, device=z.device).expand_as(d2),
                       torch.full_like(d2, K, dtype=torch.long))
    return cand.amin(dim=1).reshape(z.shape[:-1])


class _CopyGradient(torch.autograd.Function):
    """Straight-through: forward emits the quantized values exactly;
    backward hands the incoming gradient to the encoder output unchanged."""

    @staticmethod
    def forward(ctx, z, z_q):
        return z_q

    @staticmethod
    def backward(ctx, grad_out):
        return grad_out, None


def quantize(z, entries):
    """Snap each latent cell to its nearest codeword.

    Returns a QuantizedLatent whose grid holds codebook rows bit-exactly,
    while gradients flowing into the grid are copied to z untouched.
    Accepts a LatentImage or a raw (..., d) tensor.
    """
    grid_in = z.grid if isinstance(z, LatentImage) else z
    if entries.numel() == 0:
        raise ValueError("codebook is empty")
    indices = nearest_codes(grid_in.detach(), entries.detach())
    z_q = entries[indices]
    grid = _CopyGradient.apply(grid_in, z_q.detach())
    return QuantizedLatent(grid=grid, indices=indices)


def vq_loss(x, x_hat, z, z_q, beta, reduction="sum", stopped=None):
    """Reconstruction + codebook + commitment terms.

    z_q must be the differentiable codebook lookup (gradients from the
    middle term update only the codebook; the commitment term only the
    encoder). reduction="mean" rescales each term by its element count,
    which the trainer uses for size-independent loss magnitudes.

    stopped: optional (z_const, z_q_const) pair overriding the
    stop-gradient copies; the gradient suite uses it to hold the stopped
    arguments fixed while perturbing the live ones, which is what the
    stop-gradient operator means under finite differences.
    """
    z_stop, zq_stop = (z.detach(), z_q.detach()) if stopped is None else stopped
    red = torch.sum if reduction == "sum" else torch.mean
    rec = red((x - x_hat) ** 2)
    codebook_term = red((z_stop - z_q) ** 2)
    commit = red((zq_stop - z) ** 2)
    return rec + codebook_term + beta * commit


def _clamped_prob(logits):
    return torch.sigmoid(logits).clamp(LOGIT_EPS, 1.0 - LOGIT_EPS)


def adv_loss(real_logits, fake_logits):
    """Patch-level adversarial objectives.

    Returns (d_loss, g_loss): the discriminator minimizes
    -[log D(x) + log(1 - D(x_hat))]; the generator path minimizes
    -log D(x_hat). Probabilities are clamped before the log.
    """
    p_real = _clamped_prob(real_logits)
    p_fake = _clamped_prob(fake_logits)
    d_loss = -(torch.log(p_real) + torch.log(1.0 - p_fake)).mean()
    g_loss = -torch.log(p_fake).mean()
    return d_loss, g_loss


def total_loss(vq, adv, gamma):
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    return vq + gamma * adv


def adaptive_gamma(rec_loss, g_loss, last_layer_weight, clamp_max=1e4):
    """Balance the adversarial term by the ratio of gradient norms at the
    decoder's final layer."""
    g_rec = torch.autograd.grad(rec_loss, last_layer_weight, retain_graph=True)[0]
    g_adv = torch.autograd.grad(g_loss, last_layer_weight, retain_graph=True)[0]
    gamma = g_rec.norm() / (g_adv.norm() + 1e-6)
    return float(gamma.clamp(0.0, clamp_max).detach())


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        h = F.gelu(self.conv1(x))
        return x + self.conv2(h)


class Encoder(nn.Module):
    """Strided-convolution stack: log2(f) downsampling stages with a
    residual block after each, then a 1x1 projection to the latent dim."""

    def __init__(self, cfg):
        super().__init__()
        c = cfg.base_channels
        stages = [nn.Conv2d(3, c, 3, padding=1)]
        for _ in range(int(math.log2(cfg.scale_factor))):
            stages += [nn.Conv2d(c, c, 4, stride=2, padding=1), nn.GELU(), ResidualBlock(c)]
        stages += [nn.Conv2d(c, cfg.latent_dim, 1)]
        self.net = nn.Sequential(*stages)

    def forward(self, x):
        return self.net(x)


class Decoder(nn.Module):
    """Mirror of the encoder with transposed convolutions and a tanh-bounded
    RGB output."""

    def __init__(self, cfg):
        super().__init__()
        c = cfg.base_channels
        stages = [nn.Conv2d(cfg.latent_dim, c, 1)]
        for _ in range(int(math.log2(cfg.scale_factor))):
            stages += [ResidualBlock(c), nn.ConvTranspose2d(c, c, 4, stride=2, padding=1), nn.GELU()]
        self.net = nn.Sequential(*stages)
        self.head = nn.Conv2d(c, 3, 3, padding=1)

    def forward(self, z):
        return torch.tanh(self.head(self.net(z)))


class PatchDiscriminator(nn.Module):
    """Three strided convolutions classifying 8x8 effective patches."""

    def __init__(self, base_channels=32):
        super().__init__()
        c = base_channels
        self.net = nn.Sequential(
            nn.Conv2d(3, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(c, 2 * c, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * c, 1, 4, stride=2, padding=1),
        )

    def forward(self, x):
        return self.net(x)


class LatentProjector(nn.Module):
    """Encoder + codebook + decoder. Channel-last (h, w, d) at the latent
    boundary to match how the masked autoencoder consumes it."""

    def __init__(self, cfg: ProjectorConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        self.codebook = nn.Embedding(cfg.codebook_size, cfg.latent_dim)
        self.codebook.weight.data.uniform_(-1.0 / cfg.codebook_size, 1.0 / cfg.codebook_size)

    def encode(self, x):
        """Compress (B, 3, H, W) in [-1, 1] to a (B, h, w, d) latent grid."""
        f = self.cfg.scale_factor
        H, W = x.shape[-2], x.shape[-1]
        if H % f or W % f:
            raise ValueError(f"image dims {H}x{W} must be multiples of scale factor {f}")
        return self.encoder(x).permute(0, 2, 3, 1)

    def quantize(self, z_grid):
        return quantize(z_grid, self.codebook.weight)

    def lookup(self, indices):
        """Differentiable codebook gather (the path that trains the codebook)."""
        return self.codebook(indices)

    def decode(self, grid):
        """Decode a (B, h, w, d) latent grid to (B, 3, H, W) in [-1, 1]."""
        return self.decoder(grid.permute(0, 3, 1, 2))

    def forward(self, x):
        """Full round trip; returns (x_hat, z, quantized)."""
        z = self.encode(x)
        q = self.quantize(z)
        return self.decode(q.grid), z, q
