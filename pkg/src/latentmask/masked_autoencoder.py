"""Masked autoencoder over latent grids.

Patchifies a (h, w, d) latent with a strided convolution, adds 2D sin-cos
position codes, encodes only the visible patches, then decodes the full
sequence (mask token in the hidden slots, position codes subtracted back
out) to a reconstructed latent of identical shape. The training objective
is mean squared error over masked patches only.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

MODE_BLOCKS = {"discriminant": (12, 8), "generative": (8, 12)}


@dataclass(frozen=True)
class MAEConfig:
    patch_size: int = 2
    d_model: int = 512
    d_decoder: int = 1024
    heads: int = 8
    mode: str = "discriminant"  # sets 12+8 or 8+12 unless blocks given explicitly
    encoder_blocks: int = None
    decoder_blocks: int = None
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.mode not in MODE_BLOCKS:
            raise ValueError(f"unknown mode {self.mode!r}")
        if (self.encoder_blocks is None) != (self.decoder_blocks is None):
            raise ValueError("set encoder_blocks and decoder_blocks together or neither")
        if self.encoder_blocks is None:
            enc, dec = MODE_BLOCKS[self.mode]
            object.__setattr__(self, "encoder_blocks", enc)
            object.__setattr__(self, "decoder_blocks", dec)
        for d in (self.d_model, self.d_decoder):
            if d % 4:
                raise ValueError(f"embedding width {d} must be divisible by 4")
        if self.d_model % self.heads or self.d_decoder % self.heads:
            raise ValueError("embedding widths must be divisible by heads")


def sincos_1d(pos, width, dtype=torch.float32, device=None):
    """Interleaved sin/cos ladder of the given (even) width for one scalar
    position: out[2j] = sin(pos * w_j), out[2j+1] = cos(pos * w_j) with
    w_j = 10000^(-2j / width)."""
    assert width % 2 == 0
    j = torch.arange(width // 2, dtype=dtype, device=device)
    omega = torch.pow(torch.tensor(10000.0, dtype=dtype, device=device), -2.0 * j / width)
    angles = pos * omega
    out = torch.empty(width, dtype=dtype, device=device)
    out[0::2] = torch.sin(angles)
    out[1::2] = torch.cos(angles)
    return out


def spe(c_x, c_y, d_model, dtype=torch.float32, device=None):
    """2D spatial position code: sin-cos of the row coordinate over the
    first half-width, of the column coordinate over the second."""
    if d_model % 4:
        raise ValueError("d_model must be divisible by 4")
    half = d_model // 2
    return torch.cat([sincos_1d(c_x, half, dtype, device),
                      sincos_1d(c_y, half, dtype, device)])


def grid_coords(l, w_patches):
    """Row-major patch index -> (c_x, c_y) = (index // w_patches, index % w_patches)."""
    return [(i // w_patches, i % w_patches) for i in range(l)]


def spe_table(coords, d_model, dtype=torch.float32, device=None):
    return torch.stack([spe(cx, cy, d_model, dtype, device) for cx, cy in coords])


def add_positions(tokens, coords, sign, table=None):
    """tokens[i] +/- spe(coords[i]); sign +1 in the encoder, -1 in the
    decoder's position-recall layer."""
    if table is None:
        table = spe_table(coords, tokens.shape[-1], tokens.dtype, tokens.device)
    return tokens + sign * table


class Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        B, N, C = x.shape
        qkv = self.qkv(x).reshape(B, N, 3, self.heads, C // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv.unbind(0)
        attn = F.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        x = (attn @ v).transpose(1, 2).reshape(B, N, C)
        return self.proj(x)


class Block(nn.Module):
    """Pre-norm transformer block: attention then GELU MLP, both residual."""

    def __init__(self, dim, heads, mlp_ratio=4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class PatchEmbed(nn.Module):
    """Strided conv tokenizer: kernel = stride = patch_size, d -> d_model,
    flattened row-major over the patch grid."""

    def __init__(self, latent_dim, d_model, patch_size):
        super().__init__()
        self.patch_size = patch_size
        self.proj = nn.Conv2d(latent_dim, d_model, patch_size, stride=patch_size)

    def forward(self, grid):
        # grid: (B, h, w, d) channel-last
        h, w = grid.shape[1], grid.shape[2]
        p = self.patch_size
        if h % p or w % p:
            raise ValueError(f"latent dims {h}x{w} must be multiples of patch size {p}")
        x = self.proj(grid.permute(0, 3, 1, 2))
        return x.flatten(2).transpose(1, 2)  # (B, l, d_model)


class LatentMaskedAutoencoder(nn.Module):
    def __init__(self, latent_dim, cfg: MAEConfig):
        super().__init__()
        self.cfg = cfg
        self.latent_dim = latent_dim
        self.patch_embed = PatchEmbed(latent_dim, cfg.d_model, cfg.patch_size)
        self.encoder = nn.ModuleList(
            Block(cfg.d_model, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.encoder_blocks))
        self.enc_to_dec = nn.Linear(cfg.d_model, cfg.d_decoder)
        self.mask_token = nn.Parameter(torch.zeros(cfg.d_decoder))
        self.decoder = nn.ModuleList(
            Block(cfg.d_decoder, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.decoder_blocks))
        self.norm = nn.LayerNorm(cfg.d_decoder)
        self.head = nn.Linear(cfg.d_decoder, cfg.patch_size ** 2 * latent_dim)
        nn.init.normal_(self.mask_token, std=0.02)
        # zero-initialized prediction head: the untrained model predicts the
        # zero latent, so the initial loss is the latent variance rather than
        # the (much larger) variance of a randomly-initialized output
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def _coords(self, h, w):
        p = self.cfg.patch_size
        l = (h // p) * (w // p)
        return grid_coords(l, w // p)

    def encode_visible(self, tokens, plan):
        """Gather unmasked tokens (positions already added) and run the
        encoder blocks. tokens: (B, l, d_model)."""
        if plan.l != tokens.shape[1]:
            raise ValueError(f"plan length {plan.l} != sequence length {tokens.shape[1]}")
        if not plan.unmasked:
            raise ValueError("mask plan leaves no visible patches")
        idx = torch.tensor(plan.unmasked, device=tokens.device)
        x = tokens.index_select(1, idx)
        for blk in self.encoder:
            x = blk(x)
        return x

    def decode_full(self, encoded, plan, h, w):
        """Widen to d_decoder, scatter visible tokens back, fill masked slots
        with the mask token, subtract position codes, decode, predict and
        unfold to the (B, h, w, d) latent grid."""
        if encoded.shape[1] != len(plan.unmasked):
            raise ValueError(f"{encoded.shape[1]} encoded tokens for {len(plan.unmasked)} visible slots")
        B = encoded.shape[0]
        x = self.enc_to_dec(encoded)
        full = self.mask_token.to(x.dtype).expand(B, plan.l, -1).clone()
        idx = torch.tensor(plan.unmasked, device=x.device)
        full = full.index_copy(1, idx, x)
        coords = self._coords(h, w)
        full = add_positions(full, coords, -1)
        for blk in self.decoder:
            full = blk(full)
        pred = self.head(self.norm(full))  # (B, l, p*p*d)
        p, d = self.cfg.patch_size, self.latent_dim
        hp, wp = h // p, w // p
        pred = pred.reshape(B, hp, wp, p, p, d).permute(0, 1, 3, 2, 4, 5)
        return pred.reshape(B, h, w, d)

    def forward(self, grid, plan):
        """Full masked reconstruction of a (B, h, w, d) latent grid."""
        h, w = grid.shape[1], grid.shape[2]
        tokens = self.patch_embed(grid)
        tokens = add_positions(tokens, self._coords(h, w), +1)
        encoded = self.encode_visible(tokens, plan)
        return self.decode_full(encoded, plan, h, w)

    def forward_plans(self, grid, plans):
        """Batched forward with one mask plan per sample. All plans must
        share the same ratio (equal mask counts), which holds within a
        training step; per-sample results match `forward` exactly."""
        B = grid.shape[0]
        if len(plans) != B:
            raise ValueError(f"{len(plans)} plans for batch of {B}")
        if len({len(p.unmasked) for p in plans}) != 1:
            raise ValueError("plans must have equal visible counts")
        h, w = grid.shape[1], grid.shape[2]
        tokens = self.patch_embed(grid)
        coords = self._coords(h, w)
        tokens = add_positions(tokens, coords, +1)
        vis = torch.tensor([p.unmasked for p in plans], device=grid.device)
        x = torch.gather(tokens, 1, vis.unsqueeze(-1).expand(-1, -1, tokens.shape[-1]))
        for blk in self.encoder:
            x = blk(x)
        x = self.enc_to_dec(x)
        l = plans[0].l
        full = self.mask_token.to(x.dtype).expand(B, l, -1).clone()
        full = full.scatter(1, vis.unsqueeze(-1).expand(-1, -1, x.shape[-1]), x)
        full = add_positions(full, coords, -1)
        for blk in self.decoder:
            full = blk(full)
        pred = self.head(self.norm(full))
        p, d = self.cfg.patch_size, self.latent_dim
        pred = pred.reshape(B, h // p, w // p, p, p, d).permute(0, 1, 3, 2, 4, 5)
        return pred.reshape(B, h, w, d)

    def encode_unmasked(self, grid):
        """Encoder features for every patch (no masking); used for probing
        and classifier fine-tuning. Returns (B, l, d_model)."""
        h, w = grid.shape[1], grid.shape[2]
        x = self.patch_embed(grid)
        x = add_positions(x, self._coords(h, w), +1)
        for blk in self.encoder:
            x = blk(x)
        return x


def patches_of(grid, patch_size):
    """Reshape (B, h, w, d) into per-patch rows (B, l, p*p*d), row-major."""
    B, h, w, d = grid.shape
    p = patch_size
    x = grid.reshape(B, h // p, p, w // p, p, d).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(B, (h // p) * (w // p), p * p * d)


def lir_loss_batch(z, z_rec, plans, patch_size):
    """Masked-only MSE over a batch with one plan per sample (equal mask
    counts). Mean over all masked cells, matching the per-sample mean."""
    if not plans[0].masked:
        return z_rec.sum() * 0.0
    idx = torch.tensor([p.masked for p in plans], device=z_rec.device)
    target = patches_of(z, patch_size)
    pred = patches_of(z_rec, patch_size)
    gidx = idx.unsqueeze(-1).expand(-1, -1, target.shape[-1])
    diff = torch.gather(target, 1, gidx) - torch.gather(pred, 1, gidx)
    return (diff ** 2).mean()


def lir_loss(z, z_rec, plan, patch_size):
    """Mean squared error over cells of masked patches only; 0 when the
    plan masks nothing."""
    if z.shape != z_rec.shape:
        raise ValueError(f"shape mismatch {tuple(z.shape)} vs {tuple(z_rec.shape)}")
    if not plan.masked:
        return z_rec.sum() * 0.0
    idx = torch.tensor(plan.masked, device=z_rec.device)
    target = patches_of(z, patch_size).index_select(1, idx)
    pred = patches_of(z_rec, patch_size).index_select(1, idx)
    return ((target - pred) ** 2).mean()
