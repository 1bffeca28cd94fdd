import math

import pytest
import torch

from latentmask.masked_autoencoder import (Block, LatentMaskedAutoencoder, MAEConfig,
                                           PatchEmbed, add_positions, grid_coords,
                                           lir_loss, lir_loss_batch, patches_of, spe,
                                           spe_table)
from latentmask.scheduler import make_mask


def tiny_cfg(**kw):
    base = dict(patch_size=2, d_model=16, d_decoder=16, heads=2,
                encoder_blocks=1, decoder_blocks=1)
    base.update(kw)
    return MAEConfig(**base)


def tiny_model(latent_dim=3, **kw):
    torch.manual_seed(0)
    return LatentMaskedAutoencoder(latent_dim, tiny_cfg(**kw))


# --- config -----------------------------------------------------------------


def test_mode_presets_sum_to_twenty():
    for mode, (enc, dec) in (("discriminant", (12, 8)), ("generative", (8, 12))):
        cfg = MAEConfig(mode=mode)
        assert (cfg.encoder_blocks, cfg.decoder_blocks) == (enc, dec)
        assert cfg.encoder_blocks + cfg.decoder_blocks == 20


def test_config_validation():
    with pytest.raises(ValueError):
        MAEConfig(mode="other")
    with pytest.raises(ValueError):
        MAEConfig(d_model=510)
    with pytest.raises(ValueError):
        MAEConfig(encoder_blocks=2, decoder_blocks=None)


# --- patch embedding --------------------------------------------------------


def test_patch_embed_token_counts():
    pe = PatchEmbed(latent_dim=3, d_model=16, patch_size=2)
    assert pe(torch.randn(1, 28, 28, 3)).shape == (1, 196, 16)
    pe = PatchEmbed(latent_dim=3, d_model=16, patch_size=4)
    assert pe(torch.randn(1, 4, 4, 3)).shape == (1, 1, 16)


def test_patch_embed_p1_is_per_cell_linear():
    pe = PatchEmbed(latent_dim=3, d_model=8, patch_size=1)
    z = torch.randn(1, 4, 4, 3)
    out = pe(z)
    assert out.shape == (1, 16, 8)
    w = pe.proj.weight.squeeze(-1).squeeze(-1)
    expect = z.reshape(16, 3) @ w.t() + pe.proj.bias
    assert torch.allclose(out[0], expect, atol=1e-6)


def test_patch_embed_rejects_indivisible():
    pe = PatchEmbed(latent_dim=3, d_model=8, patch_size=2)
    with pytest.raises(ValueError):
        pe(torch.randn(1, 5, 4, 3))


def test_patch_embed_row_major_order():
    # patch_size 1, identity-ish projection: token i must come from cell
    # (i // w, i % w)
    pe = PatchEmbed(latent_dim=2, d_model=2, patch_size=1)
    with torch.no_grad():
        pe.proj.weight.copy_(torch.eye(2).reshape(2, 2, 1, 1))
        pe.proj.bias.zero_()
    z = torch.arange(24, dtype=torch.float32).reshape(1, 3, 4, 2)
    out = pe(z)
    for i in range(12):
        assert torch.equal(out[0, i], z[0, i // 4, i % 4])


# --- position codes ---------------------------------------------------------


def test_spe_origin_alternates_zero_one():
    v = spe(0, 0, 8)
    assert torch.equal(v, torch.tensor([0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]))


def test_spe_bounded():
    for cx in range(5):
        for cy in range(5):
            assert spe(cx, cy, 16).abs().max() <= 1.0


def test_spe_distinct_up_to_64():
    vs = torch.stack([spe(cx, cy, 32) for cx in range(64) for cy in range(64)])
    # pairwise distinctness via exact row dedup
    assert torch.unique(vs, dim=0).shape[0] == 64 * 64


def test_spe_requires_divisible_width():
    with pytest.raises(ValueError):
        spe(0, 0, 6)


def test_grid_coords_law():
    for h, w in ((4, 4), (8, 2), (32, 32)):
        coords = grid_coords(h * w, w)
        for i, (cx, cy) in enumerate(coords):
            assert cx == i // w and cy == i % w


def test_add_positions_roundtrip_identity():
    torch.manual_seed(1)
    coords = grid_coords(12, 4)
    t = torch.randn(2, 12, 16, dtype=torch.float64)
    back = add_positions(add_positions(t, coords, +1), coords, -1)
    assert (back - t).abs().max() < 1e-12


def test_add_positions_zero_base_equals_table():
    coords = grid_coords(6, 3)
    out = add_positions(torch.zeros(1, 6, 8), coords, +1)
    assert torch.equal(out[0], spe_table(coords, 8))


# --- encoder / decoder ------------------------------------------------------


def test_encode_visible_counts():
    model = tiny_model()
    z = torch.randn(1, 28, 28, 3)
    tokens = model.patch_embed(z)
    full = model.encode_visible(tokens, make_mask(196, 0.0, 0))
    assert full.shape == (1, 196, 16)
    part = model.encode_visible(tokens, make_mask(196, 0.75, 0))
    assert part.shape == (1, 49, 16)


def test_encode_visible_rejects_mismatched_plan():
    model = tiny_model()
    tokens = model.patch_embed(torch.randn(1, 4, 4, 3))
    with pytest.raises(ValueError):
        model.encode_visible(tokens, make_mask(9, 0.5, 0))


def test_encode_visible_rejects_fully_masked():
    model = tiny_model()
    tokens = model.patch_embed(torch.randn(1, 4, 4, 3))
    with pytest.raises(ValueError):
        model.encode_visible(tokens, make_mask(4, 1.0, 0))


@pytest.mark.parametrize("h,w,p", [(4, 4, 2), (8, 8, 2), (6, 4, 2), (4, 4, 1)])
def test_forward_shape_law(h, w, p):
    model = tiny_model(patch_size=p)
    l = (h // p) * (w // p)
    plan = make_mask(l, 0.5, 0)
    z = torch.randn(2, h, w, 3)
    assert model(z, plan).shape == (2, h, w, 3)


def test_forward_deterministic():
    model = tiny_model()
    z = torch.randn(1, 4, 4, 3)
    plan = make_mask(4, 0.5, 7)
    with torch.no_grad():
        a, b = model(z, plan), model(z, plan)
    assert torch.equal(a, b)


def test_all_masked_except_one_still_full_grid():
    model = tiny_model()
    z = torch.randn(1, 8, 8, 3)
    plan = make_mask(16, 15 / 16, 0)
    assert len(plan.unmasked) == 1
    assert model(z, plan).shape == (1, 8, 8, 3)


def test_forward_plans_matches_per_sample_forward():
    model = tiny_model()
    z = torch.randn(3, 4, 4, 3)
    plans = [make_mask(4, 0.5, s) for s in range(3)]
    with torch.no_grad():
        batched = model.forward_plans(z, plans)
        single = torch.cat([model(z[i:i + 1], plans[i]) for i in range(3)])
    assert torch.allclose(batched, single, atol=1e-6)


def test_decode_full_rejects_size_mismatch():
    model = tiny_model()
    with pytest.raises(ValueError):
        model.decode_full(torch.randn(1, 3, 16), make_mask(4, 0.5, 0), 4, 4)


def test_encode_unmasked_feature_shape():
    model = tiny_model()
    feats = model.encode_unmasked(torch.randn(2, 4, 4, 3))
    assert feats.shape == (2, 4, 16)


# --- masked loss -------------------------------------------------------------


def test_lir_loss_identity_zero():
    z = torch.randn(1, 4, 4, 3)
    plan = make_mask(4, 0.5, 0)
    assert float(lir_loss(z, z.clone(), plan, 2)) == 0.0


def test_lir_loss_ignores_unmasked_content():
    torch.manual_seed(2)
    z = torch.randn(1, 4, 4, 2)
    plan = make_mask(4, 0.5, 1)
    z_rec = z.clone()
    # corrupt every unmasked patch; loss must stay zero
    rows = patches_of(z_rec, 2)
    for i in plan.unmasked:
        rows[0, i] += 100.0
    z_rec = rows.reshape(1, 2, 2, 2, 2, 2).permute(0, 1, 3, 2, 4, 5).reshape(1, 4, 4, 2)
    assert float(lir_loss(z, z_rec, plan, 2)) == 0.0


def test_lir_loss_single_patch_constant_error():
    c = 0.7
    z = torch.zeros(1, 4, 4, 3)
    z_rec = torch.full((1, 4, 4, 3), c)
    plan = make_mask(4, 0.25, 0)
    assert len(plan.masked) == 1
    assert float(lir_loss(z, z_rec, plan, 2)) == pytest.approx(c ** 2, rel=1e-6)


def test_lir_loss_empty_mask_zero():
    z = torch.randn(1, 4, 4, 3)
    plan = make_mask(4, 0.0, 0)
    assert float(lir_loss(z, torch.randn_like(z), plan, 2)) == 0.0


def test_lir_loss_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        lir_loss(torch.randn(1, 4, 4, 3), torch.randn(1, 4, 4, 2), make_mask(4, 0.5, 0), 2)


def test_lir_gradient_zero_on_unmasked_cells():
    torch.manual_seed(3)
    z = torch.randn(1, 8, 8, 2)
    z_rec = torch.randn(1, 8, 8, 2, requires_grad=True)
    plan = make_mask(16, 0.5, 0)
    lir_loss(z, z_rec, plan, 2).backward()
    grad_rows = patches_of(z_rec.grad, 2)
    for i in plan.unmasked:
        assert torch.all(grad_rows[0, i] == 0)
    for i in plan.masked:
        assert torch.any(grad_rows[0, i] != 0)


def test_lir_loss_batch_matches_per_sample_mean():
    torch.manual_seed(4)
    z = torch.randn(3, 4, 4, 2)
    z_rec = torch.randn(3, 4, 4, 2)
    plans = [make_mask(4, 0.5, s) for s in range(3)]
    batched = float(lir_loss_batch(z, z_rec, plans, 2))
    singles = [float(lir_loss(z[i:i + 1], z_rec[i:i + 1], plans[i], 2)) for i in range(3)]
    assert batched == pytest.approx(sum(singles) / 3, rel=1e-6)
