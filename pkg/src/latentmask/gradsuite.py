"""Finite-difference verification of every differentiable operation.

Each entry builds a tiny float64 instance of an operation or module,
wraps it as a scalar function of its parameters (and, where meaningful,
its inputs), and compares autograd against the central-difference oracle
in `numerics.grad_check`.
"""

import torch

from . import masked_autoencoder as mae_mod
from . import projector as proj_mod
from .numerics import HIGH_PRECISION, GradReport, grad_check
from .scheduler import make_mask


def module_fn(module, inputs, post=lambda out: (out ** 2).mean()):
    """Scalar function of a module's parameters via functional_call."""
    names = [n for n, _ in module.named_parameters()]
    params = [p.detach().clone() for _, p in module.named_parameters()]

    def f(*ps):
        out = torch.func.functional_call(module, dict(zip(names, ps)), inputs)
        return post(out)

    return f, params


def _tiny_projector():
    cfg = proj_mod.ProjectorConfig(scale_factor=2, latent_dim=2, codebook_size=4,
                                   base_channels=2)
    return proj_mod.LatentProjector(cfg).double()


def _tiny_mae():
    cfg = mae_mod.MAEConfig(patch_size=2, d_model=8, d_decoder=8, heads=2,
                            encoder_blocks=1, decoder_blocks=1)
    model = mae_mod.LatentMaskedAutoencoder(2, cfg).double()
    # the prediction head ships zero-initialized; randomize it here so its
    # gradients (and everything upstream of it) are exercised non-trivially
    torch.nn.init.normal_(model.head.weight, std=0.5)
    torch.nn.init.normal_(model.head.bias, std=0.5)
    return model


def run_all(seed=0, tol=1e-4):
    """Run the whole suite; returns a list of GradReports."""
    torch.manual_seed(seed)
    g = torch.Generator().manual_seed(seed)

    def randn(*shape):
        return torch.randn(*shape, generator=g, dtype=HIGH_PRECISION)

    reports = []

    def check(name, f, params, **kw):
        kw.setdefault("eps", (1e-5, 1e-4, 1e-3))
        reports.append(grad_check(f, params, op_name=name, tol=tol, **kw))

    # primitives
    check("matmul", lambda a, b: (a @ b).pow(2).mean(), [randn(3, 4), randn(4, 2)])
    check("conv2d", lambda x, w: torch.nn.functional.conv2d(x, w).pow(2).mean(),
          [randn(1, 2, 4, 4), randn(3, 2, 2, 2)])
    check("add_mul", lambda a, b: (a + b * a).pow(2).mean(), [randn(3, 3), randn(3, 3)])
    check("layer_norm",
          lambda x: torch.nn.functional.layer_norm(x, x.shape[-1:]).pow(2).mean(),
          [randn(2, 6)])
    check("softmax", lambda x: torch.softmax(x, -1).pow(2).mean(), [randn(2, 5)])
    check("gelu", lambda x: torch.nn.functional.gelu(x).pow(2).mean(), [randn(10)])
    check("mse", lambda a, b: torch.nn.functional.mse_loss(a, b), [randn(4, 4), randn(4, 4)])
    check("gather_concat",
          lambda a, b: torch.cat([a.index_select(0, torch.tensor([2, 0])), b]).pow(2).mean(),
          [randn(3, 4), randn(2, 4)])

    # projector encoder / decoder
    proj = _tiny_projector()
    x = randn(1, 3, 4, 4)
    f, params = module_fn(proj.encoder, (x,))
    check("projector_encoder", f, params)
    z_chw = randn(1, 2, 2, 2)
    f, params = module_fn(proj.decoder, (z_chw,))
    check("projector_decoder", f, params)

    # vq loss terms (indices frozen at the unperturbed nearest codes)
    z = randn(2, 2, 2)
    entries0 = randn(4, 2)
    idx = proj_mod.nearest_codes(z, entries0)
    zq0 = entries0[idx]
    x_img, x_hat0 = randn(4), randn(4)

    def f_vq(x_hat, zz, entries):
        return proj_mod.vq_loss(x_img, x_hat, zz, entries[idx], 0.25,
                                reduction="mean", stopped=(z, zq0))

    check("vq_loss", f_vq, [x_hat0, z, entries0])

    # discriminator + adversarial losses
    disc = proj_mod.PatchDiscriminator(base_channels=2).double()
    real, fake = randn(1, 3, 8, 8), randn(1, 3, 8, 8)
    dnames = [n for n, _ in disc.named_parameters()]
    dparams = [p.detach().clone() for _, p in disc.named_parameters()]

    def f_disc(*ps):
        mapping = dict(zip(dnames, ps))
        d_loss, _ = proj_mod.adv_loss(
            torch.func.functional_call(disc, mapping, (real,)),
            torch.func.functional_call(disc, mapping, (fake,)))
        return d_loss

    check("discriminator_adv", f_disc, dparams)

    # patch embedding
    mae = _tiny_mae()
    grid = randn(1, 4, 4, 2)
    f, params = module_fn(mae.patch_embed, (grid,))
    check("patch_embed", f, params)

    # position add + recall round trip
    coords = mae_mod.grid_coords(4, 2)
    check("spe_add_recall",
          lambda t: mae_mod.add_positions(
              mae_mod.add_positions(t, coords, +1), coords, -1).pow(2).mean(),
          [randn(1, 4, 8)])

    # transformer block
    block = mae_mod.Block(8, 2).double()
    f, params = module_fn(block, (randn(1, 4, 8),))
    check("transformer_block", f, params)

    # prediction head
    f, params = module_fn(mae.head, (randn(1, 4, 8),))
    check("prediction_head", f, params)

    # masked reconstruction loss end to end, parameters and input latent
    plan = make_mask(4, 0.5, seed=seed)
    names = [n for n, _ in mae.named_parameters()]
    mparams = [p.detach().clone() for _, p in mae.named_parameters()]
    target = randn(1, 4, 4, 2)

    def f_lir(zin, *ps):
        z_rec = torch.func.functional_call(mae, dict(zip(names, ps)), (zin, plan))
        return mae_mod.lir_loss(target, z_rec, plan, 2)

    check("lir_end_to_end", f_lir, [randn(1, 4, 4, 2)] + mparams)

    return reports
