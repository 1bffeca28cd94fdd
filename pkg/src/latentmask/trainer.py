"""Two-stage training orchestration.

Stage 1 pretrains the latent projector (reconstruction + VQ + adversarial)
and freezes it. Stage 2 trains the masked autoencoder on frozen-encoder
latents under a rising mask-ratio schedule. A third entry point fine-tunes
a classifier head on the pretrained encoder for accuracy-time metrics.
"""

import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import masked_autoencoder as mae_mod
from . import projector as proj_mod
from . import scheduler as sched_mod
from .metrics import IterationRecord, MetricsLog
from .numerics import configure_determinism
from .optim import build_optimizer

CHECKPOINT_VERSION = 1
DISC_WARMUP_FRACTION = 0.2


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 1.5e-4
    weight_decay: float = 0.05
    batch_size: int = 16
    total_steps: int = 1000
    seed: int = 0
    optimizer: str = "adaptive_nesterov"  # or "adamw"
    warmup_fraction: float = 0.05
    determinism: bool = True
    eval_interval: int = 50
    linear_probe: bool = False

    def __post_init__(self):
        if self.base_lr <= 0 or self.total_steps < 1:
            raise ValueError("need base_lr > 0 and total_steps >= 1")


# ---------------------------------------------------------------------------
# config files / manifests


def _to_dict(cfg):
    return dataclasses.asdict(cfg)


def load_config(path):
    """Read a JSON config file with optional sections projector / mae /
    schedule / train; missing fields fall back to dataclass defaults."""
    with open(path) as fh:
        raw = json.load(fh)
    return {
        "projector": proj_mod.ProjectorConfig(**raw.get("projector", {})),
        "mae": mae_mod.MAEConfig(**raw.get("mae", {})),
        "schedule": sched_mod.ScheduleConfig(**raw.get("schedule", {})),
        "train": TrainConfig(**raw.get("train", {})),
    }


def config_hash(configs):
    """Stable content hash of resolved configs (dataclasses or dicts)."""
    snapshot = {k: _to_dict(v) if dataclasses.is_dataclass(v) else v
                for k, v in sorted(configs.items())}
    blob = json.dumps(snapshot, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def write_manifest(out_dir, command, configs, seed):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": {k: _to_dict(v) if dataclasses.is_dataclass(v) else v
                   for k, v in configs.items()},
        "seed": seed,
        "config_hash": config_hash(configs),
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, stage, configs, states, step):
    payload = {
        "version": CHECKPOINT_VERSION,
        "stage": stage,
        "config": {k: _to_dict(v) for k, v in configs.items()},
        "states": states,
        "step": step,
    }
    torch.save(payload, path)


def load_checkpoint(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    return payload


def load_projector(path):
    ckpt = load_checkpoint(path)
    if ckpt["stage"] != "lsp":
        raise ValueError(f"expected an lsp checkpoint, got stage {ckpt['stage']!r}")
    cfg = proj_mod.ProjectorConfig(**ckpt["config"]["projector"])
    model = proj_mod.LatentProjector(cfg)
    model.load_state_dict(ckpt["states"]["projector"])
    freeze(model)
    return model


def load_masked_autoencoder(path):
    ckpt = load_checkpoint(path)
    if ckpt["stage"] != "lsmd":
        raise ValueError(f"expected an lsmd checkpoint, got stage {ckpt['stage']!r}")
    cfg = mae_mod.MAEConfig(**ckpt["config"]["mae"])
    latent_dim = ckpt["config"]["projector"]["latent_dim"]
    model = mae_mod.LatentMaskedAutoencoder(latent_dim, cfg)
    model.load_state_dict(ckpt["states"]["mae"])
    return model, ckpt


def freeze(model):
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def param_hash(model):
    h = hashlib.sha256()
    for name, p in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# shared loop helpers


def _warmup_lr(base_lr, t, total_steps, warmup_fraction):
    warmup = max(1, int(math.ceil(warmup_fraction * total_steps)))
    return base_lr * min(1.0, (t + 1) / warmup)


def _set_lr(optimizer, lr):
    for group in optimizer.param_groups:
        group["lr"] = lr


def _batch_indices(rng, n, batch_size):
    if batch_size >= n:
        return np.arange(n)
    return rng.choice(n, size=batch_size, replace=False)


def _check_finite(loss, out_dir, stage, configs, states, step):
    if torch.isfinite(loss):
        return
    if out_dir is not None:
        save_checkpoint(Path(out_dir) / f"diagnostic-{stage}.pt",
                        stage, configs, states, step)
    raise RuntimeError(f"non-finite loss at step {step} in stage {stage}")


def mask_seed(seed, step, sample):
    return np.random.SeedSequence(entropy=seed, spawn_key=(step, sample))


# ---------------------------------------------------------------------------
# stage 1: projector pretraining


def pretrain_projector(images, proj_cfg, train_cfg, out_dir=None):
    """Pretrain the projector on an in-memory (N, 3, H, W) image tensor.

    Alternates generator-side (VQ + weighted adversarial) and
    discriminator-side updates; the adversarial term switches on after a
    warm-up fraction of the run. Returns (projector, discriminator, log).
    """
    if images.numel() == 0:
        raise ValueError("dataset is empty")
    configure_determinism(train_cfg.seed, train_cfg.determinism)
    model = proj_mod.LatentProjector(proj_cfg)
    disc = proj_mod.PatchDiscriminator()
    gen_opt = build_optimizer(train_cfg.optimizer, model.parameters(),
                              train_cfg.base_lr, train_cfg.weight_decay)
    disc_opt = build_optimizer(train_cfg.optimizer, disc.parameters(),
                               train_cfg.base_lr, train_cfg.weight_decay)
    rng = np.random.default_rng(train_cfg.seed)
    log = MetricsLog()
    configs = {"projector": proj_cfg, "train": train_cfg}
    adv_start = int(DISC_WARMUP_FRACTION * train_cfg.total_steps)

    for t in range(train_cfg.total_steps):
        t0 = time.perf_counter()
        lr = _warmup_lr(train_cfg.base_lr, t, train_cfg.total_steps,
                        train_cfg.warmup_fraction)
        _set_lr(gen_opt, lr)
        _set_lr(disc_opt, lr)
        batch = images[_batch_indices(rng, images.shape[0], train_cfg.batch_size)]

        x_hat, z, q = model(batch)
        z_q = model.lookup(q.indices)
        vq = proj_mod.vq_loss(batch, x_hat, z, z_q, proj_cfg.beta, reduction="mean")
        adv_active = proj_cfg.gamma_mode == "adaptive" or proj_cfg.gamma > 0
        if adv_active and t >= adv_start:
            _, g_loss = proj_mod.adv_loss(disc(batch), disc(x_hat))
            if proj_cfg.gamma_mode == "adaptive":
                rec = ((batch - x_hat) ** 2).mean()
                gamma = proj_mod.adaptive_gamma(rec, g_loss, model.decoder.head.weight)
            else:
                gamma = proj_cfg.gamma
            loss = proj_mod.total_loss(vq, g_loss, gamma)
        else:
            loss = vq
        states = {"projector": model.state_dict(), "discriminator": disc.state_dict()}
        _check_finite(loss, out_dir, "lsp", configs, states, t)
        gen_opt.zero_grad()
        loss.backward()
        gen_opt.step()

        if adv_active and t >= adv_start:
            d_loss, _ = proj_mod.adv_loss(disc(batch), disc(x_hat.detach()))
            _check_finite(d_loss, out_dir, "lsp", configs, states, t)
            disc_opt.zero_grad()
            d_loss.backward()
            disc_opt.step()

        log.append(IterationRecord(step=t, wall_time=time.perf_counter() - t0,
                                   loss=float(loss.detach())))

    freeze(model)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out_dir / "checkpoint.pt", "lsp", configs,
                        {"projector": model.state_dict(),
                         "discriminator": disc.state_dict(),
                         "gen_opt": gen_opt.state_dict(),
                         "disc_opt": disc_opt.state_dict()},
                        train_cfg.total_steps)
        log.to_csv(out_dir / "log.csv")
    return model, disc, log


# ---------------------------------------------------------------------------
# stage 2: masked autoencoder training


def train_masked(images, projector, mae_cfg, sched_cfg, train_cfg, out_dir=None,
                 lsp_configs=None):
    """Train the masked autoencoder on frozen-encoder latents.

    The autoencoder consumes the pre-quantization latent; each sample gets
    a fresh mask plan at the step's scheduled ratio. Returns
    (model, log, ratios) with the per-step ratios actually applied.
    """
    if images.numel() == 0:
        raise ValueError("dataset is empty")
    configure_determinism(train_cfg.seed, train_cfg.determinism)
    freeze(projector)
    proj_cfg = projector.cfg
    model = mae_mod.LatentMaskedAutoencoder(proj_cfg.latent_dim, mae_cfg)
    opt = build_optimizer(train_cfg.optimizer, model.parameters(),
                          train_cfg.base_lr, train_cfg.weight_decay)
    rng = np.random.default_rng(train_cfg.seed)
    log = MetricsLog()
    ratios = []
    configs = {"projector": proj_cfg, "mae": mae_cfg,
               "schedule": sched_cfg, "train": train_cfg}
    p = mae_cfg.patch_size

    for t in range(train_cfg.total_steps):
        t0 = time.perf_counter()
        _set_lr(opt, _warmup_lr(train_cfg.base_lr, t, train_cfg.total_steps,
                                train_cfg.warmup_fraction))
        batch = images[_batch_indices(rng, images.shape[0], train_cfg.batch_size)]
        with torch.no_grad():
            z = projector.encode(batch)
        h, w = z.shape[1], z.shape[2]
        l = (h // p) * (w // p)
        ratio = sched_mod.ratio_at(t, sched_cfg)
        ratios.append(ratio)

        # one fresh plan per sample; equal counts at a shared ratio allow
        # a single batched forward
        plans = [sched_mod.make_mask(l, ratio, mask_seed(train_cfg.seed, t, i))
                 for i in range(batch.shape[0])]
        z_rec = model.forward_plans(z, plans)
        loss = mae_mod.lir_loss_batch(z, z_rec, plans, p)
        _check_finite(loss, out_dir, "lsmd", configs, {"mae": model.state_dict()}, t)
        opt.zero_grad()
        loss.backward()
        opt.step()
        log.append(IterationRecord(step=t, wall_time=time.perf_counter() - t0,
                                   loss=float(loss.detach())))

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out_dir / "checkpoint.pt", "lsmd", configs,
                        {"mae": model.state_dict(), "opt": opt.state_dict()},
                        train_cfg.total_steps)
        log.to_csv(out_dir / "log.csv")
        with open(out_dir / "ratio.csv", "w") as fh:
            fh.write("step,ratio\n")
            for t, r in enumerate(ratios):
                fh.write(f"{t},{r!r}\n")
    return model, log, ratios


# ---------------------------------------------------------------------------
# classifier fine-tuning


class Classifier(torch.nn.Module):
    """Mean-pooled encoder features into a linear head; no masking."""

    def __init__(self, projector, mae_model, num_classes, probe=False):
        super().__init__()
        self.projector = projector
        self.mae = mae_model
        self.head = torch.nn.Linear(mae_model.cfg.d_model, num_classes)
        self.probe = probe
        if probe:
            for p in self.mae.parameters():
                p.requires_grad_(False)

    def trainable_parameters(self):
        params = list(self.head.parameters())
        if not self.probe:
            params += list(self.mae.parameters())
        return params

    def forward(self, x):
        with torch.no_grad():
            z = self.projector.encode(x)
        feats = self.mae.encode_unmasked(z)
        return self.head(feats.mean(dim=1))


def _topk_accuracy(logits, labels, k):
    topk = logits.topk(min(k, logits.shape[1]), dim=1).indices
    return float((topk == labels.unsqueeze(1)).any(dim=1).float().mean())


def finetune_classifier(images, labels, projector, mae_model, train_cfg,
                        num_classes, out_dir=None):
    """Fine-tune (or linear-probe) a classification head; logs top-1/top-5
    accuracy at every eval interval for accuracy-time metrics."""
    if labels is None:
        raise ValueError("labeled dataset required")
    if int(labels.max()) >= num_classes:
        raise ValueError(f"label {int(labels.max())} out of range for {num_classes} classes")
    configure_determinism(train_cfg.seed, train_cfg.determinism)
    freeze(projector)
    clf = Classifier(projector, mae_model, num_classes, probe=train_cfg.linear_probe)
    opt = build_optimizer(train_cfg.optimizer, clf.trainable_parameters(),
                          train_cfg.base_lr, train_cfg.weight_decay)
    rng = np.random.default_rng(train_cfg.seed)
    log = MetricsLog()

    def evaluate():
        clf.eval()
        with torch.no_grad():
            logits = clf(images)
        clf.train()
        return _topk_accuracy(logits, labels, 1), _topk_accuracy(logits, labels, 5)

    for t in range(train_cfg.total_steps):
        t0 = time.perf_counter()
        _set_lr(opt, _warmup_lr(train_cfg.base_lr, t, train_cfg.total_steps,
                                train_cfg.warmup_fraction))
        idx = _batch_indices(rng, images.shape[0], train_cfg.batch_size)
        logits = clf(images[idx])
        loss = F.cross_entropy(logits, labels[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
        top1 = top5 = None
        if t == 0 or (t + 1) % train_cfg.eval_interval == 0 or t == train_cfg.total_steps - 1:
            top1, top5 = evaluate()
        log.append(IterationRecord(step=t, wall_time=time.perf_counter() - t0,
                                   loss=float(loss.detach()), top1=top1, top5=top5))

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log.to_csv(out_dir / "log.csv")
    return clf, log


# ---------------------------------------------------------------------------
# full-pipeline reconstruction


def reconstruct(x, projector, mae_model, ratio, seed):
    """Pixels -> latent -> masked reconstruction -> quantize -> pixels.

    x: (3, H, W) or (B, 3, H, W) in [-1, 1]; deterministic in (x, ratio, seed).
    """
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    p = mae_model.cfg.patch_size
    f = projector.cfg.scale_factor
    if x.shape[-2] % (f * p) or x.shape[-1] % (f * p):
        raise ValueError(f"image dims must be multiples of {f * p}")
    with torch.no_grad():
        z = projector.encode(x)
        h, w = z.shape[1], z.shape[2]
        l = (h // p) * (w // p)
        plan = sched_mod.make_mask(l, ratio, seed)
        z_rec = mae_model(z, plan)
        q = projector.quantize(z_rec)
        x_hat = projector.decode(q.grid)
    return x_hat.squeeze(0) if squeeze else x_hat
