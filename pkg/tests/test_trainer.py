import json

import numpy as np
import pytest
import torch

from latentmask.masked_autoencoder import MAEConfig
from latentmask.projector import ProjectorConfig
from latentmask.scheduler import ScheduleConfig, ratio_at
from latentmask.trainer import (TrainConfig, config_hash, finetune_classifier,
                                freeze, load_checkpoint, load_config,
                                load_masked_autoencoder, load_projector, mask_seed,
                                param_hash, pretrain_projector, reconstruct,
                                save_checkpoint, train_masked, write_manifest,
                                _warmup_lr)

PROJ_CFG = ProjectorConfig(scale_factor=8, latent_dim=4, codebook_size=8,
                           base_channels=8, gamma_mode="fixed", gamma=0.0)
MAE_CFG = MAEConfig(patch_size=1, d_model=32, d_decoder=32, heads=2,
                    encoder_blocks=1, decoder_blocks=1)


def short_train_cfg(**kw):
    base = dict(base_lr=1e-3, batch_size=8, total_steps=6, seed=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def pretrained(corpus):
    proj, disc, log = pretrain_projector(
        corpus, PROJ_CFG, short_train_cfg(base_lr=2e-3, total_steps=80))
    return proj, disc, log


# --- configs ------------------------------------------------------------------


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(base_lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(total_steps=0)


def test_load_config_sections_and_defaults(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({
        "projector": {"latent_dim": 4},
        "schedule": {"scheme": "cosine", "total_steps": 10},
        "train": {"seed": 5},
    }))
    cfg = load_config(path)
    assert cfg["projector"].latent_dim == 4
    assert cfg["projector"].beta == 0.25  # default preserved
    assert cfg["schedule"].scheme == "cosine"
    assert cfg["train"].seed == 5
    assert cfg["mae"].mode == "discriminant"


def test_config_hash_stable_and_sensitive():
    a = {"train": short_train_cfg()}
    assert config_hash(a) == config_hash({"train": short_train_cfg()})
    assert config_hash(a) != config_hash({"train": short_train_cfg(seed=1)})
    assert len(config_hash(a)) == 12


def test_write_manifest(tmp_path):
    m = write_manifest(tmp_path / "run", "train", {"train": short_train_cfg()}, seed=0)
    on_disk = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert on_disk == m
    assert on_disk["config_hash"] == config_hash({"train": short_train_cfg()})


def test_warmup_lr_ramps_then_flat():
    total, frac, base = 100, 0.1, 1.0
    lrs = [_warmup_lr(base, t, total, frac) for t in range(total)]
    assert lrs[0] == pytest.approx(0.1)
    assert lrs[9] == pytest.approx(1.0)
    assert all(lr == 1.0 for lr in lrs[10:])


def test_mask_seed_distinct_streams():
    a = np.random.default_rng(mask_seed(0, 1, 2)).integers(0, 1 << 30, 4)
    b = np.random.default_rng(mask_seed(0, 1, 3)).integers(0, 1 << 30, 4)
    c = np.random.default_rng(mask_seed(0, 2, 2)).integers(0, 1 << 30, 4)
    a2 = np.random.default_rng(mask_seed(0, 1, 2)).integers(0, 1 << 30, 4)
    assert np.array_equal(a, a2)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


# --- stage 1 -------------------------------------------------------------------


def test_pretrain_loss_decreases(corpus):
    # wide enough to actually learn; the shared fixture favors speed instead
    cfg = ProjectorConfig(scale_factor=8, latent_dim=8, codebook_size=32,
                          base_channels=16, gamma_mode="fixed", gamma=0.0)
    _, _, log = pretrain_projector(
        corpus, cfg, short_train_cfg(base_lr=2e-3, batch_size=16, total_steps=300))
    smoothed = log.smoothed_losses()
    assert smoothed[-1] < 0.8 * smoothed[0]


def test_pretrain_freezes_projector(pretrained):
    proj, _, _ = pretrained
    assert all(not p.requires_grad for p in proj.parameters())


def test_pretrain_deterministic(corpus):
    hashes = []
    for _ in range(2):
        proj, _, _ = pretrain_projector(corpus, PROJ_CFG, short_train_cfg())
        hashes.append(param_hash(proj))
    assert hashes[0] == hashes[1]


def test_pretrain_seed_changes_result(corpus):
    a, _, _ = pretrain_projector(corpus, PROJ_CFG, short_train_cfg(seed=0))
    b, _, _ = pretrain_projector(corpus, PROJ_CFG, short_train_cfg(seed=1))
    assert param_hash(a) != param_hash(b)


def test_pretrain_rejects_empty():
    with pytest.raises(ValueError):
        pretrain_projector(torch.empty(0, 3, 32, 32), PROJ_CFG, short_train_cfg())


def test_pretrain_writes_artifacts(corpus, tmp_path):
    out = tmp_path / "lsp"
    pretrain_projector(corpus, PROJ_CFG, short_train_cfg(), out_dir=out)
    assert (out / "checkpoint.pt").exists()
    assert (out / "log.csv").exists()
    back = load_projector(out / "checkpoint.pt")
    assert back.cfg == PROJ_CFG


# --- stage 2 -------------------------------------------------------------------


def test_train_masked_ratios_follow_schedule(corpus, pretrained):
    proj = pretrained[0]
    sched = ScheduleConfig(scheme="piecewise", total_steps=6)
    _, log, ratios = train_masked(corpus, proj, MAE_CFG, sched, short_train_cfg())
    assert ratios == [ratio_at(t, sched) for t in range(6)]
    assert len(log.records) == 6


def test_train_masked_leaves_projector_untouched(corpus, pretrained):
    proj = pretrained[0]
    before = param_hash(proj)
    sched = ScheduleConfig(scheme="uniform", total_steps=6)
    train_masked(corpus, proj, MAE_CFG, sched, short_train_cfg())
    assert param_hash(proj) == before


def test_train_masked_deterministic(corpus, pretrained):
    proj = pretrained[0]
    sched = ScheduleConfig(scheme="cosine", total_steps=6)
    runs = [train_masked(corpus, proj, MAE_CFG, sched, short_train_cfg())
            for _ in range(2)]
    assert param_hash(runs[0][0]) == param_hash(runs[1][0])
    # logs identical except wall-time columns
    a = [(r.step, r.loss) for r in runs[0][1].records]
    b = [(r.step, r.loss) for r in runs[1][1].records]
    assert a == b


def test_train_masked_artifacts_roundtrip(corpus, pretrained, tmp_path):
    proj = pretrained[0]
    out = tmp_path / "lsmd"
    sched = ScheduleConfig(scheme="uniform", total_steps=6)
    model, _, ratios = train_masked(corpus, proj, MAE_CFG, sched,
                                    short_train_cfg(), out_dir=out)
    assert (out / "log.csv").exists() and (out / "ratio.csv").exists()
    back, ckpt = load_masked_autoencoder(out / "checkpoint.pt")
    assert param_hash(back) == param_hash(model)
    lines = (out / "ratio.csv").read_text().strip().split("\n")[1:]
    assert [float(l.split(",")[1]) for l in lines] == ratios


def test_checkpoint_bit_exact_roundtrip(pretrained, tmp_path):
    proj = pretrained[0]
    path = tmp_path / "ck.pt"
    save_checkpoint(path, "lsp", {"projector": PROJ_CFG},
                    {"projector": proj.state_dict()}, step=3)
    ckpt = load_checkpoint(path)
    assert ckpt["step"] == 3
    for k, v in proj.state_dict().items():
        assert torch.equal(ckpt["states"]["projector"][k], v)


def test_load_projector_rejects_wrong_stage(tmp_path):
    path = tmp_path / "ck.pt"
    save_checkpoint(path, "lsmd", {"projector": PROJ_CFG}, {}, step=0)
    with pytest.raises(ValueError):
        load_projector(path)


def test_freeze_sets_eval_and_no_grad():
    m = torch.nn.Linear(2, 2)
    freeze(m)
    assert not m.training
    assert all(not p.requires_grad for p in m.parameters())


# --- classifier / reconstruction ------------------------------------------------


def test_finetune_logs_accuracy(labeled_corpus, pretrained):
    images, labels = labeled_corpus
    proj = pretrained[0]
    mae = train_masked(images, proj, MAE_CFG,
                       ScheduleConfig(scheme="uniform", total_steps=4),
                       short_train_cfg(total_steps=4))[0]
    clf, log = finetune_classifier(images, labels, proj, mae,
                                   short_train_cfg(total_steps=6, eval_interval=3),
                                   num_classes=10)
    evals = [(r.top1, r.top5) for r in log.records if r.top1 is not None]
    assert len(evals) >= 2
    assert all(0 <= t1 <= t5 <= 1 for t1, t5 in evals)


def test_finetune_requires_labels(corpus, pretrained):
    proj = pretrained[0]
    mae = train_masked(corpus, proj, MAE_CFG,
                       ScheduleConfig(scheme="uniform", total_steps=4),
                       short_train_cfg(total_steps=4))[0]
    with pytest.raises(ValueError):
        finetune_classifier(corpus, None, proj, mae, short_train_cfg(), 10)


def test_linear_probe_freezes_encoder(labeled_corpus, pretrained):
    images, labels = labeled_corpus
    proj = pretrained[0]
    mae = train_masked(images, proj, MAE_CFG,
                       ScheduleConfig(scheme="uniform", total_steps=4),
                       short_train_cfg(total_steps=4))[0]
    before = param_hash(mae)
    finetune_classifier(images, labels, proj, mae,
                        short_train_cfg(total_steps=4, linear_probe=True),
                        num_classes=10)
    assert param_hash(mae) == before


def test_reconstruct_shape_and_determinism(corpus, pretrained):
    proj = pretrained[0]
    mae = train_masked(corpus, proj, MAE_CFG,
                       ScheduleConfig(scheme="uniform", total_steps=4),
                       short_train_cfg(total_steps=4))[0]
    x = corpus[0]
    a = reconstruct(x, proj, mae, ratio=0.5, seed=3)
    b = reconstruct(x, proj, mae, ratio=0.5, seed=3)
    assert a.shape == x.shape
    assert torch.equal(a, b)
    c = reconstruct(x, proj, mae, ratio=0.5, seed=4)
    assert not torch.equal(a, c)


def test_reconstruct_rejects_bad_dims(corpus, pretrained):
    proj = pretrained[0]
    mae = train_masked(corpus, proj, MAE_CFG,
                       ScheduleConfig(scheme="uniform", total_steps=2),
                       short_train_cfg(total_steps=2))[0]
    with pytest.raises(ValueError):
        reconstruct(torch.randn(3, 30, 30), proj, mae, 0.5, 0)
