import json

import numpy as np
import pytest
import torch
import yaml

from ctss_toon import ctss, trainer
from ctss_toon.imagecore import save_png
from ctss_toon.losses import LossWeights
from ctss_toon.nets import NetConfig, param_hash
from ctss_toon.synthetic import as_batch, make_images
from ctss_toon.trainer import (
    CheckpointError,
    ConfigError,
    DatasetHandle,
    TrainConfig,
    Trainer,
    TrainingDiverged,
    fit,
    infer,
    load_checkpoint,
    moving_average,
    read_loss_log,
    save_checkpoint,
)


def small_cfg(**kw) -> TrainConfig:
    base = dict(batch_size=4, epochs_total=3, epochs_pretrain=1, image_size=64, net=NetConfig.tiny())
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def photos():
    return as_batch(make_images("photo", 8, 64, 1))


@pytest.fixture(scope="module")
def cartoons():
    return as_batch(make_images("cartoon", 8, 64, 2))


def adversarial_trainer(cfg=None) -> Trainer:
    tr = Trainer(cfg or small_cfg())
    tr.enter_adversarial_phase()
    return tr


class TestConfig:
    def test_reference_defaults(self):
        cfg = TrainConfig()
        assert (cfg.batch_size, cfg.epochs_total, cfg.epochs_pretrain) == (8, 80, 10)
        assert (cfg.lr_pretrain, cfg.lr_main, cfg.adam_beta1, cfg.adam_beta2) == (2e-4, 2e-5, 0.5, 0.999)
        assert cfg.weights == LossWeights(300, 300, 1.5, 15, 1)
        assert (cfg.ctss.k, cfg.ctss.patch_size, cfg.ctss.d, cfg.ctss.n) == (32, 96, 0.2, 2.0)

    @pytest.mark.parametrize("kw", [
        {"epochs_pretrain": 5, "epochs_total": 5},
        {"lr_main": 0.0},
        {"lr_pretrain": -1.0},
        {"adam_beta1": 1.0},
        {"adam_beta2": 0.0},
        {"batch_size": 0},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)

    def test_desk_scale_geometry(self):
        eff = small_cfg().ctss_effective
        assert (eff.patch_size, eff.stride_min, eff.stride_max) == (24, 12, 18)

    def test_yaml_round_trip(self, tmp_path):
        cfg = small_cfg(seed=5, weights=LossWeights(lambda_local=0.0))
        cfg.dump(tmp_path / "c.yaml")
        assert TrainConfig.from_file(tmp_path / "c.yaml") == cfg

    def test_missing_key_named(self, tmp_path):
        data = TrainConfig().to_dict()
        del data["lr_main"]
        (tmp_path / "c.yaml").write_text(yaml.safe_dump(data))
        with pytest.raises(ConfigError, match="missing config key: lr_main"):
            TrainConfig.from_file(tmp_path / "c.yaml")

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config key: bogus"):
            TrainConfig.from_dict({"bogus": 1})
        with pytest.raises(ConfigError, match="net.width"):
            TrainConfig.from_dict({"net": {"width": 3}})


class TestCheckpoint:
    @pytest.fixture
    def ckpt(self, photos, cartoons):
        tr = adversarial_trainer()
        tr.train_step(photos[:4], cartoons[:4])
        return tr.checkpoint(epoch=1)

    def test_byte_identical_round_trip(self, ckpt, tmp_path):
        save_checkpoint(ckpt, tmp_path / "a.ctss")
        save_checkpoint(load_checkpoint(tmp_path / "a.ctss"), tmp_path / "b.ctss")
        assert (tmp_path / "a.ctss").read_bytes() == (tmp_path / "b.ctss").read_bytes()

    def test_contents_survive(self, ckpt, tmp_path):
        save_checkpoint(ckpt, tmp_path / "a.ctss")
        back = load_checkpoint(tmp_path / "a.ctss")
        assert (back.step, back.epoch, back.phase) == (1, 1, "adversarial")
        assert back.config == ckpt.config and back.rng_state == ckpt.rng_state
        for k, v in ckpt.generator.items():
            assert torch.equal(back.generator[k], v)
        for k, v in ckpt.opt_d.items():
            assert torch.equal(back.opt_d[k]["exp_avg_sq"].float(), v["exp_avg_sq"])

    def test_version_mismatch(self, ckpt, tmp_path):
        save_checkpoint(ckpt, tmp_path / "a.ctss")
        raw = bytearray((tmp_path / "a.ctss").read_bytes())
        raw[4:8] = (99).to_bytes(4, "little")
        (tmp_path / "b.ctss").write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version 99"):
            load_checkpoint(tmp_path / "b.ctss")

    def test_bad_magic_and_truncation(self, ckpt, tmp_path):
        save_checkpoint(ckpt, tmp_path / "a.ctss")
        raw = (tmp_path / "a.ctss").read_bytes()
        (tmp_path / "m.ctss").write_bytes(b"XXXX" + raw[4:])
        (tmp_path / "t.ctss").write_bytes(raw[:-10])
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(tmp_path / "m.ctss")
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(tmp_path / "t.ctss")

    def test_architecture_mismatch(self, ckpt):
        other = Trainer(small_cfg(net=NetConfig(base_channels=8, num_res_blocks=1, d_base_channels=4)))
        with pytest.raises(CheckpointError, match="architecture"):
            other.load_state(ckpt)


class TestDataset:
    def test_each_epoch_visits_every_image_once(self, photos):
        ds = DatasetHandle.from_tensor(photos)
        for epoch in range(3):
            seen = torch.cat([ds.batch(epoch * 2 + b, 4, seed=0) for b in range(2)])
            assert sorted(x.sum().item() for x in seen) == sorted(x.sum().item() for x in photos)

    def test_order_depends_on_seed_epoch_stream(self, photos):
        a, b = DatasetHandle.from_tensor(photos, 0), DatasetHandle.from_tensor(photos, 1)
        assert np.array_equal(a.order(0, 3), a.order(0, 3))
        orders = {tuple(a.order(e, 3)) for e in range(5)} | {tuple(b.order(0, 3))}
        assert len(orders) > 1

    def test_folder_with_resize(self, tmp_path):
        for i in range(3):
            save_png(torch.rand(1, 3, 40, 48, generator=torch.Generator().manual_seed(i)), tmp_path / f"{i}.png")
        (tmp_path / "notes.txt").write_text("ignored")
        ds = DatasetHandle(tmp_path, 32)
        assert len(ds) == 3
        img = ds.batch(0, 2, seed=0)
        assert img.shape == (2, 3, 32, 32) and 0 <= img.min() and img.max() <= 1

    def test_missing_and_empty(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            DatasetHandle(tmp_path / "none", 32)
        with pytest.raises(ValueError, match="no PNG"):
            DatasetHandle(tmp_path, 32)

    def test_too_small_for_batch(self, photos):
        with pytest.raises(ValueError):
            DatasetHandle.from_tensor(photos[:2]).batch(0, 4, seed=0)


class TestPretrain:
    def test_content_decreases(self, photos):
        tr = Trainer(small_cfg())
        losses = [tr.pretrain_step(photos[:4]).content for _ in range(50)]
        ma = moving_average(losses, 10)
        assert ma[-1] < ma[0]
        assert tr.step == 50

    def test_zero_learning_rate_leaves_params(self, photos):
        tr = Trainer(small_cfg())
        for group in tr.opt_g.param_groups:
            group["lr"] = 0.0
        before = param_hash(tr.G)
        for _ in range(3):
            tr.pretrain_step(photos[:4])
        assert param_hash(tr.G) == before

    def test_only_generator_moves(self, photos):
        tr = Trainer(small_cfg())
        d_before = param_hash(tr.D_img), param_hash(tr.D_patch)
        g_before = param_hash(tr.G)
        tr.pretrain_step(photos[:4])
        assert (param_hash(tr.D_img), param_hash(tr.D_patch)) == d_before
        assert param_hash(tr.G) != g_before

    def test_learning_rates_per_phase(self):
        tr = Trainer(small_cfg(lr_pretrain=3e-4, lr_main=1e-5))
        assert tr.opt_g.param_groups[0]["lr"] == 3e-4
        tr.enter_adversarial_phase()
        assert tr.opt_g.param_groups[0]["lr"] == 1e-5
        assert not tr.opt_g.state  # fresh moments for the new phase
        assert tr.opt_d.param_groups[0]["lr"] == 1e-5


class TestTrainStep:
    def test_deterministic(self, photos, cartoons):
        runs = []
        for _ in range(2):
            tr = adversarial_trainer()
            runs.append([tr.train_step(photos[:4], cartoons[:4]).as_dict() for _ in range(3)])
        assert runs[0] == runs[1]

    def test_alternation_contract(self, photos, cartoons, monkeypatch):
        tr = adversarial_trainer()
        seen = {}

        def wrap(opt, label, watched):
            original = opt.step

            def step(*a, **kw):
                before = [param_hash(m) for m in watched]
                out = original(*a, **kw)
                seen[label] = before == [param_hash(m) for m in watched]
                return out
            monkeypatch.setattr(opt, "step", step)

        wrap(tr.opt_d, "d_update_keeps_g", [tr.G])
        wrap(tr.opt_g, "g_update_keeps_d", [tr.D_img, tr.D_patch])
        tr.train_step(photos[:4], cartoons[:4])
        assert seen == {"d_update_keeps_g": True, "g_update_keeps_d": True}

    def test_both_networks_move(self, photos, cartoons):
        tr = adversarial_trainer()
        before = [param_hash(m) for m in (tr.G, tr.D_img, tr.D_patch)]
        tr.train_step(photos[:4], cartoons[:4])
        assert all(a != b for a, b in zip(before, [param_hash(m) for m in (tr.G, tr.D_img, tr.D_patch)]))

    def test_embedder_frozen(self, photos, cartoons):
        tr = adversarial_trainer()
        before = param_hash(tr.embedder)
        tr.pretrain_step(photos[:4])
        for _ in range(2):
            tr.train_step(photos[:4], cartoons[:4])
        assert param_hash(tr.embedder) == before

    def test_same_stride_for_both_samples(self, photos, cartoons, monkeypatch):
        strides = []
        original = ctss.sample

        def spy(batch, cfg, stride):
            strides.append(stride)
            return original(batch, cfg, stride)
        monkeypatch.setattr(trainer.ctss, "sample", spy)
        tr = adversarial_trainer()
        for _ in range(4):
            tr.train_step(photos[:4], cartoons[:4])
        pairs = list(zip(strides[::2], strides[1::2]))
        assert len(pairs) == 4 and all(a == b for a, b in pairs)
        assert all(12 <= s <= 18 for s in strides)

    def test_explicit_rng(self, photos, cartoons, monkeypatch):
        strides = []
        original = ctss.sample
        monkeypatch.setattr(trainer.ctss, "sample", lambda b, c, s: strides.append(s) or original(b, c, s))
        adversarial_trainer().train_step(photos[:4], cartoons[:4], rng=np.random.default_rng(9))
        assert strides[0] == small_cfg().ctss_effective.draw_stride(np.random.default_rng(9))

    def test_local_weight_zero(self, photos, cartoons):
        cfg = small_cfg(weights=LossWeights(lambda_local=0.0))
        rep = adversarial_trainer(cfg).train_step(photos[:4], cartoons[:4])
        w = cfg.weights
        assert rep.adv_local_G > 0 and rep.adv_local_D > 0
        expected_g = (w.lambda_global * rep.adv_global_G + w.lambda_con * rep.content
                      + w.lambda_col * rep.color + w.lambda_tv * rep.tv)
        assert rep.total_G == pytest.approx(expected_g, rel=1e-6)
        assert rep.total_D == pytest.approx(w.lambda_global * rep.adv_global_D, rel=1e-6)

    def test_adversarial_without_gan_terms_matches_pretraining(self, photos, cartoons):
        # with only the content term switched on, one G update equals a pretraining step
        w = LossWeights(lambda_global=0, lambda_local=0, lambda_con=1, lambda_col=0, lambda_tv=0)
        cfg = small_cfg(weights=w, lr_pretrain=1e-4, lr_main=1e-4)
        a, b = Trainer(cfg), adversarial_trainer(cfg)
        a.pretrain_step(photos[:4])
        b.train_step(photos[:4], cartoons[:4])
        assert param_hash(a.G) == param_hash(b.G)

    def test_divergence_dump(self, photos, cartoons, tmp_path):
        tr = adversarial_trainer()
        tr.out_dir = tmp_path
        with torch.no_grad():
            tr.G.head.bias.fill_(float("nan"))
        with pytest.raises(TrainingDiverged, match="non-finite"):
            tr.train_step(photos[:4], cartoons[:4])
        dumps = list(tmp_path.glob("diverged_step*.json"))
        assert len(dumps) == 1 and "losses" in json.loads(dumps[0].read_text())


class TestFit:
    def _sets(self, photos, cartoons):
        return DatasetHandle.from_tensor(photos, 0), DatasetHandle.from_tensor(cartoons, 1)

    def test_one_epoch_smoke(self, photos, cartoons, tmp_path):
        cfg = small_cfg(batch_size=8, epochs_total=1, epochs_pretrain=0)
        final = fit(*self._sets(photos, cartoons), cfg, tmp_path)
        assert final.step == 1
        assert sorted(p.name for p in tmp_path.glob("*.ctss")) == ["final.ctss"]
        rows = read_loss_log(tmp_path / "loss.csv")
        assert len(rows) == 1 and rows[0]["adv_global_D"] > 0

    def test_periodic_checkpoints_and_phases(self, photos, cartoons, tmp_path):
        cfg = small_cfg(checkpoint_every=2)
        fit(*self._sets(photos, cartoons), cfg, tmp_path)
        names = sorted(p.name for p in tmp_path.glob("*.ctss"))
        assert names == ["ckpt_0000002.ctss", "ckpt_0000004.ctss", "final.ctss"]
        rows = read_loss_log(tmp_path / "loss.csv")
        assert [r["step"] for r in rows] == list(range(6))
        # first epoch (2 steps) pretrains: no adversarial terms
        assert all(r["adv_global_D"] == 0 for r in rows[:2])
        assert all(r["adv_global_D"] > 0 for r in rows[2:])

    @pytest.mark.parametrize("cut", [1, 2, 4])
    def test_resume_matches_uninterrupted(self, photos, cartoons, tmp_path, cut):
        cfg = small_cfg()
        sets = self._sets(photos, cartoons)
        fit(*sets, cfg, tmp_path / "full")
        fit(*sets, cfg, tmp_path / "part", max_steps=cut)
        fit(*sets, cfg, tmp_path / "part", resume=tmp_path / "part" / "final.ctss")
        assert (tmp_path / "full" / "loss.csv").read_bytes() == (tmp_path / "part" / "loss.csv").read_bytes()
        assert (tmp_path / "full" / "final.ctss").read_bytes() == (tmp_path / "part" / "final.ctss").read_bytes()

    def test_resume_config_mismatch(self, photos, cartoons, tmp_path):
        sets = self._sets(photos, cartoons)
        fit(*sets, small_cfg(), tmp_path, max_steps=1)
        with pytest.raises(CheckpointError, match="configuration"):
            fit(*sets, small_cfg(seed=3), tmp_path, resume=tmp_path / "final.ctss")

    def test_dataset_smaller_than_batch(self, photos, cartoons, tmp_path):
        with pytest.raises(ValueError, match="batch_size"):
            fit(*self._sets(photos[:2], cartoons), small_cfg(), tmp_path)


@pytest.fixture(scope="module")
def untrained_ckpt():
    return Trainer(small_cfg()).checkpoint()


class TestInfer:
    @pytest.fixture
    def ckpt(self, untrained_ckpt):
        return untrained_ckpt

    def test_range_and_shape(self, ckpt):
        x = torch.rand(2, 3, 64, 64, generator=torch.Generator().manual_seed(0))
        out = infer(x, ckpt)
        assert out.shape == x.shape and out.min() >= 0 and out.max() <= 1

    def test_padding_path(self, ckpt):
        out = infer(torch.rand(1, 3, 250, 250), ckpt)
        assert out.shape == (1, 3, 250, 250)

    def test_saturation_one_is_raw(self, ckpt):
        x = torch.rand(1, 3, 64, 64, generator=torch.Generator().manual_seed(1))
        gen = trainer.generator_from_checkpoint(ckpt)
        with torch.no_grad():
            raw = ((gen(x * 2 - 1) + 1) / 2).clamp(0, 1)
        assert torch.allclose(infer(x, ckpt, saturation_factor=1.0), raw, atol=1e-5)

    def test_boost_changes_output(self, ckpt):
        x = torch.rand(1, 3, 64, 64, generator=torch.Generator().manual_seed(2))
        assert not torch.allclose(infer(x, ckpt, 1.0), infer(x, ckpt, 1.4))

    def test_architecture_mismatch(self, ckpt):
        bad = trainer.Checkpoint(**{**ckpt.__dict__, "config": small_cfg(net=NetConfig()).to_dict()})
        with pytest.raises(CheckpointError):
            infer(torch.rand(1, 3, 64, 64), bad)
