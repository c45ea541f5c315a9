import numpy as np
import pytest

from psfuse import resample, synthgen, trainer
from psfuse.trainer import CheckpointError, TrainConfig, Trainer


@pytest.fixture(scope="module")
def tiny():
    samples = [resample.wald_degrade(synthgen.generate_scene(synthgen.SceneSpec(size=256, seed=s)))
               for s in range(3)]
    return trainer.dataset_from_samples([f"t{s}" for s in range(3)], samples)


def small_cfg(**kw):
    base = dict(batch_size=2, epochs=1, pretrain_epochs=1, nblocks=1, dmg_channels=4, seed=3)
    base.update(kw)
    return TrainConfig(**base)


# -------------------------------------------------------------------- config
def test_lr_halves_each_period():
    cfg = TrainConfig(lr=2e-4, lr_halving_period=15)
    assert [cfg.lr_at(e) for e in (0, 14, 15, 29, 30)] == [2e-4, 2e-4, 1e-4, 1e-4, 5e-5]
    assert cfg.discriminator_lr == 2e-4
    assert TrainConfig(disc_lr=1e-3).lr_at(15, TrainConfig(disc_lr=1e-3).discriminator_lr) == 5e-4


def test_config_text_round_trip():
    cfg = TrainConfig(lr=3e-4, ablation_case="case3", dmg_adv_joint=True)
    back = TrainConfig.from_mapping(trainer.parse_config_text(cfg.to_text()))
    assert back == cfg and back.hash() == cfg.hash()


def test_config_rejects_unknown_and_bad_values():
    with pytest.raises(KeyError):
        TrainConfig.from_mapping({"learning_rate": "1"})
    with pytest.raises(ValueError):
        TrainConfig.from_mapping({"epochs": "many"})
    with pytest.raises(ValueError):
        TrainConfig(ablation_case="case9")
    with pytest.raises(ValueError):
        TrainConfig(update_order="dc,dc,f2c,c2f")
    with pytest.raises(ValueError):
        trainer.parse_config_text("lr 0.1")


def test_config_comments_and_dashes():
    parsed = trainer.parse_config_text("# comment\nguided-lambda = 0.01  # tail\n\n")
    assert TrainConfig.from_mapping(parsed).guided_lambda == 0.01


def test_batches_are_seeded_permutations():
    a = trainer.batches(10, 4, 1, 0, 2)
    assert [len(b) for b in a] == [4, 4, 2]
    assert sorted(np.concatenate(a).tolist()) == list(range(10))
    assert all(np.array_equal(x, y) for x, y in zip(a, trainer.batches(10, 4, 1, 0, 2)))
    assert not np.array_equal(np.concatenate(a), np.concatenate(trainer.batches(10, 4, 1, 0, 3)))


# -------------------------------------------------------------------- models
def test_case_layouts():
    def groups(case):
        return set(trainer.Models(small_cfg(ablation_case=case)).groups())
    assert groups("baseline") == {"dmg", "c2f", "f2c", "dc", "df"}
    assert groups("case1") == {"c2f", "f2c", "dc", "df"}
    assert groups("case2") == {"dmg", "dc"}
    assert groups("case3") == {"dmg", "f2c", "dc"}
    assert groups("case4") == {"dmg", "c2f", "df"}


def test_parameter_names_are_namespaced():
    models = trainer.Models(small_cfg())
    for group, params in models.groups().items():
        assert all(name.startswith(group + ".") for name in params)


def test_average_fusion_of_constants():
    pan = np.full((1, 1, 16, 16), 0.8)
    ms = np.full((1, 4, 4, 4), 0.2)
    np.testing.assert_allclose(trainer.average_fusion(pan, ms, 4), 0.5, atol=1e-6)


def test_optimizer_step_touches_only_its_group(tiny):
    models = trainer.Models(small_cfg())
    opts = trainer.Optimizers(models)
    for p in models.parameters().values():
        p.grad = np.ones_like(p.data)
    before = {n: p.data.copy() for n, p in models.parameters().items()}
    opts.step(models, "f2c", 1e-3, small_cfg())
    for name, p in models.parameters().items():
        assert np.array_equal(p.data, before[name]) != name.startswith("f2c.")


# ------------------------------------------------------------------ training
def test_dmg_loss_decreases(tiny):
    cfg = small_cfg(ablation_case="case2", lr=2e-3, dmg_channels=8)
    models = trainer.Models(cfg)
    opts = trainer.Optimizers(models)
    batch = (tiny.pan[:2], tiny.ms[:2], tiny.ref[:2])
    first = trainer.dmg_only_step(models, opts, batch, cfg, 0)["L_DMG"]
    for _ in range(15):
        last = trainer.dmg_only_step(models, opts, batch, cfg, 0)["L_DMG"]
    assert last < first


def test_short_baseline_run_logs_finite_losses(tiny, tmp_path):
    trn = Trainer(small_cfg(), tiny, out_dir=tmp_path)
    state = trn.run()
    assert (state.phase, state.epoch, state.step) == ("joint", 1, 4)
    names = {name for _, name, _ in trn.log_rows}
    assert {"pretrain/L_DMG", "pretrain/L_DC_DMG", "joint/L_DC_F2C", "joint/L_DF",
            "joint/L_JC_F2C", "joint/L_JC_C2F"} <= names
    assert all(np.isfinite(v) for _, _, v in trn.log_rows)
    assert (tmp_path / "checkpoint.pcgk").exists()
    trn.write_log(tmp_path / "log.csv")
    assert (tmp_path / "log.csv").read_text().startswith("step,loss,value\n")


def test_nan_input_raises(tiny):
    cfg = small_cfg(ablation_case="case2")
    models = trainer.Models(cfg)
    pan = tiny.pan[:1].copy()
    pan[0, 0, 0, 0] = np.nan
    with pytest.raises(trainer.NumericalError):
        trainer.dmg_only_step(models, trainer.Optimizers(models), (pan, tiny.ms[:1],
                                                                   tiny.ref[:1]), cfg, 0)


@pytest.mark.parametrize("case", ["case1", "case3", "case4"])
def test_reduced_cases_train_and_evaluate(tiny, case):
    trn, reports = trainer.run_ablation(case, tiny, tiny.subset([0]),
                                        small_cfg(epochs=1, pretrain_epochs=1))
    assert [r.method for r in reports] == [case]
    assert np.isfinite(reports[0].q4)


# --------------------------------------------------------------- checkpoints
def test_checkpoint_round_trip_is_bitwise(tiny, tmp_path):
    cfg = small_cfg()
    trn = Trainer(cfg, tiny)
    trn.run(until=1)
    trn.save(tmp_path / "a.pcgk")
    back = Trainer.resume(cfg, tiny, tmp_path / "a.pcgk")
    back.save(tmp_path / "b.pcgk")
    assert (tmp_path / "a.pcgk").read_bytes() == (tmp_path / "b.pcgk").read_bytes()
    assert trainer.checkpoint_case(tmp_path / "a.pcgk") == list(trn.models.parameters())


def test_same_seed_same_checkpoint(tiny, tmp_path):
    paths = []
    for i in range(2):
        trn = Trainer(small_cfg(), tiny)
        trn.run()
        paths.append(tmp_path / f"{i}.pcgk")
        trn.save(paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_resume_matches_uninterrupted_run(tiny, tmp_path):
    cfg = small_cfg(epochs=2)
    straight = Trainer(cfg, tiny)
    straight.run()
    part = Trainer(cfg, tiny)
    part.run(until=2)  # pretrain epoch plus first joint epoch
    part.save(tmp_path / "mid.pcgk")
    resumed = Trainer.resume(cfg, tiny, tmp_path / "mid.pcgk")
    resumed.run()
    a = trainer.checkpoint_bytes(straight.models, straight.opts, straight.state, cfg)
    b = trainer.checkpoint_bytes(resumed.models, resumed.opts, resumed.state, cfg)
    assert a == b


def test_resume_with_more_epochs_extends_the_run(tiny, tmp_path):
    short = Trainer(small_cfg(epochs=1), tiny)
    short.run()
    short.save(tmp_path / "short.pcgk")
    cfg = small_cfg(epochs=2)
    extended = Trainer.resume(cfg, tiny, tmp_path / "short.pcgk")
    extended.run()
    straight = Trainer(cfg, tiny)
    straight.run()
    a = trainer.checkpoint_bytes(straight.models, straight.opts, straight.state, cfg)
    b = trainer.checkpoint_bytes(extended.models, extended.opts, extended.state, cfg)
    assert a == b


def test_checkpoint_errors(tiny, tmp_path):
    cfg = small_cfg()
    trn = Trainer(cfg, tiny)
    path = tmp_path / "c.pcgk"
    trn.save(path)
    raw = path.read_bytes()
    (tmp_path / "bad.pcgk").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "short.pcgk").write_bytes(raw[:-10])
    for name in ("bad.pcgk", "short.pcgk"):
        with pytest.raises(CheckpointError):
            trainer.load_checkpoint(tmp_path / name, trainer.Models(cfg))
    with pytest.raises(CheckpointError):
        Trainer.resume(small_cfg(lr=1e-3), tiny, path)
    with pytest.raises(CheckpointError):
        trainer.load_checkpoint(path, trainer.Models(small_cfg(ablation_case="case2")))
