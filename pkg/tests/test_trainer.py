import math

import pytest
import torch

from facemim.errors import TrainingDiverged, ValidationError
from facemim.model import BackboneConfig
from facemim.synth import generate_face_set
from facemim.trainer import Pretrainer, TrainConfig, load_checkpoint, lr_at


def small_trainer(seed=0, **overrides):
    samples = generate_face_set(16, seed=7)
    defaults = dict(epochs=6, warmup_epochs=1, batch_size=8, seed=seed)
    defaults.update(overrides)
    cfg = TrainConfig(**defaults)
    return Pretrainer(BackboneConfig(), cfg, samples)


# ---- schedule ---------------------------------------------------------------


def test_lr_endpoints():
    cfg = TrainConfig(epochs=10, warmup_epochs=2, batch_size=8, base_lr=1.5e-4)
    spe = 4
    peak = 1.5e-4 * 8 / 256
    assert lr_at(cfg, 0, spe) == 0.0
    assert lr_at(cfg, 2 * spe, spe) == pytest.approx(peak, rel=1e-15)
    assert lr_at(cfg, 10 * spe, spe) == pytest.approx(0.0, abs=1e-18)


def test_lr_matches_closed_form_reference():
    cfg = TrainConfig(
        epochs=40, warmup_epochs=4, batch_size=16, accum_iters=2, base_lr=2.5e-4
    )
    spe = 25
    warmup, total = 4 * spe, 40 * spe
    peak = 2.5e-4 * 32 / 256
    for step in range(0, total + 1):
        if step < warmup:
            want = peak * step / warmup
        else:
            want = peak * 0.5 * (1 + math.cos(math.pi * (step - warmup) / (total - warmup)))
        assert lr_at(cfg, step, spe) == pytest.approx(want, rel=1e-12, abs=1e-18)


def test_config_validation():
    with pytest.raises(ValidationError, match="warmup"):
        TrainConfig(epochs=2, warmup_epochs=2)
    with pytest.raises(ValidationError, match="batch_size"):
        TrainConfig(batch_size=0)
    with pytest.raises(ValidationError, match="target view"):
        TrainConfig(target_view="both")


# ---- stepping ---------------------------------------------------------------


def test_zero_lr_step_moves_nothing_online():
    trainer = small_trainer()
    before = [p.clone() for p in trainer.model.parameters() if p.requires_grad]
    record = trainer.train_step()  # step 0 sits at lr == 0 (warmup start)
    assert record.lr == 0.0
    after = [p for p in trainer.model.parameters() if p.requires_grad]
    for b, a in zip(before, after):
        assert torch.equal(b, a)


def test_target_moves_only_through_ema_recurrence():
    trainer = small_trainer()
    trainer.train(n_steps=3)
    target_before = [t.clone() for _, t in trainer.model.ema_pairs()]
    record = trainer.train_step()
    tau = record.tau
    for before, (online, target) in zip(target_before, trainer.model.ema_pairs()):
        expected = before.mul(tau).add(online, alpha=1.0 - tau)
        assert torch.equal(target, expected)


def test_step_records_are_within_contract():
    trainer = small_trainer()
    for record in trainer.train(n_steps=6):
        assert record.lr >= 0.0
        assert trainer.cfg.tau_base <= record.tau <= 1.0
        assert math.isfinite(record.losses["total"])


def test_identical_seeds_identical_records():
    recs_a = small_trainer(seed=5).train(n_steps=6)
    recs_b = small_trainer(seed=5).train(n_steps=6)
    for a, b in zip(recs_a, recs_b):
        assert a.losses == b.losses
        assert a.lr == b.lr and a.tau == b.tau


def test_short_smoke_loss_decreases():
    trainer = small_trainer()
    records = trainer.train(n_steps=24)
    assert records[-1].losses["total"] < records[0].losses["total"]


def test_divergence_aborts_with_diagnostics():
    trainer = small_trainer()
    with torch.no_grad():
        trainer.model.online_encoder.patch_embed.weight.fill_(float("nan"))
    with pytest.raises(TrainingDiverged) as err:
        trainer.train_step()
    assert err.value.record["step"] == 0
    assert "losses" in err.value.record


def test_accumulation_matches_effective_batch_semantics():
    # 2 micro-batches of 4 must consume the same samples per step as batch 8
    t_accum = small_trainer(batch_size=4, accum_iters=2)
    t_plain = small_trainer(batch_size=8, accum_iters=1)
    assert t_accum.steps_per_epoch == t_plain.steps_per_epoch
    assert (t_accum._step_indices(3) == t_plain._step_indices(3)).all()


# ---- checkpointing ----------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    trainer = small_trainer(seed=3)
    trainer.train(n_steps=4)
    path = tmp_path / "ckpt.pt"
    trainer.save_checkpoint(path)
    resumed = Pretrainer.from_checkpoint(path, trainer.samples)
    assert resumed.global_step == 4
    for a, b in zip(trainer.model.state_dict().values(), resumed.model.state_dict().values()):
        assert torch.equal(a, b)


def test_resume_reproduces_continuous_run(tmp_path):
    continuous = small_trainer(seed=4)
    stream = continuous.train(n_steps=14)

    split = small_trainer(seed=4)
    split.train(n_steps=4)
    path = tmp_path / "mid.pt"
    split.save_checkpoint(path)
    resumed = Pretrainer.from_checkpoint(path, split.samples)
    tail = resumed.train(n_steps=10)
    for cont, res in zip(stream[4:], tail):
        assert cont.losses == res.losses
        assert cont.lr == res.lr and cont.tau == res.tau


def test_corrupt_checkpoint_rejected(tmp_path):
    path = tmp_path / "ckpt.pt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValidationError, match="checkpoint"):
        load_checkpoint(path)
    torch.save({"something": 1}, tmp_path / "other.pt")
    with pytest.raises(ValidationError, match="not a recognized"):
        load_checkpoint(tmp_path / "other.pt")
