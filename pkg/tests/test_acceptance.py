"""Acceptance gate: every criterion at its stated tolerance.

Run with `pytest tests/test_acceptance.py -s` to see one PASS/FAIL line per
criterion (prints are also captured in regular runs).
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest
import torch

from facemim.attention_stats import (
    collect_attention_stats,
    head_kl_divergence,
    mean_attention_distance,
)
from facemim.errors import ValidationError
from facemim.finetune import FinetuneConfig, finetune
from facemim.losses import (
    LossWeights,
    alignment_loss,
    masked_reconstruction_loss,
    pretrain_loss,
    region_reconstruction_loss,
)
from facemim.masking import STRATEGIES, MaskConfig, round_half_up, sample_mask
from facemim.metrics import compute_auc, compute_hter
from facemim.model import BackboneConfig, DualBranchModel, ema_update
from facemim.synth import generate_face_set
from facemim.trainer import Pretrainer, TrainConfig, load_checkpoint

from conftest import random_face_table
from test_attention_stats import enumerate_uniform_mean_distance
from test_losses import naive_patch_mse
from test_metrics import pair_count_auc, random_scores, sweep_hter_oracle
from test_model import random_mask


@contextmanager
def criterion(number: int, description: str):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"criterion {number:2d} FAIL  {description}")
        raise
    print(f"criterion {number:2d} PASS  {description} ({time.perf_counter() - t0:.1f}s)")


@pytest.fixture(scope="module")
def table_pool():
    return [random_face_table(seed) for seed in range(100)]


@pytest.fixture(scope="module")
def smoke_samples():
    return generate_face_set(32, seed=1234)


def smoke_config(**overrides):
    base = dict(epochs=50, warmup_epochs=2, batch_size=8, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def smoke_checkpoint(tmp_path_factory, smoke_samples):
    """200-step pretraining run with the default strategy/view, reused by
    the finetune criterion."""
    trainer = Pretrainer(BackboneConfig(), smoke_config(), smoke_samples)
    records = trainer.train(n_steps=200)
    path = tmp_path_factory.mktemp("smoke") / "smoke.pt"
    trainer.save_checkpoint(path)
    return path, records


# ---- 1. mask oracle suite ---------------------------------------------------


def test_criterion_1_mask_oracles(table_pool):
    with criterion(1, "mask suite: exact counts, covering, extreme case (<10s)"):
        ratios = (0.15, 0.3, 0.5, 0.75, 0.9)
        extremes = 0
        t0 = time.perf_counter()
        for i in range(1000):
            table = table_pool[i % 100]
            strategy = STRATEGIES[i % 5]
            ratio = ratios[(i // 5) % 5]
            pair = sample_mask(table, MaskConfig(strategy, ratio, seed=i))
            assert pair.n_masked == round_half_up(table.n_patches * ratio)
            if strategy in ("crfr_p", "crfr_r"):
                fr = table.taxonomy.coarse_index(pair.region)
                full_cover = table.intersect_mask(fr)
                if int(full_cover.sum()) > pair.n_masked:
                    extremes += 1
                    assert (pair.mask == pair.region_mask).all()
                    assert (pair.region_mask <= full_cover).all()
                else:
                    assert (pair.region_mask == full_cover).all()
                    assert ((pair.mask & pair.region_mask) == pair.region_mask).all()
        elapsed = time.perf_counter() - t0
        assert extremes > 0, "extreme-case branch never exercised"
        assert elapsed < 10.0, f"mask suite took {elapsed:.1f}s"


# ---- 2. visibility guarantee --------------------------------------------------


def test_criterion_2_visibility_guarantee(table_pool):
    with criterion(2, "visibility: non-covered regions keep a visible patch (<10s)"):
        t0 = time.perf_counter()
        checks = 0
        for table in table_pool:
            sizes = np.bincount(table.primary, minlength=8)
            for seed in range(5):
                for strategy in ("crfr_p", "frp"):
                    pair = sample_mask(table, MaskConfig(strategy, 0.75, seed))
                    fr = (
                        table.taxonomy.coarse_index(pair.region)
                        if pair.region is not None
                        else -1
                    )
                    for r in range(8):
                        if r == fr or sizes[r] < 2:
                            continue
                        masked = int((pair.mask & (table.primary == r)).sum())
                        assert masked < sizes[r], (strategy, seed, r)
                    checks += 1
        elapsed = time.perf_counter() - t0
        assert checks == 1000
        assert elapsed < 10.0, f"visibility suite took {elapsed:.1f}s"


# ---- 3. gradient check ---------------------------------------------------------


def test_criterion_3_gradient_check(smoke_samples):
    with criterion(3, "finite-difference gradient check, rel err < 1e-4 (<2min)"):
        t0 = time.perf_counter()
        torch.manual_seed(7)
        cfg = BackboneConfig()
        model = DualBranchModel(cfg).double()
        images = torch.stack(
            [
                torch.from_numpy(np.ascontiguousarray(s.image.transpose(2, 0, 1)))
                for s in smoke_samples[:2]
            ]
        ).double()
        mask = random_mask(cfg.n_patches, 48, seed=11, batch=2)
        region = mask & random_mask(cfg.n_patches, 40, seed=12, batch=2)
        weights = LossWeights(region=0.007, align=0.1)

        def loss_value() -> float:
            outputs = model.forward_pretrain(images, mask)
            bundle = pretrain_loss(
                outputs, images, mask, region, cfg.patch_size, weights
            )
            return bundle.total

        model.zero_grad(set_to_none=True)
        loss_value().backward()

        groups = {
            "encoder": list(model.online_encoder.parameters()),
            "pixel_decoder": list(model.pixel_decoder.parameters()),
            "rep_decoder": list(model.online_rep_decoder.parameters()),
            "projector": list(model.online_projector.parameters()),
            "predictor": list(model.predictor.parameters()),
            "rep_mask_token": [model.rep_mask_token],
        }
        h = 1e-5
        rng = np.random.Generator(np.random.Philox(99))
        for name, params in groups.items():
            checked = 0
            attempts = 0
            while checked < 20:
                attempts += 1
                assert attempts < 400, f"no usable coordinates in group {name}"
                p = params[int(rng.integers(len(params)))]
                flat = int(rng.integers(p.numel()))
                analytic = float(p.grad.reshape(-1)[flat])
                if abs(analytic) < 1e-7:
                    continue  # too near the fd noise floor to compare relatively
                with torch.no_grad():
                    orig = float(p.reshape(-1)[flat])
                    p.reshape(-1)[flat] = orig + h
                    plus = float(loss_value())
                    p.reshape(-1)[flat] = orig - h
                    minus = float(loss_value())
                    p.reshape(-1)[flat] = orig
                fd = (plus - minus) / (2 * h)
                rel = abs(fd - analytic) / max(abs(fd), abs(analytic))
                assert rel < 1e-4, (name, flat, analytic, fd, rel)
                checked += 1
        elapsed = time.perf_counter() - t0
        assert elapsed < 120.0, f"gradient check took {elapsed:.1f}s"


# ---- 4. stop-gradient and EMA ---------------------------------------------------


def test_criterion_4_stop_gradient_and_ema(smoke_samples):
    with criterion(4, "target grads exactly zero; EMA matches closed form to 1e-10"):
        torch.manual_seed(3)
        cfg = BackboneConfig()
        model = DualBranchModel(cfg).double()
        images = torch.stack(
            [
                torch.from_numpy(np.ascontiguousarray(s.image.transpose(2, 0, 1)))
                for s in smoke_samples[:2]
            ]
        ).double()
        mask = random_mask(cfg.n_patches, 48, seed=1, batch=2)
        outputs = model.forward_pretrain(images, mask)
        bundle = pretrain_loss(
            outputs, images, mask, mask, cfg.patch_size, LossWeights()
        )
        bundle.total.backward()
        for module in model.target_modules():
            for p in module.parameters():
                assert p.grad is None or torch.equal(p.grad, torch.zeros_like(p))

        tau, n = 0.99, 30
        with torch.no_grad():
            for online, target in model.ema_pairs():
                online.fill_(0.125)
                target.fill_(2.0)
        for _ in range(n):
            ema_update(model, tau)
        expected = tau**n * 2.0 + (1 - tau**n) * 0.125
        for _, target in model.ema_pairs():
            assert float((target - expected).abs().max()) <= 1e-10


# ---- 5. loss-component oracles ----------------------------------------------------


def test_criterion_5_loss_oracles():
    with criterion(5, "reconstruction losses vs naive loops (1e-12); NCS identity"):
        rng = np.random.Generator(np.random.Philox(17))
        for trial in range(50):
            b, n, d = 2, 16, 8
            pred = torch.from_numpy(rng.standard_normal((b, n, d)))
            target = torch.from_numpy(rng.standard_normal((b, n, d)))
            mask = random_mask(n, int(rng.integers(1, n)), seed=trial, batch=b)
            got = float(masked_reconstruction_loss(pred, target, mask))
            want = naive_patch_mse(pred, target, mask)
            assert abs(got - want) <= 1e-12 * max(abs(want), 1.0)
            region = mask.clone()
            region[:, n // 2 :] = False
            if region.any():
                got_r = float(region_reconstruction_loss(pred, target, region))
                want_r = naive_patch_mse(pred, target, region)
                assert abs(got_r - want_r) <= 1e-12 * max(abs(want_r), 1.0)
        for trial in range(50):
            a = torch.from_numpy(rng.standard_normal((6, 24)))
            b2 = torch.from_numpy(rng.standard_normal((6, 24)))
            mse = float(alignment_loss(a, b2, variant="mse"))
            ncs = float(alignment_loss(a, b2, variant="asymmetric_ncs"))
            assert abs(mse - (2.0 + 2.0 * ncs)) <= 1e-12 * max(abs(mse), 1.0)


# ---- 6. smoke training ---------------------------------------------------------------


def test_criterion_6_smoke_training(smoke_samples, smoke_checkpoint):
    with criterion(6, "200-step loss decrease for all strategies and views (<5min)"):
        t0 = time.perf_counter()
        _, default_records = smoke_checkpoint  # crfr_p + full view
        runs = {("crfr_p", "full"): default_records}
        for strategy in STRATEGIES:
            if strategy == "crfr_p":
                continue
            trainer = Pretrainer(
                BackboneConfig(), smoke_config(mask_strategy=strategy), smoke_samples
            )
            runs[(strategy, "full")] = trainer.train(n_steps=200)
        for view in ("visible_other_mask", "masked_same_mask"):
            trainer = Pretrainer(
                BackboneConfig(), smoke_config(target_view=view), smoke_samples
            )
            runs[("crfr_p", view)] = trainer.train(n_steps=200)
        for key, records in runs.items():
            first = records[0].losses["total"]
            last = records[199].losses["total"]
            assert last < first, (key, first, last)
        elapsed = time.perf_counter() - t0
        assert elapsed < 300.0, f"smoke training took {elapsed:.1f}s"


# ---- 7. metric oracles -----------------------------------------------------------------


def test_criterion_7_metric_oracles():
    with criterion(7, "AUC == pair oracle (exact); HTER == sweep; monotone invariance"):
        for seed in range(100):
            scores, labels = random_scores(seed, ties=bool(seed % 2))
            assert compute_auc(scores, labels) == pair_count_auc(scores, labels)
        for seed in range(50):
            scores, labels = random_scores(seed + 500, ties=bool(seed % 3 == 0))
            assert compute_hter(scores.tolist(), labels.tolist()) == sweep_hter_oracle(
                scores.tolist(), labels.tolist()
            )
        scores, labels = random_scores(4242)
        base = compute_auc(scores, labels)
        rng = np.random.Generator(np.random.Philox(8))
        for _ in range(20):
            a = float(rng.uniform(0.2, 4.0))
            b = float(rng.uniform(-3.0, 3.0))
            c = float(rng.uniform(0.1, 1.5))
            assert compute_auc(a * np.exp(c * scores) + b, labels) == base


# ---- 8. attention diagnostics -------------------------------------------------------------


def test_criterion_8_attention_diagnostics():
    with criterion(8, "uniform-attention closed form to 1e-10; KL diag 0, entries >= 0"):
        for g in range(2, 9):
            t = g * g
            uniform = np.full((1, t, t), 1.0 / t)
            got = mean_attention_distance(uniform, g, g)[0]
            want = enumerate_uniform_mean_distance(g, g)
            assert abs(got - want) <= 1e-10
        rng = np.random.Generator(np.random.Philox(21))
        for _ in range(20):
            rows = rng.random((2, 12, 12)) + 1e-4
            rows /= rows.sum(axis=-1, keepdims=True)
            assert head_kl_divergence(rows[0], rows[0]) == 0.0
            assert head_kl_divergence(rows[0], rows[1]) >= 0.0
        torch.manual_seed(5)
        model = DualBranchModel(BackboneConfig())
        stats = collect_attention_stats(model, torch.rand(2, 3, 64, 64))
        heads = model.cfg.encoder_heads
        assert (stats.kl_matrix[:, np.arange(heads), np.arange(heads)] == 0).all()
        assert (stats.kl_matrix >= 0).all()


# ---- 9. checkpoint fidelity -----------------------------------------------------------------


def test_criterion_9_checkpoint_fidelity(tmp_path, smoke_samples):
    with criterion(9, "resume-after-save matches the continuous loss stream bit-exactly"):
        continuous = Pretrainer(BackboneConfig(), smoke_config(seed=9), smoke_samples)
        stream = continuous.train(n_steps=30)

        split = Pretrainer(BackboneConfig(), smoke_config(seed=9), smoke_samples)
        split.train(n_steps=20)
        path = tmp_path / "mid.pt"
        split.save_checkpoint(path)
        resumed = Pretrainer.from_checkpoint(path, smoke_samples)
        tail = resumed.train(n_steps=10)
        for cont, res in zip(stream[20:], tail):
            assert cont.losses == res.losses  # bit-exact float equality
            assert cont.lr == res.lr and cont.tau == res.tau


# ---- 10. finetune overfit ---------------------------------------------------------------------


def test_criterion_10_finetune_overfit(smoke_checkpoint):
    with criterion(10, "linear head reaches train AUC 1.0 on the toy set within 20 epochs"):
        path, _ = smoke_checkpoint
        payload = load_checkpoint(path)
        toy = generate_face_set(8, seed=31, labeled=True)
        cfg = FinetuneConfig(
            head="linear", epochs=20, base_lr=5e-3, batch_size=8, seed=0
        )
        _, history = finetune(payload, toy, cfg)
        assert max(rec["train_auc"] for rec in history.epochs) == 1.0
