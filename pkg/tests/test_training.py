import math
import shutil

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from grumt import training
from grumt.corpus import Batch, make_batches
from grumt.gradcheck import ORACLE_DTYPE, ORACLE_EPSILON, ORACLE_ORDER
from grumt.gru import init_parameters
from grumt.numerics import finite_difference_check
from grumt.toy import copy_corpus, random_table
from grumt.training import (CheckpointError, OptimizerState, TrainingConfig, TrainingError,
                            batch_loss_self_fed, batch_loss_teacher_forced, clip_gradients,
                            init_rng, load_checkpoint, nesterov_step, save_checkpoint, train)


def small_setup(seed=0, symbols=2, dim=3, hidden=4, layers=2, dtype=np.float64):
    vocab, pairs = copy_corpus(4, symbols, [2], seed)
    table = random_table(vocab, dim, seed + 1, dtype=dtype)
    params = init_parameters(dim, hidden, layers, len(vocab), np.random.default_rng(seed), dtype)
    return vocab, pairs, table, params


def test_config_parse_and_defaults():
    cfg = TrainingConfig.from_text("method = self_fed\nhidden_size=16  # small\n\nlearning_rate=0.5\n")
    assert cfg.method == "self_fed" and cfg.hidden_size == 16 and cfg.learning_rate == 0.5
    assert (cfg.batch_size, cfg.layers, cfg.gradient_clip) == (128, 4, 100.0)
    assert (cfg.momentum_coefficient, cfg.checkpoint_interval) == (0.9, 500)
    assert TrainingConfig.from_text(cfg.to_text()) == cfg


@pytest.mark.parametrize("text", ["learning_rate=-1", "momentum_coefficient=1.0",
                                  "gradient_clip=0", "method=magic", "colour=blue", "junk"])
def test_config_rejects_invalid(text):
    with pytest.raises(ValueError):
        TrainingConfig.from_text(text)


def test_clip_examples():
    _, _, _, params = small_setup()
    g = params.zeros_like()
    g.output_bias[:] = [250.0, -7.0, -300.0, 3.0]
    clipped = clip_gradients(g, 100)
    np.testing.assert_array_equal(clipped.output_bias, [100.0, -7.0, -100.0, 3.0])


def test_clip_identity_within_bounds(rng):
    _, _, _, params = small_setup()
    g = params.map(lambda a: rng.uniform(-50, 50, a.shape))
    clipped = clip_gradients(g, 100)
    for a, b in zip(g.arrays(), clipped.arrays()):
        assert a.tobytes() == b.tobytes()


@settings(max_examples=30)
@given(st.floats(0.1, 1000), st.integers(0, 2**32 - 1))
def test_clip_bounds_hold(limit, seed):
    _, _, _, params = small_setup()
    rng = np.random.default_rng(seed)
    g = params.map(lambda a: rng.standard_normal(a.shape) * 1e3)
    assert all(np.all(np.abs(a) <= limit) for a in clip_gradients(g, limit).arrays())


def _single(value):
    _, _, _, params = small_setup()
    return params.map(lambda a: np.full_like(a, value))


def test_nesterov_without_momentum_is_sgd():
    params, grads = _single(1.0), _single(0.5)
    opt = OptimizerState.zeros_like(params)
    nesterov_step(params, grads, opt, lr=0.1, mu=0.0)
    assert all(np.allclose(a, 1.0 - 0.1 * 0.5) for a in params.arrays())


def test_nesterov_zero_gradient_fixed_point():
    params = _single(0.7)
    opt = OptimizerState.zeros_like(params)
    nesterov_step(params, _single(0.0), opt, lr=0.1, mu=0.9)
    assert all(np.all(a == 0.7) for a in params.arrays())


def test_nesterov_two_steps_on_quadratic():
    # f(p) = p^2 from p = 1, lr = 0.1, mu = 0.9, by hand:
    # step 1: g = 2,    v = -0.2,                 p = 1 + 0.9*(-0.2) - 0.2      = 0.62
    # step 2: g = 1.24, v = 0.9*(-0.2) - 0.124 = -0.304, p = 0.62 - 0.2736 - 0.124 = 0.2224
    params = _single(1.0)
    opt = OptimizerState.zeros_like(params)
    for expected_p, expected_v in [(0.62, -0.2), (0.2224, -0.304)]:
        grads = params.map(lambda a: 2 * a)
        nesterov_step(params, grads, opt, lr=0.1, mu=0.9)
        np.testing.assert_allclose(params.output_bias, expected_p, atol=1e-12)
        np.testing.assert_allclose(opt.velocity.output_bias, expected_v, atol=1e-12)


def _batch(pairs):
    return make_batches(pairs, batch_size=len(pairs))[0]


@pytest.mark.parametrize("loss_fn", [batch_loss_teacher_forced, batch_loss_self_fed])
def test_zero_parameters_give_log_vocab(loss_fn):
    _, pairs, table, params = small_setup()
    params = params.map(np.zeros_like)
    loss, _ = loss_fn(_batch(pairs[:1]), params, table, table)
    assert loss == pytest.approx(math.log(4))


def test_teacher_forced_gradients_match_finite_differences():
    vocab, _, table, params = small_setup(seed=3, symbols=3)
    batch = Batch(np.array([[0, 2, vocab.eos_id]]), np.array([[1, 0, vocab.eos_id]]))
    assert (batch.source_len, batch.target_len) == (3, 3)
    _, grads = batch_loss_teacher_forced(batch, params, table, table)
    wide_table = random_table(vocab, 3, 4, dtype=ORACLE_DTYPE)
    wide_table.vectors[:] = table.vectors
    wide = params.astype(ORACLE_DTYPE)

    def loss(flat):
        return batch_loss_teacher_forced(batch, wide.unflatten(flat), wide_table, wide_table)[0]

    err = finite_difference_check(loss, params.flatten(), grads.flatten(), ORACLE_EPSILON,
                                  ORACLE_ORDER, ORACLE_DTYPE)
    assert err < 1e-5


def test_self_fed_equals_teacher_forced_on_memorized_model(copy_task):
    for batch in copy_task.batches:
        tf_loss, tf_grads = batch_loss_teacher_forced(batch, copy_task.params, copy_task.table,
                                                      copy_task.table)
        sf_loss, sf_grads = batch_loss_self_fed(batch, copy_task.params, copy_task.table,
                                                copy_task.table)
        assert sf_loss == tf_loss
        for a, b in zip(tf_grads.arrays(), sf_grads.arrays()):
            assert a.tobytes() == b.tobytes()


def test_self_fed_epoch_decreases_loss():
    vocab, pairs = copy_corpus(20, 28, [2, 3, 4, 5], seed=1)
    table = random_table(vocab, 16, seed=2)
    batches = make_batches(pairs, batch_size=5)
    cfg = TrainingConfig(method="self_fed", layers=2, hidden_size=16, learning_rate=0.3,
                         max_epochs=3, rng_seed=3)
    params, log = train(cfg, batches, table, table)
    assert all(np.isfinite(log.losses))
    assert log.epochs[-1][1] < log.epochs[0][1]


def test_teacher_forced_descends_on_single_batch():
    _, pairs, table, _ = small_setup(seed=5, symbols=3)
    batch = _batch(pairs)
    cfg = TrainingConfig(layers=2, hidden_size=4, learning_rate=0.05, momentum_coefficient=0.0,
                         max_epochs=10, rng_seed=5, dtype="float64")
    _, log = train(cfg, [batch], table, table)
    losses = log.losses
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_zero_learning_rate_keeps_initial_parameters():
    _, pairs, table, _ = small_setup(dtype=np.float32)
    cfg = TrainingConfig(layers=2, hidden_size=4, learning_rate=0.0, max_epochs=1, rng_seed=11)
    params, _ = train(cfg, [_batch(pairs)], table, table)
    initial = init_parameters(3, 4, 2, len(table), init_rng(11), np.float32)
    for a, b in zip(params.arrays(), initial.arrays()):
        assert a.tobytes() == b.tobytes()


def _toy_run(tmp_path, name, **overrides):
    vocab, pairs = copy_corpus(12, 6, [2, 3], seed=4)
    table = random_table(vocab, 8, seed=5)
    batches = make_batches(pairs, batch_size=3)
    cfg = TrainingConfig(**{"layers": 2, "hidden_size": 8, "learning_rate": 0.2,
                            "max_epochs": 3, "rng_seed": 7, "checkpoint_interval": 2,
                            **overrides})
    out = tmp_path / name
    params, log = train(cfg, batches, table, table, checkpoint_dir=str(out),
                        log_path=str(out / "log.csv"))
    return cfg, batches, table, params, log, out


def test_same_seed_same_run(tmp_path):
    _, _, _, p1, log1, out1 = _toy_run(tmp_path, "a")
    _, _, _, p2, log2, out2 = _toy_run(tmp_path, "b")
    assert log1.losses == log2.losses
    assert (out1 / "final.grumt").read_bytes() == (out2 / "final.grumt").read_bytes()


def test_different_seed_different_run(tmp_path):
    _, _, _, _, log1, _ = _toy_run(tmp_path, "a")
    _, _, _, _, log2, _ = _toy_run(tmp_path, "b", rng_seed=8)
    assert log1.losses != log2.losses


def test_log_file_format(tmp_path):
    _, batches, _, _, log, out = _toy_run(tmp_path, "a")
    rows = [line.split(",") for line in (out / "log.csv").read_text().splitlines()]
    assert len(rows) == 3 * len(batches) == len(log.records)
    for row, rec in zip(rows, log.records):
        assert (int(row[0]), int(row[1]), float(row[2])) == rec[:3]
        assert float(row[2]) >= 0 and int(row[3]) >= 0


def test_checkpoint_roundtrip(tmp_path):
    _, _, _, params, _, out = _toy_run(tmp_path, "a")
    ckpt = load_checkpoint(str(out / "final.grumt"))
    assert (ckpt.seed, ckpt.epoch, ckpt.batch) == (7, 3, 0)
    for a, b in zip(params.arrays(), ckpt.params.arrays()):
        assert a.tobytes() == b.tobytes()
    assert all(np.all(np.isfinite(v)) for v in ckpt.velocity.arrays())


def test_checkpoint_layout(tmp_path):
    _, _, _, params, _, out = _toy_run(tmp_path, "a")
    data = (out / "final.grumt").read_bytes()
    assert data[:6] == b"GRUMT\x01"
    assert np.frombuffer(data[6:22], "<u4").tolist() == [2, 8, 8, params.vocab_size]
    n = sum(a.size for a in params.arrays())
    assert len(data) == 22 + 2 * 4 * n + 16
    first = np.frombuffer(data[22:22 + 4 * 64], "<f4").reshape(8, 8)
    np.testing.assert_array_equal(first, params.layers[0].W)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.grumt"
    path.write_bytes(b"NOTGRU" + bytes(40))
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))
    save_checkpoint(str(path), *_small_ckpt_args())
    path.write_bytes(path.read_bytes()[:-20])
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))


def _small_ckpt_args():
    _, _, _, params = small_setup(dtype=np.float32)
    return params, OptimizerState.zeros_like(params), 1, 0, 0


class _Stop(Exception):
    pass


def test_resume_from_mid_epoch_matches_straight_run(tmp_path, monkeypatch):
    cfg, batches, table, params, _, _ = _toy_run(tmp_path, "a", checkpoint_interval=3)
    mid = tmp_path / "mid.grumt"
    real_save = training.save_checkpoint

    def save_then_stop(path, p, opt, seed, epoch, batch):
        # interrupt the run right after the checkpoint three batches into epoch 1
        real_save(path, p, opt, seed, epoch, batch)
        if (epoch, batch) == (1, 3):
            shutil.copy(path, mid)
            raise _Stop

    monkeypatch.setattr(training, "save_checkpoint", save_then_stop)
    with pytest.raises(_Stop):
        train(cfg, batches, table, table, checkpoint_dir=str(tmp_path / "interrupted"))
    monkeypatch.undo()

    resumed, log = train(cfg, batches, table, table, resume=load_checkpoint(str(mid)))
    assert log.records[0][:2] == (1, 3)
    for a, b in zip(params.arrays(), resumed.arrays()):
        assert a.tobytes() == b.tobytes()


def test_non_finite_loss_aborts():
    vocab, pairs, table, _ = small_setup(dtype=np.float32)
    table.vectors[:] = np.nan
    cfg = TrainingConfig(layers=1, hidden_size=4, max_epochs=1)
    with pytest.raises(TrainingError, match="epoch 0 batch 0"):
        train(cfg, [_batch(pairs)], table, table)


def test_train_needs_batches():
    _, _, table, _ = small_setup()
    with pytest.raises(TrainingError):
        train(TrainingConfig(), [], table, table)
