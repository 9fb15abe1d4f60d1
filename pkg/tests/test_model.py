import numpy as np
import pytest

import deepgonet.model as model_mod
from deepgonet.autodiff import bce_loss
from deepgonet.errors import CheckpointError, ConfigError, DatasetError, NumericalError, ShapeError
from deepgonet.model import (
    Checkpoint,
    ModelConfig,
    TrainConfig,
    build_model,
    domain_config,
    load_checkpoint,
    parameter_shapes,
    save_checkpoint,
    split_indices,
    train,
)
from deepgonet.ontology import TermDictionary
from deepgonet.rng import make_rng

from conftest import motif_dataset, numeric_grad, rel_err, tiny_config


def calibrated(cfg, seed=0, dtype=np.float32, batch=None):
    """Model whose batchnorm has seen one train-mode batch, so eval mode works."""
    m = build_model(cfg, seed, dtype)
    idx, mask = batch if batch is not None else (
        np.random.default_rng(1).integers(0, 26, (4, cfg.max_len)),
        np.ones((4, cfg.max_len), np.uint8))
    m.forward(idx, mask, "train", make_rng(0, "dropout"))
    return m


def test_parameter_count_closed_form():
    cfg = ModelConfig()
    E, F, H, D, K = 50, 64, 300, 256, 33
    local = 3 * F
    expected = (27 * E + sum(k * E * F + F for k in (3, 7, 11)) + 2 * local
                + 2 * 3 * (local * H + H * H + H) + (local + 2 * H) * D + D + D * K + K)
    assert expected == 1_168_015
    assert build_model(cfg).num_parameters() == expected
    assert sum(int(np.prod(s)) for s in parameter_shapes(cfg).values()) == expected


@pytest.mark.parametrize("ns,k,epochs", [("biological_process", 33, 48),
                                         ("cellular_component", 22, 128),
                                         ("molecular_function", 16, 155)])
def test_domain_heads(ns, k, epochs):
    mcfg, tcfg = domain_config(ns, max_len=30)
    assert (mcfg.output_dim, tcfg.epochs, tcfg.learning_rate, tcfg.batch_size) == (k, epochs, 1e-5, 100)
    m = calibrated(mcfg)
    probs = m.predict_proba(np.zeros((2, 30), np.int64), np.ones((2, 30), np.uint8))
    assert probs.shape == (2, k)
    assert ((probs > 0) & (probs < 1)).all()


def test_domain_config_rejects_unknown():
    with pytest.raises(ConfigError):
        domain_config("bogus")
    with pytest.raises(ConfigError):
        ModelConfig(kernel_sizes=(3, 4))


def test_init_scheme():
    m = build_model(ModelConfig(), seed=3)
    u = m.params["bigru.fwd.U"].data.astype(np.float64)
    for j in range(3):
        block = u[:, 300 * j:300 * (j + 1)]
        np.testing.assert_allclose(block.T @ block, np.eye(300), atol=1e-5)
    w = m.params["conv7.weight"].data
    assert np.abs(w).max() <= np.sqrt(6 / (7 * 50 + 7 * 64))
    assert not m.params["dense.bias"].data.any()
    assert (m.params["bn.gamma"].data == 1).all()


def test_eval_before_train_step_raises():
    m = build_model(tiny_config())
    with pytest.raises(ShapeError):
        m.predict_proba(np.zeros((1, 24), np.int64), np.ones((1, 24), np.uint8))


def test_seeded_init_identical():
    a, b = build_model(tiny_config(), seed=5), build_model(tiny_config(), seed=5)
    c = build_model(tiny_config(), seed=6)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name].data, b.params[name].data)
    assert any(not np.array_equal(a.params[n].data, c.params[n].data) for n in a.params
               if a.params[n].data.any())


def test_pad_invariance():
    cfg = tiny_config(max_len=60)
    m = calibrated(cfg, dtype=np.float64)
    seq = np.random.default_rng(2).integers(0, 26, 17)
    outs = []
    for total in (17, 20, 60):
        idx = np.full((1, total), 26)
        idx[0, :17] = seq
        mask = (idx != 26).astype(np.uint8)
        outs.append(m.predict_proba(idx, mask)[0])
    assert np.abs(outs[0] - outs[1]).max() <= 1e-5
    assert np.abs(outs[0] - outs[2]).max() <= 1e-5


def test_eval_row_independent_of_batch():
    ds = motif_dataset(n=6, max_len=24)
    m = calibrated(tiny_config(), batch=(ds.indices, ds.mask))
    full = m.predict_proba(ds.indices, ds.mask)
    single = m.predict_proba(ds.indices[2:3], ds.mask[2:3])
    np.testing.assert_allclose(full[2:3], single, atol=1e-6)


def test_end_to_end_gradient():
    cfg = tiny_config(output_dim=3, max_len=10, dropout_rate=0.5)
    m = build_model(cfg, seed=1, dtype=np.float64)
    rng = np.random.default_rng(4)
    idx = rng.integers(0, 26, (3, 10))
    mask = np.ones((3, 10), np.uint8)
    mask[1, 7:] = 0
    idx[1, 7:] = 26
    y = rng.integers(0, 2, (3, 3))

    def loss_tensor():
        # same dropout mask on every call
        return bce_loss(m.forward(idx, mask, "train", np.random.default_rng(9)), y)

    m.zero_grad()
    loss_tensor().backward()
    grads = {n: p.grad.copy() for n, p in m.params.items()}
    analytic, numeric = [], []
    for name, p in m.params.items():
        analytic.append(grads[name].ravel())
        numeric.append(numeric_grad(lambda: float(loss_tensor().data), p.data).ravel())
    assert rel_err(np.concatenate(analytic), np.concatenate(numeric)) < 1e-3


def test_lr_zero_leaves_parameters():
    ds = motif_dataset(n=12, max_len=24)
    m = build_model(tiny_config(dropout_rate=0.0), seed=0, dtype=np.float64)
    before = {n: p.data.copy() for n, p in m.params.items()}
    tcfg = TrainConfig(learning_rate=0.0, epochs=3, batch_size=100)
    ckpt = train(m, ds, tcfg)
    for n, p in m.params.items():
        np.testing.assert_array_equal(p.data, before[n])
    losses = [e["train_loss"] for e in ckpt.train_log]
    assert max(losses) - min(losses) < 1e-9


def test_lr_halving_and_floor(monkeypatch):
    # a flat validation loss never improves after epoch 1
    monkeypatch.setattr(model_mod, "_bce_numpy", lambda p, y, eps=1e-7: 1.0)
    ds = motif_dataset(n=12, max_len=24)
    m = build_model(tiny_config(), seed=0)
    snapshots = []
    tcfg = TrainConfig(learning_rate=4e-7, epochs=20, min_lr=1e-7)
    ckpt = train(m, ds, tcfg, on_epoch=lambda e: snapshots.append(m.state_dict()))
    lrs = [e["lr"] for e in ckpt.train_log]
    assert lrs == [4e-7] * 6 + [2e-7] * 5 + [1e-7] * 9
    assert ckpt.best_epoch == 1
    for name, value in snapshots[0].items():
        np.testing.assert_array_equal(ckpt.state[name], value)


def test_training_deterministic():
    ds = motif_dataset(n=12, max_len=24)
    runs = []
    for _ in range(2):
        m = build_model(tiny_config(), seed=0)
        runs.append(train(m, ds, TrainConfig(learning_rate=1e-3, epochs=2, batch_size=4)))
    assert runs[0].train_log == runs[1].train_log
    for name in runs[0].state:
        np.testing.assert_array_equal(runs[0].state[name], runs[1].state[name])


def test_nan_loss_raises():
    ds = motif_dataset(n=12, max_len=24)
    m = build_model(tiny_config(), seed=0)
    m.params["out.bias"].data[:] = np.nan
    with pytest.raises(NumericalError, match="epoch 1, batch 0"):
        train(m, ds, TrainConfig(epochs=1))


def test_label_width_mismatch():
    ds = motif_dataset(n=12, k=5, max_len=24)
    with pytest.raises(DatasetError):
        train(build_model(tiny_config(output_dim=4)), ds, TrainConfig(epochs=1))


def test_split_indices():
    tr, va = split_indices(100, 0.1, seed=0)
    assert len(va) == 10 and len(tr) == 90
    assert set(tr).isdisjoint(va) and set(tr) | set(va) == set(range(100))
    tr2, va2 = split_indices(100, 0.1, seed=0)
    np.testing.assert_array_equal(va, va2)
    assert len(split_indices(5, 0.1, 0)[1]) == 1


@pytest.fixture
def saved(tmp_path):
    ds = motif_dataset(n=12, max_len=24)
    m = build_model(tiny_config(), seed=0)
    ckpt = train(m, ds, TrainConfig(learning_rate=1e-3, epochs=1))
    path = tmp_path / "m.ckpt"
    save_checkpoint(ckpt, path)
    return path, m, ds


def test_checkpoint_roundtrip(saved):
    path, m, ds = saved
    back = load_checkpoint(path)
    np.testing.assert_array_equal(back.to_model().predict_proba(ds.indices, ds.mask),
                                  m.predict_proba(ds.indices, ds.mask))
    assert back.train_log and back.best_epoch == 1


def test_checkpoint_truncated(saved):
    path = saved[0]
    path.write_bytes(path.read_bytes()[:-40])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_refuses_other_domain(saved, tmp_path):
    cc = TermDictionary("cellular_component", tuple(f"GO:{i:07d}" for i in range(22)),
                        tuple("x" for _ in range(22)))
    bp_cfg, _ = domain_config("biological_process", max_len=20, embed_dim=4, conv_filters=2,
                              gru_hidden=3, dense_hidden=5)
    bp = TermDictionary("biological_process", tuple(f"GO:{i:07d}" for i in range(33)),
                        tuple("x" for _ in range(33)))
    path = tmp_path / "bp.ckpt"
    save_checkpoint(Checkpoint.from_model(build_model(bp_cfg), bp), path)
    with pytest.raises(CheckpointError, match="33"):
        load_checkpoint(path, dictionary=cc)
    with pytest.raises(CheckpointError):
        Checkpoint.from_model(build_model(bp_cfg), cc)


def test_checkpoint_wrong_kind(tmp_path, data_dir):
    from deepgonet.annotations import save_dataset
    path = tmp_path / "d.bin"
    save_dataset(motif_dataset(n=4, max_len=24), path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_eval_repeatable_and_in_range():
    ds = motif_dataset(n=6, max_len=24)
    m = calibrated(tiny_config(), batch=(ds.indices, ds.mask))
    a = m.predict_proba(ds.indices, ds.mask)
    b = m.predict_proba(ds.indices, ds.mask)
    np.testing.assert_array_equal(a, b)
    assert ((a > 0) & (a < 1)).all()
