import numpy as np
import pytest

from dpltta import autodiff as ad
from dpltta.autodiff import Tape
from dpltta.errors import ContractError, DataFormatError, ShapeMismatchError
from dpltta.model import (ModelConfig, PrototypeClassifier, load_checkpoint,
                          save_checkpoint)


def _model(norm_mode="batch", seed=0, **kw):
    return PrototypeClassifier(ModelConfig(norm_mode=norm_mode, **kw), seed=seed)


def test_logits_are_feature_prototype_products(rng):
    model = _model()
    x = rng.standard_normal((4, 3, 24, 24))
    fp = model.forward(x)
    ref = fp.features.data @ model.W.data.T
    np.testing.assert_allclose(fp.logits.data, ref, atol=1e-12)


def test_param_names_and_scopes():
    model = _model()
    names = [n for n, _ in model.named_params()]
    assert names == ["conv0.weight", "norm0.gamma", "norm0.beta",
                     "conv1.weight", "norm1.gamma", "norm1.beta", "head.W"]
    full = {id(p) for p in model.select_params("full")}
    assert full == {id(p) for _, p in model.named_params()}
    norm_only = model.select_params("norm-affine-only")
    assert {id(p) for p in norm_only} == {
        id(p) for n, p in model.named_params() if "norm" in n}
    assert [id(p) for p in model.select_params("classifier-only")] == \
        [id(model.W)]
    extractor = model.select_params("extractor-only")
    assert id(model.W) not in {id(p) for p in extractor}
    assert len(extractor) == len(names) - 1
    with pytest.raises(ContractError):
        model.select_params("everything")


def test_snapshot_restore_round_trip(rng):
    model = _model()
    before = model.snapshot()
    x = rng.standard_normal((2, 3, 24, 24))
    model.forward(x, batch_stats=True, update_running=True)  # moves buffers
    model.W.data += 1.0
    model.restore(before)
    after = model.snapshot()
    assert before.keys() == after.keys()
    for key in before:
        np.testing.assert_array_equal(before[key], after[key])


def test_restore_rejects_foreign_state():
    a = _model()
    b = _model(class_count=7)
    with pytest.raises(ContractError):
        a.restore(b.snapshot())


def test_checkpoint_round_trip(tmp_path, rng):
    model = _model(seed=3)
    x = rng.standard_normal((4, 3, 24, 24))
    model.forward(x, batch_stats=True, update_running=True)
    path = str(tmp_path / "m.bin")
    save_checkpoint(model, path, extra={"note": "x", "k": [1, 2]})
    loaded, extra = load_checkpoint(path)
    assert extra == {"note": "x", "k": [1, 2]}
    assert loaded.config == model.config
    fp_a = model.forward(x, batch_stats=False)
    fp_b = loaded.forward(x, batch_stats=False)
    np.testing.assert_array_equal(fp_a.logits.data, fp_b.logits.data)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
    with pytest.raises(DataFormatError):
        load_checkpoint(str(path))


def test_identity_norm_is_batch_independent(rng):
    model = _model(norm_mode="identity")
    x = rng.standard_normal((6, 3, 24, 24))
    full = model.forward(x).logits.data
    rows = [model.forward(x[i:i + 1]).logits.data[0] for i in range(6)]
    np.testing.assert_allclose(full, np.stack(rows), atol=1e-12)


def test_batch_norm_couples_samples(rng):
    model = _model(norm_mode="batch")
    x = rng.standard_normal((6, 3, 24, 24))
    full = model.forward(x, batch_stats=True).logits.data
    solo = model.forward(x[:1], batch_stats=True).logits.data
    assert np.abs(full[0] - solo[0]).max() > 1e-6


def test_running_stats_move_only_when_asked(rng):
    model = _model()
    x = rng.standard_normal((8, 3, 24, 24)) + 2.0
    before = {k: v.copy() for k, v in model.named_buffers()}
    model.forward(x, batch_stats=True, update_running=False)
    for k, v in model.named_buffers():
        np.testing.assert_array_equal(before[k], v)
    model.forward(x, batch_stats=True, update_running=True)
    moved = [np.abs(before[k] - v).max() > 0 for k, v in model.named_buffers()]
    assert all(moved)


def test_eval_uses_running_buffers(rng):
    model = _model()
    x = rng.standard_normal((4, 3, 24, 24))
    a = model.forward(x, batch_stats=False).logits.data
    # shifting the input distribution changes batch stats, not running ones
    b = model.forward(x, batch_stats=False).logits.data
    np.testing.assert_array_equal(a, b)


def test_forward_from_style_maps_reproduces_tail(rng):
    model = _model()
    x = rng.standard_normal((4, 3, 24, 24))
    fp = model.forward(x, batch_stats=True)
    tap = model.config.style_tap
    feats, _ = model.forward_from_style_maps(
        fp.style_maps, batch_stats=True, norm_stats=fp.norm_stats[tap:])
    np.testing.assert_allclose(feats.data, fp.features.data, atol=1e-12)


def test_forward_rejects_wrong_channels(rng):
    model = _model()
    with pytest.raises(ShapeMismatchError):
        model.forward(rng.standard_normal((2, 4, 24, 24)))


def test_forward_is_differentiable_end_to_end(rng):
    model = _model()
    x = rng.standard_normal((3, 3, 24, 24))
    tape = Tape()
    with tape:
        fp = model.forward(x, batch_stats=True)
        loss = ad.tmean(fp.logits * fp.logits)
    tape.backward(loss)
    for name, p in model.named_params():
        assert p.grad is not None, name
        assert np.isfinite(p.grad).all(), name
