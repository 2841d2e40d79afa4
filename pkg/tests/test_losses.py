import math

import numpy as np
import pytest

from dpltta import autodiff as ad
from dpltta import losses as L
from dpltta.autodiff import Tape, Tensor
from dpltta.errors import EmptyBatchError
from dpltta.memory import MemoryBank


def _plb(labels, n=None, conf=None):
    labels = np.asarray(labels, dtype=np.int64)
    n = n or len(labels)
    mask = np.zeros(n, dtype=bool)
    mask[:len(labels)] = True
    full = np.zeros(n, dtype=np.int64)
    full[:len(labels)] = labels
    c = np.full(n, 0.99) if conf is None else np.asarray(conf)
    return L.PseudoLabelBatch(full, c, mask, 0.9)


def _grad_of(build, param):
    tape = Tape()
    with tape:
        loss = build()
    tape.backward(loss.value)
    g = param.grad.copy()
    param.grad = None
    return g


# -- pseudo-labeling -------------------------------------------------------------

def test_pseudo_label_probabilities_and_threshold():
    logits = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
    plb = L.pseudo_label(logits, 0.5)
    assert plb.pseudo_labels.tolist() == [2, 0]  # tie goes to lowest index
    np.testing.assert_allclose(plb.confidences[0], 0.6652409557748219)
    np.testing.assert_allclose(plb.confidences[1], 1 / 3)
    assert plb.confident_mask.tolist() == [True, False]
    assert plb.confident_indices.tolist() == [0]
    assert plb.n_confident == 1


def test_pseudo_label_threshold_is_strict():
    logits = np.zeros((1, 4))
    plb = L.pseudo_label(logits, 0.25)  # confidence exactly 0.25
    assert plb.n_confident == 0


def test_pseudo_label_alpha_range():
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            L.pseudo_label(np.zeros((1, 2)), bad)


def test_pseudo_label_accepts_tensor_logits(rng):
    x = rng.standard_normal((3, 4))
    a = L.pseudo_label(Tensor(x), 0.5)
    b = L.pseudo_label(x, 0.5)
    np.testing.assert_array_equal(a.pseudo_labels, b.pseudo_labels)


# -- CE and entropy ---------------------------------------------------------------

def test_ce_matches_hand_rolled_value(rng):
    z = rng.standard_normal((6, 4))
    W = rng.standard_normal((3, 4))
    y = np.array([0, 2, 1, 1, 0, 2])
    got = L.ce_loss(Tensor(z), y, Tensor(W)).item()
    logits = z @ W.T
    p = np.exp(logits - logits.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    ref = float(-np.log(p[np.arange(6), y]).mean())
    assert abs(got - ref) < 1e-12


def test_ce_empty_raises():
    with pytest.raises(EmptyBatchError):
        L.ce_loss(Tensor(np.zeros((0, 4))), np.zeros(0, dtype=int),
                  Tensor(np.eye(4)))


def test_entropy_limits(rng):
    c = 5
    uniform = L.entropy_loss(Tensor(np.zeros((3, c)))).item()
    assert abs(uniform - math.log(c)) < 1e-12
    peaked = L.entropy_loss(Tensor(np.eye(c) * 1e4)).item()
    assert peaked < 1e-10


# -- prototype-centric losses ------------------------------------------------------

def _brute_dpl_star(z, y, W, tau):
    zn = z / np.linalg.norm(z, axis=1, keepdims=True)
    Wn = W / np.linalg.norm(W, axis=1, keepdims=True)
    total = 0.0
    present = sorted(set(y.tolist()))
    for k in present:
        s_pos = sum(math.exp(float(Wn[k] @ zn[j]) / tau)
                    for j in range(len(y)) if y[j] == k)
        s_all = sum(math.exp(float(Wn[k] @ zn[j]) / tau)
                    for j in range(len(y)))
        total += -math.log(s_pos / s_all)
    return total / len(present)


def test_dpl_star_matches_brute_force(rng):
    for _ in range(10):
        z = rng.standard_normal((8, 6))
        W = rng.standard_normal((4, 6))
        y = rng.integers(0, 4, size=8)
        got = L.dpl_star_loss(Tensor(z), _plb(y), Tensor(W), 0.25).item()
        assert abs(got - _brute_dpl_star(z, y, W, 0.25)) < 1e-12


def test_dpl_o_symmetric_two_sample_value():
    # two orthogonal-class samples aligned with their prototypes:
    # each per-sample term is log(1 + exp(-2/tau)) at tau=1... the frozen
    # value below is ln(1 + e^-2)
    z = np.array([[1.0, 0.0], [-1.0, 0.0]])
    W = np.array([[1.0, 0.0], [-1.0, 0.0]])
    got = L.dpl_o_loss(Tensor(z), _plb([0, 1]), Tensor(W), 1.0).item()
    assert abs(got - math.log(1 + math.exp(-2.0))) < 1e-12


def test_dpl_o_equals_dpl_star_one_sample_per_class(rng):
    for trial in range(20):
        c = int(rng.integers(2, 6))
        d = int(rng.integers(3, 8))
        z = rng.standard_normal((c, d))
        W = rng.standard_normal((c, d))
        y = rng.permutation(c)
        plb = _plb(y)
        a = L.dpl_o_loss(Tensor(z), plb, Tensor(W), 0.1).item()
        b = L.dpl_star_loss(Tensor(z), plb, Tensor(W), 0.1).item()
        assert abs(a - b) < 1e-9


def test_losses_filter_unconfident_rows(rng):
    z = rng.standard_normal((6, 4))
    W = rng.standard_normal((3, 4))
    y = np.array([0, 1, 2, 0, 1, 2])
    conf = np.array([0.99, 0.99, 0.99, 0.1, 0.1, 0.1])
    filtered = L.PseudoLabelBatch(y, conf, conf > 0.9, 0.9)
    direct = _plb(y[:3], n=3)
    a = L.dpl_star_loss(Tensor(z), filtered, Tensor(W), 0.2).item()
    b = L.dpl_star_loss(Tensor(z[:3]), direct, Tensor(W), 0.2).item()
    assert abs(a - b) < 1e-12


def test_unconfident_rows_get_zero_feature_grad(rng):
    z = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    W = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    conf = np.array([0.99, 0.05, 0.99, 0.05, 0.99])
    plb = L.PseudoLabelBatch(np.array([0, 0, 1, 1, 2]), conf, conf > 0.9, 0.9)
    g = _grad_of(lambda: L.dpl_star_loss(z, plb, W, 0.1), z)
    assert np.abs(g[[1, 3]]).max() == 0.0
    assert np.abs(g[[0, 2, 4]]).max() > 0.0


def test_batch_order_invariance(rng):
    z = rng.standard_normal((7, 5))
    W = rng.standard_normal((3, 5))
    y = np.array([0, 1, 2, 0, 1, 2, 0])
    perm = rng.permutation(7)
    a = L.dpl_star_loss(Tensor(z), _plb(y), Tensor(W), 0.15).item()
    b = L.dpl_star_loss(Tensor(z[perm]), _plb(y[perm]), Tensor(W), 0.15).item()
    assert abs(a - b) < 1e-12
    a = L.dpl_o_loss(Tensor(z), _plb(y), Tensor(W), 0.15).item()
    b = L.dpl_o_loss(Tensor(z[perm]), _plb(y[perm]), Tensor(W), 0.15).item()
    assert abs(a - b) < 1e-12


# -- decoupling --------------------------------------------------------------------

def _star_term_grads(z, y, W, tau):
    """Gradient on W of each single-class term of the aggregated loss."""
    out = []
    present = np.unique(y)
    for k in present:
        def term():
            zc = Tensor(z[y == k])
            other = Tensor(z)
            sims = ad.cosine_matrix(W, other) * (1.0 / tau)
            row = ad.gather_rows(sims, [int(k)])
            pos_sims = ad.cosine_matrix(W, zc) * (1.0 / tau)
            pos_row = ad.gather_rows(pos_sims, [int(k)])
            v = ad.logsumexp(row, axis=1) - ad.logsumexp(pos_row, axis=1)
            return ad.tsum(v)
        tape = Tape()
        with tape:
            val = term()
        tape.backward(val)
        out.append((int(k), W.grad.copy()))
        W.grad = None
    return out


def test_class_terms_touch_only_their_prototype(rng):
    z = rng.standard_normal((8, 6))
    W = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    y = np.array([0, 1, 2, 3, 0, 1, 2, 3])
    for k, g in _star_term_grads(z, y, W, 0.1):
        other = np.delete(np.arange(4), k)
        assert np.abs(g[other]).max() < 1e-12
        assert np.abs(g[k]).max() > 0.0


def test_ce_couples_all_prototypes(rng):
    z = rng.standard_normal((8, 6))
    W = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    y = np.array([0, 0, 0, 0, 0, 0, 0, 0])  # one class: pure cross terms
    g = _grad_of(lambda: L.ce_loss(Tensor(z), y, W), W)
    assert np.abs(g[1:]).max() > 1e-3


def test_reg_terms_touch_only_their_prototype(rng):
    W = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    bank = MemoryBank(Tensor(rng.standard_normal((4, 6))), eta=0.9)
    for k in range(4):
        def term():
            sims = ad.cosine_matrix(W, Tensor(bank.features)) * 10.0
            row = ad.gather_rows(sims, [k])
            pos = ad.pick(row, [k])
            return ad.tsum(ad.logsumexp(row, axis=1) - pos)
        tape = Tape()
        with tape:
            val = term()
        tape.backward(val)
        other = np.delete(np.arange(4), k)
        assert np.abs(W.grad[other]).max() < 1e-12
        W.grad = None


# -- regularizer and combination ---------------------------------------------------

def test_reg_orthonormal_oracle():
    # prototypes == memory == identity: diag sims 1/tau, off-diag 0
    W = Tensor(np.eye(3))
    bank = MemoryBank(W, eta=0.9)
    got = L.reg_loss(W, bank, 0.5).item()
    ref = math.log(math.exp(2.0) + 2 * math.exp(0.0)) - 2.0
    assert abs(got - ref) < 1e-12


def test_reg_single_class_is_zero():
    W = Tensor(np.ones((1, 4)))
    got = L.reg_loss(W, bank=MemoryBank(W, eta=0.5), tau=0.1).item()
    assert abs(got) < 1e-12


def test_reg_default_memory_is_constant(rng):
    W = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    bank = MemoryBank(W, eta=0.9)
    bank.features = rng.standard_normal((3, 4))
    g = _grad_of(lambda: L.reg_loss(W, bank, 0.2), W)
    assert np.isfinite(g).all()


def test_dpl_loss_beta_zero_is_star(rng):
    z = rng.standard_normal((6, 4))
    W = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    y = np.array([0, 1, 2, 0, 1, 2])
    bank = MemoryBank(W, eta=0.9)
    star = L.dpl_star_loss(Tensor(z), _plb(y), W, 0.1)
    combo = L.dpl_loss(Tensor(z), _plb(y), W, bank, 0.1, 0.0)
    assert combo.item() == star.item()
    assert "reg" not in combo.breakdown


def test_dpl_loss_combination_value(rng):
    z = rng.standard_normal((6, 4))
    W = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    y = np.array([0, 1, 2, 0, 1, 2])
    bank = MemoryBank(W, eta=0.9)
    beta = 0.7
    star = L.dpl_star_loss(Tensor(z), _plb(y), W, 0.1).item()
    reg = L.reg_loss(W, bank, 0.1).item()
    combo = L.dpl_loss(Tensor(z), _plb(y), W, bank, 0.1, beta)
    assert abs(combo.item() - (star + beta * reg)) < 1e-12
    assert combo.breakdown == {"dpl_star": star, "reg": reg}


def test_dpl_loss_empty_batch_fallbacks(rng):
    W = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    bank = MemoryBank(W, eta=0.9)
    empty = L.PseudoLabelBatch(np.zeros(2, dtype=np.int64),
                               np.zeros(2), np.zeros(2, dtype=bool), 0.9)
    z = Tensor(rng.standard_normal((2, 4)))
    out = L.dpl_loss(z, empty, W, bank, 0.1, 0.5)
    assert out.n_confident == 0
    assert out.breakdown["dpl_star"] == 0.0
    assert abs(out.item() - 0.5 * L.reg_loss(W, bank, 0.1).item()) < 1e-12
    with pytest.raises(EmptyBatchError):
        L.dpl_loss(z, empty, W, bank, 0.1, 0.0)


def test_parameter_validation():
    z, W = Tensor(np.ones((2, 3))), Tensor(np.eye(3))
    plb = _plb([0, 1])
    bank = MemoryBank(W, eta=0.9)
    for bad_tau in (0.0, -1.0):
        with pytest.raises(ValueError):
            L.dpl_o_loss(z, plb, W, bad_tau)
        with pytest.raises(ValueError):
            L.dpl_star_loss(z, plb, W, bad_tau)
        with pytest.raises(ValueError):
            L.reg_loss(W, bank, bad_tau)
    with pytest.raises(ValueError):
        L.dpl_loss(z, plb, W, bank, 0.1, -0.5)
