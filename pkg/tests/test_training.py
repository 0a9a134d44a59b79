import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnkern.attention import FeatureMap
from attnkern.errors import ArgumentError
from attnkern.toy import QKDump
from attnkern.training import (
    Adam,
    TrainBatch,
    TrainConfig,
    distill,
    l2_loss,
    loss_grad,
    softmax_loss,
    target_entropy,
    train_layer,
)

from conftest import random_fm, small_dump


def fd_grad(batch, fm, kind, causal=True, h=1e-5):
    f = l2_loss if kind == "l2" else softmax_loss
    dZ = np.zeros_like(fm.Z)
    for idx in np.ndindex(*fm.Z.shape):
        zp, zm = fm.Z.copy(), fm.Z.copy()
        zp[idx] += h
        zm[idx] -= h
        dZ[idx] = (f(batch, FeatureMap(zp, fm.log_weights), causal)
                   - f(batch, FeatureMap(zm, fm.log_weights), causal)) / (2 * h)
    dw = np.zeros(fm.M)
    for m in range(fm.M):
        wp, wm = fm.log_weights.copy(), fm.log_weights.copy()
        wp[m] += h
        wm[m] -= h
        dw[m] = (f(batch, FeatureMap(fm.Z, wp), causal) - f(batch, FeatureMap(fm.Z, wm), causal)) / (2 * h)
    return dZ, dw


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def small_instance(seed, T=2, L=4, M=3, d=4):
    gen = np.random.default_rng(seed)
    batch = TrainBatch(0.7 * gen.standard_normal((T, L, d)), 0.7 * gen.standard_normal((T, L, d)))
    return batch, random_fm(gen, M, d, spread=0.3)


@pytest.mark.parametrize("kind", ["l2", "softmax"])
@pytest.mark.parametrize("causal", [True, False])
def test_gradient_matches_finite_differences(kind, causal):
    batch, fm = small_instance(7)
    dZ, dw, _ = loss_grad(batch, fm, kind, causal)
    fZ, fw = fd_grad(batch, fm, kind, causal)
    assert rel_err(dZ, fZ) <= 1e-4
    assert rel_err(dw, fw) <= 1e-4


def test_l2_loss_zero_for_exact_match():
    # a single zero-location feature reproduces K only when q or k is zero
    q = np.zeros((1, 1, 3))
    k = np.zeros((1, 1, 3))
    assert l2_loss(TrainBatch(q, k), FeatureMap(np.zeros((1, 3)), np.zeros(1))) == 0.0


def test_softmax_loss_bounded_below_by_entropy(rng):
    batch, fm = small_instance(3, T=3, L=6)
    assert softmax_loss(batch, fm) >= target_entropy(batch) - 1e-12


def test_softmax_loss_invariant_to_weight_scale(rng):
    batch, fm = small_instance(5)
    shifted = FeatureMap(fm.Z, fm.log_weights + 2.0)
    assert softmax_loss(batch, shifted) == pytest.approx(softmax_loss(batch, fm), rel=1e-12)


def test_loss_permutation_invariant_over_sequences():
    batch, fm = small_instance(11, T=5)
    perm = np.array([3, 0, 4, 1, 2])
    a = loss_grad(batch, fm, "l2")
    b = loss_grad(batch.subset(perm), fm, "l2")
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-12)
    assert a[2] == pytest.approx(b[2], rel=1e-12)


def test_dimension_mismatch():
    batch, _ = small_instance(0)
    with pytest.raises(ArgumentError):
        loss_grad(batch, random_fm(np.random.default_rng(0), 3, 5))


def test_bad_config():
    with pytest.raises(ArgumentError):
        TrainConfig(loss="hinge").validate()
    with pytest.raises(ArgumentError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(ArgumentError):
        TrainConfig(lr_z=-1.0).validate()


def test_adam_first_step_moves_by_lr():
    p = [np.array([1.0, -2.0])]
    opt = Adam(p, [0.1])
    opt.step(p, [np.array([3.0, -0.5])])
    np.testing.assert_allclose(p[0], [0.9, -1.9], rtol=1e-6)


def test_adam_minimizes_quadratic():
    p = [np.array([5.0, -3.0])]
    opt = Adam(p, [0.1])
    for _ in range(2000):
        opt.step(p, [2.0 * p[0]])
    assert np.abs(p[0]).max() < 1e-2


def test_zero_steps_returns_copy():
    batch, fm = small_instance(1)
    out, trace = train_layer(batch, fm, TrainConfig(steps=0))
    assert out == fm and out is not fm and trace == []


def test_zero_learning_rates_keep_parameters():
    batch, fm = small_instance(1)
    out, trace = train_layer(batch, fm, TrainConfig(steps=5, lr_z=0.0, lr_alpha=0.0))
    assert out == fm
    assert len(trace) == 5


def test_training_reduces_loss():
    batch, fm = small_instance(2, T=8, L=8, M=8, d=4)
    out, trace = train_layer(batch, fm, TrainConfig(steps=100, batch_size=8))
    assert l2_loss(batch, out) < l2_loss(batch, fm)


def test_distill_layer_isolation():
    gen = np.random.default_rng(9)
    dump = small_dump(gen, S=3, H=2, d=4, T=4, L=6)
    cfg = TrainConfig(steps=10, batch_size=2, seed=4)
    base, base_trace = distill(dump, [3, 5, 2], cfg)
    # replace every other layer with unrelated data of a different scale
    q, k = dump.queries.copy(), dump.keys.copy()
    for s in (0, 2):
        q[s] = 1.5 * gen.standard_normal(q[s].shape)
        k[s] = 1.5 * gen.standard_normal(k[s].shape)
    other, other_trace = distill(QKDump(q, k, dump.T, dump.L), [7, 5, 1], cfg)
    for h in range(2):
        assert other[1][h] == base[1][h]
        assert other_trace[1][h] == base_trace[1][h]
        assert other[0][h].M == 7


def test_distill_deterministic_and_worker_independent():
    dump = small_dump(np.random.default_rng(2), S=2, H=2)
    cfg = TrainConfig(steps=5, batch_size=2, seed=1)
    a, ta = distill(dump, [3, 4], cfg, workers=1)
    b, tb = distill(dump, [3, 4], cfg, workers=4)
    assert all(a[s][h] == b[s][h] for s in range(2) for h in range(2))
    assert ta == tb


def test_distill_wrong_dims():
    with pytest.raises(ArgumentError):
        distill(small_dump(np.random.default_rng(0)), [3], TrainConfig(steps=1))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), kind=st.sampled_from(["l2", "softmax"]))
def test_gradient_property(seed, kind):
    batch, fm = small_instance(seed)
    dZ, dw, _ = loss_grad(batch, fm, kind)
    fZ, fw = fd_grad(batch, fm, kind)
    assert rel_err(dZ, fZ) <= 1e-4
    assert rel_err(dw, fw) <= 1e-4


def scalar_fm_value(x, z, logw, d):
    return np.sqrt(np.exp(logw)) * np.exp(float(z @ x) / d ** 0.25 - float(x @ x) / (2 * np.sqrt(d)))


def exact_k(q, k):
    return float(np.exp(q @ k / np.sqrt(len(q))))


class TestExamples:
    def zero_batch(self, L=3, d=4):
        return TrainBatch(np.zeros((1, L, d)), np.zeros((1, L, d)))

    def exact_fm(self, d=4):
        return FeatureMap(np.zeros((1, d)), np.zeros(1))

    def test_residual_free_batch(self):
        dZ, dw, loss = loss_grad(self.zero_batch(), self.exact_fm(), "l2")
        assert loss <= 1e-20
        assert np.linalg.norm(dZ) <= 1e-8 and np.linalg.norm(dw) <= 1e-8

    def test_single_pair_l2(self, rng):
        q, k = rng.standard_normal((1, 1, 3)), rng.standard_normal((1, 1, 3))
        fm = random_fm(rng, 4, 3)
        khat = np.sum([scalar_fm_value(q[0, 0], fm.Z[m], fm.log_weights[m], 3)
                       * scalar_fm_value(k[0, 0], fm.Z[m], fm.log_weights[m], 3) for m in range(4)]) / 4
        assert l2_loss(TrainBatch(q, k), fm) == pytest.approx((exact_k(q[0, 0], k[0, 0]) - khat) ** 2, rel=1e-12)

    def test_two_token_scalar_oracles(self, rng):
        d = 3
        q, k = 0.8 * rng.standard_normal((2, d)), 0.8 * rng.standard_normal((2, d))
        z, lw = rng.standard_normal(d), 0.4
        fm = FeatureMap(z[None], np.array([lw]))
        khat = lambda a, b: scalar_fm_value(a, z, lw, d) * scalar_fm_value(b, z, lw, d)
        pairs = [(0, 0), (1, 0), (1, 1)]
        l2 = sum((exact_k(q[i], k[j]) - khat(q[i], k[j])) ** 2 for i, j in pairs) / 2
        assert l2_loss(TrainBatch(q, k), fm) == pytest.approx(l2, rel=1e-12)
        # row 0 has a single allowed key, so it contributes nothing
        p1 = exact_k(q[1], k[1]) / (exact_k(q[1], k[0]) + exact_k(q[1], k[1]))
        ph1 = khat(q[1], k[1]) / (khat(q[1], k[0]) + khat(q[1], k[1]))
        ce = -(((1 - p1) * np.log(1 - ph1)) + p1 * np.log(ph1)) / 2
        assert softmax_loss(TrainBatch(q, k), fm) == pytest.approx(ce, rel=1e-12)

    def test_softmax_single_token_zero(self, rng):
        batch = TrainBatch(rng.standard_normal((3, 1, 4)), rng.standard_normal((3, 1, 4)))
        assert softmax_loss(batch, random_fm(rng, 2, 4)) == 0.0

    def test_softmax_equality_at_matching_rows(self, rng):
        batch = self.zero_batch(L=5)
        fm = self.exact_fm()
        assert softmax_loss(batch, fm) == pytest.approx(target_entropy(batch), rel=1e-14)
        perturbed = TrainBatch(rng.standard_normal(batch.queries.shape), rng.standard_normal(batch.keys.shape))
        assert softmax_loss(perturbed, fm) > target_entropy(perturbed)

    @pytest.mark.parametrize("kind", ["l2", "softmax"])
    def test_feature_permutation(self, kind, rng):
        batch, fm = small_instance(13, M=5)
        perm = rng.permutation(5)
        dZ, dw, loss = loss_grad(batch, fm, kind)
        pZ, pw, ploss = loss_grad(batch, FeatureMap(fm.Z[perm], fm.log_weights[perm]), kind)
        np.testing.assert_allclose(pZ, dZ[perm], rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(pw, dw[perm], rtol=1e-12, atol=1e-15)
        assert ploss == pytest.approx(loss, rel=1e-12)

    def test_zero_lr_trace_constant(self):
        batch, fm = small_instance(1, T=2)
        _, trace = train_layer(batch, fm, TrainConfig(steps=6, batch_size=2, lr_z=0.0, lr_alpha=0.0))
        assert len(set(trace)) == 1
