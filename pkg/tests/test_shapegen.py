"""Shape generator: denoiser semantics, encoder variants, latent head, losses."""

import numpy as np
import pytest

from rfdkit import nn
from rfdkit.errors import ConfigError, NumericsError
from rfdkit.model import ShapeGenerator
from rfdkit.model.alignment import AlignedGroup
from rfdkit.nn import losses, ops
from rfdkit.nn.tensor import constant

from fdcheck import assert_grads_match


@pytest.fixture(autouse=True)
def _double_precision():
    with nn.precision(np.float64):
        yield


def _rng(seed):
    return np.random.default_rng(seed)


def _group(rng, d=2, m=24, features=None, points=None, feature_dim=128):
    drawn = rng.normal(scale=0.3, size=(d, m, 3))
    pts = points if points is not None else drawn
    feats = features if features is not None else rng.normal(size=(d, feature_dim))
    return AlignedGroup(
        indices=np.arange(d, dtype=np.int64),
        positions=np.arange(d, dtype=np.int64),
        points=constant(np.asarray(pts, dtype=np.float64)),
        point_ids=np.zeros((d, m), dtype=np.int64),
        valid=np.ones((d, m), dtype=bool),
        features=constant(np.asarray(feats, dtype=np.float64)),
        scale=constant(np.full((d, 3), 0.8)),
    )


def _zero_layer(layer, bias=0.0):
    layer.weight.data[:] = 0.0
    layer.bias.data[:] = bias


def test_variant_input_widths():
    widths = {"full": 131, "c1": 128, "c2": 3, "c3": 131}
    for variant, width in widths.items():
        sg = ShapeGenerator(_rng(0), variant=variant)
        assert sg.enc_point.fc0.weight.shape[0] == width


def test_unknown_variant_rejected():
    with pytest.raises(ConfigError):
        ShapeGenerator(_rng(0), variant="c4")


def test_c2_independent_of_proposal_features():
    rng = _rng(1)
    sg = ShapeGenerator(rng, variant="c2")
    sg.eval()
    pts = rng.normal(scale=0.3, size=(2, 24, 3))
    a = _group(_rng(2), points=pts)
    b = _group(_rng(2), points=pts, features=np.zeros((2, 128)))
    fa, _ = sg.encode(a)
    fb, _ = sg.encode(b)
    assert np.array_equal(fa.data, fb.data)
    q = _rng(3).uniform(-0.5, 0.5, size=(1, 40, 3))
    pa = sg.occupancy_probs(q, ops.take_rows(fa, np.array([0])))
    pb = sg.occupancy_probs(q, ops.take_rows(fb, np.array([0])))
    assert np.array_equal(pa, pb)


def test_full_variant_depends_on_proposal_features():
    rng = _rng(1)
    sg = ShapeGenerator(rng, variant="full")
    sg.eval()
    pts = rng.normal(scale=0.3, size=(2, 24, 3))
    fa, _ = sg.encode(_group(_rng(2), points=pts))
    fb, _ = sg.encode(_group(_rng(2), points=pts, features=np.zeros((2, 128))))
    assert not np.allclose(fa.data, fb.data)


def test_zero_segmentation_logits_mask_everything():
    # logit 0 -> sigmoid 1/2 -> mask relu(0) = 0, so coordinates drop out and
    # the masked encoding equals the unmasked encoding of an all-zero cloud
    rng = _rng(5)
    sg = ShapeGenerator(rng, variant="full")
    sg.eval()
    _zero_layer(sg.seg_head.fc1)
    g = _group(_rng(6))
    _, logits = sg.encode(g)
    assert np.array_equal(logits.data, np.zeros_like(logits.data))
    f_masked, _ = sg.encode(g)
    sg.variant = "c3"
    f_blank, _ = sg.encode(_group(_rng(6), points=np.zeros((2, 24, 3))))
    assert np.allclose(f_masked.data, f_blank.data, atol=1e-12)


def test_saturated_segmentation_keeps_everything():
    # logit +50 -> mask ~= 1, so the masked encoding matches the unmasked one
    rng = _rng(7)
    sg = ShapeGenerator(rng, variant="full")
    sg.eval()
    _zero_layer(sg.seg_head.fc1, bias=50.0)
    g = _group(_rng(8))
    f_masked, _ = sg.encode(g)
    sg.variant = "c3"
    f_raw, _ = sg.encode(g)
    assert np.allclose(f_masked.data, f_raw.data, atol=1e-9)


def test_encoder_permutation_invariant():
    rng = _rng(9)
    sg = ShapeGenerator(rng)
    sg.eval()
    pts = rng.normal(scale=0.3, size=(2, 32, 3))
    perm = rng.permutation(32)
    fa, _ = sg.encode(_group(_rng(10), m=32, points=pts))
    fb, _ = sg.encode(_group(_rng(10), m=32, points=pts[:, perm]))
    assert np.allclose(fa.data, fb.data, atol=1e-12)


def test_posterior_zero_head_gives_unit_sigma():
    rng = _rng(11)
    sg = ShapeGenerator(rng)
    sg.train()
    _zero_layer(sg.lat_logsigma)
    f_star, _ = sg.encode(_group(_rng(12)))
    q = rng.uniform(-0.5, 0.5, size=(2, 16, 3))
    occ = rng.integers(0, 2, size=(2, 16)).astype(np.float64)
    _, sigma = sg.posterior(q, occ, f_star)
    assert np.array_equal(sigma.data, np.ones_like(sigma.data))


def test_posterior_requires_training_mode():
    sg = ShapeGenerator(_rng(13))
    sg.eval()
    f_star, _ = sg.encode(_group(_rng(14)))
    with pytest.raises(ConfigError):
        sg.posterior(np.zeros((2, 4, 3)), np.zeros((2, 4)), f_star)


def test_kl_rejects_nonpositive_sigma():
    mu = constant(np.zeros((2, 4)))
    sigma = constant(np.zeros((2, 4)))
    with pytest.raises(NumericsError):
        losses.kl_diag_gaussian_vs_std_normal(mu, sigma)


def test_zero_latent_decode_deterministic():
    rng = _rng(15)
    sg = ShapeGenerator(rng)
    sg.eval()
    f_star, _ = sg.encode(_group(_rng(16)))
    row = ops.take_rows(f_star, np.array([1]))
    q = rng.uniform(-0.5, 0.5, size=(50, 3))
    first = sg.occupancy_probs(q, row)
    second = sg.occupancy_probs(q, row)
    assert np.array_equal(first, second)
    assert np.all((first > 0.0) & (first < 1.0))


def test_training_loss_identity():
    rng = _rng(17)
    sg = ShapeGenerator(rng, seg_weight=100.0)
    sg.train()
    g = _group(_rng(18), d=2, m=16)
    fg = rng.integers(0, 2, size=(2, 16)).astype(np.float64)
    q = rng.uniform(-0.5, 0.5, size=(2, 12, 3))
    occ = rng.integers(0, 2, size=(2, 12)).astype(np.float64)
    eps = rng.standard_normal((2, sg.latent_dim))
    total, parts = sg.forward_train(g, fg, q, occ, eps)
    expected = parts["shape_rec"] + parts["shape_kl"] + 100.0 * parts["shape_seg"]
    assert abs(total.item() - expected) < 1e-9


def test_seg_weight_scales_only_segmentation():
    rng = _rng(19)
    heavy = ShapeGenerator(_rng(20), seg_weight=100.0)
    light = ShapeGenerator(_rng(20), seg_weight=0.0)
    for m, s in zip(heavy.parameters(), light.parameters()):
        assert np.array_equal(m.data, s.data)
    heavy.train()
    light.train()
    g = _group(_rng(21), d=2, m=16)
    fg = rng.integers(0, 2, size=(2, 16)).astype(np.float64)
    q = rng.uniform(-0.5, 0.5, size=(2, 12, 3))
    occ = rng.integers(0, 2, size=(2, 12)).astype(np.float64)
    eps = rng.standard_normal((2, heavy.latent_dim))
    th, ph = heavy.forward_train(g, fg, q, occ, eps)
    tl, pl = light.forward_train(g, fg, q, occ, eps)
    assert abs(ph["shape_seg"] - pl["shape_seg"]) < 1e-12
    assert abs((th.item() - tl.item()) - 100.0 * ph["shape_seg"]) < 1e-9


def test_forward_train_gradients_match_finite_differences():
    # a narrow generator keeps finite differences off relu and max-pool kinks
    rng = _rng(22)
    sg = ShapeGenerator(rng, seg_weight=2.0, proposal_dim=8, feature_dim=24,
                        latent_dim=4, width=16, n_blocks=2)
    sg.train()
    g = _group(_rng(23), d=2, m=12, feature_dim=8)
    fg = rng.integers(0, 2, size=(2, 12)).astype(np.float64)
    q = rng.uniform(-0.5, 0.5, size=(2, 8, 3))
    occ = rng.integers(0, 2, size=(2, 8)).astype(np.float64)
    eps = rng.standard_normal((2, sg.latent_dim))

    def loss_fn():
        total, _ = sg.forward_train(g, fg, q, occ, eps)
        return total

    params = [sg.dec_out.weight, sg.enc_out.weight, sg.seg_point.fc0.weight,
              sg.lat_mu.weight, sg.lat_logsigma.bias, sg.dec_z.weight,
              sg.dec_block1.cbn1.gamma_map.weight]
    assert_grads_match(loss_fn, params, h=1e-5, tol=1e-3, max_probes=6, rng=_rng(24))
