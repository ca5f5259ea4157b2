"""Detector, alignment, and shape generator: decode contracts and gradients."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import rfdkit.nn as nn
from rfdkit.errors import ConfigError, DataError
from rfdkit.geometry import OrientedBox, box_iou, canonical_align, rot_z
from rfdkit.model import (
    HEAD_CHANNELS,
    N_CLASSES,
    N_HEADING_BINS,
    CanonicalAlignment,
    DetectionTargets,
    Detector,
    ShapeGenerator,
    assign_targets,
    box_loss,
    encode_heading,
    heading_bin_anchors,
    predicted_boxes,
    select_for_training,
    split_head,
    template_scales_from_boxes,
)
from rfdkit.nn import ops
from rfdkit.nn.tensor import constant

from fdcheck import assert_grads_match

BIN_WIDTH = 2.0 * math.pi / N_HEADING_BINS


@pytest.fixture(autouse=True)
def _double_precision():
    with nn.precision(np.float64):
        yield


def _rng(seed=0):
    return np.random.default_rng(seed)


def _templates():
    base = np.linspace(0.2, 0.9, N_CLASSES)
    return np.stack([base, base * 0.8, base * 0.6], axis=1)


def _output(head: np.ndarray, centers: np.ndarray, votes: np.ndarray | None = None,
            seeds: np.ndarray | None = None, features: np.ndarray | None = None,
            grad: bool = False):
    """DetectionOutput from raw numbers, bypassing the network."""
    p = head.shape[0]
    if votes is None:
        votes = np.zeros((1, 3))
    if seeds is None:
        seeds = np.zeros_like(votes)
    if features is None:
        features = np.zeros((p, 4))
    head_t = nn.tensor(np.asarray(head, dtype=np.float64), requires_grad=grad)
    votes_t = nn.tensor(np.asarray(votes, dtype=np.float64), requires_grad=grad)
    out = split_head(np.asarray(centers, dtype=np.float64), constant(features),
                     head_t, votes_t, np.asarray(seeds, dtype=np.float64))
    return out, head_t, votes_t


# -- heading codec ----------------------------------------------------------------


def test_heading_anchors_span_the_circle():
    a = heading_bin_anchors()
    assert a.shape == (N_HEADING_BINS,)
    assert np.allclose(a, -math.pi + np.arange(N_HEADING_BINS) * BIN_WIDTH)


def test_heading_decode_hand_value():
    # bin 3 with residual 0.1 sits at 3 * (2pi/12) - pi + 0.1
    out, _, _ = _output(np.zeros((1, HEAD_CHANNELS)), np.zeros((1, 3)))
    out.heading_residuals.data[0, 3] = 0.1
    theta = out.heading_for(np.array([3])).data[0]
    assert abs(theta - (3 * BIN_WIDTH - math.pi + 0.1)) < 1e-12


def test_heading_encode_hand_cases():
    assert encode_heading(-math.pi) == (0, 0.0)
    k, res = encode_heading(0.0)
    assert k == N_HEADING_BINS // 2 and abs(res) < 1e-12
    k, res = encode_heading(math.pi - 1e-6)
    assert k == N_HEADING_BINS - 1 and abs(res - (BIN_WIDTH - 1e-6)) < 1e-9


@given(st.floats(min_value=-math.pi, max_value=math.pi - 1e-9))
@settings(max_examples=200, deadline=None)
def test_heading_roundtrip(theta):
    k, res = encode_heading(theta)
    assert 0 <= k < N_HEADING_BINS
    assert 0.0 <= res < BIN_WIDTH + 1e-12
    decoded = heading_bin_anchors()[k] + res
    assert abs(decoded - theta) < 1e-9


# -- head decoding ----------------------------------------------------------------


def test_zero_raw_output_decodes_to_anchors():
    centers = _rng(1).normal(size=(4, 3))
    out, _, _ = _output(np.zeros((4, HEAD_CHANNELS)), centers)
    tmpl = _templates()
    assert np.array_equal(out.center.data, centers)
    headings = out.heading_for(out.predicted_heading_bins()).data
    assert np.allclose(headings, -math.pi)
    scales = out.scale_for(out.predicted_templates(), tmpl).data
    assert np.allclose(scales, tmpl[0])
    assert np.allclose(out.objectness(), 0.5)


def test_decoded_boxes_always_valid():
    rng = _rng(2)
    for trial in range(5):
        p = 12
        head = rng.normal(scale=3.0, size=(p, HEAD_CHANNELS))
        centers = rng.normal(scale=0.8, size=(p, 3))
        out, _, _ = _output(head, centers)
        boxes, kept = predicted_boxes(out, _templates(), min_objectness=0.0)
        assert len(boxes) == kept.size > 0
        for box in boxes:
            assert -math.pi <= box.heading < math.pi
            assert np.all(box.scale > 0)
            assert 0.0 < box.score <= 1.0


def test_eval_selection_empty_when_nothing_confident():
    head = np.zeros((6, HEAD_CHANNELS))  # objectness exactly 0.5 everywhere
    out, _, _ = _output(head, np.zeros((6, 3)))
    boxes, kept = predicted_boxes(out, _templates(), min_objectness=0.5)
    assert boxes == [] and kept.size == 0


def test_eval_selection_is_confidence_filtered_nms_antichain():
    rng = _rng(3)
    p = 24
    head = rng.normal(scale=2.0, size=(p, HEAD_CHANNELS))
    centers = rng.normal(scale=0.4, size=(p, 3))
    out, _, _ = _output(head, centers)
    boxes, kept = predicted_boxes(out, _templates(), min_objectness=0.5, nms_iou=0.25)
    confident = set(np.flatnonzero(out.objectness() > 0.5).tolist())
    assert set(kept.tolist()) <= confident
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            assert box_iou(boxes[i], boxes[j]) <= 0.25


# -- target assignment ------------------------------------------------------------


def test_assignment_distance_thresholds():
    box = OrientedBox(np.zeros(3), np.full(3, 0.4), 0.0, label=2)
    centers = np.array([[0.2, 0.0, 0.0], [0.45, 0.0, 0.0], [0.7, 0.0, 0.0]])
    seeds = np.zeros((1, 3))
    t = assign_targets(centers, seeds, np.zeros(1, dtype=np.int64), [box], _templates())
    assert t.pos_mask.tolist() == [True, False, False]
    assert t.obj_mask.tolist() == [True, False, True]
    assert t.obj_label.tolist() == [1, 0, 0]


def test_assignment_positive_targets_hand_checked():
    tmpl = _templates()
    box = OrientedBox(np.array([0.1, -0.2, 0.3]), np.array([0.5, 0.4, 0.3]), 0.7, label=3)
    centers = np.array([[0.15, -0.2, 0.3]])
    t = assign_targets(centers, np.zeros((1, 3)), np.zeros(1, dtype=np.int64), [box], tmpl)
    assert t.matched_gt[0] == 0 and t.sem_label[0] == 3 and t.template[0] == 3
    assert np.allclose(t.center[0], box.center)
    k, res = encode_heading(0.7)
    assert t.heading_bin[0] == k
    assert abs(t.heading_residual[0] - res) < 1e-12
    assert np.allclose(t.scale_residual[0], np.log(box.scale / tmpl[3]))


def test_assignment_translation_equivariant():
    rng = _rng(4)
    boxes = [OrientedBox(rng.normal(size=3), rng.uniform(0.2, 0.6, 3),
                         rng.uniform(-math.pi, math.pi), label=int(rng.integers(N_CLASSES)))
             for _ in range(3)]
    near = np.stack([b.center for b in boxes]) + rng.normal(scale=0.05, size=(3, 3))
    centers = np.concatenate([near, rng.normal(size=(7, 3))])
    seeds = rng.normal(size=(6, 3))
    ids = rng.integers(0, 4, size=6).astype(np.int64)
    shift = np.array([1.3, -0.8, 0.4])
    a = assign_targets(centers, seeds, ids, boxes, _templates())
    moved = [OrientedBox(b.center + shift, b.scale, b.heading, label=b.label) for b in boxes]
    b = assign_targets(centers + shift, seeds + shift, ids, moved, _templates())
    assert a.pos_mask.any()
    for field in ("obj_label", "obj_mask", "pos_mask", "matched_gt", "heading_bin",
                  "template", "sem_label", "vote_mask"):
        assert np.array_equal(getattr(a, field), getattr(b, field)), field
    pos = a.pos_mask
    assert np.allclose(a.center[pos] + shift, b.center[pos])
    assert np.allclose(a.heading_residual, b.heading_residual)
    assert np.allclose(a.scale_residual, b.scale_residual)
    assert np.allclose(a.vote_target[a.vote_mask] + shift, b.vote_target[b.vote_mask])


def test_assignment_vote_targets_nearest_center():
    boxes = [OrientedBox(np.array([0.0, 0.0, 0.0]), np.full(3, 0.3), 0.0, label=0),
             OrientedBox(np.array([2.0, 0.0, 0.0]), np.full(3, 0.3), 0.0, label=1)]
    seeds = np.array([[0.2, 0.0, 0.0], [1.8, 0.0, 0.0], [0.9, 0.0, 0.0]])
    ids = np.array([1, 2, 0], dtype=np.int64)  # third seed is floor
    t = assign_targets(np.zeros((1, 3)), seeds, ids, boxes, _templates())
    assert t.vote_mask.tolist() == [True, True, False]
    assert np.allclose(t.vote_target[0], boxes[0].center)
    assert np.allclose(t.vote_target[1], boxes[1].center)


def test_assignment_requires_ground_truth():
    with pytest.raises(DataError):
        assign_targets(np.zeros((2, 3)), np.zeros((1, 3)), np.zeros(1, dtype=np.int64),
                       [], _templates())


# -- detection loss ---------------------------------------------------------------


def _toy_case():
    """Two proposals (one positive, one negative), two seeds, one GT box."""
    tmpl = _templates()
    gt = OrientedBox(np.array([0.1, 0.0, 0.0]), np.array([0.5, 0.4, 0.3]), 0.4, label=2)
    centers = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    seeds = np.array([[0.05, 0.0, 0.0], [1.5, 0.5, 0.0]])
    ids = np.array([1, 0], dtype=np.int64)
    rng = _rng(7)
    head = rng.normal(scale=0.5, size=(2, HEAD_CHANNELS))
    votes = np.array([[0.2, 0.1, 0.0], [1.4, 0.6, 0.0]])
    out, head_t, votes_t = _output(head, centers, votes, seeds, grad=True)
    targets = assign_targets(centers, seeds, ids, [gt], tmpl)
    return out, targets, head, votes, gt, tmpl, (head_t, votes_t)


def _softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def _smooth_l1(x):
    x = np.abs(x)
    return np.where(x < 1.0, 0.5 * x * x, x - 0.5).sum()


def test_box_loss_matches_hand_computation():
    out, t, head, votes, gt, tmpl, _ = _toy_case()
    total, parts = box_loss(out, t)

    # independent recomputation with plain numpy
    l_vote = _smooth_l1(votes[0] - gt.center)  # only seed 0 is on an object
    l_obj = (-np.log(_softmax(head[0, 0:2])[1]) - np.log(_softmax(head[1, 0:2])[0])) / 2.0
    l_center = _smooth_l1(out.centers[0] + head[0, 2:5] - gt.center)
    k, res = encode_heading(gt.heading)
    l_hcls = -np.log(_softmax(head[0, 5:17])[k])
    l_hreg = _smooth_l1(head[0, 17 + k] - res)
    l_tcls = -np.log(_softmax(head[0, 29:37])[gt.label])
    sres = head[0, 37 + 3 * gt.label: 40 + 3 * gt.label]
    l_sreg = _smooth_l1(sres - np.log(gt.scale / tmpl[gt.label]))
    l_sem = -np.log(_softmax(head[0, 61:69])[gt.label])
    expected = (l_vote + l_center + 0.1 * l_hcls + l_hreg
                + 0.1 * l_tcls + l_sreg + 0.1 * l_sem + 0.5 * l_obj)
    assert abs(total.item() - expected) < 1e-6
    assert abs(parts["objectness"] - l_obj) < 1e-9
    assert abs(parts["vote"] - l_vote) < 1e-9


def test_box_loss_weight_isolation():
    out, t, *_ = _toy_case()
    zeros = {"vote": 0.0, "center": 0.0, "heading": 0.0, "scale": 0.0, "semantic": 0.0}
    total, parts = box_loss(out, t, weights=zeros)
    assert abs(total.item() - 0.5 * parts["objectness"]) < 1e-12
    with pytest.raises(ConfigError):
        box_loss(out, t, weights={"nonsense": 1.0})


def test_box_loss_zero_residuals_zero_regression():
    centers = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    out, _, _ = _output(np.zeros((2, HEAD_CHANNELS)), centers,
                        votes=np.zeros((1, 3)), seeds=np.zeros((1, 3)))
    t = DetectionTargets(
        obj_label=np.array([1, 0]), obj_mask=np.array([True, True]),
        pos_mask=np.array([True, False]), matched_gt=np.array([0, -1]),
        center=centers.copy(), heading_bin=np.zeros(2, dtype=np.int64),
        heading_residual=np.zeros(2), template=np.zeros(2, dtype=np.int64),
        scale_residual=np.zeros((2, 3)), sem_label=np.zeros(2, dtype=np.int64),
        vote_mask=np.array([True]), vote_target=np.zeros((1, 3)))
    _, parts = box_loss(out, t)
    assert parts["center"] == 0.0
    assert parts["heading_reg"] == 0.0
    assert parts["scale_reg"] == 0.0
    assert parts["vote"] == 0.0


def test_box_loss_no_positives_keeps_objectness():
    box = OrientedBox(np.array([5.0, 5.0, 0.0]), np.full(3, 0.3), 0.0, label=0)
    centers = np.zeros((2, 3))
    out, head_t, _ = _output(_rng(8).normal(size=(2, HEAD_CHANNELS)), centers, grad=True)
    t = assign_targets(centers, np.zeros((1, 3)), np.zeros(1, dtype=np.int64), [box],
                       _templates())
    assert not t.pos_mask.any()
    total, parts = box_loss(out, t)
    assert parts["center"] == 0.0 and parts["heading_reg"] == 0.0
    assert parts["objectness"] > 0.0
    nn.backward(total)
    assert np.all(np.isfinite(head_t.grad))


def test_box_loss_gradients():
    out, t, *_ , leaves = _toy_case()
    head_t, votes_t = leaves

    def loss():
        o = split_head(out.centers, constant(np.zeros((2, 4))), head_t, votes_t, out.seed_xyz)
        v, _ = box_loss(o, t)
        return v

    assert_grads_match(loss, [head_t, votes_t], tol=1e-6)


# -- training selection -----------------------------------------------------------


def _output_with_objectness(probs):
    p = len(probs)
    head = np.zeros((p, HEAD_CHANNELS))
    head[:, 1] = np.log(np.asarray(probs) / (1.0 - np.asarray(probs)))
    return _output(head, np.zeros((p, 3)))[0]


def test_selection_orders_by_objectness():
    out = _output_with_objectness([0.9, 0.1, 0.8])
    assert select_for_training(out, 2).tolist() == [0, 2]
    assert select_for_training(out, 3).tolist() == [0, 2, 1]
    with pytest.raises(ConfigError):
        select_for_training(out, 4)


def test_selection_matches_topk_oracle():
    rng = _rng(9)
    for _ in range(100):
        probs = rng.uniform(0.05, 0.95, size=12)
        out = _output_with_objectness(probs)
        k = int(rng.integers(1, 13))
        got = select_for_training(out, k)
        expect = np.lexsort((np.arange(12), -out.objectness()))[:k]
        assert np.array_equal(got, expect)
        assert got.size == k


# -- canonical alignment ----------------------------------------------------------


def _object_scene(rng, heading=0.7, center=(0.4, -0.2, 0.1), n=160):
    canonical = rng.uniform(-0.5, 0.5, size=(n, 3)) * np.array([0.8, 0.6, 0.4])
    world = canonical @ rot_z(heading).T + np.asarray(center)
    return canonical, world


def _manual_group(aligner, cloud, centers, headings, n_det, features=None):
    """Run the aligner on hand-made detection outputs."""
    p = centers.shape[0]
    head = np.zeros((p, HEAD_CHANNELS))
    out, _, _ = _output(head, centers,
                        features=features if features is not None else np.zeros((p, 128)))
    heading_t = constant(np.asarray(headings, dtype=np.float64))
    scale_t = constant(np.ones((p, 3)))
    return aligner(cloud, out, heading_t, scale_t, np.arange(n_det))


def test_alignment_zero_head_is_rigid():
    rng = _rng(10)
    canonical, world = _object_scene(rng)
    aligner = CanonicalAlignment(_rng(11), radius=1.0, m_points=64)
    aligner.eval()
    group = _manual_group(aligner, world, np.array([[0.4, -0.2, 0.1]]), [0.7], 1)
    assert group is not None and group.n_detections == 1
    # zero-initialized head means the learned adjustment starts at identity
    got = group.points.data[0][group.valid[0]]
    expect = canonical_align(world[group.point_ids[0][group.valid[0]]],
                             np.array([0.4, -0.2, 0.1]), 0.7)
    assert np.allclose(got, expect, atol=1e-9)
    assert np.allclose(got, canonical[group.point_ids[0][group.valid[0]]], atol=1e-9)


def test_alignment_cluster_row_count_contract():
    rng = _rng(12)
    _, world = _object_scene(rng, n=50)
    aligner = CanonicalAlignment(_rng(13), radius=1.0, m_points=96)
    aligner.eval()
    group = _manual_group(aligner, world, np.array([[0.4, -0.2, 0.1]]), [0.7], 1)
    assert group.points.shape == (1, 96, 3)
    assert group.valid.sum() == 50
    assert CanonicalAlignment(_rng(14)).m_points == 1024


def test_alignment_commutes_with_global_rigid_motion():
    rng = _rng(15)
    _, world = _object_scene(rng)
    aligner = CanonicalAlignment(_rng(16), radius=1.0, m_points=64)
    aligner.eval()
    a = _manual_group(aligner, world, np.array([[0.4, -0.2, 0.1]]), [0.7], 1)
    phi, shift = 1.1, np.array([0.5, 1.5, -0.3])
    moved = world @ rot_z(phi).T + shift
    new_center = rot_z(phi) @ np.array([0.4, -0.2, 0.1]) + shift
    b = _manual_group(aligner, moved, new_center[None, :], [0.7 + phi], 1)
    assert np.allclose(a.points.data, b.points.data, atol=1e-9)


def test_alignment_adjustment_permutation_invariant():
    rng = _rng(17)
    _, world = _object_scene(rng, n=80)
    aligner = CanonicalAlignment(_rng(18), radius=1.0, m_points=80)
    aligner.eval()
    for p in aligner.head.parameters():  # make the correction nonzero
        p.data = _rng(19).normal(scale=0.05, size=p.shape)
    a = _manual_group(aligner, world, np.array([[0.4, -0.2, 0.1]]), [0.7], 1)
    perm = _rng(20).permutation(len(world))
    b = _manual_group(aligner, world[perm], np.array([[0.4, -0.2, 0.1]]), [0.7], 1)
    sa = a.points.data[0][np.lexsort(a.points.data[0].T)]
    sb = b.points.data[0][np.lexsort(b.points.data[0].T)]
    assert np.allclose(sa, sb, atol=1e-9)


def test_alignment_drops_empty_neighborhoods():
    rng = _rng(21)
    _, world = _object_scene(rng)
    aligner = CanonicalAlignment(_rng(22), radius=1.0, m_points=32)
    aligner.eval()
    centers = np.array([[0.4, -0.2, 0.1], [5.0, 5.0, 5.0]])
    group = _manual_group(aligner, world, centers, [0.7, 0.0], 2)
    assert group.n_detections == 1
    assert group.positions.tolist() == [0]
    far = _manual_group(aligner, world, np.array([[5.0, 5.0, 5.0]]), [0.0], 1)
    assert far is None
    aligner.train()
    lonely = _manual_group(aligner, world, centers, [0.7, 0.0], 2)
    assert lonely is None  # a single survivor cannot batch-normalize in training


def test_alignment_gradient_through_head():
    rng = _rng(23)
    _, world = _object_scene(rng, n=40)
    aligner = CanonicalAlignment(_rng(24), radius=1.0, m_points=40)
    aligner.eval()
    w = aligner.head.fc1.weight

    def loss():
        group = _manual_group(aligner, world, np.array([[0.4, -0.2, 0.1]]), [0.7], 1)
        return ops.sum(group.points * group.points)

    assert_grads_match(loss, [w], tol=1e-5, max_probes=8)
